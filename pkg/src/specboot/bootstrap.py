"""
Non-parametric bootstrap engine for mixture estimation.

Each iteration resamples the rows with replacement, warm-starts EM from the
previous iteration's hard full-data memberships, aligns the fitted components
to the running average, and folds the estimate into the averaged parameters
(and into the out-of-bag membership accumulators).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .convergence import (
    ConvergenceConfig,
    ParamSnapshot,
    check_dw_convergence,
    check_param_convergence,
    durbin_watson,
    relative_param_difference,
)
from .errors import (
    BootstrapError,
    DimensionError,
    EmptyComponentError,
    NumericalError,
    UndefinedStatisticError,
)
from .gmm import MixtureModel, e_step, fit_em, labels_to_responsibilities, m_step

logger = logging.getLogger(__name__)

MAX_REDRAWS = 20
#: default cap on the fraction of hard labels one bootstrap fit may flip
MAX_LABEL_SHIFT = 0.02


@dataclass(frozen=True)
class BootstrapSample:
    indices: np.ndarray
    in_bag_mask: np.ndarray

    @property
    def oob_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.in_bag_mask)


def draw_sample(n: int, rng=None) -> BootstrapSample:
    """Draw ``n`` row indices uniformly with replacement."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng)
    indices = rng.integers(0, n, size=n)
    mask = np.zeros(n, dtype=bool)
    mask[indices] = True
    return BootstrapSample(indices, mask)


def alignment_order(reference_means, candidate_means) -> np.ndarray:
    """Permutation ``order`` minimising ``sum_g |ref_g - cand_order[g]|^2``."""
    ref = np.asarray(reference_means, dtype=float)
    cand = np.asarray(candidate_means, dtype=float)
    if ref.shape != cand.shape:
        raise DimensionError("reference and candidate means differ in shape")
    cost = ((ref[:, None, :] - cand[None, :, :]) ** 2).sum(axis=2)
    _, cols = linear_sum_assignment(cost)
    return cols


def align_components(reference: ParamSnapshot, candidate: MixtureModel) -> MixtureModel:
    """Relabel ``candidate`` so its means best match ``reference``."""
    return candidate.permuted(alignment_order(reference.means, candidate.means))


@dataclass
class BootstrapState:
    """Running sums of a bootstrap run.

    ``averaged`` is the running mean of all accepted per-sample estimates and
    ``sq_dev`` the matching sums of squared deviations (Welford), from which
    the bootstrap standard errors follow.
    """

    n: int
    n_components: int
    iteration: int = 0
    averaged: ParamSnapshot | None = None
    sq_dev: ParamSnapshot | None = None
    loglik_history: list = field(default_factory=list)
    oob_sum: np.ndarray = None
    oob_count: np.ndarray = None
    membership_sum: np.ndarray = None

    def __post_init__(self):
        if self.oob_sum is None:
            self.oob_sum = np.zeros((self.n, self.n_components))
        if self.oob_count is None:
            self.oob_count = np.zeros(self.n, dtype=int)
        if self.membership_sum is None:
            self.membership_sum = np.zeros((self.n, self.n_components))

    def averaged_model(self) -> MixtureModel:
        if self.averaged is None:
            raise ValueError("no bootstrap estimate has been accepted yet")
        return self.averaged.to_model()

    def mean_memberships(self) -> np.ndarray:
        return self.membership_sum / max(self.iteration, 1)

    def oob_memberships(self) -> np.ndarray:
        """Averaged out-of-bag memberships; NaN rows were never out of bag."""
        with np.errstate(invalid="ignore", divide="ignore"):
            out = self.oob_sum / self.oob_count[:, None]
        out[self.oob_count == 0] = np.nan
        return out


def update_average(state: BootstrapState, new_model: MixtureModel) -> BootstrapState:
    """Fold an (already aligned) estimate into the running mean, in place."""
    theta = ParamSnapshot.from_model(new_model)
    state.iteration += 1
    k = state.iteration
    if state.averaged is None:
        state.averaged = theta.copy()
        state.sq_dev = ParamSnapshot(
            np.zeros_like(theta.weights),
            np.zeros_like(theta.means),
            np.zeros_like(theta.covariances),
        )
        return state
    for name in ("weights", "means", "covariances"):
        avg = getattr(state.averaged, name)
        value = getattr(theta, name)
        delta = value - avg
        avg += delta / k
        getattr(state.sq_dev, name)[...] += delta * (value - avg)
    return state


def _add_oob(state: BootstrapState, in_bag_mask, memberships) -> None:
    oob = ~np.asarray(in_bag_mask)
    state.oob_sum[oob] += memberships[oob]
    state.oob_count[oob] += 1


def accumulate_oob(state: BootstrapState, sample: BootstrapSample,
                   model: MixtureModel, full_data) -> BootstrapState:
    """Add the posterior rows of out-of-bag observations under ``model``."""
    oob = sample.oob_indices
    if oob.size:
        resp, _ = e_step(model, np.asarray(full_data)[oob])
        state.oob_sum[oob] += resp
        state.oob_count[oob] += 1
    return state


def bootstrap_std_errors(state: BootstrapState) -> ParamSnapshot:
    """Element-wise bootstrap standard deviation of every parameter."""
    if state.iteration < 2:
        raise ValueError("standard errors need at least two bootstrap samples")
    k = state.iteration
    return ParamSnapshot(
        np.sqrt(np.clip(state.sq_dev.weights, 0, None) / (k - 1)),
        np.sqrt(np.clip(state.sq_dev.means, 0, None) / (k - 1)),
        np.sqrt(np.clip(state.sq_dev.covariances, 0, None) / (k - 1)),
    )


@dataclass
class TraceRecord:
    """One bootstrap iteration: the full-data log-likelihood under that
    sample's fit, the relative parameter difference, the Durbin-Watson
    statistic when computed, and whether the run stopped here."""

    iteration: int
    loglik: float
    r_theta: float
    dw_statistic: float
    converged: bool


@dataclass
class BootstrapRun:
    state: BootstrapState
    trace: list
    converged: bool
    redraws: int
    resample_calls: int
    never_out_of_bag: np.ndarray


class _LabelShift(Exception):
    pass


Resampler = Callable[[np.ndarray], tuple]


def run_bootstrap(
    data,
    n_components: int,
    initial_labels,
    config: ConvergenceConfig,
    *,
    criterion: str = "param",
    rng=None,
    max_bootstrap: int = 10_000,
    max_iter: int = 1000,
    resample: Resampler | None = None,
    param_dim: int | None = None,
    max_redraws: int = MAX_REDRAWS,
    max_label_shift: float | None = MAX_LABEL_SHIFT,
) -> BootstrapRun:
    """Run the sequential bootstrap EM loop until the stopping rule fires.

    Parameters
    ----------
    data : array_like of shape (n, d)
        Rows to resample.
    initial_labels : array_like of shape (n,)
        Hard starting memberships z(0) for the full data.
    criterion : {"param", "dw"}
        Relative parameter difference or Durbin-Watson stopping rule.
    resample : callable, optional
        Maps drawn row indices to ``(in_bag_data, full_data)``, both already in
        estimation space. Defaults to plain row selection from ``data``.
    param_dim : int, optional
        Dimension used in the free-parameter scaling; defaults to the
        dimension of the fitted models.
    max_label_shift : float or None
        After the first iteration, a fit whose full-data hard labels differ
        from the previous iteration's on more than this fraction of rows is
        treated as degenerate and redrawn. None disables the guard.

    Samples whose EM fit fails (empty component, singular covariance) or
    trips the label-shift guard are discarded and redrawn, at most
    ``max_redraws`` times in a row before :class:`BootstrapError`. Redraws
    warm-start from the hard labels of the running mean memberships instead
    of the previous iteration's, so a few corrupted labels cannot lock in.

    Returns
    -------
    BootstrapRun
    """
    data = np.asarray(data, dtype=float)
    n = data.shape[0]
    G = n_components
    if criterion not in ("param", "dw"):
        raise ValueError(f"unknown criterion {criterion!r}")
    rng = np.random.default_rng(rng)
    if resample is None:
        def resample(idx):
            return data[idx], data

    labels = np.asarray(initial_labels, dtype=int)
    state = BootstrapState(n=n, n_components=G)
    trace = []
    redraws = 0
    calls = 0
    converged = False
    reference_means = None

    for _ in range(max_bootstrap):
        for attempt in range(max_redraws + 1):
            if attempt == 1 and state.iteration > 0:
                # retry from the consensus of all accepted iterations
                labels = np.argmax(state.membership_sum, axis=1)
            sample = draw_sample(n, rng)
            calls += 1
            try:
                in_bag, full = resample(sample.indices)
                start = labels_to_responsibilities(labels[sample.indices], G)
                fit = fit_em(in_bag, G, init=start, eps=config.eps,
                             max_iter=max_iter)
                model = fit.model
                if reference_means is None:
                    reference_means = m_step(
                        full, labels_to_responsibilities(labels, G)).means
                model = model.permuted(alignment_order(reference_means, model.means))
                memberships, ll = e_step(model, full)
                if max_label_shift is not None and state.iteration > 0:
                    shift = np.mean(np.argmax(memberships, axis=1) != labels)
                    if shift > max_label_shift:
                        raise _LabelShift(f"fit flips {shift:.1%} of labels")
                break
            except (EmptyComponentError, NumericalError, np.linalg.LinAlgError,
                    _LabelShift) as exc:
                redraws += 1
                logger.debug("discarding bootstrap sample: %s", exc)
        else:
            raise BootstrapError(
                f"{max_redraws + 1} consecutive degenerate bootstrap samples at "
                f"iteration {state.iteration + 1}"
            )

        previous = state.averaged.copy() if state.averaged is not None else None
        update_average(state, model)
        reference_means = state.averaged.means
        state.loglik_history.append(ll)
        state.membership_sum += memberships
        _add_oob(state, sample.in_bag_mask, memberships)
        labels = np.argmax(memberships, axis=1)

        k = state.iteration
        r_theta = (relative_param_difference(previous, state.averaged)
                   if previous is not None else float("nan"))
        dw_stat = float("nan")
        done = False
        if k >= config.min_bootstrap:
            if criterion == "param":
                dim = param_dim if param_dim is not None else model.dimension
                done = check_param_convergence(r_theta, G, dim, config)
            else:
                ready = check_dw_convergence(state.loglik_history, config)
                if ready is not None:
                    done = ready
                    try:
                        dw_stat, _ = durbin_watson(
                            state.loglik_history[-config.dw_window:])
                    except UndefinedStatisticError:
                        pass
        trace.append(TraceRecord(k, ll, r_theta, dw_stat, done))
        if done:
            converged = True
            break

    missing = np.flatnonzero(state.oob_count == 0)
    if missing.size:
        logger.warning("%d observations were never out of bag", missing.size)
    return BootstrapRun(state, trace, converged, redraws, calls, missing)
