"""
Stopping rules for the EM and bootstrap loops.

* lack of progress on the EM log-likelihood (inside :func:`specboot.gmm.fit_em`)
* the Durbin-Watson test on a trailing window of bootstrap log-likelihoods
* the relative difference between successive averaged parameter snapshots,
  scaled by the free-parameter count
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DimensionError, UndefinedStatisticError
from .gmm import MixtureModel, count_free_parameters

#: denominators of the relative difference are clamped away from zero here
DENOMINATOR_FLOOR = 1e-12


@dataclass(frozen=True)
class ConvergenceConfig:
    """Thresholds for every stopping rule.

    ``eps`` is the EM lack-of-progress tolerance, ``eps_b`` the bootstrap
    parameter-space tolerance, ``dw_alpha``/``dw_window`` configure the
    Durbin-Watson rule and ``min_bootstrap`` is the number of bootstrap
    samples taken before any convergence check.
    """

    eps: float = 0.1
    eps_b: float = 0.001
    dw_alpha: float = 0.05
    dw_window: int = 500
    min_bootstrap: int = 300

    def __post_init__(self):
        if self.eps <= 0 or self.eps_b <= 0:
            raise ValueError("eps and eps_b must be positive")
        if not 0 < self.dw_alpha < 1:
            raise ValueError("dw_alpha must lie in (0, 1)")
        if self.dw_window < 2:
            raise ValueError("dw_window must be at least 2")
        if self.min_bootstrap < 1:
            raise ValueError("min_bootstrap must be at least 1")


@dataclass
class ParamSnapshot:
    """Averaged (or per-sample) mixture parameters without validity checks."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    @classmethod
    def from_model(cls, model: MixtureModel) -> "ParamSnapshot":
        return cls(model.weights.copy(), model.means.copy(),
                   model.covariances.copy())

    def to_model(self) -> MixtureModel:
        covs = 0.5 * (self.covariances + np.swapaxes(self.covariances, 1, 2))
        return MixtureModel(self.weights.copy(), self.means.copy(), covs)

    def copy(self) -> "ParamSnapshot":
        return ParamSnapshot(self.weights.copy(), self.means.copy(),
                             self.covariances.copy())

    def vector(self) -> np.ndarray:
        """Weights, means and covariance upper triangles (with diagonal) flattened."""
        d = self.means.shape[1]
        iu = np.triu_indices(d)
        return np.concatenate([
            self.weights.ravel(),
            self.means.ravel(),
            self.covariances[:, iu[0], iu[1]].ravel(),
        ])


def relative_param_difference(prev: ParamSnapshot, curr: ParamSnapshot) -> float:
    """Sum of absolute relative changes over weights, means and the upper
    triangle (diagonal included) of every covariance matrix."""
    if (prev.weights.shape != curr.weights.shape
            or prev.means.shape != curr.means.shape
            or prev.covariances.shape != curr.covariances.shape):
        raise DimensionError("snapshots differ in shape")
    before = prev.vector()
    after = curr.vector()
    denom = np.maximum(np.abs(before), DENOMINATOR_FLOOR)
    return float(np.sum(np.abs(after - before) / denom))


def check_param_convergence(r_theta: float, n_components: int, dim: int,
                            config: ConvergenceConfig) -> bool:
    """True iff ``r_theta`` divided by the free-parameter count is below eps_b.

    ``dim`` is the dimension the parameters live in (G after the spectral
    transform).
    """
    rho = count_free_parameters(n_components, dim)
    return r_theta / rho < config.eps_b


def durbin_watson(series) -> tuple[float, float]:
    """Durbin-Watson statistic of a series about its least-squares linear trend.

    Returns
    -------
    statistic : float
        ``sum (e_t - e_{t-1})^2 / sum e_t^2``, in [0, 4].
    p_value : float
        Two-sided, from the normal approximation ``d ~ N(2, 4/T)``.
    """
    y = np.asarray(series, dtype=float).ravel()
    T = y.size
    if T < 2:
        raise ValueError("series needs at least two values")
    if not np.all(np.isfinite(y)):
        raise ValueError("series contains non-finite values")
    t = np.arange(T, dtype=float)
    design = np.column_stack([np.ones(T), t])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    ss = float(resid @ resid)
    scale = max(float(np.max(np.abs(y))), 1.0)
    if ss <= (1e-12 * scale) ** 2 * T:
        raise UndefinedStatisticError("residuals about the trend are all zero")
    stat = float(np.sum(np.diff(resid) ** 2) / ss)
    z = (stat - 2.0) / np.sqrt(4.0 / T)
    p_value = float(2.0 * stats.norm.sf(abs(z)))
    return stat, p_value


def check_dw_convergence(loglik_history, config: ConvergenceConfig) -> bool | None:
    """Durbin-Watson stopping rule on the last ``dw_window`` log-likelihoods.

    Returns None while the history is shorter than
    ``max(min_bootstrap, dw_window)``; otherwise True when the test fails to
    reject the no-autocorrelation null at ``dw_alpha``.
    """
    history = list(loglik_history)
    if len(history) < max(config.min_bootstrap, config.dw_window):
        return None
    window = history[-config.dw_window:]
    try:
        _, p_value = durbin_watson(window)
    except UndefinedStatisticError:
        # exactly linear window: settled if flat, still drifting otherwise
        return bool(np.ptp(window) == 0)
    return p_value >= config.dw_alpha
