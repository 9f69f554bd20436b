"""
The five estimators: EM, SpectralEM, BootEM, Spectral-BootEM and BootSpectral.

Every estimator takes the raw ``(n, p)`` data matrix, the number of groups
and a :class:`RunConfig`, and returns a :class:`FitResult`.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .bootstrap import MAX_LABEL_SHIFT, BootstrapRun, bootstrap_std_errors, run_bootstrap
from .convergence import ConvergenceConfig, ParamSnapshot
from .errors import DataError, EstimationSpaceError
from .gmm import MixtureModel, bic, count_free_parameters, e_step, fit_em, initial_labels
from .spectral import FULL_SVD_THRESHOLD, SpectralEmbedding, spectral_transform

ALGORITHMS = ("em", "spectral-em", "boot-em", "spectral-boot-em", "boot-spectral")
BOOTSTRAPPED = ("boot-em", "spectral-boot-em", "boot-spectral")


@dataclass
class RunConfig:
    """Knobs shared by every estimator.

    ``min_bootstrap=None`` resolves to 500 for boot-em and 300 for the
    spectral bootstrap variants.
    """

    algorithm: str = "spectral-boot-em"
    G: int = 2
    eps: float = 0.1
    eps_b: float = 0.001
    dw_alpha: float = 0.05
    dw_window: int = 500
    min_bootstrap: int | None = None
    max_bootstrap: int = 10_000
    seed: int = 0
    init: str = "kmeans"
    max_iter: int = 1000
    center: bool = False
    svd_method: str = "thin"
    svd_full_threshold: int = FULL_SVD_THRESHOLD
    max_label_shift: float | None = MAX_LABEL_SHIFT

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.init not in ("kmeans", "random"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.G < 1:
            raise ValueError("G must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.max_bootstrap < 1:
            raise ValueError("max_bootstrap must be positive")

    @property
    def resolved_min_bootstrap(self) -> int:
        if self.min_bootstrap is not None:
            return self.min_bootstrap
        return 500 if self.algorithm == "boot-em" else 300

    def convergence_config(self) -> ConvergenceConfig:
        return ConvergenceConfig(
            eps=self.eps,
            eps_b=self.eps_b,
            dw_alpha=self.dw_alpha,
            dw_window=self.dw_window,
            min_bootstrap=self.resolved_min_bootstrap,
        )

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)


@dataclass
class FitResult:
    """Outcome of one estimator run.

    ``model`` lives in ``estimation_space`` ("original" or "spectral(G)"), so
    likelihoods and BIC values are only comparable between results that share
    it. For bootstrapped runs ``model`` holds the averaged parameters,
    ``memberships`` the full-data memberships averaged over bootstrap
    iterations, ``averaged_model_memberships`` the posterior of the full data
    under the averaged parameters, and ``oob_memberships`` the averaged
    out-of-bag memberships (NaN rows were never left out).
    """

    algorithm: str
    model: MixtureModel
    memberships: np.ndarray
    log_likelihood: float
    elapsed_seconds: float
    estimation_space: str
    n_observations: int
    trace: list = field(default_factory=list)
    oob_memberships: np.ndarray | None = None
    averaged_model_memberships: np.ndarray | None = None
    bootstrap_iterations: int | None = None
    std_errors: ParamSnapshot | None = None
    converged: bool = True
    svd_count: int = 0
    redraws: int = 0
    embedding: SpectralEmbedding | None = None

    @property
    def n_free_parameters(self) -> int:
        return count_free_parameters(self.model.n_components, self.model.dimension)

    @property
    def bic(self) -> float:
        return bic(self.log_likelihood, self.n_free_parameters, self.n_observations)

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.memberships, axis=1)


def bic_difference(a: FitResult, b: FitResult) -> float:
    """``a.bic - b.bic``; refuses results from different estimation spaces."""
    if a.estimation_space != b.estimation_space:
        raise EstimationSpaceError(
            f"cannot compare BIC across {a.estimation_space} and {b.estimation_space}"
        )
    return a.bic - b.bic


def _check_data(data) -> np.ndarray:
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise DataError("data must be a 2-d matrix")
    if not np.all(np.isfinite(X)):
        raise DataError("data contains non-finite entries")
    return X


def _embed(X, G, config: RunConfig) -> SpectralEmbedding:
    return spectral_transform(X, G, center=config.center, method=config.svd_method,
                              full_threshold=config.svd_full_threshold)


def run_em(data, G: int, config: RunConfig | None = None) -> FitResult:
    config = (config or RunConfig()).with_(algorithm="em", G=G)
    X = _check_data(data)
    start = time.perf_counter()
    fit = fit_em(X, G, init=config.init, eps=config.eps, max_iter=config.max_iter,
                 rng=config.seed)
    elapsed = time.perf_counter() - start
    return FitResult(
        algorithm="em", model=fit.model, memberships=fit.responsibilities,
        log_likelihood=fit.trace[-1], elapsed_seconds=elapsed,
        estimation_space="original", n_observations=X.shape[0],
        trace=list(fit.trace), converged=fit.converged,
    )


def run_spectral_em(data, G: int, config: RunConfig | None = None) -> FitResult:
    config = (config or RunConfig()).with_(algorithm="spectral-em", G=G)
    X = _check_data(data)
    start = time.perf_counter()
    emb = _embed(X, G, config)
    fit = fit_em(emb.embedded, G, init=config.init, eps=config.eps,
                 max_iter=config.max_iter, rng=config.seed)
    elapsed = time.perf_counter() - start
    return FitResult(
        algorithm="spectral-em", model=fit.model, memberships=fit.responsibilities,
        log_likelihood=fit.trace[-1], elapsed_seconds=elapsed,
        estimation_space=f"spectral({G})", n_observations=X.shape[0],
        trace=list(fit.trace), converged=fit.converged, svd_count=1, embedding=emb,
    )


def _bootstrap_result(algorithm, run: BootstrapRun, final_data, space, elapsed,
                      svd_count=0, embedding=None) -> FitResult:
    state = run.state
    model = state.averaged_model()
    post, ll = e_step(model, final_data)
    return FitResult(
        algorithm=algorithm,
        model=model,
        memberships=state.mean_memberships(),
        log_likelihood=ll,
        elapsed_seconds=elapsed,
        estimation_space=space,
        n_observations=final_data.shape[0],
        trace=run.trace,
        oob_memberships=state.oob_memberships(),
        averaged_model_memberships=post,
        bootstrap_iterations=state.iteration,
        std_errors=bootstrap_std_errors(state) if state.iteration >= 2 else None,
        converged=run.converged,
        svd_count=svd_count,
        redraws=run.redraws,
        embedding=embedding,
    )


def run_boot_em(data, G: int, config: RunConfig | None = None) -> FitResult:
    """Bootstrapped EM on the raw data with the Durbin-Watson stopping rule."""
    config = (config or RunConfig()).with_(algorithm="boot-em", G=G)
    X = _check_data(data)
    rng = np.random.default_rng(config.seed)
    start = time.perf_counter()
    labels = initial_labels(X, G, config.init, rng)
    run = run_bootstrap(
        X, G, labels, config.convergence_config(), criterion="dw", rng=rng,
        max_bootstrap=config.max_bootstrap, max_iter=config.max_iter,
        max_label_shift=config.max_label_shift,
    )
    elapsed = time.perf_counter() - start
    return _bootstrap_result("boot-em", run, X, "original", elapsed)


def run_spectral_boot_em(data, G: int, config: RunConfig | None = None) -> FitResult:
    """One SVD of the full data, then the bootstrap over embedded rows."""
    config = (config or RunConfig()).with_(algorithm="spectral-boot-em", G=G)
    X = _check_data(data)
    rng = np.random.default_rng(config.seed)
    start = time.perf_counter()
    emb = _embed(X, G, config)
    Y = emb.embedded
    labels = initial_labels(Y, G, config.init, rng)
    run = run_bootstrap(
        Y, G, labels, config.convergence_config(), criterion="param", rng=rng,
        max_bootstrap=config.max_bootstrap, max_iter=config.max_iter,
        max_label_shift=config.max_label_shift, param_dim=G,
    )
    elapsed = time.perf_counter() - start
    return _bootstrap_result("spectral-boot-em", run, Y, f"spectral({G})", elapsed,
                             svd_count=1, embedding=emb)


def run_boot_spectral(data, G: int, config: RunConfig | None = None) -> FitResult:
    """Bootstrap over raw rows with a fresh SVD of every bootstrap sample.

    The in-bag rows are embedded with the sample's own basis and the full
    data's memberships are computed in that same basis. Each sample basis is
    sign-oriented against the full-data basis so that coordinates keep their
    meaning across iterations.
    """
    config = (config or RunConfig()).with_(algorithm="boot-spectral", G=G)
    X = _check_data(data)
    rng = np.random.default_rng(config.seed)
    start = time.perf_counter()
    emb = _embed(X, G, config)
    labels = initial_labels(emb.embedded, G, config.init, rng)
    svd_count = 1

    def resample(indices):
        nonlocal svd_count
        sample_emb = _embed(X[indices], G, config).oriented_like(emb)
        svd_count += 1
        return sample_emb.embedded, sample_emb.transform(X)

    run = run_bootstrap(
        X, G, labels, config.convergence_config(), criterion="param", rng=rng,
        max_bootstrap=config.max_bootstrap, max_iter=config.max_iter,
        max_label_shift=config.max_label_shift,
        resample=resample, param_dim=G,
    )
    elapsed = time.perf_counter() - start
    return _bootstrap_result("boot-spectral", run, emb.embedded, f"spectral({G})",
                             elapsed, svd_count=svd_count, embedding=emb)


ESTIMATORS = {
    "em": run_em,
    "spectral-em": run_spectral_em,
    "boot-em": run_boot_em,
    "spectral-boot-em": run_spectral_boot_em,
    "boot-spectral": run_boot_spectral,
}


def run(data, config: RunConfig) -> FitResult:
    """Dispatch to the estimator named by ``config.algorithm``."""
    return ESTIMATORS[config.algorithm](data, config.G, config)
