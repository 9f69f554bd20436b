"""
Gaussian finite mixture models fitted with the EM algorithm.

A model with ``G`` components in ``d`` dimensions is stored as three stacked
arrays: ``weights`` (G,), ``means`` (G, d) and ``covariances`` (G, d, d).
Responsibilities are plain ``(n, G)`` arrays whose rows sum to one.

All densities are evaluated in log space through a Cholesky factorization of
each covariance, and the posterior memberships are a softmax over the per
component log terms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp
from sklearn.cluster import KMeans

from .errors import DimensionError, EmptyComponentError, NumericalError

LOG_2PI = np.log(2.0 * np.pi)

#: a Cholesky pivot below this fraction of trace/d counts as singular
SINGULAR_PIVOT = 1e-12

#: components whose responsibility mass falls below this fraction of n are empty
EMPTY_COMPONENT_FRACTION = 1e-8

RIDGE_START = 1e-8
RIDGE_STOP = 1e-2

KMEANS_MAX_ITER = 50
KMEANS_N_INIT = 5


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: np.ndarray
    covariance: np.ndarray


@dataclass
class MixtureModel:
    """Gaussian mixture parameters.

    Parameters
    ----------
    weights : ndarray of shape (G,)
        Mixing proportions, summing to one.
    means : ndarray of shape (G, d)
    covariances : ndarray of shape (G, d, d)
        Symmetric positive-definite component covariances.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covariances = np.asarray(self.covariances, dtype=float)
        G, d = self.means.shape
        if self.weights.shape != (G,) or self.covariances.shape != (G, d, d):
            raise DimensionError(
                f"inconsistent shapes: weights {self.weights.shape}, "
                f"means {self.means.shape}, covariances {self.covariances.shape}"
            )
        if G < 1:
            raise DimensionError("a mixture needs at least one component")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-8:
            raise ValueError("mixing proportions must be non-negative and sum to one")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dimension(self) -> int:
        return self.means.shape[1]

    @property
    def components(self) -> list[MixtureComponent]:
        return [
            MixtureComponent(float(w), m, c)
            for w, m, c in zip(self.weights, self.means, self.covariances)
        ]

    @classmethod
    def from_components(cls, components) -> "MixtureModel":
        components = list(components)
        return cls(
            weights=[c.weight for c in components],
            means=[np.atleast_1d(c.mean) for c in components],
            covariances=[np.atleast_2d(c.covariance) for c in components],
        )

    def permuted(self, order) -> "MixtureModel":
        """Return a copy whose component ``g`` is this model's ``order[g]``."""
        order = np.asarray(order)
        return MixtureModel(
            self.weights[order].copy(),
            self.means[order].copy(),
            self.covariances[order].copy(),
        )

    def copy(self) -> "MixtureModel":
        return MixtureModel(
            self.weights.copy(), self.means.copy(), self.covariances.copy()
        )


def _cholesky(cov: np.ndarray, component: int) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericalError(
            f"covariance of component {component} is not positive definite"
        ) from None


def component_log_densities(model: MixtureModel, data: np.ndarray) -> np.ndarray:
    """Return ``log(pi_g) + log phi(x_i | mu_g, Sigma_g)`` as an (n, G) array."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n, d = data.shape
    if d != model.dimension:
        raise DimensionError(
            f"data has {d} columns but the model has dimension {model.dimension}"
        )
    G = model.n_components
    out = np.empty((n, G))
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weights)
    for g in range(G):
        chol = _cholesky(model.covariances[g], g)
        z = solve_triangular(chol, (data - model.means[g]).T, lower=True,
                             check_finite=False)
        maha = np.einsum("ij,ij->j", z, z)
        log_det = 2.0 * np.log(np.diag(chol)).sum()
        out[:, g] = log_w[g] - 0.5 * (d * LOG_2PI + log_det + maha)
    return out


def log_density(model: MixtureModel, x) -> float:
    """Log of the mixture density at a single point ``x``."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(logsumexp(component_log_densities(model, x), axis=1)[0])


def e_step(model: MixtureModel, data: np.ndarray) -> tuple[np.ndarray, float]:
    """Posterior memberships and the total log-likelihood of ``data``.

    Returns
    -------
    resp : ndarray of shape (n, G)
        Row-stochastic responsibilities.
    log_likelihood : float
        ``sum_i log f(x_i)``.
    """
    log_terms = component_log_densities(model, data)
    log_norm = logsumexp(log_terms, axis=1)
    resp = np.exp(log_terms - log_norm[:, None])
    ll = float(log_norm.sum())
    if not np.isfinite(ll) or not np.all(np.isfinite(resp)):
        raise NumericalError("E-step produced non-finite values")
    # renormalise away rounding so rows sum to one to machine precision
    resp /= resp.sum(axis=1, keepdims=True)
    return resp, ll


def _well_conditioned(cov, scale) -> bool:
    # rounding lets Cholesky succeed on exactly singular matrices, so the
    # smallest pivot is checked as well
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return False
    return float(np.min(np.diag(chol))) ** 2 > SINGULAR_PIVOT * scale


def regularize_covariance(cov: np.ndarray, component: int = 0) -> np.ndarray:
    """Make ``cov`` symmetric positive definite, adding a ridge only if needed.

    The ridge starts at ``1e-8 * trace/d`` and grows tenfold up to
    ``1e-2 * trace/d``; past that a :class:`NumericalError` is raised.
    """
    cov = 0.5 * (cov + cov.T)
    d = cov.shape[0]
    scale = np.trace(cov) / d
    if not np.isfinite(scale) or scale <= 0:
        raise NumericalError(f"covariance of component {component} is degenerate")
    if _well_conditioned(cov, scale):
        return cov
    eye = np.eye(d)
    factor = RIDGE_START
    while factor <= RIDGE_STOP * (1 + 1e-9):
        candidate = cov + factor * scale * eye
        if _well_conditioned(candidate, scale):
            return candidate
        factor *= 10.0
    raise NumericalError(
        f"covariance of component {component} stays singular after ridge "
        f"{RIDGE_STOP:g}*trace/d"
    )


def m_step(data: np.ndarray, resp: np.ndarray) -> MixtureModel:
    """Maximum-likelihood update of weights, means and covariances.

    Covariances use the biased ``1/n_g`` normalisation. Raises
    :class:`EmptyComponentError` if some ``n_g`` is below ``1e-8 * n``.
    """
    data = np.asarray(data, dtype=float)
    resp = np.asarray(resp, dtype=float)
    n, d = data.shape
    if resp.shape[0] != n:
        raise DimensionError("responsibilities and data disagree on n")
    G = resp.shape[1]
    nk = resp.sum(axis=0)
    threshold = EMPTY_COMPONENT_FRACTION * n
    for g in range(G):
        if nk[g] < threshold:
            raise EmptyComponentError(g, float(nk[g]), threshold)
    weights = nk / n
    means = (resp.T @ data) / nk[:, None]
    covs = np.empty((G, d, d))
    for g in range(G):
        diff = data - means[g]
        cov = (resp[:, g, None] * diff).T @ diff / nk[g]
        covs[g] = regularize_covariance(cov, g)
    return MixtureModel(weights, means, covs)


def labels_to_responsibilities(labels, n_components: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    resp = np.zeros((labels.size, n_components))
    resp[np.arange(labels.size), labels] = 1.0
    return resp


def initial_labels(
    data: np.ndarray, n_components: int, init: str = "kmeans", rng=None
) -> np.ndarray:
    """Hard starting labels from k-means or a discrete uniform draw."""
    rng = np.random.default_rng(rng)
    n = data.shape[0]
    if init == "kmeans":
        km = KMeans(
            n_clusters=n_components,
            max_iter=KMEANS_MAX_ITER,
            n_init=KMEANS_N_INIT,
            random_state=int(rng.integers(2**31 - 1)),
        )
        return km.fit_predict(data).astype(int)
    if init == "random":
        for _ in range(100):
            labels = rng.integers(n_components, size=n)
            if np.unique(labels).size == n_components:
                return labels
        raise EmptyComponentError(-1, 0.0, 1.0)
    raise ValueError(f"unknown init strategy {init!r}")


class EMFit(NamedTuple):
    model: MixtureModel
    responsibilities: np.ndarray
    trace: list
    converged: bool


def fit_em(
    data,
    n_components: int,
    init="kmeans",
    eps: float = 0.1,
    max_iter: int = 1000,
    rng=None,
) -> EMFit:
    """Fit a Gaussian mixture by EM with the lack-of-progress stopping rule.

    Parameters
    ----------
    data : array_like of shape (n, d)
    n_components : int
    init : {"kmeans", "random"} or ndarray
        Initialisation strategy, or explicit starting memberships: either
        integer labels of shape (n,) or responsibilities of shape (n, G).
    eps : float
        Stop once ``|l(k) - l(k-1)| < eps``.
    max_iter : int
    rng : seed or Generator, used by the initialisation only.

    Returns
    -------
    EMFit
        ``(model, responsibilities, trace, converged)`` where ``trace`` holds
        the log-likelihood after every iteration.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 2:
        raise DimensionError("data must be a 2-d array")
    n = data.shape[0]
    if n_components < 1 or n <= n_components:
        raise DimensionError(f"need n > G >= 1, got n={n}, G={n_components}")
    if eps <= 0:
        raise ValueError("eps must be positive")

    if isinstance(init, str):
        resp = labels_to_responsibilities(
            initial_labels(data, n_components, init, rng), n_components
        )
    else:
        init = np.asarray(init)
        if init.ndim == 1:
            resp = labels_to_responsibilities(init, n_components)
        else:
            resp = np.asarray(init, dtype=float)
        if resp.shape != (n, n_components):
            raise DimensionError("initial memberships have the wrong shape")

    trace = []
    converged = False
    for _ in range(max_iter):
        model = m_step(data, resp)
        resp, ll = e_step(model, data)
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < eps:
            converged = True
            break
    return EMFit(model, resp, trace, converged)


def count_free_parameters(n_components: int, p: int, family: str = "full-gmm",
                          q: int | None = None) -> int:
    """Number of free parameters of a full-covariance GMM or a mixture of
    factor analyzers with ``q`` latent factors (the latter for reporting)."""
    G = n_components
    if G < 1 or p < 1:
        raise ValueError("G and p must be positive")
    if family == "full-gmm":
        return (G - 1) + G * p + G * p * (p + 1) // 2
    if family == "factor-analyzer":
        if q is None or not 1 <= q < p:
            raise ValueError(f"factor-analyzer needs 1 <= q < p, got q={q}")
        return G * (p * q - q * (q - 1) // 2) + G * p
    raise ValueError(f"unknown family {family!r}")


def bic(log_likelihood: float, num_free_params: int, n: int) -> float:
    """``2*l - rho*log(n)``; larger is better."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 2.0 * log_likelihood - num_free_params * np.log(n)
