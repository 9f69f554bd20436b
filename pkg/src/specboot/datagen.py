"""Seeded simulation datasets: mirror data, cross-over data and generic GMM draws."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gmm import MixtureModel


@dataclass
class LabeledDataset:
    """Simulated data with ground truth.

    ``special_indices`` flags probe rows: the mirror centre point or the
    cross-over group changers.
    """

    data: np.ndarray
    labels: np.ndarray
    special_indices: list = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.labels.shape != (self.data.shape[0],):
            raise ValueError("labels must have one entry per row")
        n = self.data.shape[0]
        if any(not 0 <= i < n for i in self.special_indices):
            raise ValueError("special index out of range")

    @property
    def special_mask(self) -> np.ndarray:
        mask = np.zeros(self.data.shape[0], dtype=bool)
        mask[list(self.special_indices)] = True
        return mask


def sample_mvn(mean, cov, size: int, rng) -> np.ndarray:
    """Draw ``size`` rows from N(mean, cov) via the Cholesky factor of cov."""
    mean = np.asarray(mean, dtype=float)
    chol = np.linalg.cholesky(np.asarray(cov, dtype=float))
    z = rng.standard_normal((size, mean.size))
    return mean + z @ chol.T


def generate_mirror(n_per_group: int = 500, p: int = 150, seed=None) -> LabeledDataset:
    """Two antipodal groups plus a centre observation at the origin.

    Group 0 is ``n_per_group`` draws from N((7,...,7), I_p); group 1 is its
    row-wise negation, so it sits around (-7,...,-7). The origin row is
    appended last and flagged as special; it carries label 0.
    """
    if n_per_group < 1 or p < 1:
        raise ValueError("n_per_group and p must be positive")
    rng = np.random.default_rng(seed)
    group = 7.0 + rng.standard_normal((n_per_group, p))
    data = np.vstack([group, -group, np.zeros((1, p))])
    labels = np.concatenate([
        np.zeros(n_per_group, dtype=int),
        np.ones(n_per_group, dtype=int),
        [0],
    ])
    return LabeledDataset(data, labels, [2 * n_per_group])


def cross_over_means(T: int = 41) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean paths of the rising group, the falling group and the changers.

    The rising group starts at -20 and the falling one at 20, each moving by
    one per time step. Changers follow the rising (bottom) group for the first
    ``T // 2`` steps, then the falling group.
    """
    if T < 2:
        raise ValueError("T must be at least 2")
    steps = np.arange(T, dtype=float)
    up = -20.0 + steps
    down = 20.0 - steps
    switch = T // 2
    changer = np.concatenate([up[:switch], down[switch:]])
    return up, down, changer


def cross_over_covariance(T: int = 41, rho: float = 0.9) -> np.ndarray:
    return (1.0 - rho) * np.eye(T) + rho * np.ones((T, T))


def generate_cross_over(n_per_group: int = 150, T: int = 41, n_changers: int = 3,
                        seed=None) -> LabeledDataset:
    """Two longitudinal groups whose means cross, plus group-changing rows.

    Rows are ordered group 0 (rising), group 1 (falling), then the changers,
    which carry label 0 and are listed in ``special_indices``.
    """
    rng = np.random.default_rng(seed)
    up, down, changer = cross_over_means(T)
    cov = cross_over_covariance(T)
    data = np.vstack([
        sample_mvn(up, cov, n_per_group, rng),
        sample_mvn(down, cov, n_per_group, rng),
        sample_mvn(changer, cov, n_changers, rng),
    ])
    labels = np.concatenate([
        np.zeros(n_per_group, dtype=int),
        np.ones(n_per_group, dtype=int),
        np.zeros(n_changers, dtype=int),
    ])
    special = list(range(2 * n_per_group, 2 * n_per_group + n_changers))
    return LabeledDataset(data, labels, special)


def generate_gmm(model: MixtureModel, n: int, seed=None) -> LabeledDataset:
    rng = np.random.default_rng(seed)
    labels = rng.choice(model.n_components, size=n, p=model.weights)
    data = np.empty((n, model.dimension))
    for g in range(model.n_components):
        rows = np.flatnonzero(labels == g)
        if rows.size:
            data[rows] = sample_mvn(model.means[g], model.covariances[g],
                                    rows.size, rng)
    return LabeledDataset(data, labels, [])


def separated_blobs(n_per_group, dim: int, n_groups: int, separation: float,
                    seed=None) -> LabeledDataset:
    """Balanced spherical groups with means ``separation`` apart.

    Means sit at ``separation / sqrt(2)`` along distinct coordinate axes
    (cycling through signs when ``n_groups > dim``), so every pair of means is
    exactly ``separation`` apart when ``n_groups <= dim``.
    """
    if n_groups > 2 * dim:
        raise ValueError("need n_groups <= 2 * dim")
    rng = np.random.default_rng(seed)
    means = np.zeros((n_groups, dim))
    for g in range(n_groups):
        means[g, g % dim] = (1 if g < dim else -1) * separation / np.sqrt(2.0)
    blocks = [means[g] + rng.standard_normal((n_per_group, dim))
              for g in range(n_groups)]
    labels = np.repeat(np.arange(n_groups), n_per_group)
    return LabeledDataset(np.vstack(blocks), labels, [])
