"""Rank-G spectral embedding ``Y = X V_G`` from the SVD ``X = U S V'``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DataError, DimensionError

#: n*p at or below which a dense SVD is used by default
FULL_SVD_THRESHOLD = 512 * 512


@dataclass(frozen=True)
class SpectralEmbedding:
    """Projection of the data onto its leading right singular directions.

    Attributes
    ----------
    embedded : ndarray of shape (n, G)
        ``X @ basis`` (after optional column centering of X).
    basis : ndarray of shape (p, G)
        Orthonormal leading right singular vectors, sign-fixed so the entry of
        largest magnitude in every column is positive.
    singular_values : ndarray of shape (G,)
        Non-increasing.
    center : ndarray of shape (p,) or None
        Column means subtracted before the decomposition, if centering was on.
    """

    embedded: np.ndarray
    basis: np.ndarray
    singular_values: np.ndarray
    center: np.ndarray | None = None

    def oriented_like(self, reference: "SpectralEmbedding") -> "SpectralEmbedding":
        """Flip basis columns that point away from ``reference``'s columns."""
        signs = np.sign(np.einsum("ij,ij->j", self.basis, reference.basis))
        signs[signs == 0] = 1.0
        if np.all(signs > 0):
            return self
        return SpectralEmbedding(self.embedded * signs, self.basis * signs,
                                 self.singular_values, self.center)

    def transform(self, data) -> np.ndarray:
        """Embed new rows with the same basis (and centering)."""
        data = np.asarray(data, dtype=float)
        if self.center is not None:
            data = data - self.center
        return data @ self.basis


def fix_signs(basis: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive.

    Ties go to the lowest row index.
    """
    idx = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[idx, np.arange(basis.shape[1])])
    signs[signs == 0] = 1.0
    return basis * signs


def _top_right_vectors_dense(data, G):
    _, s, vt = np.linalg.svd(data, full_matrices=False)
    return s[:G], vt[:G].T


def _top_right_vectors_thin(data, G):
    # leading eigenpairs of the smaller Gram matrix only
    n, p = data.shape
    if p <= n:
        gram = data.T @ data
        w, v = scipy.linalg.eigh(gram, subset_by_index=[p - G, p - 1])
        w, v = w[::-1], v[:, ::-1]
        s = np.sqrt(np.clip(w, 0.0, None))
        return s, v
    gram = data @ data.T
    w, u = scipy.linalg.eigh(gram, subset_by_index=[n - G, n - 1])
    w, u = w[::-1], u[:, ::-1]
    s = np.sqrt(np.clip(w, 0.0, None))
    v = data.T @ u
    norms = np.linalg.norm(v, axis=0)
    norms[norms == 0] = 1.0
    return s, v / norms


def spectral_transform(
    data,
    num_groups: int,
    *,
    center: bool = False,
    method: str = "auto",
    full_threshold: int = FULL_SVD_THRESHOLD,
) -> SpectralEmbedding:
    """Project ``data`` onto its top ``num_groups`` right singular directions.

    Parameters
    ----------
    data : array_like of shape (n, p)
    num_groups : int
        Embedding dimension G, with ``G <= min(n, p)``.
    center : bool
        Subtract column means first. Off by default.
    method : {"auto", "full", "thin"}
        ``"full"`` runs a dense SVD; ``"thin"`` computes only the leading G
        eigenpairs of the smaller Gram matrix. ``"auto"`` picks full when
        ``n * p <= full_threshold``.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise DimensionError("data must be a 2-d array")
    n, p = X.shape
    G = int(num_groups)
    if G < 1 or G > min(n, p):
        raise DimensionError(f"G={G} must lie in [1, min(n, p)={min(n, p)}]")
    if not np.all(np.isfinite(X)):
        raise DataError("data contains non-finite entries")

    mean = X.mean(axis=0) if center else None
    Xc = X - mean if center else X

    if method == "auto":
        method = "full" if n * p <= full_threshold else "thin"
    if method == "full" or G == min(n, p):
        s, v = _top_right_vectors_dense(Xc, G)
    elif method == "thin":
        s, v = _top_right_vectors_thin(Xc, G)
    else:
        raise ValueError(f"unknown SVD method {method!r}")

    v = fix_signs(v)
    return SpectralEmbedding(Xc @ v, v, s, mean)
