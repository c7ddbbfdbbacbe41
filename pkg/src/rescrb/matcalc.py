"""Dense symmetric-matrix calculus.

``vecs`` stacks the lower triangle column by column, so the diagonal entry
of column ``j`` (1-based) sits at ``1 + N(j-1) - (j-1)(j-2)/2``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import InvalidInputError, NotPositiveDefiniteError

SYMMETRY_RTOL = 1e-10

__all__ = [
    "vecs",
    "unvecs",
    "vec",
    "duplication_matrix",
    "sym_sqrt",
    "sym_inv_sqrt",
    "diag_indicator",
    "nullspace_basis",
    "kron",
    "frobenius_norm",
    "check_symmetric",
    "check_spd",
    "vecs_size",
]


def vecs_size(n: int) -> int:
    return n * (n + 1) // 2


def _n_from_vecs_length(length: int) -> int:
    n = int(round((np.sqrt(8 * length + 1) - 1) / 2))
    if vecs_size(n) != length:
        raise InvalidInputError(f"length {length} is not a triangular number")
    return n


@lru_cache(maxsize=None)
def _vecs_index(n: int) -> tuple[NDArray[np.intp], NDArray[np.intp]]:
    # row-major upper triangle of A^T == column-major lower triangle of A
    cols, rows = np.triu_indices(n)
    return rows, cols


def check_symmetric(a: ArrayLike, name: str = "matrix") -> NDArray[np.float64]:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {a.shape}")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if scale > 0 and np.max(np.abs(a - a.T)) > SYMMETRY_RTOL * scale:
        raise InvalidInputError(f"{name} is not symmetric")
    return a


def check_spd(a: ArrayLike, name: str = "matrix") -> NDArray[np.float64]:
    """Validate symmetry and positive-definiteness; returns the array."""
    a = check_symmetric(a, name)
    min_eig = np.linalg.eigvalsh(a)[0]
    if not min_eig > 0:
        raise NotPositiveDefiniteError(
            f"{name} is not positive-definite (smallest eigenvalue {min_eig:.3e})"
        )
    return a


def vecs(a: ArrayLike) -> NDArray[np.float64]:
    a = check_symmetric(a)
    rows, cols = _vecs_index(a.shape[0])
    return a[rows, cols].copy()


def unvecs(v: ArrayLike, n: int | None = None) -> NDArray[np.float64]:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise InvalidInputError("vecs vector must be one-dimensional")
    if n is None:
        n = _n_from_vecs_length(v.size)
    elif v.size != vecs_size(n):
        raise InvalidInputError(f"expected length {vecs_size(n)} for N={n}, got {v.size}")
    rows, cols = _vecs_index(n)
    out = np.zeros((n, n))
    out[rows, cols] = v
    out[cols, rows] = v
    return out


def vec(a: ArrayLike) -> NDArray[np.float64]:
    """Column-major full stacking."""
    return np.asarray(a, dtype=np.float64).reshape(-1, order="F")


@lru_cache(maxsize=None)
def _duplication(n: int) -> NDArray[np.float64]:
    rows, cols = _vecs_index(n)
    d = np.zeros((n * n, vecs_size(n)))
    for k, (i, j) in enumerate(zip(rows, cols)):
        d[i + j * n, k] = 1.0
        d[j + i * n, k] = 1.0
    d.setflags(write=False)
    return d


def duplication_matrix(n: int) -> NDArray[np.float64]:
    """D_N with ``D_N @ vecs(A) == vec(A)`` for symmetric ``A``."""
    if n < 1:
        raise InvalidInputError("N must be >= 1")
    return _duplication(n).copy()


def _spd_eigh(s: ArrayLike, name: str) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    s = check_symmetric(s, name)
    w, v = np.linalg.eigh(s)
    if not w[0] > 0:
        raise NotPositiveDefiniteError(
            f"{name} is not positive-definite (smallest eigenvalue {w[0]:.3e})"
        )
    return w, v


def sym_sqrt(s: ArrayLike) -> NDArray[np.float64]:
    """Symmetric positive-definite square root via eigendecomposition."""
    w, v = _spd_eigh(s, "S")
    r = (v * np.sqrt(w)) @ v.T
    return 0.5 * (r + r.T)


def sym_inv_sqrt(s: ArrayLike) -> NDArray[np.float64]:
    w, v = _spd_eigh(s, "S")
    r = (v / np.sqrt(w)) @ v.T
    return 0.5 * (r + r.T)


def diag_indicator(n: int) -> NDArray[np.float64]:
    if n < 1:
        raise InvalidInputError("N must be >= 1")
    j = np.arange(1, n + 1)
    idx = 1 + n * (j - 1) - (j - 1) * (j - 2) // 2
    out = np.zeros(vecs_size(n))
    out[idx - 1] = 1.0
    return out


def nullspace_basis(j: ArrayLike, qbar: int | None = None) -> NDArray[np.float64]:
    """Orthonormal basis of the null space of a single-row Jacobian.

    Computed from the right singular vectors of ``j``; the basis is unique
    only up to rotation.
    """
    j = np.atleast_2d(np.asarray(j, dtype=np.float64))
    if j.shape[0] != 1:
        raise InvalidInputError("expected a single-row Jacobian")
    q = j.shape[1]
    if not np.any(j):
        raise InvalidInputError("Jacobian is identically zero")
    if qbar is None:
        qbar = q - 1
    if qbar != q - 1:
        raise InvalidInputError(f"null space of a nonzero row has dimension {q - 1}, not {qbar}")
    _, _, vt = np.linalg.svd(j)
    return vt[1:].T.copy()


def kron(a: ArrayLike, b: ArrayLike) -> NDArray[np.float64]:
    return np.kron(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def frobenius_norm(a: ArrayLike) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))
