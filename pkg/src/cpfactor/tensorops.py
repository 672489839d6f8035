"""Dense tensor kernel: canonical reshaping and small linear algebra.

Conventions used throughout the package:

* A tensor is a plain ``numpy.ndarray``; mode indices are 0-based.
* The canonical vectorization is first-index-fastest (Fortran order), so
  ``vec(outer([a, b])) == kron(b, a)``.
* ``matricize(t, k)`` puts mode k on the rows and the remaining modes on the
  columns in ascending order, first index fastest.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .exceptions import DataError, RankDeficientError

_SYM_TOL = 1e-8


def vec(t: np.ndarray) -> np.ndarray:
    """Canonical (first-index-fastest) vectorization."""
    return np.asarray(t).ravel(order="F")


def tensorize(v: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`vec` for the given shape."""
    v = np.asarray(v)
    if v.size != int(np.prod(shape)):
        raise DataError(f"cannot reshape {v.size} entries into {tuple(shape)}")
    return v.reshape(tuple(shape), order="F")


def matricize(t: np.ndarray, k: int) -> np.ndarray:
    """Mode-k matricization: d_k rows, remaining modes ascending on columns."""
    t = np.asarray(t)
    if not 0 <= k < t.ndim:
        raise DataError(f"mode {k} out of range for order-{t.ndim} tensor")
    return np.moveaxis(t, k, 0).reshape((t.shape[k], -1), order="F")


def dematricize(m: np.ndarray, k: int, shape: Sequence[int]) -> np.ndarray:
    """Exact inverse of ``matricize(t, k)`` given the original shape."""
    shape = tuple(shape)
    if not 0 <= k < len(shape):
        raise DataError(f"mode {k} out of range for order-{len(shape)} tensor")
    moved = (shape[k],) + shape[:k] + shape[k + 1:]
    return np.moveaxis(np.asarray(m).reshape(moved, order="F"), 0, k)


def unfold_square(t: np.ndarray) -> np.ndarray:
    """Unfold an order-2K tensor with shape (d_1..d_K, d_1..d_K) to d x d."""
    t = np.asarray(t)
    if t.ndim % 2 != 0 or t.ndim == 0:
        raise DataError(f"expected an even-order tensor, got order {t.ndim}")
    half = t.ndim // 2
    if t.shape[:half] != t.shape[half:]:
        raise DataError(f"half-shapes mismatch: {t.shape[:half]} vs {t.shape[half:]}")
    d = int(np.prod(t.shape[:half]))
    return t.reshape((d, d), order="F")


def fold_square(m: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold_square`: reshape d x d back to (dims, dims)."""
    dims = tuple(dims)
    d = int(np.prod(dims))
    m = np.asarray(m)
    if m.shape != (d, d):
        raise DataError(f"expected a {d}x{d} matrix, got {m.shape}")
    return m.reshape(dims + dims, order="F")


def mode_product(t: np.ndarray, v: np.ndarray, k: int) -> np.ndarray:
    """k-mode product with a matrix (mode replaced) or vector (mode removed)."""
    t = np.asarray(t)
    v = np.asarray(v)
    if not 0 <= k < t.ndim:
        raise DataError(f"mode {k} out of range for order-{t.ndim} tensor")
    if v.ndim == 1:
        if v.shape[0] != t.shape[k]:
            raise DataError(f"vector length {v.shape[0]} != d_{k} = {t.shape[k]}")
        return np.tensordot(t, v, axes=([k], [0]))
    if v.ndim == 2:
        if v.shape[1] != t.shape[k]:
            raise DataError(f"matrix columns {v.shape[1]} != d_{k} = {t.shape[k]}")
        return np.moveaxis(np.tensordot(v, t, axes=([1], [k])), 0, k)
    raise DataError("mode_product expects a vector or matrix")


def dual_mode_product(t: np.ndarray, m: np.ndarray, h: int) -> np.ndarray:
    """Contract modes h and K+h of an order-2K tensor against a d_h x d_h matrix."""
    t = np.asarray(t)
    m = np.asarray(m)
    if t.ndim % 2 != 0:
        raise DataError(f"expected an even-order tensor, got order {t.ndim}")
    half = t.ndim // 2
    if not 0 <= h < half:
        raise DataError(f"mode {h} out of range for half-order {half}")
    dh = t.shape[h]
    if t.shape[half + h] != dh or m.shape != (dh, dh):
        raise DataError(
            f"dimension mismatch: modes ({t.shape[h]}, {t.shape[half + h]}) vs matrix {m.shape}"
        )
    return np.tensordot(t, m, axes=([h, half + h], [0, 1]))


def outer(vs: Sequence[np.ndarray]) -> np.ndarray:
    """Outer product of one or more vectors: entry (i_1..i_K) = prod_k vs[k][i_k]."""
    if len(vs) == 0:
        raise DataError("outer requires at least one vector")
    result = np.asarray(vs[0], dtype=float)
    if result.ndim != 1:
        raise DataError("outer expects 1-D vectors")
    for v in vs[1:]:
        v = np.asarray(v, dtype=float)
        if v.ndim != 1:
            raise DataError("outer expects 1-D vectors")
        result = np.multiply.outer(result, v)
    return result


def kron_chain(vs: Sequence[np.ndarray]) -> np.ndarray:
    """Kronecker product ordered so that kron_chain(vs) == vec(outer(vs))."""
    return reduce(np.kron, [np.asarray(v) for v in reversed(list(vs))])


def sign_fix(v: np.ndarray) -> np.ndarray:
    """Flip sign so the largest-magnitude entry is positive (first index on ties)."""
    v = np.asarray(v)
    j = int(np.argmax(np.abs(v)))
    return -v if v[j] < 0 else v


def sin_angle(u: np.ndarray, v: np.ndarray) -> float:
    """sqrt(1 - (u'v)^2) for unit vectors: spectral norm of uu' - vv'."""
    c = float(np.dot(u, v))
    return float(np.sqrt(max(0.0, 1.0 - c * c)))


@dataclass(frozen=True)
class EigenPairs:
    """Leading eigenvalues (non-increasing) and matching orthonormal vectors."""

    values: np.ndarray  # (k,)
    vectors: np.ndarray  # (n, k)

    def __post_init__(self):
        if np.any(np.diff(self.values) > 1e-12 * max(1.0, abs(float(self.values[0])))):
            raise DataError("eigenvalues must be sorted non-increasing")


def _check_symmetric(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DataError(f"expected a square matrix, got {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m))) if m.size else 1.0)
    if float(np.max(np.abs(m - m.T))) > _SYM_TOL * scale:
        raise DataError("matrix is not symmetric within tolerance")
    return m


def top_eigs(m: np.ndarray, k: int) -> EigenPairs:
    """Top k algebraically largest eigenpairs of a symmetric matrix.

    Uses a dense solver for small problems and ARPACK (with a fixed start
    vector, for determinism) when the matrix is large and k is small.
    """
    m = _check_symmetric(m)
    n = m.shape[0]
    if not 1 <= k <= n:
        raise DataError(f"k={k} out of range for {n}x{n} matrix")

    use_arpack = n > 600 and k < n // 4
    if use_arpack:
        v0 = np.full(n, 1.0 / np.sqrt(n))
        try:
            vals, vecs = scipy.sparse.linalg.eigsh(m, k=k, which="LA", v0=v0)
        except scipy.sparse.linalg.ArpackNoConvergence:
            use_arpack = False
    if not use_arpack:
        vals, vecs = np.linalg.eigh(m)
        vals, vecs = vals[-k:], vecs[:, -k:]

    order = np.argsort(vals)[::-1]
    vals = np.ascontiguousarray(vals[order])
    vecs = np.ascontiguousarray(vecs[:, order])
    for j in range(k):
        vecs[:, j] = sign_fix(vecs[:, j])
    return EigenPairs(values=vals, vectors=vecs)


def top_left_singular(m: np.ndarray) -> tuple[float, np.ndarray]:
    """Leading singular value and left singular vector, sign-fixed."""
    m = np.asarray(m, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    if not np.any(m):
        raise DataError("zero matrix has no principal direction")
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    return float(s[0]), sign_fix(u[:, 0])


def gram_inverse_dual(a: np.ndarray) -> np.ndarray:
    """B = A (A'A)^{-1}, computed via QR so that B'A = I holds to ~1e-10.

    Raises RankDeficientError when the smallest singular value of A is
    at or below 1e-10.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise DataError("expected a matrix")
    if a.shape[1] == 0:
        return a.copy()
    smin = float(np.linalg.svd(a, compute_uv=False)[-1])
    if smin <= 1e-10:
        raise RankDeficientError(smin)
    q, r = np.linalg.qr(a, mode="reduced")
    # B' = R^{-1} Q'
    b = scipy.linalg.solve_triangular(r, q.T, lower=False).T
    # Newton polish: keeps B'A = I to ~1e-10 even at condition numbers ~1e6
    eye = np.eye(a.shape[1])
    for _ in range(3):
        err = eye - b.T @ a
        if float(np.max(np.abs(err))) <= 1e-12:
            break
        b = b + b @ err.T
    return b
