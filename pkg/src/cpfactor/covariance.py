"""Tensor time series container and covariance builders.

The contemporary covariance is the signal carrier for the main estimation
pipeline; lag-h bundles feed the autocovariance-based variant.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .exceptions import DataError
from .tensorops import EigenPairs, sign_fix, top_eigs

_DENSE_EIG_DIM = 900


class TensorSeries:
    """T equally-shaped dense tensors, stored as one (T, d_1..d_K) array."""

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=float)
        if data.ndim < 2:
            raise DataError("series data must have shape (T, d_1, ..., d_K)")
        if data.shape[0] < 2:
            raise DataError(f"need at least 2 observations, got {data.shape[0]}")
        if min(data.shape[1:]) < 1:
            raise DataError(f"invalid tensor shape {data.shape[1:]}")
        self.data = data
        self._vecs: np.ndarray | None = None

    @classmethod
    def from_obs(cls, obs: Sequence[np.ndarray]) -> "TensorSeries":
        arrs = [np.asarray(o, dtype=float) for o in obs]
        if len({a.shape for a in arrs}) > 1:
            raise DataError("observations do not share a common shape")
        return cls(np.stack(arrs, axis=0))

    @property
    def n_obs(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape[1:]

    @property
    def order(self) -> int:
        return self.data.ndim - 1

    @property
    def d(self) -> int:
        return int(np.prod(self.dims))

    @property
    def vecs(self) -> np.ndarray:
        """(T, d) matrix whose rows are canonical vectorizations of the obs."""
        if self._vecs is None:
            K = self.order
            perm = (0,) + tuple(range(K, 0, -1))
            self._vecs = np.ascontiguousarray(
                self.data.transpose(perm).reshape(self.n_obs, -1)
            )
        return self._vecs

    def demeaned(self) -> "TensorSeries":
        return TensorSeries(self.data - self.data.mean(axis=0, keepdims=True))

    def frobenius_sq(self) -> float:
        return float(np.sum(self.data**2))


def vecs_to_data(vecs: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Rebuild a (T, d_1..d_K) array from rows of canonical vectorizations."""
    dims = tuple(dims)
    T = vecs.shape[0]
    K = len(dims)
    perm = (0,) + tuple(range(K, 0, -1))
    return vecs.reshape((T,) + dims[::-1]).transpose(perm)


class CovarianceBundle:
    """Unfolded d x d covariance of a tensor series (contemporary or lag-h).

    Keeps the vectorized observations around so that leading eigenpairs can
    be computed through the T x T gram matrix when T << d.
    """

    def __init__(
        self,
        kind: str,
        dims: tuple[int, ...],
        n_obs: int,
        h: int = 0,
        left: np.ndarray | None = None,
        right: np.ndarray | None = None,
        unfolded: np.ndarray | None = None,
    ):
        if kind not in ("contemporary", "lag"):
            raise DataError(f"unknown covariance kind {kind!r}")
        self.kind = kind
        self.dims = tuple(dims)
        self.n_obs = int(n_obs)
        self.h = int(h)
        self._left = left
        self._right = right
        self._unfolded = unfolded
        self._denom = n_obs if kind == "contemporary" else n_obs - h

    @property
    def d(self) -> int:
        return int(np.prod(self.dims))

    @property
    def unfolded(self) -> np.ndarray:
        if self._unfolded is None:
            self._unfolded = (self._left.T @ self._right) / self._denom
        return self._unfolded

    def sym_unfolded(self) -> np.ndarray:
        u = self.unfolded
        return u if self.kind == "contemporary" else (u + u.T) / 2.0

    def top_eigs(self, k: int) -> EigenPairs:
        """Top-k algebraically largest eigenpairs of the (symmetrized) matrix."""
        d = self.d
        if not 1 <= k <= d:
            raise DataError(f"k={k} out of range for dimension {d}")
        if self.kind == "contemporary" and self._left is not None:
            got = self._gram_eigs(k)
            if got is not None:
                return got
        if d <= _DENSE_EIG_DIM or self._unfolded is not None:
            return top_eigs(self.sym_unfolded(), k)
        return self._operator_eigs(k)

    def _gram_eigs(self, k: int) -> EigenPairs | None:
        V = self._left
        T = V.shape[0]
        if T >= self.d or k > T - 1:
            return None
        gram = (V @ V.T) / self._denom
        vals, w = scipy.linalg.eigh(gram, subset_by_index=[T - k, T - 1])
        vals, w = vals[::-1], w[:, ::-1]
        if vals[-1] <= 1e-12 * max(vals[0], 1.0):
            return None  # gram route unreliable near the null space
        vecs = (V.T @ w) / np.sqrt(vals * self._denom)
        vecs /= np.linalg.norm(vecs, axis=0, keepdims=True)
        for j in range(k):
            vecs[:, j] = sign_fix(vecs[:, j])
        return EigenPairs(values=np.ascontiguousarray(vals), vectors=vecs)

    def _operator_eigs(self, k: int) -> EigenPairs:
        L, R, c = self._left, self._right, self._denom

        def matvec(v):
            return (L.T @ (R @ v) + R.T @ (L @ v)) / (2.0 * c)

        op = scipy.sparse.linalg.LinearOperator((self.d, self.d), matvec=matvec)
        v0 = np.full(self.d, 1.0 / np.sqrt(self.d))
        try:
            vals, vecs = scipy.sparse.linalg.eigsh(op, k=k, which="LA", v0=v0)
        except scipy.sparse.linalg.ArpackNoConvergence:
            return top_eigs(self.sym_unfolded(), k)
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
        for j in range(k):
            vecs[:, j] = sign_fix(vecs[:, j])
        return EigenPairs(values=np.ascontiguousarray(vals), vectors=np.ascontiguousarray(vecs))


def contemporary_cov(s: TensorSeries, center: bool = False) -> CovarianceBundle:
    """Sample contemporary covariance: average outer product of the obs."""
    if s.n_obs < 2:
        raise DataError("contemporary covariance needs T >= 2")
    if center:
        s = s.demeaned()
    v = s.vecs
    return CovarianceBundle("contemporary", s.dims, s.n_obs, left=v, right=v)


def lag_cov(s: TensorSeries, h: int, center: bool = False) -> CovarianceBundle:
    """Lag-h cross covariance (1/(T-h)) sum_t vec(Y_{t-h}) vec(Y_t)'."""
    if not 1 <= h < s.n_obs:
        raise DataError(f"lag h={h} must satisfy 1 <= h < T={s.n_obs}")
    if center:
        s = s.demeaned()
    v = s.vecs
    return CovarianceBundle("lag", s.dims, s.n_obs, h=h, left=v[:-h], right=v[h:])


def mode_cov(s: TensorSeries, k: int) -> np.ndarray:
    """Mode-k inner-product covariance (1/T) sum_t mat_k(Y_t) mat_k(Y_t)'."""
    if not 0 <= k < s.order:
        raise DataError(f"mode {k} out of range for order-{s.order} series")
    axes = [0] + [j for j in range(1, s.order + 1) if j != k + 1]
    m = np.tensordot(s.data, s.data, axes=(axes, axes)) / s.n_obs
    return (m + m.T) / 2.0
