"""Iterative simultaneous orthogonalization: loading refinement and factors.

Each sweep projects the series onto a single mode with the dual loadings of
all the other modes, isolating one factor at a time, and re-extracts the
loading as the top eigenvector of the projected covariance. The dual
matrices are refreshed after every mode sweep.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .covariance import TensorSeries, vecs_to_data
from .exceptions import DataError, DegeneracyError, RankDeficientError
from .initialization import LoadingSet
from .tensorops import gram_inverse_dual, kron_chain, sin_angle, top_eigs

_DEGENERATE_W = 1e-12


@dataclass(frozen=True)
class IsoConfig:
    epsilon: float = 1e-5
    max_iter: int = 100
    cov_kind: str = "contemporary"  # "contemporary" or "lag"
    lag_h: int = 1

    def __post_init__(self):
        if self.epsilon <= 0:
            raise DataError("epsilon must be positive")
        if self.max_iter < 1:
            raise DataError("max_iter must be >= 1")
        if self.cov_kind not in ("contemporary", "lag"):
            raise DataError(f"unknown cov_kind {self.cov_kind!r}")
        if self.cov_kind == "lag" and self.lag_h < 1:
            raise DataError("lag_h must be >= 1")


@dataclass
class CpModel:
    """Fitted CP factor model.

    Loadings have unit-norm, sign-fixed columns; duals satisfy B_k'A_k = I;
    factors are scaled so each column has unit sample second moment, with
    the scale absorbed into the weights.
    """

    dims: tuple[int, ...]
    loadings: tuple[np.ndarray, ...]
    duals: tuple[np.ndarray, ...]
    weights: np.ndarray
    factors: np.ndarray
    n_iter: int
    converged: bool
    cov_kind: str = "contemporary"
    lag_h: int = 0
    degenerate: tuple[bool, ...] = ()
    crit_history: tuple[float, ...] = ()  # convergence criterion per iteration

    @property
    def r(self) -> int:
        return int(self.weights.shape[0])

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def n_obs(self) -> int:
        return int(self.factors.shape[0])

    def component_matrix(self) -> np.ndarray:
        """d x r matrix whose column i is vec(outer(a_i1, ..., a_iK))."""
        d = int(np.prod(self.dims))
        out = np.empty((d, self.r))
        for i in range(self.r):
            out[:, i] = kron_chain([m[:, i] for m in self.loadings])
        return out


def _project(data: np.ndarray, duals, i: int, skip: int | None) -> np.ndarray:
    """Contract every mode except `skip` with the i-th dual column."""
    out = data
    K = data.ndim - 1
    for k in range(K - 1, -1, -1):
        if k == skip:
            continue
        out = np.tensordot(out, duals[k][:, i], axes=([k + 1], [0]))
    return out


def project_z(s: TensorSeries, duals, i: int, k: int) -> np.ndarray:
    """(T, d_k) matrix of the series projected onto mode k for factor i."""
    if not 0 <= k < s.order:
        raise DataError(f"mode {k} out of range")
    if not 0 <= i < duals[0].shape[1]:
        raise DataError(f"factor index {i} out of range")
    for ell, b in enumerate(duals):
        if b.shape[0] != s.dims[ell]:
            raise DataError(f"dual matrix for mode {ell} has wrong length")
    return _project(s.data, duals, i, skip=k)


def _z_covariance(z: np.ndarray, cfg: IsoConfig) -> np.ndarray:
    T = z.shape[0]
    if cfg.cov_kind == "contemporary":
        return (z.T @ z) / T
    h = cfg.lag_h
    if h >= T:
        raise DataError(f"lag {h} too large for T={T}")
    m = (z[:-h].T @ z[h:]) / (T - h)
    return (m + m.T) / 2.0


def extract_factors(s: TensorSeries, duals) -> tuple[np.ndarray, np.ndarray, tuple[bool, ...]]:
    """Weights, unit-second-moment factors, and per-factor degeneracy flags."""
    r = duals[0].shape[1]
    T = s.n_obs
    raw = np.empty((T, r))
    for i in range(r):
        raw[:, i] = _project(s.data, duals, i, skip=None)
    w = np.sqrt(np.mean(raw**2, axis=0))
    degenerate = tuple(bool(x < _DEGENERATE_W) for x in w)
    factors = np.zeros_like(raw)
    for i in range(r):
        if not degenerate[i]:
            factors[:, i] = raw[:, i] / w[i]
    return w, factors, degenerate


def iso_fit(s: TensorSeries, init: LoadingSet, cfg: IsoConfig | None = None) -> CpModel:
    """Refine a warm start by iterative simultaneous orthogonalization."""
    cfg = cfg or IsoConfig()
    if init.dims != s.dims:
        raise DataError(f"init dims {init.dims} do not match series dims {s.dims}")
    r = init.r
    K = s.order
    if r > min(s.dims):
        warnings.warn(
            f"rank {r} exceeds the smallest mode dimension {min(s.dims)}; "
            "the dual system is likely ill-posed",
            stacklevel=2,
        )
    for m in init.matrices:
        if m.shape[1] and np.max(np.abs(np.linalg.norm(m, axis=0) - 1.0)) > 1e-6:
            raise DataError("initial loading columns must have unit norm")

    A = [np.array(m, dtype=float) for m in init.matrices]
    if r == 0:
        w = np.zeros(0)
        factors = np.zeros((s.n_obs, 0))
        return CpModel(
            dims=s.dims, loadings=tuple(A), duals=tuple(a.copy() for a in A),
            weights=w, factors=factors, n_iter=0, converged=True,
            cov_kind=cfg.cov_kind, lag_h=cfg.lag_h if cfg.cov_kind == "lag" else 0,
        )

    def duals_of(mats, it):
        out = []
        for k, a in enumerate(mats):
            try:
                out.append(gram_inverse_dual(a))
            except RankDeficientError as exc:
                raise DegeneracyError(
                    f"collinear loading estimates at iteration {it}, mode {k}: "
                    f"condition number {np.linalg.cond(a):.3e}"
                ) from exc
        return out

    B = duals_of(A, 0)
    n_iter = 0
    converged = False
    crit_history: list[float] = []
    for m_it in range(1, cfg.max_iter + 1):
        prev = [a.copy() for a in A]
        for k in range(K):
            for i in range(r):
                z = _project(s.data, B, i, skip=k)
                A[k][:, i] = top_eigs(_z_covariance(z, cfg), 1).vectors[:, 0]
            try:
                B[k] = gram_inverse_dual(A[k])
            except RankDeficientError as exc:
                raise DegeneracyError(
                    f"collinear loading estimates at iteration {m_it}, mode {k}: "
                    f"condition number {np.linalg.cond(A[k]):.3e}"
                ) from exc
        n_iter = m_it
        crit = max(
            sin_angle(A[k][:, i], prev[k][:, i]) for k in range(K) for i in range(r)
        )
        crit_history.append(crit)
        if crit <= cfg.epsilon:
            converged = True
            break

    w, factors, degenerate = extract_factors(s, B)
    order = np.argsort(-w, kind="stable")
    A = [a[:, order] for a in A]
    B = [b[:, order] for b in B]
    return CpModel(
        dims=s.dims,
        loadings=tuple(A),
        duals=tuple(B),
        weights=w[order],
        factors=factors[:, order],
        n_iter=n_iter,
        converged=converged,
        cov_kind=cfg.cov_kind,
        lag_h=cfg.lag_h if cfg.cov_kind == "lag" else 0,
        degenerate=tuple(degenerate[j] for j in order),
        crit_history=tuple(crit_history),
    )


def reconstruct(model: CpModel) -> TensorSeries:
    """Fitted series: sum_i w_i f_it outer(a_i1, ..., a_iK)."""
    if model.r == 0:
        return TensorSeries(np.zeros((model.n_obs,) + model.dims))
    vecs = (model.factors * model.weights) @ model.component_matrix().T
    return TensorSeries(vecs_to_data(vecs, model.dims))


def r_squared(s: TensorSeries, fitted: TensorSeries) -> float:
    """In-sample R^2 with the demeaned series in the denominator."""
    if s.data.shape != fitted.data.shape:
        raise DataError("series and fitted values have different shapes")
    denom = float(np.sum((s.data - s.data.mean(axis=0, keepdims=True)) ** 2))
    if denom <= 0.0:
        raise DataError("constant series: demeaned denominator is zero")
    return 1.0 - float(np.sum((s.data - fitted.data) ** 2)) / denom
