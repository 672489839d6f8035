"""Inference on fitted models: standard errors, confidence intervals,
angle diagnostics, and VAR(1) factor forecasting."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import reduce

import numpy as np
from scipy.stats import norm

from .covariance import TensorSeries
from .exceptions import DataError, DegeneracyError
from .iso import CpModel, reconstruct
from .tensorops import kron_chain, outer, vec

_ALIGNED_TOL = 1e-6


@dataclass(frozen=True)
class NoiseCov:
    """Thresholded residual covariance with the parameters that produced it."""

    matrix: np.ndarray
    c_thr: float
    cutoff: float  # c_thr * sqrt(log d / T)


@dataclass(frozen=True)
class CiReport:
    i: int
    k: int
    j: int
    estimate: float
    se: float
    lower: float
    upper: float
    level: float
    regime: str  # "normal" or "slow-rate"


def estimate_theta(model: CpModel) -> np.ndarray:
    """Theta_hat = W (F'F / T) W; its diagonal equals the squared weights."""
    f = model.factors
    second_moment = (f.T @ f) / f.shape[0]
    theta = np.outer(model.weights, model.weights) * second_moment
    # unit sample second moment per factor makes the diagonal w_i^2 exactly
    np.fill_diagonal(theta, model.weights**2)
    return theta


def residuals(s: TensorSeries, model: CpModel) -> TensorSeries:
    if s.dims != model.dims or s.n_obs != model.n_obs:
        raise DataError("series shape does not match the fitted model")
    return TensorSeries(s.data - reconstruct(model).data)


def threshold_cov(res: TensorSeries, c_thr: float = 2.0) -> NoiseCov:
    """Hard-thresholded residual covariance.

    Off-diagonal entries are kept only when they exceed
    c_thr * sqrt(sigma_jj * sigma_ll) * sqrt(log d / T); the diagonal is
    never touched.
    """
    if c_thr < 0:
        raise DataError("threshold constant must be non-negative")
    e = res.vecs
    T, d = e.shape
    sigma = (e.T @ e) / T
    cutoff = c_thr * np.sqrt(np.log(d) / T)
    diag = np.sqrt(np.clip(np.diag(sigma), 0.0, None))
    keep = np.abs(sigma) > cutoff * np.outer(diag, diag)
    out = np.where(keep, sigma, 0.0)
    np.fill_diagonal(out, np.diag(sigma))
    return NoiseCov(matrix=out, c_thr=float(c_thr), cutoff=float(cutoff))


def h_direction(duals_cols, a_col: np.ndarray, u: np.ndarray, k: int) -> np.ndarray:
    """Kronecker direction with slot k carrying the projected contrast.

    duals_cols holds one dual column per mode (the k-th entry is ignored);
    slot k is replaced by (I - aa')u before vectorization.
    """
    u = np.asarray(u, dtype=float)
    if np.linalg.norm(u) == 0:
        raise DataError("direction u must be nonzero")
    p_u = u - a_col * float(a_col @ u)
    slots = [p_u if ell == k else np.asarray(duals_cols[ell]) for ell in range(len(duals_cols))]
    return kron_chain(slots)


def sigma_u(model: CpModel, ncov: NoiseCov, i: int, k: int, u: np.ndarray) -> float:
    """Asymptotic variance h' Sigma_e h of the linear form u'a_ik.

    Warns when u is (numerically) aligned with the estimated loading, where
    the normal approximation does not apply.
    """
    a = model.loadings[k][:, i]
    cols = [model.duals[ell][:, i] for ell in range(model.order)]
    h = h_direction(cols, a, u, k)
    p_norm = np.linalg.norm(u - a * float(a @ u))
    if p_norm < _ALIGNED_TOL:
        warnings.warn(
            "direction u is aligned with the estimated loading; the normal "
            "regime does not apply (see the angle diagnostics)",
            stacklevel=2,
        )
    return float(max(h @ ncov.matrix @ h, 0.0))


def loading_ci(
    model: CpModel,
    ncov: NoiseCov,
    i: int,
    k: int,
    j: int,
    level: float = 0.95,
) -> CiReport:
    """Confidence interval for entry j of loading vector (i, k).

    The half width q * sigma_hat / sqrt(T * Theta_ii) inverts the CLT pivot;
    the regime flag marks cells where d_k * Theta_ii <= T and the slower
    non-normal rate applies.
    """
    if not 0.0 < level < 1.0:
        raise DataError(f"level must lie in (0, 1), got {level}")
    dk = model.dims[k]
    if not 0 <= j < dk:
        raise DataError(f"entry index {j} out of range for mode of length {dk}")
    u = np.zeros(dk)
    u[j] = 1.0
    theta_ii = float(estimate_theta(model)[i, i])
    var = sigma_u(model, ncov, i, k, u)
    T = model.n_obs
    se = float(np.sqrt(var) / np.sqrt(T * theta_ii))
    q = float(norm.ppf(0.5 + level / 2.0))
    point = float(model.loadings[k][j, i])
    regime = "slow-rate" if dk * theta_ii <= T else "normal"
    return CiReport(
        i=i, k=k, j=j, estimate=point, se=se,
        lower=point - q * se, upper=point + q * se, level=level, regime=regime,
    )


def clt_statistic(
    model: CpModel,
    ncov: NoiseCov,
    i: int,
    k: int,
    u: np.ndarray,
    a_true: np.ndarray,
) -> float:
    """Standardized pivot sqrt(T Theta_ii) u'(a_hat - sign * a_true) / sigma."""
    a_hat = model.loadings[k][:, i]
    sgn = 1.0 if float(a_hat @ a_true) >= 0 else -1.0
    var = sigma_u(model, ncov, i, k, u)
    if var <= 0.0:
        raise DegeneracyError("estimated variance is zero for this direction")
    theta_ii = float(estimate_theta(model)[i, i])
    T = model.n_obs
    return float(np.sqrt(T * theta_ii) * (u @ (a_hat - sgn * a_true)) / np.sqrt(var))


def angle_mixture_weights(model: CpModel, ncov: NoiseCov, i: int, k: int) -> np.ndarray:
    """Chi-square mixture weights for the aligned-direction diagnostic.

    Eigenvalues of Sigma_ik^{1/2} P_perp Sigma_ik^{1/2} with
    Sigma_ik = d_k^{-1} P' Sigma_e P, P the Kronecker projection matrix
    sending vec(E) to E x_{l != k} b_il.
    """
    dk = model.dims[k]
    mats = []
    for ell in range(model.order):
        if ell == k:
            mats.append(np.eye(dk))
        else:
            mats.append(model.duals[ell][:, i][:, None])
    proj = reduce(np.kron, reversed(mats))  # d x d_k
    sigma_ik = (proj.T @ ncov.matrix @ proj) / dk
    sigma_ik = (sigma_ik + sigma_ik.T) / 2.0
    vals, vecs = np.linalg.eigh(sigma_ik)
    scale = max(1.0, float(vals[-1]))
    if vals[0] < -1e-8 * scale:
        raise DegeneracyError(
            f"projected noise covariance is not PSD: min eigenvalue {vals[0]:.3e}"
        )
    root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    a = model.loadings[k][:, i]
    p_perp = np.eye(dk) - np.outer(a, a)
    weights = np.linalg.eigvalsh(root @ p_perp @ root)[::-1]
    return np.clip(weights, 0.0, None) + 0.0


def var1_forecast(factors: np.ndarray, steps: int) -> np.ndarray:
    """Iterated point forecasts from a least-squares VAR(1) with intercept."""
    f = np.asarray(factors, dtype=float)
    if f.ndim != 2:
        raise DataError("factors must be a T x r matrix")
    T, r = f.shape
    if steps < 1:
        raise DataError("steps must be >= 1")
    if T < r + 2:
        raise DegeneracyError(
            f"singular regression design: T={T} too small for a VAR(1) on {r} factors"
        )
    x = np.column_stack([np.ones(T - 1), f[:-1]])
    beta, *_ = np.linalg.lstsq(x, f[1:], rcond=None)
    intercept, phi = beta[0], beta[1:].T  # phi is r x r, row = equation
    out = np.empty((steps, r))
    cur = f[-1]
    for s in range(steps):
        cur = intercept + phi @ cur
        out[s] = cur
    return out


def forecast_y(model: CpModel, f_next: np.ndarray) -> np.ndarray:
    """One-period-ahead tensor from forecast factors and fitted loadings."""
    f_next = np.asarray(f_next, dtype=float)
    if f_next.shape != (model.r,):
        raise DataError(f"expected {model.r} forecast factors, got {f_next.shape}")
    out = np.zeros(model.dims)
    for i in range(model.r):
        out += model.weights[i] * f_next[i] * outer([m[:, i] for m in model.loadings])
    return out


def holdout_mse(actual: TensorSeries, predicted: np.ndarray) -> float:
    """Average squared Frobenius forecast error over a holdout window."""
    if predicted.shape != actual.data.shape:
        raise DataError("holdout predictions do not match the actual series")
    diff = actual.data - predicted
    return float(np.mean(np.sum(diff.reshape(diff.shape[0], -1) ** 2, axis=1)))
