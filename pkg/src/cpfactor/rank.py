"""Rank selection by eigenvalue ratios of unfolded and mode-wise covariances."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import TensorSeries, contemporary_cov, mode_cov
from .exceptions import DataError

_ZERO_GUARD = 1e-12


@dataclass(frozen=True)
class RankEstimate:
    r_hat: int
    method: str  # "uer" or "ip"
    ratios: np.ndarray  # (r_max,) for uer, (K, r_max) for ip
    per_mode: tuple[int, ...] | None = None


def default_r_max(dims) -> int:
    return max(1, min(20, min(dims) // 2))


def _ratio_argmax(values: np.ndarray, r_max: int) -> tuple[int, np.ndarray]:
    """argmax of consecutive eigenvalue ratios; near-zero denominators win."""
    lam = np.asarray(values, dtype=float)
    guard = _ZERO_GUARD * max(lam[0], 0.0)
    ratios = np.empty(r_max)
    for i in range(r_max):
        denom = lam[i + 1]
        ratios[i] = np.inf if denom <= guard else lam[i] / denom
    return int(np.argmax(ratios)) + 1, ratios


def rank_uer(s: TensorSeries, r_max: int | None = None, center: bool = False) -> RankEstimate:
    """Unfolded eigenvalue-ratio estimate of the number of factors."""
    r_max = default_r_max(s.dims) if r_max is None else int(r_max)
    if r_max < 1:
        raise DataError("r_max must be >= 1")
    if r_max + 1 > s.d:
        raise DataError(f"r_max+1 = {r_max + 1} exceeds total dimension {s.d}")
    values = contemporary_cov(s, center=center).top_eigs(r_max + 1).values
    r_hat, ratios = _ratio_argmax(values, r_max)
    return RankEstimate(r_hat=r_hat, method="uer", ratios=ratios)


def rank_ip(s: TensorSeries, r_max: int | None = None, center: bool = False) -> RankEstimate:
    """Mode-wise inner-product eigenvalue-ratio estimate (max over modes).

    Requires r_max + 1 <= d_k for every mode; each per-mode estimate is
    therefore capped at d_k - 1.
    """
    r_max = default_r_max(s.dims) if r_max is None else int(r_max)
    if r_max < 1:
        raise DataError("r_max must be >= 1")
    if r_max + 1 > min(s.dims):
        raise DataError(
            f"r_max+1 = {r_max + 1} exceeds the smallest mode dimension {min(s.dims)}"
        )
    if center:
        s = s.demeaned()
    per_mode = []
    ratio_rows = np.empty((s.order, r_max))
    for k in range(s.order):
        lam = np.linalg.eigvalsh(mode_cov(s, k))[::-1]
        r_k, ratio_rows[k] = _ratio_argmax(lam, r_max)
        per_mode.append(r_k)
    return RankEstimate(
        r_hat=max(per_mode), method="ip", ratios=ratio_rows, per_mode=tuple(per_mode)
    )
