"""Warm-start estimation of CP loading vectors.

The initializer eigendecomposes the unfolded covariance and reshapes each
spiked eigenvector into per-mode directions. Eigenvalues that are too close
together (relative to the smallest spiked one) are handled by a randomized
projection sweep that disentangles the mixed eigenspace.
"""
from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .covariance import CovarianceBundle
from .exceptions import DataError, SurvivorShortfallError
from .seeding import rng_from, seed_tuple
from .tensorops import (
    dual_mode_product,
    fold_square,
    matricize,
    sign_fix,
    tensorize,
    top_left_singular,
)


@dataclass(frozen=True)
class InitConfig:
    """Tuning knobs for the initializer.

    L defaults to 2 r^2 when left unset; h defaults to the longest mode.
    """

    r: int
    c0: float = 0.1
    nu: float = 0.8
    L: int | None = None
    h: int | None = None
    seed: int | tuple[int, ...] = 0

    def __post_init__(self):
        if self.r < 1:
            raise DataError(f"rank must be >= 1, got {self.r}")
        if not 0.0 < self.c0 < 1.0:
            raise DataError(f"c0 must lie in (0, 1), got {self.c0}")
        if not 0.0 < self.nu < 1.0:
            raise DataError(f"nu must lie in (0, 1), got {self.nu}")
        if self.L is not None and self.L < 1:
            raise DataError(f"L must be >= 1, got {self.L}")

    def resolved_L(self) -> int:
        return self.L if self.L is not None else 2 * self.r * self.r


@dataclass(frozen=True)
class LoadingSet:
    """Per-mode loading matrices with unit-norm columns."""

    matrices: tuple[np.ndarray, ...]
    gap_pass: tuple[bool, ...] | None = None
    groups: tuple[tuple[int, ...], ...] = field(default=())

    def __post_init__(self):
        for m in self.matrices:
            norms = np.linalg.norm(m, axis=0)
            if m.shape[1] and np.max(np.abs(norms - 1.0)) > 1e-8:
                raise DataError("loading columns must have unit norm")

    @property
    def r(self) -> int:
        return self.matrices[0].shape[1]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(m.shape[0] for m in self.matrices)

    @property
    def used_randomized(self) -> bool:
        return len(self.groups) > 0


def eigengap_regime(values: np.ndarray, i: int, c0: float) -> bool:
    """Check min(|l_i - l_{i-1}|, |l_i - l_{i+1}|) > c0 * l_r for 0-based i.

    The neighbours off the ends follow the conventions l_{-1} = +inf and
    l_r = 0 (one past the last retained eigenvalue).
    """
    values = np.asarray(values, dtype=float)
    r = values.shape[0]
    if not 0 <= i < r:
        raise DataError(f"index {i} out of range for {r} eigenvalues")
    left = np.inf if i == 0 else abs(values[i] - values[i - 1])
    right = abs(values[i] - (0.0 if i == r - 1 else values[i + 1]))
    return min(left, right) > c0 * values[r - 1]


def composite_pca_one(u_hat: np.ndarray, dims: Sequence[int]) -> list[np.ndarray]:
    """Split a unit d-vector into per-mode directions via mode-k matricizations."""
    u_hat = np.asarray(u_hat, dtype=float)
    if not np.any(u_hat):
        raise DataError("cannot split the zero vector")
    t = tensorize(u_hat, dims)
    return [top_left_singular(matricize(t, k))[1] for k in range(len(dims))]


def _contract_einsum(xi: np.ndarray, tuple_vecs: Sequence[np.ndarray], keep: int | None):
    """Contract an order-2K tensor with the duplicated tuple on both halves.

    Modes keep and K+keep are left open (returning a d_h x d_h matrix); with
    keep=None every mode is contracted and a scalar comes back.
    """
    K = xi.ndim // 2
    letters = string.ascii_lowercase[: 2 * K]
    operands = [xi]
    subs = [letters]
    for m in range(2 * K):
        if keep is not None and (m == keep or m == K + keep):
            continue
        operands.append(np.asarray(tuple_vecs[m % K]))
        subs.append(letters[m])
    out = "" if keep is None else letters[keep] + letters[K + keep]
    return np.einsum(",".join(subs) + "->" + out, *operands)


def randomized_projection(
    xi: np.ndarray,
    s: int,
    L: int,
    h: int | None = None,
    nu: float = 0.8,
    seed=0,
) -> list[list[np.ndarray]]:
    """Recover s CP loading tuples from an order-2K tensor by random slicing.

    Each of the L trials contracts mode h and its mirror with a Gaussian
    matrix, reads per-mode directions off the collapsed tensor, and the
    greedy selection keeps the s highest-scoring tuples while discarding
    candidates too collinear (> nu) with the ones already taken.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.ndim % 2 != 0 or xi.ndim < 4:
        raise DataError("expected an order-2K tensor with K >= 2")
    K = xi.ndim // 2
    dims = xi.shape[:K]
    if xi.shape[K:] != dims:
        raise DataError("half-shapes of the projection tensor differ")
    if s < 1 or L < s:
        raise DataError(f"need L >= s >= 1, got s={s}, L={L}")
    if h is None:
        h = int(np.argmax(dims))
    if not 0 <= h < K:
        raise DataError(f"projection mode {h} out of range")

    rest = [k for k in range(K) if k != h]
    rest_dims = tuple(dims[k] for k in rest)
    candidates: list[list[np.ndarray]] = []
    for ell in range(L):
        theta = rng_from(seed, ell).standard_normal((dims[h], dims[h]))
        collapsed = dual_mode_product(xi, theta, h)
        n_rest = int(np.prod(rest_dims))
        _, u = top_left_singular(collapsed.reshape((n_rest, n_rest), order="F"))
        u_t = tensorize(u, rest_dims)
        vecs: list[np.ndarray | None] = [None] * K
        for pos, k in enumerate(rest):
            vecs[k] = top_left_singular(matricize(u_t, pos))[1]
        m_h = _contract_einsum(xi, vecs, keep=h)
        vecs[h] = top_left_singular(m_h)[1]
        candidates.append([sign_fix(v) for v in vecs])

    scores = np.array([abs(float(_contract_einsum(xi, c, keep=None))) for c in candidates])
    remaining = list(range(L))
    selected: list[list[np.ndarray]] = []
    for _ in range(s):
        if not remaining:
            raise SurvivorShortfallError(requested=s, survivors=len(selected))
        best = remaining[int(np.argmax(scores[remaining]))]
        chosen = candidates[best]
        selected.append(chosen)
        remaining = [
            ell
            for ell in remaining
            if max(
                abs(float(np.dot(candidates[ell][k], chosen[k]))) for k in range(K)
            )
            <= nu
        ]
    return selected


def composite_pca(cov: CovarianceBundle, dims: Sequence[int], r: int) -> LoadingSet:
    """Plain composite PCA on the top-r eigenvectors (no randomized fallback)."""
    dims = tuple(dims)
    d = int(np.prod(dims))
    if r > d:
        raise DataError(f"rank {r} exceeds total dimension {d}")
    eig = cov.top_eigs(r)
    mats = [np.empty((dk, r)) for dk in dims]
    for i in range(r):
        for k, a in enumerate(composite_pca_one(eig.vectors[:, i], dims)):
            mats[k][:, i] = a
    return LoadingSet(matrices=tuple(mats))


def rc_pca(cov: CovarianceBundle, dims: Sequence[int], cfg: InitConfig) -> LoadingSet:
    """Randomized composite PCA warm start.

    Eigenvectors whose eigenvalue clears the gap test are split mode by mode;
    maximal runs of consecutive failures are re-estimated jointly through
    randomized projection on their combined eigenspace.
    """
    dims = tuple(dims)
    d = int(np.prod(dims))
    r = cfg.r
    if r > d:
        raise DataError(f"rank {r} exceeds total dimension {d}")
    eig = cov.top_eigs(r)
    if len(dims) == 1:
        # order-1 series: eigenvectors are the loadings, nothing to disentangle
        gap_pass = (True,) * r
    else:
        gap_pass = tuple(eigengap_regime(eig.values, i, cfg.c0) for i in range(r))

    groups: list[tuple[int, ...]] = []
    run: list[int] = []
    for i in range(r):
        if gap_pass[i]:
            if run:
                groups.append(tuple(run))
                run = []
        else:
            run.append(i)
    if run:
        groups.append(tuple(run))

    mats = [np.empty((dk, r)) for dk in dims]
    for i in range(r):
        if gap_pass[i]:
            for k, a in enumerate(composite_pca_one(eig.vectors[:, i], dims)):
                mats[k][:, i] = a
    for j, group in enumerate(groups):
        u = eig.vectors[:, group]
        lam = eig.values[list(group)]
        sigma_j = (u * lam) @ u.T
        xi = fold_square(sigma_j, dims)
        tuples = randomized_projection(
            xi,
            s=len(group),
            L=cfg.resolved_L(),
            h=cfg.h,
            nu=cfg.nu,
            seed=seed_tuple(cfg.seed) + (j,),
        )
        for idx, vecs in zip(group, tuples):
            for k in range(len(dims)):
                mats[k][:, idx] = vecs[k]
    for m in mats:
        for i in range(r):
            m[:, i] = sign_fix(m[:, i])
    return LoadingSet(matrices=tuple(mats), gap_pass=gap_pass, groups=tuple(groups))
