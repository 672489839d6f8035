"""Simulation lab: data-generating processes, error metrics, and the
Monte-Carlo runner for the desk-scale experiment configurations I-IX and
their robustness variants."""
from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from .covariance import TensorSeries, contemporary_cov, lag_cov, vecs_to_data
from .exceptions import CpFactorError, DataError, SurvivorShortfallError
from .inference import clt_statistic, loading_ci, residuals, threshold_cov
from .initialization import InitConfig, LoadingSet, composite_pca, rc_pca
from .iso import CpModel, IsoConfig, extract_factors, iso_fit
from .rank import rank_ip, rank_uer
from .seeding import rng_from, seed_tuple
from .tensorops import gram_inverse_dual, kron_chain, matricize, outer, sin_angle

WEIGHT_RULES = ("strong", "weak", "equal", "custom")
ERROR_RULES = ("iid_normal", "toeplitz_cs", "toeplitz_iid", "var1", "pareto")


@dataclass(frozen=True)
class DgpSpec:
    """One simulation cell: dimensions, signal strength, and noise law."""

    dims: tuple[int, ...]
    T: int
    r: int = 3
    eta: float = 0.0
    phi: float = 0.1
    weight_rule: str = "strong"
    weight_scale: float = 0.2
    weight_alpha: float | None = None
    weight_value: float | None = None
    custom_weights: tuple[float, ...] | None = None
    error_rule: str = "iid_normal"
    error_rho: float = 0.0
    error_b: float = 0.5
    pareto_shape: float = 2.5
    misspec_alpha: float | None = None
    factor_corr_zeta: float = 0.0
    orthonormal_factors: bool = False
    noiseless: bool = False
    seed: int | tuple[int, ...] = 0

    def __post_init__(self):
        if min(self.dims) < 1:
            raise DataError(f"invalid dims {self.dims}")
        if self.T < 2 or self.r < 1:
            raise DataError("need T >= 2 and r >= 1")
        if not 0.0 <= self.eta < 1.0:
            raise DataError(f"eta must lie in [0, 1), got {self.eta}")
        if not abs(self.phi) < 1.0:
            raise DataError(f"|phi| must be < 1, got {self.phi}")
        if not 0.0 <= self.factor_corr_zeta < 1.0:
            raise DataError("factor_corr_zeta must lie in [0, 1)")
        if self.weight_rule not in WEIGHT_RULES:
            raise DataError(f"unknown weight rule {self.weight_rule!r}")
        if self.error_rule not in ERROR_RULES:
            raise DataError(f"unknown error rule {self.error_rule!r}")
        if self.error_rule in ("toeplitz_cs", "var1") and not abs(self.error_rho) < 1.0:
            raise DataError("|rho| must be < 1 for serially correlated errors")

    @property
    def d(self) -> int:
        return int(np.prod(self.dims))


@dataclass
class GroundTruth:
    """Generated loadings, weights, factors, and the observed series."""

    loadings: tuple[np.ndarray, ...]
    weights: np.ndarray
    factors: np.ndarray
    series: TensorSeries
    spec: DgpSpec
    core: np.ndarray | None = None  # (T, r, r) factor core under misspecification


def weights_for(spec: DgpSpec) -> np.ndarray:
    i = np.arange(1, spec.r + 1)
    if spec.weight_rule == "strong":
        return spec.weight_scale * (spec.r - i + 1) * np.sqrt(spec.d)
    if spec.weight_rule == "weak":
        if spec.weight_alpha is None:
            raise DataError("weak weight rule needs weight_alpha")
        return (spec.r - i + 1) * spec.d ** (1.0 / spec.weight_alpha)
    if spec.weight_rule == "equal":
        if spec.weight_value is None:
            raise DataError("equal weight rule needs weight_value")
        return np.full(spec.r, float(spec.weight_value))
    if spec.custom_weights is None or len(spec.custom_weights) != spec.r:
        raise DataError("custom weight rule needs r explicit weights")
    return np.asarray(spec.custom_weights, dtype=float)


def gen_loadings(dims: Sequence[int], r: int, eta: float, seed) -> list[np.ndarray]:
    """Per-mode loading matrices with coherence eta between columns.

    Gaussian draws are orthonormalized by QR; for eta > 0 columns 2..r are
    tilted towards the first column so the maximal inner product of the
    combined (Kronecker) columns equals eta.
    """
    dims = tuple(dims)
    K = len(dims)
    if r > min(dims):
        raise DataError(f"rank {r} exceeds min mode dimension {min(dims)}")
    if not 0.0 <= eta < 1.0:
        raise DataError(f"eta must lie in [0, 1), got {eta}")
    rng = seed if isinstance(seed, np.random.Generator) else rng_from(seed)
    out = []
    for dk in dims:
        raw = rng.standard_normal((dk, r))
        q, rr = np.linalg.qr(raw)
        q = q * np.sign(np.where(np.diag(rr) == 0, 1.0, np.diag(rr)))
        if eta > 0.0:
            theta = (eta ** (-2.0 / K) - 1.0) ** 0.5
            a = np.empty_like(q)
            a[:, 0] = q[:, 0]
            for i in range(1, r):
                v = q[:, 0] + theta * q[:, i]
                a[:, i] = v / np.linalg.norm(v)
            out.append(a)
        else:
            out.append(q)
    return out


def gen_factors(
    T: int,
    r: int,
    phi: float,
    zeta: float = 0.0,
    seed=0,
    orthonormal: bool = False,
) -> np.ndarray:
    """Independent stationary AR(1) columns with unit variance.

    zeta > 0 mixes the factors cross-sectionally with a Toeplitz matrix;
    orthonormal=True re-orthonormalizes the columns (QR) and rescales so the
    sample second moment stays one.
    """
    if not abs(phi) < 1.0:
        raise DataError(f"|phi| must be < 1, got {phi}")
    if not 0.0 <= zeta < 1.0:
        raise DataError(f"zeta must lie in [0, 1), got {zeta}")
    rng = seed if isinstance(seed, np.random.Generator) else rng_from(seed)
    sd = np.sqrt(1.0 - phi * phi)
    f = np.empty((T, r))
    f[0] = rng.standard_normal(r)
    innov = rng.standard_normal((T - 1, r))
    for t in range(1, T):
        f[t] = phi * f[t - 1] + sd * innov[t - 1]
    if zeta > 0.0:
        f = f @ scipy.linalg.toeplitz(zeta ** np.arange(r))
    if orthonormal:
        q, rr = np.linalg.qr(f)
        q = q * np.sign(np.where(np.diag(rr) == 0, 1.0, np.diag(rr)))
        f = q * np.sqrt(T)
    return f


def _toeplitz_sqrt(n: int, b: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(scipy.linalg.toeplitz(b ** np.arange(n)))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def _sandwich(e: np.ndarray, dims: tuple[int, ...], b: float) -> np.ndarray:
    for k, dk in enumerate(dims):
        root = _toeplitz_sqrt(dk, b)
        e = np.moveaxis(np.tensordot(e, root, axes=([k + 1], [1])), -1, k + 1)
    return e


def gen_errors(dims: Sequence[int], T: int, spec: DgpSpec, seed) -> np.ndarray:
    """Noise array (T, d_1..d_K) under the spec's error rule."""
    dims = tuple(dims)
    rng = seed if isinstance(seed, np.random.Generator) else rng_from(seed)
    if spec.error_rule == "iid_normal":
        return rng.standard_normal((T,) + dims)
    if spec.error_rule == "pareto":
        a = spec.pareto_shape
        if a <= 2.0:
            raise DataError("pareto shape must exceed 2 for finite variance")
        draws = 1.0 + rng.pareto(a, size=(T,) + dims)
        mean = a / (a - 1.0)
        sd = np.sqrt(a / ((a - 1.0) ** 2 * (a - 2.0)))
        return (draws - mean) / sd
    d = int(np.prod(dims))
    if spec.error_rule in ("toeplitz_cs", "var1") and spec.error_rho != 0.0:
        rho = spec.error_rho
        sd = np.sqrt(1.0 - rho * rho)
        z = np.empty((T, d))
        z[0] = rng.standard_normal(d)
        for t in range(1, T):
            z[t] = rho * z[t - 1] + sd * rng.standard_normal(d)
        z = z.reshape((T,) + dims)
    else:
        z = rng.standard_normal((T,) + dims)
    if spec.error_rule in ("toeplitz_cs", "toeplitz_iid"):
        z = _sandwich(z, dims, spec.error_b)
    return z


def gen_dataset(spec: DgpSpec) -> GroundTruth:
    """Compose loadings, factors, weights, and noise into an observed series."""
    loadings = gen_loadings(spec.dims, spec.r, spec.eta, rng_from(spec.seed, 0))
    if spec.misspec_alpha is not None:
        return _gen_misspecified(spec, loadings)
    factors = gen_factors(
        spec.T,
        spec.r,
        spec.phi,
        zeta=spec.factor_corr_zeta,
        seed=rng_from(spec.seed, 1),
        orthonormal=spec.orthonormal_factors,
    )
    weights = weights_for(spec)
    comp = np.column_stack([kron_chain([m[:, i] for m in loadings]) for i in range(spec.r)])
    vecs = (factors * weights) @ comp.T
    data = vecs_to_data(vecs, spec.dims)
    if not spec.noiseless:
        data = data + gen_errors(spec.dims, spec.T, spec, rng_from(spec.seed, 2))
    return GroundTruth(
        loadings=tuple(loadings),
        weights=weights,
        factors=factors,
        series=TensorSeries(data),
        spec=spec,
    )


def _gen_misspecified(spec: DgpSpec, loadings: list[np.ndarray]) -> GroundTruth:
    """Weakly misspecified DGP: a full factor core with small off-diagonals."""
    if len(spec.dims) != 2:
        raise DataError("the misspecified configuration is defined for K = 2")
    r = spec.r
    flat = gen_factors(spec.T, r * r, spec.phi, seed=rng_from(spec.seed, 1))
    core_f = flat.reshape(spec.T, r, r)
    w = np.full((r, r), spec.d ** (1.0 / spec.misspec_alpha) / 5.0)
    np.fill_diagonal(w, np.sqrt(spec.d) / 5.0)
    core = core_f * w
    a1, a2 = loadings
    data = np.einsum("ip,tpq,jq->tij", a1, core, a2)
    if not spec.noiseless:
        data = data + gen_errors(spec.dims, spec.T, spec, rng_from(spec.seed, 2))
    diag_idx = np.arange(r)
    return GroundTruth(
        loadings=tuple(loadings),
        weights=np.diag(w).copy(),
        factors=core_f[:, diag_idx, diag_idx],
        series=TensorSeries(data),
        spec=spec,
        core=core,
    )


def true_model(gt: GroundTruth) -> CpModel:
    """CpModel holding the ground truth (for oracle computations in tests)."""
    duals = tuple(gram_inverse_dual(a) for a in gt.loadings)
    return CpModel(
        dims=gt.series.dims,
        loadings=tuple(a.copy() for a in gt.loadings),
        duals=duals,
        weights=gt.weights.copy(),
        factors=gt.factors.copy(),
        n_iter=0,
        converged=True,
    )


# ---------------------------------------------------------------------------
# metrics


def _loading_matrices(est) -> tuple[np.ndarray, ...]:
    if isinstance(est, LoadingSet):
        return est.matrices
    if isinstance(est, CpModel):
        return est.loadings
    return tuple(np.asarray(m) for m in est)


def match_factors(est, truth: GroundTruth) -> np.ndarray:
    """perm[i] = estimated factor index assigned to true factor i.

    Hungarian assignment on -log prod_k |cos angle(a_hat, a)|, which pairs
    every true factor with its closest estimated counterpart.
    """
    mats = _loading_matrices(est)
    r = mats[0].shape[1]
    if r != truth.weights.shape[0]:
        raise DataError(f"rank mismatch: estimate has {r}, truth has {truth.weights.shape[0]}")
    cost = np.zeros((r, r))
    for k, (m_est, m_true) in enumerate(zip(mats, truth.loadings)):
        cos = np.clip(np.abs(m_est.T @ m_true), 1e-12, None)
        cost -= np.log(cos)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(r, dtype=int)
    perm[cols] = rows
    return perm


def matched_angle_errors(est, truth: GroundTruth) -> np.ndarray:
    """(r, K) array of sin-angle errors after factor matching."""
    mats = _loading_matrices(est)
    perm = match_factors(est, truth)
    r = len(perm)
    errs = np.empty((r, len(mats)))
    for i in range(r):
        for k in range(len(mats)):
            errs[i, k] = sin_angle(mats[k][:, perm[i]], truth.loadings[k][:, i])
    return errs


def sin_angle_error(est, truth: GroundTruth) -> float:
    """max_{i,k} ||a_hat a_hat' - a a'||_2 after permutation/sign matching."""
    return float(np.max(matched_angle_errors(est, truth)))


def factor_mse(model: CpModel, truth: GroundTruth) -> float:
    """(1/rT) sum (f_hat - h f)^2 with h = w / w_hat and sign folded in."""
    perm = match_factors(model, truth)
    r = truth.weights.shape[0]
    T = truth.factors.shape[0]
    total = 0.0
    for i in range(r):
        f_hat = model.factors[:, perm[i]]
        f_true = truth.factors[:, i]
        w_hat = model.weights[perm[i]]
        if w_hat <= 0:
            raise DataError(f"degenerate estimated weight for factor {perm[i]}")
        s = 1.0 if float(f_hat @ f_true) >= 0 else -1.0
        h = s * truth.weights[i] / w_hat
        total += float(np.sum((f_hat - h * f_true) ** 2))
    return total / (r * T)


# ---------------------------------------------------------------------------
# brute-force oracle


def brute_force_cp(
    t: np.ndarray, r: int, restarts: int = 8, seed: int = 0, sweeps: int = 500
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Multi-start alternating least squares on a single small tensor.

    Only meant as an independent test oracle: restricted to at most 64
    entries and rank <= 2. Returns (weights, per-mode loading matrices) of
    the best Frobenius fit across restarts.
    """
    t = np.asarray(t, dtype=float)
    if t.size > 64:
        raise DataError(f"oracle size guard: {t.size} entries > 64")
    if not 1 <= r <= 2:
        raise DataError("oracle rank guard: r must be 1 or 2")
    if t.ndim < 2:
        raise DataError("oracle needs an order >= 2 tensor")
    K = t.ndim
    norm_t = np.linalg.norm(t)
    best = None
    for start in range(restarts):
        rng = rng_from(seed, start)
        mats = []
        for dk in t.shape:
            m = rng.standard_normal((dk, r))
            mats.append(m / np.linalg.norm(m, axis=0))
        w = np.ones(r)
        prev_res = np.inf
        for _ in range(sweeps):
            for k in range(K):
                cols = []
                for i in range(r):
                    cols.append(kron_chain([mats[ell][:, i] for ell in range(K) if ell != k]))
                z = np.column_stack(cols)
                sol, *_ = np.linalg.lstsq(z, matricize(t, k).T, rcond=None)
                ak = sol.T
                norms = np.linalg.norm(ak, axis=0)
                norms = np.where(norms == 0, 1.0, norms)
                mats[k] = ak / norms
                w = norms
            approx = sum(w[i] * outer([m[:, i] for m in mats]) for i in range(r))
            res = np.linalg.norm(t - approx)
            if abs(prev_res - res) <= 1e-13 * max(norm_t, 1.0):
                break
            prev_res = res
        if best is None or res < best[0]:
            best = (res, w.copy(), [m.copy() for m in mats])
    _, w, mats = best
    for i in range(r):
        if w[i] < 0:
            w[i] = -w[i]
            mats[0][:, i] = -mats[0][:, i]
    order = np.argsort(-w, kind="stable")
    return w[order], [m[:, order] for m in mats]


# ---------------------------------------------------------------------------
# Monte-Carlo runner


def rc_pca_with_retry(cov, dims, cfg: InitConfig, max_retries: int = 3) -> LoadingSet:
    """rc_pca, doubling the number of projections on survivor shortfall."""
    L = cfg.resolved_L()
    for attempt in range(max_retries + 1):
        try:
            return rc_pca(cov, dims, replace(cfg, L=L))
        except SurvivorShortfallError:
            if attempt == max_retries:
                raise
            L *= 2


_PAPER_DIMS = [(40, 40), (40, 60), (60, 60)]
_PAPER_T = [100, 300, 500]


def config_cells(config_id: str, grid: str = "paper") -> list[dict]:
    """Parameter cells of a named configuration ('paper' or 'small' grids)."""
    cid = config_id.upper() if len(config_id) <= 4 else config_id.lower()
    small = grid == "small"
    if grid not in ("paper", "small"):
        raise DataError(f"unknown grid {grid!r}")

    def cells(dims_list, t_list, **extra_lists):
        dims_list = dims_list[:1] if small else dims_list
        t_list = t_list[:1] if small else t_list
        keys = list(extra_lists)
        for key in keys:
            if small:
                extra_lists[key] = extra_lists[key][:1]
        out = []
        for dims in dims_list:
            for T in t_list:
                combos = [{}]
                for key in keys:
                    combos = [dict(c, **{key: v}) for c in combos for v in extra_lists[key]]
                for combo in combos:
                    out.append({"dims": dims, "T": T, **combo})
        return out

    if cid == "I":
        return cells(_PAPER_DIMS, _PAPER_T)
    if cid == "II":
        return cells(_PAPER_DIMS, _PAPER_T, eta=[0.05, 0.15, 0.25])
    if cid == "III":
        return cells(_PAPER_DIMS, _PAPER_T, rho=[0.1, 0.3, 0.5])
    if cid == "IV":
        return cells(_PAPER_DIMS, _PAPER_T, alpha=[2.5, 3.0, 3.5, 4.0])
    if cid == "V":
        return cells([(20, 20), (40, 40), (80, 80)], [100, 200, 500])
    if cid == "VI":
        return cells(_PAPER_DIMS, _PAPER_T, alpha=[3.0, 4.0, 5.0])
    if cid == "VII":
        out = cells([(20, 20), (60, 60), (100, 100)], [200])
        for c in out:
            c["estimate_sigma"] = False
        return out
    if cid == "VIII":
        return cells(
            [(20, 20), (40, 40), (60, 60), (80, 80)], _PAPER_T, phi=[0.1, 0.5]
        )
    if cid == "IX":
        return cells(_PAPER_DIMS, _PAPER_T)
    if cid == "pareto":
        return cells([(20, 20), (40, 40), (60, 60), (80, 80)], [100, 200, 300, 400, 500])
    if cid == "corr-factors":
        return cells([(40, 40)], _PAPER_T, zeta=[0.2, 0.5, 0.8])
    if cid == "unbalanced":
        return cells([(20, 40), (50, 40), (100, 40), (200, 40)], _PAPER_T)
    if cid == "c0-nu":
        return cells(
            [(20, 20)], [500], c0=[0.05, 0.1, 0.2, 0.5], nu=[0.5, 0.7, 0.8, 0.9]
        )
    raise DataError(f"unknown configuration {config_id!r}")


def spec_for(config_id: str, cell: dict, seed) -> DgpSpec:
    """DgpSpec for one replication of a configuration cell."""
    cid = config_id.upper() if len(config_id) <= 4 else config_id.lower()
    dims = tuple(cell["dims"])
    T = int(cell["T"])
    phi = float(cell.get("phi", 0.1))
    base = dict(dims=dims, T=T, r=3, phi=phi, seed=seed)
    if cid == "I":
        return DgpSpec(**base, eta=0.0)
    if cid == "II":
        return DgpSpec(**base, eta=float(cell["eta"]))
    if cid == "III":
        return DgpSpec(
            **base, eta=0.1, error_rule="toeplitz_cs", error_rho=float(cell["rho"])
        )
    if cid == "IV":
        return DgpSpec(
            **base,
            eta=0.1,
            weight_rule="weak",
            weight_alpha=float(cell["alpha"]),
            error_rule="toeplitz_iid",
        )
    if cid in ("V", "c0-nu"):
        base["r"] = 5
        return DgpSpec(
            **base,
            eta=0.0,
            weight_rule="equal",
            weight_value=10.0,
            orthonormal_factors=True,
        )
    if cid == "VI":
        return DgpSpec(
            **base,
            eta=0.1,
            misspec_alpha=float(cell["alpha"]),
            error_rule="toeplitz_iid",
        )
    if cid in ("VII", "VIII"):
        return DgpSpec(
            **base, eta=0.1, weight_scale=1.0, error_rule="toeplitz_iid"
        )
    if cid == "IX":
        return DgpSpec(**base, eta=0.1, error_rule="toeplitz_iid")
    if cid == "pareto":
        return DgpSpec(**base, eta=0.0, weight_scale=1.0, error_rule="pareto")
    if cid == "corr-factors":
        return DgpSpec(**base, eta=0.1, factor_corr_zeta=float(cell["zeta"]))
    if cid == "unbalanced":
        return DgpSpec(**base, eta=0.1)
    raise DataError(f"unknown configuration {config_id!r}")


def _fit_cc(gt: GroundTruth, rep_seed) -> tuple[LoadingSet, CpModel]:
    cov = contemporary_cov(gt.series)
    init = rc_pca_with_retry(
        cov, gt.series.dims, InitConfig(r=gt.spec.r, seed=seed_tuple(rep_seed) + (1,))
    )
    return init, iso_fit(gt.series, init, IsoConfig())


def _fit_ac(gt: GroundTruth, rep_seed) -> CpModel:
    cov = lag_cov(gt.series, 1)
    init = rc_pca_with_retry(
        cov, gt.series.dims, InitConfig(r=gt.spec.r, seed=seed_tuple(rep_seed) + (2,))
    )
    return iso_fit(gt.series, init, IsoConfig(cov_kind="lag", lag_h=1))


def _rows_loading_study(config_id, cell, gt, rep_seed, per_mode=False):
    rows = []
    try:
        init, model = _fit_cc(gt, rep_seed)
        rows.append(("rc_pca", "max_sin_angle", sin_angle_error(init, gt)))
        rows.append(("cc_iso", "max_sin_angle", sin_angle_error(model, gt)))
        rows.append(("cc_iso", "n_iter", float(model.n_iter)))
        if per_mode:
            errs = matched_angle_errors(model, gt)
            for k in range(errs.shape[1]):
                rows.append(("cc_iso", f"sin_angle_mode{k + 1}", float(errs[:, k].max())))
    except CpFactorError:
        rows.append(("cc_iso", "failed", 1.0))
    try:
        model_ac = _fit_ac(gt, rep_seed)
        rows.append(("ac_iso", "max_sin_angle", sin_angle_error(model_ac, gt)))
    except CpFactorError:
        rows.append(("ac_iso", "failed", 1.0))
    try:
        cpca = composite_pca(contemporary_cov(gt.series), gt.series.dims, gt.spec.r)
        rows.append(("c_pca", "max_sin_angle", sin_angle_error(cpca, gt)))
    except CpFactorError:
        rows.append(("c_pca", "failed", 1.0))
    return rows


def _rows_init_study(config_id, cell, gt, rep_seed):
    rows = []
    cov = contemporary_cov(gt.series)
    cfg = InitConfig(
        r=gt.spec.r,
        c0=float(cell.get("c0", 0.1)),
        nu=float(cell.get("nu", 0.8)),
        seed=seed_tuple(rep_seed) + (1,),
    )
    try:
        init = rc_pca_with_retry(cov, gt.series.dims, cfg)
        rows.append(("rc_pca", "max_sin_angle", sin_angle_error(init, gt)))
        rows.append(("rc_pca", "randomized_branch", float(init.used_randomized)))
        model = iso_fit(gt.series, init, IsoConfig())
        rows.append(("cc_iso", "max_sin_angle", sin_angle_error(model, gt)))
    except CpFactorError:
        rows.append(("rc_pca", "failed", 1.0))
    try:
        cpca = composite_pca(cov, gt.series.dims, gt.spec.r)
        rows.append(("c_pca", "max_sin_angle", sin_angle_error(cpca, gt)))
    except CpFactorError:
        rows.append(("c_pca", "failed", 1.0))
    return rows


def _toeplitz_quad(v: np.ndarray, b: float) -> float:
    return float(v @ (scipy.linalg.toeplitz(b ** np.arange(v.shape[0])) @ v))


def known_sigma_sq(gt: GroundTruth, i: int, k: int, u: np.ndarray) -> float:
    """Population variance of the loading pivot from the true DGP pieces."""
    spec = gt.spec
    a = gt.loadings[k][:, i]
    p_u = u - a * float(a @ u)
    duals = [gram_inverse_dual(m) for m in gt.loadings]
    out = 1.0
    for ell in range(len(gt.loadings)):
        v = p_u if ell == k else duals[ell][:, i]
        if spec.error_rule in ("toeplitz_cs", "toeplitz_iid"):
            out *= _toeplitz_quad(v, spec.error_b)
        else:
            out *= float(v @ v)
    return out


def _rows_clt_study(config_id, cell, gt, rep_seed):
    rows = []
    i, k = 0, 0
    u = np.zeros(gt.series.dims[k])
    u[0] = 1.0
    try:
        _, model = _fit_cc(gt, rep_seed)
        perm = match_factors(model, gt)
        ie = int(perm[i])
        a_true = gt.loadings[k][:, i]
        a_hat = model.loadings[k][:, ie]
        sgn = 1.0 if float(a_hat @ a_true) >= 0 else -1.0
        theta_true = gt.weights[i] ** 2
        sig = np.sqrt(known_sigma_sq(gt, i, k, u))
        stat = np.sqrt(gt.spec.T * theta_true) * float(u @ (a_hat - sgn * a_true)) / sig
        rows.append(("cc_iso", "clt_known", float(stat)))
        if cell.get("estimate_sigma", False):
            ncov = threshold_cov(residuals(gt.series, model), c_thr=2.0)
            stat_est = clt_statistic(model, ncov, ie, k, u, a_true)
            rows.append(("cc_iso", "clt_est", float(stat_est)))
            ci = loading_ci(model, ncov, ie, k, j=0, level=0.95)
            covered = ci.lower <= sgn * a_true[0] <= ci.upper
            rows.append(("cc_iso", "ci_cover", float(covered)))
    except CpFactorError:
        rows.append(("cc_iso", "failed", 1.0))
    return rows


def _rows_rank_study(config_id, cell, gt, rep_seed):
    rows = []
    for method, fn in (("uer", rank_uer), ("ip", rank_ip)):
        try:
            est = fn(gt.series)
            rows.append((method, "r_hat", float(est.r_hat)))
            rows.append((method, "correct", float(est.r_hat == gt.spec.r)))
        except CpFactorError:
            rows.append((method, "failed", 1.0))
    return rows


def _rows_factor_study(config_id, cell, gt, rep_seed):
    rows = []
    try:
        _, model = _fit_cc(gt, rep_seed)
        rows.append(("cc_iso", "factor_mse", factor_mse(model, gt)))
    except CpFactorError:
        rows.append(("cc_iso", "failed", 1.0))
    try:
        model_ac = _fit_ac(gt, rep_seed)
        rows.append(("ac_iso", "factor_mse", factor_mse(model_ac, gt)))
    except CpFactorError:
        rows.append(("ac_iso", "failed", 1.0))
    return rows


def replication_rows(config_id: str, cell: dict, root_seed, cell_idx: int, rep: int):
    """All (estimator, metric, value) rows for one replication of one cell."""
    rep_seed = seed_tuple(root_seed) + (cell_idx, rep)
    gt = gen_dataset(spec_for(config_id, cell, rep_seed + (0,)))
    cid = config_id.upper() if len(config_id) <= 4 else config_id.lower()
    if cid in ("V", "c0-nu"):
        return _rows_init_study(cid, cell, gt, rep_seed)
    if cid == "VII":
        return _rows_clt_study(cid, cell, gt, rep_seed)
    if cid == "VIII":
        return _rows_rank_study(cid, cell, gt, rep_seed)
    if cid == "IX":
        return _rows_factor_study(cid, cell, gt, rep_seed)
    return _rows_loading_study(cid, cell, gt, rep_seed, per_mode=(cid == "unbalanced"))


@dataclass
class McSummary:
    """Per-cell Monte-Carlo study results in long format."""

    config: str
    cell: dict
    n_rep: int
    elapsed: float
    rows: list[tuple[int, str, str, float]] = field(repr=False)  # (rep, est, metric, value)

    def values(self, estimator: str, metric: str) -> np.ndarray:
        return np.array(
            [v for (_, e, m, v) in self.rows if e == estimator and m == metric]
        )

    def median(self, estimator: str, metric: str) -> float:
        vals = self.values(estimator, metric)
        if vals.size == 0:
            return float("nan")
        return float(np.median(vals))

    def mean(self, estimator: str, metric: str) -> float:
        vals = self.values(estimator, metric)
        if vals.size == 0:
            return float("nan")
        return float(np.mean(vals))

    def failures(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for _, e, m, _ in self.rows:
            if m == "failed":
                out[e] = out.get(e, 0) + 1
        return out


def _mc_task(args):
    config_id, cell, root_seed, cell_idx, reps = args
    out = []
    for rep in reps:
        for est, metric, value in replication_rows(config_id, cell, root_seed, cell_idx, rep):
            out.append((cell_idx, rep, est, metric, value))
    return out


def resolve_workers(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("CPFACTOR_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_config(
    config_id: str,
    grid: str = "paper",
    n_rep: int = 500,
    seed: int = 0,
    workers: int | None = None,
    cells: list[dict] | None = None,
) -> list[McSummary]:
    """Run a full configuration study; one McSummary per grid cell.

    Replications are deterministic given (seed, cell index, rep) regardless
    of the worker count; estimator failures are recorded per replication
    rather than aborting the study.
    """
    if n_rep < 1:
        raise DataError("n_rep must be >= 1")
    if cells is None:
        cells = config_cells(config_id, grid)
    workers = resolve_workers(workers)
    start = time.time()
    chunk = max(1, n_rep // max(1, workers * 4))
    tasks = []
    for ci, cell in enumerate(cells):
        for lo in range(0, n_rep, chunk):
            reps = list(range(lo, min(lo + chunk, n_rep)))
            tasks.append((config_id, cell, seed, ci, reps))

    all_rows: dict[int, list] = {ci: [] for ci in range(len(cells))}
    if workers == 1 or len(tasks) == 1:
        results = map(_mc_task, tasks)
    else:
        pool = ProcessPoolExecutor(max_workers=workers, initializer=_limit_blas)
        results = pool.map(_mc_task, tasks)
    for rows in results:
        for cell_idx, rep, est, metric, value in rows:
            all_rows[cell_idx].append((rep, est, metric, value))
    if workers > 1 and len(tasks) > 1:
        pool.shutdown()

    elapsed = time.time() - start
    summaries = []
    for ci, cell in enumerate(cells):
        rows = sorted(all_rows[ci])
        summaries.append(
            McSummary(config=config_id, cell=cell, n_rep=n_rep, elapsed=elapsed, rows=rows)
        )
    return summaries


def _limit_blas():
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(1)
    except ImportError:
        pass


def results_frame(summaries: Sequence[McSummary]) -> pd.DataFrame:
    """Long-format results: config, cell parameters, rep, estimator, metric, value."""
    records = []
    for s in summaries:
        cell_cols = {
            k: (f"{v[0]}x{v[1]}" if k == "dims" else v) for k, v in s.cell.items()
        }
        for rep, est, metric, value in s.rows:
            records.append(
                {"config": s.config, **cell_cols, "rep": rep, "estimator": est,
                 "metric": metric, "value": value}
            )
    return pd.DataFrame.from_records(records)


def write_long_csv(summaries: Sequence[McSummary], path) -> None:
    results_frame(summaries).to_csv(path, index=False)
