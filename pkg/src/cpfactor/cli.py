"""Command-line surface: fit, rank, infer, forecast, simulate.

Exit codes: 2 input error, 3 estimation failure, 4 numerical degeneracy.
File formats are 1-based (time and mode indices); see the io module.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import io as cpio
from .covariance import TensorSeries, contemporary_cov, lag_cov
from .exceptions import DataError, DegeneracyError, EstimationError
from .inference import (
    forecast_y,
    holdout_mse,
    loading_ci,
    residuals,
    threshold_cov,
    var1_forecast,
)
from .initialization import InitConfig
from .iso import IsoConfig, iso_fit, r_squared, reconstruct
from .rank import default_r_max, rank_ip, rank_uer
from .seeding import seed_tuple
from .simlab import rc_pca_with_retry, resolve_workers, results_frame, run_config


def _parse_shape(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise DataError(f"cannot parse shape {text!r}; expected e.g. 40,10") from None
    if not dims or min(dims) < 1:
        raise DataError(f"invalid shape {text!r}")
    return dims


def _fit_model(series: TensorSeries, args, seed) -> tuple:
    """Shared fit pipeline: warm start + ISO under the requested covariance."""
    if args.rank == "auto":
        r = rank_uer(series, r_max=args.r_max, center=args.center).r_hat
        print(f"rank auto: selected r = {r} by the unfolded eigenvalue ratio")
    else:
        r = int(args.rank)
        if r < 1:
            raise DataError(f"rank must be >= 1, got {r}")
    if args.cov == "lag":
        cov = lag_cov(series, args.lag, center=args.center)
        iso_cfg = IsoConfig(epsilon=args.epsilon, max_iter=args.max_iter,
                            cov_kind="lag", lag_h=args.lag)
    else:
        cov = contemporary_cov(series, center=args.center)
        iso_cfg = IsoConfig(epsilon=args.epsilon, max_iter=args.max_iter)
    init_cfg = InitConfig(r=r, c0=args.c0, nu=args.nu, L=args.L,
                          seed=seed_tuple(seed) + (1,))
    init = rc_pca_with_retry(cov, series.dims, init_cfg)
    model = iso_fit(series, init, iso_cfg)
    return model, r


def cmd_fit(args) -> int:
    series = cpio.read_series(args.input, _parse_shape(args.shape))
    model, r = _fit_model(series, args, args.seed)
    config = {
        "command": "fit", "input": str(args.input), "shape": args.shape,
        "rank": args.rank, "cov": args.cov, "lag": args.lag,
        "epsilon": args.epsilon, "max_iter": args.max_iter,
        "c0": args.c0, "nu": args.nu, "L": args.L, "center": args.center,
    }
    cpio.save_model(model, args.output, config=config, seed=args.seed)
    fitted = reconstruct(model)
    print(
        f"fit: r={r} converged={model.converged} n_iter={model.n_iter} "
        f"in-sample R^2={r_squared(series, fitted):.4f}"
    )
    print(f"model written to {args.output}")
    if args.fitted:
        cpio.write_series(args.fitted, fitted)
        print(f"fitted values written to {args.fitted}")
    return 0


def cmd_rank(args) -> int:
    series = cpio.read_series(args.input, _parse_shape(args.shape))
    r_max = args.r_max if args.r_max is not None else default_r_max(series.dims)
    uer = rank_uer(series, r_max=r_max, center=args.center)
    ip = rank_ip(series, r_max=min(r_max, min(series.dims) - 1), center=args.center)
    print(f"r_hat (unfolded eigenvalue ratio): {uer.r_hat}")
    print(f"r_hat (mode-wise inner product):   {ip.r_hat}  per-mode {list(ip.per_mode)}")
    print("unfolded ratios:", " ".join(f"{x:.3f}" for x in uer.ratios))
    for k, row in enumerate(ip.ratios):
        print(f"mode {k + 1} ratios:", " ".join(f"{x:.3f}" for x in row))
    if args.output:
        doc = {
            "r_uer": uer.r_hat, "r_ip": ip.r_hat, "per_mode": list(ip.per_mode),
            "uer_ratios": uer.ratios.tolist(), "ip_ratios": ip.ratios.tolist(),
            "r_max": r_max,
        }
        Path(args.output).write_text(json.dumps(doc))
        print(f"rank report written to {args.output}")
    return 0


def cmd_infer(args) -> int:
    series = cpio.read_series(args.input, _parse_shape(args.shape))
    model = cpio.load_model(args.model)
    if series.dims != model.dims:
        raise DataError(
            f"series shape {series.dims} does not match model shape {model.dims}"
        )
    ncov = threshold_cov(residuals(series, model), c_thr=args.c_thr)
    factors = [args.factor - 1] if args.factor else range(model.r)
    modes = [args.mode - 1] if args.mode else range(model.order)
    with Path(args.output).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "k", "j", "estimate", "se", "lower", "upper", "regime"])
        for i in factors:
            if not 0 <= i < model.r:
                raise DataError(f"factor index {i + 1} out of range 1..{model.r}")
            for k in modes:
                if not 0 <= k < model.order:
                    raise DataError(f"mode index {k + 1} out of range 1..{model.order}")
                for j in range(model.dims[k]):
                    ci = loading_ci(model, ncov, i, k, j, level=args.level)
                    writer.writerow(
                        [i + 1, k + 1, j + 1, repr(ci.estimate), repr(ci.se),
                         repr(ci.lower), repr(ci.upper), ci.regime]
                    )
    print(f"confidence intervals at level {args.level} written to {args.output}")
    return 0


def cmd_forecast(args) -> int:
    dims = _parse_shape(args.shape)
    series = cpio.read_series(args.input, dims)
    T = series.n_obs
    K = len(dims)
    header = ["step", "t"] + [f"i{k}" for k in range(1, K + 1)] + ["value"]
    rows = []
    if args.holdout > 0:
        n = args.holdout
        if T - n < max(3, 4):
            raise DataError(f"holdout {n} leaves too few observations out of {T}")
        preds = np.empty((n,) + dims)
        for s in range(1, n + 1):
            train = TensorSeries(series.data[: T - n + s - 1])
            model, _ = _fit_model(train, args, seed_tuple(args.seed) + (s,))
            f_next = var1_forecast(model.factors, 1)[0]
            preds[s - 1] = forecast_y(model, f_next)
            target_t = T - n + s
            for idx in np.ndindex(dims):
                rows.append([s, target_t, *[i + 1 for i in idx],
                             repr(float(preds[s - 1][idx]))])
        actual = TensorSeries(series.data[T - n:])
        mse = holdout_mse(actual, preds)
        print(f"holdout MSE over the last {n} periods: {mse:.6f}")
    else:
        model, _ = _fit_model(series, args, args.seed)
        f_path = var1_forecast(model.factors, args.steps)
        for s in range(1, args.steps + 1):
            pred = forecast_y(model, f_path[s - 1])
            for idx in np.ndindex(dims):
                rows.append([s, T + s, *[i + 1 for i in idx], repr(float(pred[idx]))])
    with Path(args.output).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    print(f"forecasts written to {args.output}")
    return 0


def cmd_simulate(args) -> int:
    workers = resolve_workers(args.workers)
    summaries = run_config(
        args.config, grid=args.grid, n_rep=args.reps, seed=args.seed, workers=workers
    )
    frame = results_frame(summaries)
    frame.to_csv(args.output, index=False)
    print(f"{len(frame)} result rows written to {args.output}")
    cid = args.config.upper() if len(args.config) <= 4 else args.config.lower()
    if cid == "VIII":
        correct = frame[frame["metric"] == "correct"]
        table = correct.pivot_table(
            index=["dims", "T"], columns=["phi", "estimator"], values="value",
            aggfunc="mean",
        )
        print("correct-rank frequency:")
        print(table.to_string(float_format=lambda x: f"{x:.3f}"))
        if args.table:
            table.to_csv(args.table)
            print(f"frequency table written to {args.table}")
    for s in summaries:
        fails = s.failures()
        if fails:
            print(f"cell {s.cell}: estimator failures {fails}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cpfactor",
        description="CP tensor factor models: estimation, rank selection, "
        "inference, forecasting, and simulation studies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_series_args(p):
        p.add_argument("--input", required=True, help="long CSV with header t,i1,...,iK,value")
        p.add_argument("--shape", required=True, help="comma-separated mode lengths, e.g. 40,10")
        p.add_argument("--center", action="store_true",
                       help="subtract the sample mean tensor before covariances")

    def add_fit_args(p):
        p.add_argument("--rank", default="auto",
                       help="number of factors, or 'auto' for the eigenvalue-ratio choice")
        p.add_argument("--r-max", type=int, default=None, help="upper bound for rank search")
        p.add_argument("--cov", choices=["cc", "lag"], default="cc",
                       help="contemporary (cc) or lagged (lag) covariance")
        p.add_argument("--lag", type=int, default=1, help="lag h for --cov lag")
        p.add_argument("--epsilon", type=float, default=1e-5, help="ISO convergence tolerance")
        p.add_argument("--max-iter", type=int, default=100, help="maximum ISO iterations")
        p.add_argument("--c0", type=float, default=0.1, help="eigengap constant")
        p.add_argument("--nu", type=float, default=0.8, help="redundancy threshold")
        p.add_argument("--L", type=int, default=None, help="random projections (default 2 r^2)")
        p.add_argument("--seed", type=int, default=0, help="seed for randomized projections")

    p_fit = sub.add_parser("fit", help="estimate a CP factor model")
    add_series_args(p_fit)
    add_fit_args(p_fit)
    p_fit.add_argument("--output", required=True, help="model JSON path")
    p_fit.add_argument("--fitted", default=None, help="optional fitted-values CSV path")
    p_fit.set_defaults(func=cmd_fit)

    p_rank = sub.add_parser("rank", help="estimate the number of factors")
    add_series_args(p_rank)
    p_rank.add_argument("--r-max", type=int, default=None)
    p_rank.add_argument("--output", default=None, help="optional JSON report path")
    p_rank.set_defaults(func=cmd_rank)

    p_inf = sub.add_parser("infer", help="confidence intervals for loading entries")
    add_series_args(p_inf)
    p_inf.add_argument("--model", required=True, help="model JSON from fit")
    p_inf.add_argument("--level", type=float, default=0.95, help="confidence level")
    p_inf.add_argument("--c-thr", type=float, default=2.0,
                       help="noise-covariance thresholding constant")
    p_inf.add_argument("--factor", type=int, default=None, help="restrict to one factor (1-based)")
    p_inf.add_argument("--mode", type=int, default=None, help="restrict to one mode (1-based)")
    p_inf.add_argument("--output", required=True, help="CI CSV path")
    p_inf.set_defaults(func=cmd_infer)

    p_fc = sub.add_parser("forecast", help="VAR(1) factor forecasts of the series")
    add_series_args(p_fc)
    add_fit_args(p_fc)
    p_fc.add_argument("--steps", type=int, default=1, help="forecast horizon")
    p_fc.add_argument("--holdout", type=int, default=0,
                      help="one-step-ahead evaluation over the last N periods (refit each step)")
    p_fc.add_argument("--output", required=True, help="prediction CSV path")
    p_fc.set_defaults(func=cmd_forecast)

    p_sim = sub.add_parser("simulate", help="run a Monte-Carlo configuration study")
    p_sim.add_argument("--config", required=True,
                       help="I..IX, pareto, corr-factors, unbalanced, or c0-nu")
    p_sim.add_argument("--reps", type=int, default=500, help="replications per cell")
    p_sim.add_argument("--seed", type=int, required=True, help="root seed (required)")
    p_sim.add_argument("--grid", choices=["paper", "small"], default="paper")
    p_sim.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: CPFACTOR_WORKERS or all cores)")
    p_sim.add_argument("--output", required=True, help="long-format results CSV")
    p_sim.add_argument("--table", default=None,
                       help="frequency pivot CSV (rank-estimation study only)")
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except DegeneracyError as exc:
        print(f"numerical degeneracy: {exc}", file=sys.stderr)
        return 4
    except EstimationError as exc:
        print(f"estimation failure: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
