"""Command-line entry points: ingest, synth, backtest, report.

Exit codes: 0 success, 1 validation/input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .backtest import (
    BacktestConfig,
    BacktestError,
    BacktestResult,
    load_config,
    run_backtest,
    save_results,
)
from .market_data import (
    DataError,
    prices_to_returns,
    read_price_csv,
    read_return_csv,
    synth_factor_returns,
    write_return_csv,
)
from .metrics_stats import build_report, hac_variance_test
from .portfolio_models import MODEL_LASSO, MODEL_LASSO_TURNOVER, MODEL_STANDARD
from .qp import SolverError

FLOAT_FORMAT = "%.17g"
SMA_WINDOW = 30


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _sha256_obj(obj) -> str:
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()


def cmd_ingest(args) -> int:
    panel = read_price_csv(args.prices)
    returns = prices_to_returns(panel)
    write_return_csv(returns, args.out)
    n, T = returns.n_assets, returns.n_rows
    tau = BacktestConfig().tau
    print(f"wrote {args.out}: n={n} assets, T={T} return rows, n/tau={n / tau:.4f} (tau={tau})")
    return 0


def cmd_synth(args) -> int:
    panel, sigma_true = synth_factor_returns(
        args.n, args.T, args.K, args.seed, args.factor_vol, args.idio_vol
    )
    out = Path(args.out)
    write_return_csv(panel, out)
    sigma_path = out.with_name(out.stem + "_sigma_true.csv")
    frame = pd.DataFrame(sigma_true, columns=list(panel.asset_ids))
    frame.to_csv(sigma_path, index=False, float_format=FLOAT_FORMAT)
    print(f"wrote {out} ({args.T} rows x {args.n} assets, seed {args.seed}) and {sigma_path}")
    return 0


def _config_from_args(args) -> BacktestConfig:
    config = load_config(args.config) if args.config else BacktestConfig()
    raw = config.to_dict()
    if args.estimator:
        raw["estimator"] = args.estimator
    if args.models:
        raw["models"] = [m.strip() for m in args.models.split(",") if m.strip()]
    if args.tau is not None:
        raw["tau"] = args.tau
    if args.k is not None:
        raw["k"] = args.k
    if args.lambda_grid:
        raw["lambda_grid"] = [float(v) for v in args.lambda_grid.split(",") if v.strip()]
    if args.cv_fast:
        raw["cv_fast"] = True
    return BacktestConfig.from_dict(raw)


def _report_payload(result: BacktestResult, next_returns: np.ndarray) -> dict:
    n = len(result.asset_ids)
    metrics = {}
    for name, run in result.runs.items():
        report = build_report(run.weights, run.oos_returns, next_returns, n)
        metrics[name] = report.as_dict()
    tests = {}
    if MODEL_STANDARD in result.runs:
        base = result.runs[MODEL_STANDARD].oos_returns
        for name in (MODEL_LASSO, MODEL_LASSO_TURNOVER):
            if name in result.runs:
                res = hac_variance_test(result.runs[name].oos_returns, base)
                tests[f"{name}_vs_standard"] = {
                    "statistic": res.statistic,
                    "p_value": res.p_value,
                    "bandwidth": res.bandwidth,
                }
    return {
        "estimator": result.config.estimator,
        "metrics": metrics,
        "variance_tests": tests,
        "notes": {
            "variance_test_form": "difference of squared demeaned returns",
            "bandwidth_rule": "floor(4*(T/100)^(2/9))",
            "sma_window": SMA_WINDOW,
        },
        "config": result.config.to_dict(),
    }


def _write_figure_data(result: BacktestResult, out: Path) -> None:
    """Per-model delta trajectories with a 30-day SMA, and each lasso
    model's share of combined short-sale counts against the standard model."""
    for name, run in result.runs.items():
        delta = pd.Series(run.delta_path)
        sma = delta.rolling(SMA_WINDOW, min_periods=1).mean()
        frame = pd.DataFrame(
            {
                "date": result.rebalance_dates,
                "delta": run.delta_path,
                f"sma_{SMA_WINDOW}": sma.to_numpy(),
            }
        )
        frame.to_csv(out / f"delta_sma_{name}.csv", index=False, float_format=FLOAT_FORMAT)

    if MODEL_STANDARD not in result.runs:
        return
    ss_standard = (result.runs[MODEL_STANDARD].weights < 0.0).sum(axis=1)
    for name in (MODEL_LASSO, MODEL_LASSO_TURNOVER):
        if name not in result.runs:
            continue
        ss_model = (result.runs[name].weights < 0.0).sum(axis=1)
        total = ss_model + ss_standard
        share = np.where(total > 0, ss_model / np.where(total > 0, total, 1), 0.5)
        frame = pd.DataFrame({"date": result.rebalance_dates, "share": share})
        frame.to_csv(out / f"short_share_{name}.csv", index=False, float_format=FLOAT_FORMAT)


def cmd_backtest(args) -> int:
    config = _config_from_args(args)
    panel = read_return_csv(args.panel)
    result = run_backtest(panel, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_results(result, out)

    next_returns = panel.returns[config.tau :]
    payload = _report_payload(result, next_returns)
    with open(out / "report.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_figure_data(result, out)

    manifest = {
        "config_digest": _sha256_obj(config.to_dict()),
        "input_digest": _sha256_file(args.panel),
        "seed": args.seed,
        "tool_version": __version__,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    for name, run in result.runs.items():
        stats = payload["metrics"][name]
        print(
            f"{name}: stddev_pa={stats['stddev_pa']:.6f} "
            f"turnover={stats['turnover_daily']:.4f} "
            f"avg_assets={stats['avg_assets']:.2f} "
            f"avg_short={stats['avg_short_sales']:.2f}"
        )
    print(f"results in {out}")
    return 0


def cmd_report(args) -> int:
    panel = read_return_csv(args.panel)
    results_dir = Path(args.results)
    if not results_dir.is_dir():
        raise DataError(f"results directory not found: {results_dir}")
    runs = {}
    n_days = None
    for name in (MODEL_STANDARD, MODEL_LASSO, MODEL_LASSO_TURNOVER):
        oos_path = results_dir / f"oos_returns_{name}.csv"
        weights_path = results_dir / f"weights_{name}.csv"
        if not (oos_path.exists() and weights_path.exists()):
            continue
        oos = pd.read_csv(oos_path, float_precision="round_trip")["return"].to_numpy(
            dtype=float
        )
        weights = (
            pd.read_csv(weights_path, float_precision="round_trip")
            .iloc[:, 1:]
            .to_numpy(dtype=float)
        )
        runs[name] = (oos, weights)
        n_days = len(oos)
    if not runs:
        raise DataError(f"no model result files in {results_dir}")
    if n_days is None or panel.n_rows <= n_days:
        raise DataError("panel shorter than the result series; wrong panel?")
    tau = panel.n_rows - n_days
    next_returns = panel.returns[tau:]
    n = panel.n_assets

    metrics = {
        name: build_report(w, oos, next_returns, n).as_dict()
        for name, (oos, w) in runs.items()
    }
    tests = {}
    if MODEL_STANDARD in runs:
        base = runs[MODEL_STANDARD][0]
        for name in (MODEL_LASSO, MODEL_LASSO_TURNOVER):
            if name in runs:
                res = hac_variance_test(runs[name][0], base)
                tests[f"{name}_vs_standard"] = {
                    "statistic": res.statistic,
                    "p_value": res.p_value,
                    "bandwidth": res.bandwidth,
                }
    payload = {"metrics": metrics, "variance_tests": tests, "inferred_tau": tau}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsegmv",
        description="Sparse and turnover-stable minimum-variance backtests",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert a price CSV to a return CSV")
    p.add_argument("prices", help="price CSV (date column + one column per asset)")
    p.add_argument("--out", required=True, help="output return CSV")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="draw a synthetic factor-model return panel")
    p.add_argument("--n", type=int, required=True, help="number of assets")
    p.add_argument("--T", type=int, required=True, help="number of days")
    p.add_argument("--K", type=int, required=True, help="number of factors")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--factor-vol", type=float, default=0.02)
    p.add_argument("--idio-vol", type=float, default=0.01)
    p.add_argument("--out", required=True, help="output return CSV")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("backtest", help="run the rolling-window backtest")
    p.add_argument("panel", help="return CSV")
    p.add_argument("--config", help="JSON config mirroring BacktestConfig fields")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest")
    p.add_argument("--estimator", help="ml | lw-lin | lw-nl | poet")
    p.add_argument("--models", help="comma-separated subset of standard,lasso,lasso_turnover")
    p.add_argument("--tau", type=int, help="estimation window length")
    p.add_argument("--k", type=float, help="per-asset turnover cap")
    p.add_argument("--lambda-grid", help="comma-separated penalty grid")
    p.add_argument("--cv-fast", action="store_true", help="reuse the first CV fit across shifts")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("report", help="recompute the report from a results directory")
    p.add_argument("--results", required=True, help="backtest output directory")
    p.add_argument("--panel", required=True, help="the return CSV the backtest ran on")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except (DataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SolverError, BacktestError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
