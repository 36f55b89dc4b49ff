"""Daily rolling-window backtest with per-day cross-validated penalties.

Each day t uses the trailing tau returns to estimate one covariance matrix
shared by all models.  The lasso models pick their penalty by one-fold
cross-validation inside the window: fit on the first tau - cv_holdout
rows, realize the next day's return, shift the subwindow by one and
repeat, then keep the lambda whose holdout returns have the smallest
standard deviation (ties go to the larger lambda).  The turnover model
threads yesterday's drifted book through the day sequence, seeded with the
first day's standard GMV weights.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .covariance import ESTIMATOR_NAMES, CovEstimate, EstimatorError, get_estimator
from .market_data import ReturnPanel, WindowSpec, rolling_window
from .portfolio_models import (
    MODEL_LASSO,
    MODEL_LASSO_TURNOVER,
    MODEL_NAMES,
    MODEL_STANDARD,
    PortfolioWeights,
    _snap,
    _solve_split,
    gmv_standard,
)
from .qp import SolverError

log = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = tuple(i * 1e-5 for i in range(20))
CV_MODELS = (MODEL_LASSO, MODEL_LASSO_TURNOVER)


class BacktestError(RuntimeError):
    """A model, estimator or data failure inside the day loop."""


@dataclass(frozen=True)
class BacktestConfig:
    """Backtest knobs; field names double as the JSON config schema."""

    tau: int = 504
    cv_holdout: int = 20
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    k: float = 0.001
    estimator: str = "ml"
    models: tuple[str, ...] = MODEL_NAMES
    cv_fast: bool = False
    poet_k: int | None = None
    poet_theta: float = 0.5
    poet_k_candidates: tuple[int, ...] = tuple(range(1, 9))

    def __post_init__(self):
        if self.tau < 4:
            raise ValueError(f"tau must be >= 4, got {self.tau}")
        if not 1 <= self.cv_holdout <= self.tau - 2:
            raise ValueError(
                f"cv_holdout must be in [1, tau - 2], got {self.cv_holdout}"
            )
        grid = tuple(float(v) for v in self.lambda_grid)
        if not grid:
            raise ValueError("lambda_grid must be non-empty")
        for v in grid:
            if not (np.isfinite(v) and v >= 0.0):
                raise ValueError(f"lambda_grid values must be finite and >= 0, got {v}")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("lambda_grid must be strictly increasing")
        if not self.k > 0.0:
            raise ValueError(f"k must be > 0, got {self.k}")
        if self.estimator not in ESTIMATOR_NAMES:
            raise ValueError(
                f"unknown estimator {self.estimator!r}; expected one of {ESTIMATOR_NAMES}"
            )
        models = tuple(dict.fromkeys(self.models))
        if not models:
            raise ValueError("models must be non-empty")
        for name in models:
            if name not in MODEL_NAMES:
                raise ValueError(f"unknown model {name!r}; expected one of {MODEL_NAMES}")
        # canonical order keeps result files stable regardless of input order
        models = tuple(name for name in MODEL_NAMES if name in models)
        if self.poet_k is not None and self.poet_k < 0:
            raise ValueError(f"poet_k must be >= 0, got {self.poet_k}")
        if not self.poet_theta >= 0.0:
            raise ValueError(f"poet_theta must be >= 0, got {self.poet_theta}")
        object.__setattr__(self, "lambda_grid", grid)
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "poet_k_candidates", tuple(int(k) for k in self.poet_k_candidates))

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "cv_holdout": self.cv_holdout,
            "lambda_grid": list(self.lambda_grid),
            "k": self.k if math.isfinite(self.k) else "inf",
            "estimator": self.estimator,
            "models": list(self.models),
            "cv_fast": self.cv_fast,
            "poet_k": self.poet_k,
            "poet_theta": self.poet_theta,
            "poet_k_candidates": list(self.poet_k_candidates),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "BacktestConfig":
        known = {
            "tau", "cv_holdout", "lambda_grid", "k", "estimator", "models",
            "cv_fast", "poet_k", "poet_theta", "poet_k_candidates",
        }
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(raw)
        if "k" in kwargs and isinstance(kwargs["k"], str):
            kwargs["k"] = float(kwargs["k"])
        if "lambda_grid" in kwargs:
            kwargs["lambda_grid"] = tuple(float(v) for v in kwargs["lambda_grid"])
        if "models" in kwargs:
            kwargs["models"] = tuple(kwargs["models"])
        if "poet_k_candidates" in kwargs:
            kwargs["poet_k_candidates"] = tuple(kwargs["poet_k_candidates"])
        return cls(**kwargs)


def load_config(path) -> BacktestConfig:
    """Read a JSON config whose keys mirror BacktestConfig field names."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValueError(f"config {path} must hold a JSON object")
    return BacktestConfig.from_dict(raw)


def drift_weights(w: np.ndarray, r_next: np.ndarray) -> np.ndarray:
    """Let a book drift through one day of returns:
    w+_j = w_j (1 + r_j) / (1 + w'r)."""
    w = np.asarray(w, dtype=float)
    r = np.asarray(r_next, dtype=float)
    if w.shape != r.shape or w.ndim != 1:
        raise ValueError(f"shape mismatch: w {w.shape} vs r {r.shape}")
    gross = w * (1.0 + r)
    denom = float(gross.sum())
    if denom <= 0.0:
        raise BacktestError(
            f"portfolio return {denom - 1.0:.4f} <= -1: book wiped out, drift undefined"
        )
    return gross / denom


def _sub_panel(window: ReturnPanel, start: int, stop: int) -> ReturnPanel:
    return ReturnPanel(
        window.dates[start:stop],
        window.returns[start:stop],
        window.asset_ids,
        validate=False,
    )


def _shift_covariances(window, config, estimator) -> list[CovEstimate]:
    """Covariances of the shifted CV subwindows, shared across models."""
    sub_len = window.n_rows - config.cv_holdout
    n_shifts = 1 if config.cv_fast else config.cv_holdout
    return [_cov_or_error(estimator, _sub_panel(window, s, s + sub_len)) for s in range(n_shifts)]


def _cov_or_error(estimator, panel) -> CovEstimate:
    try:
        return estimator(panel)
    except EstimatorError as exc:
        raise BacktestError(f"covariance estimation failed: {exc}") from exc


def cv_lambda_scores(
    window: ReturnPanel,
    config: BacktestConfig,
    model: str,
    w_prev: np.ndarray | None = None,
    shift_covs: list[CovEstimate] | None = None,
    warm_cache: dict | None = None,
) -> np.ndarray:
    """Holdout-return standard deviation per grid lambda (ddof 0).

    With ``cv_fast`` the first subwindow's fit is reused across all
    holdout days instead of refitting on every one-day shift.
    """
    if model not in CV_MODELS:
        raise ValueError(f"cross-validation applies to {CV_MODELS}, got {model!r}")
    holdout = config.cv_holdout
    sub_len = window.n_rows - holdout
    if sub_len < 2:
        raise BacktestError(
            f"window of {window.n_rows} rows leaves {sub_len} fitting rows "
            f"after a {holdout}-day holdout"
        )
    grid = config.lambda_grid
    boxed = model == MODEL_LASSO_TURNOVER and math.isfinite(config.k)
    if boxed and w_prev is None:
        raise ValueError("lasso_turnover cross-validation needs w_prev")
    if shift_covs is None:
        estimator = get_estimator(
            config.estimator, config.poet_k, config.poet_theta, config.poet_k_candidates
        )
        shift_covs = _shift_covariances(window, config, estimator)
    returns = window.returns
    rets = np.empty((holdout, len(grid)))
    n_shifts = 1 if config.cv_fast else holdout
    for s in range(n_shifts):
        sigma = shift_covs[s].matrix
        for li, lam in enumerate(grid):
            warm = None
            if warm_cache is not None:
                warm = warm_cache.get((s, li)) or (
                    warm_cache.get((s, li - 1)) if li else None
                ) or (warm_cache.get((s - 1, li)) if s else None)
            w, sol = _solve_split(
                sigma,
                lam,
                w_prev=w_prev if boxed else None,
                k=config.k if boxed else math.inf,
                warm=warm,
            )
            if warm_cache is not None:
                warm_cache[(s, li)] = (sol.x, sol.working_set)
            if config.cv_fast:
                rets[:, li] = returns[sub_len : sub_len + holdout] @ w
            else:
                rets[s, li] = returns[s + sub_len] @ w
    return rets.std(axis=0)


def cross_validate_lambda(
    window: ReturnPanel,
    config: BacktestConfig,
    model: str,
    w_prev: np.ndarray | None = None,
    shift_covs: list[CovEstimate] | None = None,
    warm_cache: dict | None = None,
) -> float:
    """Pick the grid lambda with the smallest holdout standard deviation.

    Ties are broken towards the larger lambda.  A degenerate window whose
    columns are all constant cannot rank penalties; the largest grid value
    is returned with a warning.
    """
    grid = config.lambda_grid
    if len(grid) == 1:
        return grid[0]
    if float(np.ptp(window.returns, axis=0).max()) == 0.0:
        log.warning("degenerate all-constant window; returning largest lambda")
        return grid[-1]
    stds = cv_lambda_scores(window, config, model, w_prev, shift_covs, warm_cache)
    best = len(grid) - 1
    for i in range(len(grid) - 2, -1, -1):
        if stds[i] < stds[best]:
            best = i
    return grid[best]


@dataclass(frozen=True)
class ModelRun:
    """Per-model trajectories; one row/entry per out-of-sample day."""

    model: str
    oos_returns: np.ndarray
    weights: np.ndarray
    lambda_path: np.ndarray
    delta_path: np.ndarray


@dataclass(frozen=True)
class BacktestResult:
    config: BacktestConfig
    asset_ids: tuple[str, ...]
    rebalance_dates: tuple[str, ...]
    oos_dates: tuple[str, ...]
    runs: dict[str, ModelRun]
    initial_turnover_book: np.ndarray | None
    day_seconds: np.ndarray


def run_backtest(panel: ReturnPanel, config: BacktestConfig) -> BacktestResult:
    """Roll the window one day at a time and track every configured model.

    The covariance is estimated once per day and shared across models and
    penalties; only the QP depends on lambda.  Failures are re-raised with
    the failing rebalance date attached.
    """
    T, n = panel.n_rows, panel.n_assets
    tau = config.tau
    if T <= tau:
        raise BacktestError(f"panel has {T} rows; need more than tau = {tau}")
    n_days = T - tau
    estimator = get_estimator(
        config.estimator, config.poet_k, config.poet_theta, config.poet_k_candidates
    )
    models = config.models
    need_cv = any(m in CV_MODELS for m in models)
    grid = config.lambda_grid

    paths = {
        m: {
            "oos": np.empty(n_days),
            "w": np.empty((n_days, n)),
            "lam": np.zeros(n_days),
            "delta": np.empty(n_days),
        }
        for m in models
    }
    day_seconds = np.empty(n_days)
    lasso_cache: dict = {}
    turnover_cache: dict = {}
    book = None
    initial_book = None

    for day in range(n_days):
        t0 = time.perf_counter()
        date_fit = panel.dates[day + tau - 1]
        r_next = panel.returns[day + tau]
        window = rolling_window(panel, WindowSpec(tau, config.cv_holdout, day))
        try:
            cov = _cov_or_error(estimator, window)
            sigma = cov.matrix

            need_standard = MODEL_STANDARD in models or (
                MODEL_LASSO_TURNOVER in models and book is None
            )
            std_weights = gmv_standard(cov, date_fit) if need_standard else None

            shift_covs = (
                _shift_covariances(window, config, estimator)
                if need_cv and len(grid) > 1
                else None
            )

            if MODEL_STANDARD in models:
                _record(paths[MODEL_STANDARD], day, std_weights, r_next)

            if MODEL_LASSO in models:
                lam = cross_validate_lambda(
                    window, config, MODEL_LASSO, None, shift_covs, lasso_cache
                )
                warm = lasso_cache.get("final")
                w_raw, sol = _solve_split(sigma, lam, warm=warm)
                lasso_cache["final"] = (sol.x, sol.working_set)
                fitted = PortfolioWeights(_snap(w_raw), MODEL_LASSO, lam, date_fit)
                _record(paths[MODEL_LASSO], day, fitted, r_next)

            if MODEL_LASSO_TURNOVER in models:
                if book is None:
                    book = std_weights.w.copy()
                    initial_book = book.copy()
                # cached turnover solves anchor to yesterday's box; drop them
                if turnover_cache.get("day") != day:
                    turnover_cache.clear()
                    turnover_cache["day"] = day
                lam = cross_validate_lambda(
                    window, config, MODEL_LASSO_TURNOVER, book, shift_covs, turnover_cache
                )
                boxed = math.isfinite(config.k)
                last_shift = 0 if config.cv_fast else config.cv_holdout - 1
                warm = turnover_cache.get((last_shift, _grid_index(grid, lam)))
                w_raw, sol = _solve_split(
                    sigma,
                    lam,
                    w_prev=book if boxed else None,
                    k=config.k if boxed else math.inf,
                    warm=warm,
                )
                w_fit = _snap(w_raw)
                if boxed:
                    overshoot = float(np.abs(w_fit - book).max()) - config.k
                    if overshoot > 1e-8:
                        raise SolverError(
                            f"turnover cap violated by {overshoot:.3e}"
                        )
                fitted = PortfolioWeights(w_fit, MODEL_LASSO_TURNOVER, lam, date_fit)
                _record(paths[MODEL_LASSO_TURNOVER], day, fitted, r_next)
                book = drift_weights(w_fit, r_next)
        except (SolverError, EstimatorError, ValueError, BacktestError) as exc:
            raise BacktestError(f"backtest failed on {date_fit}: {exc}") from exc
        day_seconds[day] = time.perf_counter() - t0

    runs = {
        m: ModelRun(
            m,
            paths[m]["oos"],
            paths[m]["w"],
            paths[m]["lam"],
            paths[m]["delta"],
        )
        for m in models
    }
    return BacktestResult(
        config=config,
        asset_ids=panel.asset_ids,
        rebalance_dates=panel.dates[tau - 1 : T - 1],
        oos_dates=panel.dates[tau:],
        runs=runs,
        initial_turnover_book=initial_book,
        day_seconds=day_seconds,
    )


def _record(path: dict, day: int, fitted: PortfolioWeights, r_next: np.ndarray) -> None:
    path["oos"][day] = float(fitted.w @ r_next)
    path["w"][day] = fitted.w
    path["lam"][day] = fitted.lambda_
    path["delta"][day] = fitted.delta


def _grid_index(grid: tuple[float, ...], lam: float) -> int:
    return grid.index(lam)


FLOAT_FORMAT = "%.17g"


def save_results(result: BacktestResult, out_dir) -> list[Path]:
    """Write per-model CSVs (returns, weights, lambda/delta paths).

    Floats carry 17 significant digits: identical runs produce
    byte-identical files and values round-trip exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, run in result.runs.items():
        frame = pd.DataFrame({"date": result.oos_dates, "return": run.oos_returns})
        path = out / f"oos_returns_{name}.csv"
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        written.append(path)

        frame = pd.DataFrame(run.weights, columns=list(result.asset_ids))
        frame.insert(0, "date", list(result.rebalance_dates))
        path = out / f"weights_{name}.csv"
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        written.append(path)

        frame = pd.DataFrame(
            {
                "date": result.rebalance_dates,
                "lambda": run.lambda_path,
                "delta": run.delta_path,
            }
        )
        path = out / f"lambda_delta_{name}.csv"
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        written.append(path)
    return written
