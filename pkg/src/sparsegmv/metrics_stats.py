"""Out-of-sample performance measures and a HAC variance-difference test.

Conventions follow the daily rolling-window evaluation: T total days, tau
in-sample days, T - tau out-of-sample returns per model.  The variance
measure divides by the number of out-of-sample days, turnover by the
number of day-to-day transitions (one fewer).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

log = logging.getLogger(__name__)

TRADING_DAYS_PER_YEAR = 252


@dataclass(frozen=True)
class PerformanceReport:
    """One table row: risk, trading activity and sparsity of a strategy."""

    daily_variance: float
    stddev_pa: float
    turnover_daily: float
    avg_assets: float
    avg_short_sales: float
    pct_of_full_assets: float
    pct_of_full_short: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class VarianceTestResult:
    statistic: float
    p_value: float
    bandwidth: int


def oos_variance(returns: np.ndarray) -> tuple[float, float]:
    """Daily out-of-sample variance and annualized standard deviation.

    The variance is the mean squared deviation from the out-of-sample mean
    (divisor = number of observations); annualization multiplies by 252
    before the square root.
    """
    r = np.asarray(returns, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise ValueError(f"need a 1-D series with >= 2 returns, got shape {r.shape}")
    daily = float(np.mean((r - r.mean()) ** 2))
    return daily, float(math.sqrt(TRADING_DAYS_PER_YEAR * daily))


def _drift(weights: np.ndarray, realized: np.ndarray) -> np.ndarray:
    """Post-return drifted books: w_j (1 + r_j) / (1 + w'r) rowwise."""
    gross = weights * (1.0 + realized)
    denom = gross.sum(axis=1)
    if (denom <= 0.0).any():
        bad = int(np.argmax(denom <= 0.0))
        raise ValueError(f"portfolio return <= -1 at step {bad}; drift undefined")
    return gross / denom[:, None]


def avg_turnover(weights: np.ndarray, next_returns: np.ndarray) -> float:
    """Average daily turnover sum_j |w_{t+1,j} - w_{t,j}+| over transitions.

    ``weights`` holds one row per rebalance day, ``next_returns`` the
    returns each row was exposed to (same alignment); the drifted book
    w+ of day t is compared with the freshly chosen w of day t+1.
    """
    w = np.asarray(weights, dtype=float)
    r = np.asarray(next_returns, dtype=float)
    if w.ndim != 2 or w.shape[0] < 2:
        raise ValueError(f"need >= 2 weight rows, got shape {w.shape}")
    if r.shape != w.shape:
        raise ValueError(f"returns shape {r.shape} != weights shape {w.shape}")
    drifted = _drift(w[:-1], r[:-1])
    return float(np.abs(w[1:] - drifted).sum(axis=1).mean())


def avg_assets(weights: np.ndarray) -> float:
    """Average count of non-zero positions per day (weights pre-snapped)."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] < 1:
        raise ValueError(f"need a 2-D weight history, got shape {w.shape}")
    return float((w != 0.0).sum(axis=1).mean())


def avg_short_sales(weights: np.ndarray) -> float:
    """Average count of strictly negative positions per day."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] < 1:
        raise ValueError(f"need a 2-D weight history, got shape {w.shape}")
    return float((w < 0.0).sum(axis=1).mean())


def build_report(
    weights: np.ndarray,
    oos_returns: np.ndarray,
    next_returns: np.ndarray,
    n_assets: int,
) -> PerformanceReport:
    """Assemble the per-model report row from a backtest weight history."""
    daily, stdev = oos_variance(oos_returns)
    turn = avg_turnover(weights, next_returns)
    assets = avg_assets(weights)
    shorts = avg_short_sales(weights)
    return PerformanceReport(
        daily_variance=daily,
        stddev_pa=stdev,
        turnover_daily=turn,
        avg_assets=assets,
        avg_short_sales=shorts,
        pct_of_full_assets=100.0 * assets / n_assets,
        pct_of_full_short=100.0 * shorts / n_assets,
    )


def parzen_kernel(x) -> np.ndarray:
    """Parzen lag window: 1 - 6x^2 + 6|x|^3 for |x| <= 1/2,
    2(1 - |x|)^3 for 1/2 < |x| <= 1, else 0."""
    ax = np.abs(np.asarray(x, dtype=float))
    inner = 1.0 - 6.0 * ax**2 + 6.0 * ax**3
    outer = 2.0 * (1.0 - ax) ** 3
    return np.where(ax <= 0.5, inner, np.where(ax <= 1.0, outer, 0.0))


def hac_bandwidth(n_obs: int) -> int:
    """Deterministic lag truncation floor(4 (T/100)^(2/9))."""
    if n_obs < 1:
        raise ValueError(f"need a positive sample size, got {n_obs}")
    return int(math.floor(4.0 * (n_obs / 100.0) ** (2.0 / 9.0)))


def hac_variance_test(
    a: np.ndarray, b: np.ndarray, bandwidth: int | None = None
) -> VarianceTestResult:
    """Two-sided test of equal variances for two aligned return series.

    Builds v_t = (a_t - mean(a))^2 - (b_t - mean(b))^2, studentizes its
    mean with a Parzen-kernel long-run variance, and compares the statistic
    with a standard normal.  A non-positive long-run variance (identical
    series, degenerate data) is reported as p = 1 with a warning.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("inputs must be 1-D series")
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    n_obs = a.shape[0]
    if n_obs < 30:
        raise ValueError(f"need >= 30 observations, got {n_obs}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("inputs must be finite")
    lags = hac_bandwidth(n_obs) if bandwidth is None else int(bandwidth)
    if lags < 1:
        raise ValueError(f"bandwidth must be >= 1, got {lags}")

    v = (a - a.mean()) ** 2 - (b - b.mean()) ** 2
    v_bar = float(v.mean())
    d = v - v_bar
    lrv = float(d @ d) / n_obs
    for lag in range(1, min(lags, n_obs - 1) + 1):
        gamma = float(d[lag:] @ d[:-lag]) / n_obs
        lrv += 2.0 * float(parzen_kernel(lag / lags)) * gamma

    if lrv <= 0.0:
        log.warning("degenerate long-run variance (%.3e); reporting p = 1", lrv)
        return VarianceTestResult(0.0, 1.0, lags)
    z = v_bar / math.sqrt(lrv / n_obs)
    p = 2.0 * float(norm.sf(abs(z)))
    return VarianceTestResult(float(z), p, lags)
