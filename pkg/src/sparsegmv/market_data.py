"""Price/return panels, CSV ingestion, windowing and synthetic factor data.

Panels carry a date label per row and an asset id per column.  Dates are
opaque ordered strings (ISO-8601 in CSV files); all windowing is purely
positional, no calendar arithmetic is ever performed.
"""

from __future__ import annotations

import datetime
from dataclasses import InitVar, dataclass

import numpy as np
import pandas as pd

DATE_COLUMN = "date"


class DataError(ValueError):
    """Input data violates the panel schema (shape, ordering or values)."""


def _freeze(values: np.ndarray) -> np.ndarray:
    out = np.asarray(values, dtype=float).copy()
    out.flags.writeable = False
    return out


def _check_labels(dates, asset_ids, n_rows: int, n_cols: int):
    dates = tuple(str(d) for d in dates)
    asset_ids = tuple(str(a) for a in asset_ids)
    if len(dates) != n_rows:
        raise DataError(f"expected {n_rows} date labels, got {len(dates)}")
    if len(asset_ids) != n_cols:
        raise DataError(f"expected {n_cols} asset ids, got {len(asset_ids)}")
    if len(set(asset_ids)) != len(asset_ids):
        raise DataError("duplicate asset ids")
    for prev, cur in zip(dates, dates[1:]):
        if cur <= prev:
            raise DataError(
                f"dates must be strictly increasing, found {cur!r} after {prev!r}"
            )
    return dates, asset_ids


@dataclass(frozen=True)
class PricePanel:
    """Strictly positive price matrix with one row per date.

    Attributes
    ----------
    dates : tuple of str
        Row labels, strictly increasing, no duplicates.
    prices : ndarray, shape (T+1, n)
        Positive finite prices (already adjusted for corporate actions).
    asset_ids : tuple of str
        Column labels, unique.
    """

    dates: tuple[str, ...]
    prices: np.ndarray
    asset_ids: tuple[str, ...]

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        if prices.ndim != 2:
            raise DataError(f"prices must be 2-D, got shape {prices.shape}")
        dates, asset_ids = _check_labels(
            self.dates, self.asset_ids, prices.shape[0], prices.shape[1]
        )
        bad = ~np.isfinite(prices) | (prices <= 0.0)
        if bad.any():
            i, j = map(int, np.argwhere(bad)[0])
            raise DataError(
                f"non-positive or non-finite price {prices[i, j]!r} for asset "
                f"{asset_ids[j]!r} on {dates[i]!r}"
            )
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "asset_ids", asset_ids)
        object.__setattr__(self, "prices", _freeze(prices))

    @property
    def n_assets(self) -> int:
        return self.prices.shape[1]

    @property
    def n_rows(self) -> int:
        return self.prices.shape[0]


@dataclass(frozen=True)
class ReturnPanel:
    """Simple (discrete) return matrix with one row per date.

    Every return exceeds -1; a row count one short of the source price
    panel falls out of the differencing.  ``validate=False`` is an internal
    fast path for slices of an already validated panel.
    """

    dates: tuple[str, ...]
    returns: np.ndarray
    asset_ids: tuple[str, ...]
    validate: InitVar[bool] = True

    def __post_init__(self, validate: bool):
        returns = np.asarray(self.returns, dtype=float)
        if returns.ndim != 2:
            raise DataError(f"returns must be 2-D, got shape {returns.shape}")
        if validate:
            dates, asset_ids = _check_labels(
                self.dates, self.asset_ids, returns.shape[0], returns.shape[1]
            )
            bad = ~np.isfinite(returns) | (returns <= -1.0)
            if bad.any():
                i, j = map(int, np.argwhere(bad)[0])
                raise DataError(
                    f"invalid return {returns[i, j]!r} (must be finite and > -1) "
                    f"for asset {asset_ids[j]!r} on {dates[i]!r}"
                )
            object.__setattr__(self, "dates", dates)
            object.__setattr__(self, "asset_ids", asset_ids)
            object.__setattr__(self, "returns", _freeze(returns))
        else:
            returns = returns if not returns.flags.writeable else _freeze(returns)
            object.__setattr__(self, "returns", returns)

    @property
    def n_assets(self) -> int:
        return self.returns.shape[1]

    @property
    def n_rows(self) -> int:
        return self.returns.shape[0]


@dataclass(frozen=True)
class WindowSpec:
    """Positional rolling-window description.

    window_length is the estimation window tau, cv_holdout the number of
    trailing observations reserved for penalty cross-validation.
    """

    window_length: int
    cv_holdout: int = 20
    start_index: int = 0

    def __post_init__(self):
        if self.window_length < 2:
            raise DataError(f"window_length must be >= 2, got {self.window_length}")
        if self.cv_holdout < 1:
            raise DataError(f"cv_holdout must be >= 1, got {self.cv_holdout}")
        if self.cv_holdout >= self.window_length:
            raise DataError(
                f"cv_holdout ({self.cv_holdout}) must be smaller than "
                f"window_length ({self.window_length})"
            )
        if self.start_index < 0:
            raise DataError(f"start_index must be >= 0, got {self.start_index}")


def prices_to_returns(panel: PricePanel) -> ReturnPanel:
    """Convert a price panel to simple returns r_t = (P_t - P_{t-1}) / P_{t-1}.

    The first price row is consumed; the return panel keeps the dates of the
    later row of each pair.
    """
    if panel.n_rows < 2:
        raise DataError("need at least 2 price rows to form returns")
    prices = panel.prices
    returns = np.diff(prices, axis=0) / prices[:-1]
    return ReturnPanel(panel.dates[1:], returns, panel.asset_ids)


def rolling_window(panel: ReturnPanel, spec: WindowSpec) -> ReturnPanel:
    """Slice rows [start_index, start_index + window_length) of a return panel."""
    stop = spec.start_index + spec.window_length
    if stop > panel.n_rows:
        raise DataError(
            f"window [{spec.start_index}, {stop}) exceeds panel length {panel.n_rows}"
        )
    return ReturnPanel(
        panel.dates[spec.start_index : stop],
        panel.returns[spec.start_index : stop],
        panel.asset_ids,
        validate=False,
    )


def synth_factor_returns(
    n: int,
    T: int,
    K: int,
    seed: int,
    factor_vol: float | np.ndarray = 0.02,
    idio_vol: float | np.ndarray = 0.01,
) -> tuple[ReturnPanel, np.ndarray]:
    """Draw returns from a static K-factor model r_t = B f_t + eps_t.

    Loadings B are drawn once from a standard normal (symmetric, unit
    scale); factors and idiosyncratic noise are independent mean-zero
    Gaussians with the given daily volatilities.  The same seed always
    yields a bit-identical panel.

    Returns
    -------
    panel : ReturnPanel
        T rows of synthetic returns with sequential ISO dates.
    sigma_true : ndarray, shape (n, n)
        Population covariance B diag(factor_vol^2) B' + diag(idio_vol^2).
    """
    if n < 2:
        raise DataError(f"n must be >= 2, got {n}")
    if T < 2:
        raise DataError(f"T must be >= 2, got {T}")
    if not 1 <= K < n:
        raise DataError(f"K must be in [1, n), got K={K} with n={n}")
    fvol = np.broadcast_to(np.asarray(factor_vol, dtype=float), (K,)).copy()
    ivol = np.broadcast_to(np.asarray(idio_vol, dtype=float), (n,)).copy()
    if (fvol <= 0).any() or (ivol <= 0).any():
        raise DataError("volatilities must be strictly positive")

    rng = np.random.default_rng(seed)
    loadings = rng.standard_normal((n, K))
    factors = rng.standard_normal((T, K)) * fvol
    noise = rng.standard_normal((T, n)) * ivol
    returns = factors @ loadings.T + noise
    if (returns <= -1.0).any():
        raise DataError(
            "synthetic returns breached -1; lower factor_vol/idio_vol"
        )
    sigma_true = loadings @ np.diag(fvol**2) @ loadings.T + np.diag(ivol**2)

    start = datetime.date(2000, 1, 1)
    dates = tuple(
        (start + datetime.timedelta(days=i)).isoformat() for i in range(T)
    )
    asset_ids = tuple(f"A{j:04d}" for j in range(n))
    return ReturnPanel(dates, returns, asset_ids), _freeze(sigma_true)


def _read_panel_csv(path, kind: str) -> pd.DataFrame:
    try:
        # round_trip parsing: %.17g output must read back bit-identical
        frame = pd.read_csv(path, dtype={0: str}, float_precision="round_trip")
    except FileNotFoundError:
        raise DataError(f"{kind} file not found: {path}") from None
    except Exception as exc:  # malformed CSV
        raise DataError(f"could not parse {kind} file {path}: {exc}") from exc
    if frame.shape[1] < 2:
        raise DataError(f"{kind} file {path} needs a date column plus >= 1 asset")
    if frame.columns[0] != DATE_COLUMN:
        raise DataError(
            f"first column of {path} must be named {DATE_COLUMN!r}, "
            f"got {frame.columns[0]!r}"
        )
    values = frame.iloc[:, 1:]
    numeric = values.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    missing = ~np.isfinite(numeric)
    if missing.any():
        i, j = map(int, np.argwhere(missing)[0])
        raise DataError(
            f"missing or non-numeric value {values.iat[i, j]!r} for asset "
            f"{values.columns[j]!r} on {frame.iat[i, 0]!r} in {path}"
        )
    return frame


def read_price_csv(path) -> PricePanel:
    """Read a price CSV (header row, first column ``date``, one column per asset)."""
    frame = _read_panel_csv(path, "price")
    return PricePanel(
        tuple(frame.iloc[:, 0].astype(str)),
        frame.iloc[:, 1:].to_numpy(dtype=float),
        tuple(frame.columns[1:]),
    )


def read_return_csv(path) -> ReturnPanel:
    """Read a return CSV with the same schema as :func:`read_price_csv`."""
    frame = _read_panel_csv(path, "return")
    return ReturnPanel(
        tuple(frame.iloc[:, 0].astype(str)),
        frame.iloc[:, 1:].to_numpy(dtype=float),
        tuple(frame.columns[1:]),
    )


def write_return_csv(panel: ReturnPanel, path) -> None:
    """Write a return panel; floats keep 17 significant digits so the file
    round-trips through :func:`read_return_csv` without loss."""
    frame = pd.DataFrame(panel.returns, columns=list(panel.asset_ids))
    frame.insert(0, DATE_COLUMN, list(panel.dates))
    frame.to_csv(path, index=False, float_format="%.17g")
