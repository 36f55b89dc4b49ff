"""Global minimum-variance portfolios: unconstrained, L1-penalized, and
L1-penalized with per-asset turnover caps.

All models minimize w' Sigma w over fully-invested portfolios (weights sum
to one, shorting allowed).  The lasso variant adds a lagrangian penalty
lambda * ||w||_1 by splitting w = wp - wm into non-negative parts and
solving the resulting 2n-variable QP; the turnover variant further boxes
each weight inside [w_prev_j - k, w_prev_j + k].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .covariance import CovEstimate
from .qp import OPTIMAL, QpProblem, SolverError, solve_qp

log = logging.getLogger(__name__)

MODEL_STANDARD = "standard"
MODEL_LASSO = "lasso"
MODEL_LASSO_TURNOVER = "lasso_turnover"
MODEL_NAMES = (MODEL_STANDARD, MODEL_LASSO, MODEL_LASSO_TURNOVER)

ZERO_WEIGHT_TOL = 1e-8
WEIGHT_SUM_TOL = 1e-6


@dataclass(frozen=True)
class PortfolioWeights:
    """Fully-invested weight vector with its L1 budget delta = ||w||_1."""

    w: np.ndarray
    model: str
    lambda_: float = 0.0
    date: str | None = None
    delta: float = field(init=False)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).copy()
        if w.ndim != 1:
            raise SolverError(f"weights must be 1-D, got shape {w.shape}")
        if not np.isfinite(w).all():
            raise SolverError("weights contain non-finite entries")
        total = float(w.sum())
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise SolverError(f"weights sum to {total!r}, expected 1 +- {WEIGHT_SUM_TOL}")
        if self.model not in MODEL_NAMES:
            raise ValueError(f"unknown model {self.model!r}")
        if not (np.isfinite(self.lambda_) and self.lambda_ >= 0.0):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lambda_}")
        w.flags.writeable = False
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "delta", float(np.abs(w).sum()))

    @property
    def n_assets(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True)
class ModelSpec:
    """Which model to fit and with which knobs.

    ``lambda_`` is the L1 penalty, ``k`` the per-asset turnover cap
    (math.inf disables it), ``w_prev`` the prior-day post-drift book that
    the cap is anchored to.
    """

    model: str
    lambda_: float = 0.0
    k: float = math.inf
    w_prev: np.ndarray | None = None

    def __post_init__(self):
        if self.model not in MODEL_NAMES:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODEL_NAMES}")
        if not (np.isfinite(self.lambda_) and self.lambda_ >= 0.0):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lambda_}")
        if not self.k > 0.0:
            raise ValueError(f"k must be > 0, got {self.k}")
        if self.w_prev is not None:
            w_prev = np.asarray(self.w_prev, dtype=float)
            if w_prev.ndim != 1:
                raise ValueError("w_prev must be 1-D")
            if abs(float(w_prev.sum()) - 1.0) > WEIGHT_SUM_TOL:
                raise ValueError(
                    f"w_prev sums to {float(w_prev.sum())!r}, expected 1 +- {WEIGHT_SUM_TOL}"
                )
            object.__setattr__(self, "w_prev", w_prev)
        if self.model == MODEL_LASSO_TURNOVER and math.isfinite(self.k) and self.w_prev is None:
            raise ValueError("lasso_turnover with a finite cap needs w_prev")


def _sigma_of(cov) -> np.ndarray:
    if isinstance(cov, CovEstimate):
        return cov.matrix
    sigma = np.asarray(cov, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ValueError(f"covariance must be square, got shape {sigma.shape}")
    return sigma


def _solve_gmv_linear(sigma: np.ndarray) -> np.ndarray:
    """Closed-form GMV weights Sigma^-1 1 / (1' Sigma^-1 1) via Cholesky,
    with an escalating diagonal ridge when the matrix is singular."""
    n = sigma.shape[0]
    ones = np.ones(n)
    ridge = 1e-10 * float(np.trace(sigma)) / n
    attempt = sigma
    for trial in range(3):
        try:
            cho = scipy.linalg.cho_factor(attempt, check_finite=False)
            y = scipy.linalg.cho_solve(cho, ones, check_finite=False)
            denom = float(ones @ y)
            if denom <= 0.0 or not np.isfinite(denom):
                raise SolverError(
                    f"covariance irreparably singular: 1'inv(Sigma)1 = {denom!r}"
                )
            return y / denom
        except scipy.linalg.LinAlgError:
            if ridge <= 0.0:
                break
            if trial == 0:
                log.warning("singular covariance; retrying with ridge %.3e", ridge)
            attempt = sigma + ridge * np.eye(n)
            ridge *= 100.0
    raise SolverError("covariance irreparably singular (Cholesky failed after ridge repair)")


def gmv_standard(cov, date: str | None = None) -> PortfolioWeights:
    """Unconstrained global minimum-variance portfolio (closed form)."""
    sigma = _sigma_of(cov)
    w = _solve_gmv_linear(sigma)
    return PortfolioWeights(w, MODEL_STANDARD, 0.0, date)


def _split_problem(
    sigma: np.ndarray,
    lambda_: float,
    w_prev: np.ndarray | None,
    k: float,
) -> QpProblem:
    """Build the 2n-variable split QP; w = x[:n] - x[n:], x >= 0."""
    n = sigma.shape[0]
    block = 2.0 * np.block([[sigma, -sigma], [-sigma, sigma]])
    cost = np.full(2 * n, lambda_)
    eq = np.concatenate([np.ones(n), -np.ones(n)])[None, :]
    rows = [-np.eye(2 * n)]
    rhs = [np.zeros(2 * n)]
    if w_prev is not None and math.isfinite(k):
        signed = np.hstack([np.eye(n), -np.eye(n)])
        rows += [signed, -signed]
        rhs += [w_prev + k, k - w_prev]
    return QpProblem(
        block,
        cost,
        E=eq,
        e=np.ones(1),
        G=np.vstack(rows),
        h=np.concatenate(rhs),
        assume_psd=True,  # a PSD Sigma makes the split block PSD by construction
    )


def _split_start(w: np.ndarray) -> np.ndarray:
    total = float(w.sum())
    w0 = w / total if total != 0.0 else w
    return np.concatenate([np.clip(w0, 0.0, None), np.clip(-w0, 0.0, None)])


def _solve_split(
    sigma: np.ndarray,
    lambda_: float,
    w_prev: np.ndarray | None = None,
    k: float = math.inf,
    warm=None,
    tolerance: float = 1e-8,
):
    """Shared solve path for the lasso models.

    ``warm`` is an optional (x0, working_set) pair from a previous nearby
    solve.  Returns the raw (un-snapped) weights and the QpSolution.
    """
    n = sigma.shape[0]
    problem = _split_problem(sigma, lambda_, w_prev, k)
    x0 = None
    wset = None
    if warm is not None:
        x0, wset = warm
    if x0 is None:
        if w_prev is not None and math.isfinite(k):
            x0 = _split_start(w_prev)
        else:
            try:
                x0 = _split_start(_solve_gmv_linear(sigma))
            except SolverError:
                x0 = _split_start(np.full(n, 1.0 / n))
    solution = solve_qp(problem, tolerance=tolerance, x0=x0, working_set=wset)
    if solution.status != OPTIMAL:
        raise SolverError(
            f"split QP solve failed with status {solution.status!r} "
            f"(kkt residual {solution.kkt_residual:.3e})"
        )
    w = solution.x[:n] - solution.x[n:]
    return w, solution


def _snap(w: np.ndarray) -> np.ndarray:
    out = w.copy()
    out[np.abs(out) < ZERO_WEIGHT_TOL] = 0.0
    return out


def gmv_lasso(cov, lambda_: float, date: str | None = None) -> PortfolioWeights:
    """L1-penalized GMV: minimize w' Sigma w + lambda ||w||_1, sum(w) = 1.

    Components below 1e-8 in magnitude are snapped to exact zeros so that
    sparsity counts are well-defined.
    """
    if not (np.isfinite(lambda_) and lambda_ >= 0.0):
        raise ValueError(f"lambda must be finite and >= 0, got {lambda_}")
    sigma = _sigma_of(cov)
    w, _ = _solve_split(sigma, float(lambda_))
    return PortfolioWeights(_snap(w), MODEL_LASSO, float(lambda_), date)


def gmv_lasso_turnover(
    cov,
    lambda_: float,
    k: float,
    w_prev: np.ndarray,
    date: str | None = None,
) -> PortfolioWeights:
    """Lasso GMV with per-asset turnover caps |w_j - w_prev_j| <= k.

    An infinite k reduces to :func:`gmv_lasso`; the first backtest day is
    seeded with that day's standard GMV weights upstream.
    """
    if not (np.isfinite(lambda_) and lambda_ >= 0.0):
        raise ValueError(f"lambda must be finite and >= 0, got {lambda_}")
    if not k > 0.0:
        raise ValueError(f"k must be > 0, got {k}")
    sigma = _sigma_of(cov)
    n = sigma.shape[0]
    if math.isfinite(k):
        w_prev = np.asarray(w_prev, dtype=float)
        if w_prev.shape != (n,):
            raise ValueError(f"w_prev has shape {w_prev.shape}, expected ({n},)")
        if abs(float(w_prev.sum()) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(
                f"w_prev sums to {float(w_prev.sum())!r}, expected 1 +- {WEIGHT_SUM_TOL}"
            )
        w, _ = _solve_split(sigma, float(lambda_), w_prev, float(k))
        w = _snap(w)
        overshoot = float(np.abs(w - w_prev).max()) - float(k)
        if overshoot > ZERO_WEIGHT_TOL:
            raise SolverError(
                f"turnover cap violated by {overshoot:.3e} (solver breakdown)"
            )
    else:
        w, _ = _solve_split(sigma, float(lambda_))
        w = _snap(w)
    return PortfolioWeights(w, MODEL_LASSO_TURNOVER, float(lambda_), date)


def fit_model(cov, spec: ModelSpec, date: str | None = None) -> PortfolioWeights:
    """Dispatch a ModelSpec to the matching solver."""
    if spec.model == MODEL_STANDARD:
        return gmv_standard(cov, date)
    if spec.model == MODEL_LASSO:
        return gmv_lasso(cov, spec.lambda_, date)
    return gmv_lasso_turnover(cov, spec.lambda_, spec.k, spec.w_prev, date)


def in_sample_variance(weights: PortfolioWeights, cov) -> float:
    """w' Sigma w for a fitted weight vector."""
    sigma = _sigma_of(cov)
    return float(weights.w @ sigma @ weights.w)
