"""Covariance estimators for daily return windows.

Four estimators share one output type:

``ml``
    Plain sample covariance (mean-centered, tau - 1 divisor).
``lw-lin``
    Linear shrinkage towards the constant-correlation target with the
    asymptotically optimal plug-in intensity.
``lw-nl``
    Analytic non-linear eigenvalue shrinkage: sample eigenvectors are kept,
    eigenvalues are transformed through a kernel estimate of the spectral
    density and its Hilbert transform (Epanechnikov kernel, bandwidth
    proportional to tau^(-1/3)).
``poet``
    Principal orthogonal complement thresholding: top-K principal
    components plus an entrywise soft-thresholded residual covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .market_data import ReturnPanel

PSD_REL_TOL = 1e-10

ESTIMATOR_NAMES = ("ml", "lw-lin", "lw-nl", "poet")


class EstimatorError(ValueError):
    """Estimator preconditions violated (window too short, bad knobs, ...)."""


@dataclass(frozen=True)
class CovEstimate:
    """Symmetric PSD covariance estimate plus estimator diagnostics.

    meta always carries the concentration ratio ``q = n / tau``; each
    estimator adds its own fields (shrinkage intensity, eigenvalues, ...).
    """

    matrix: np.ndarray
    estimator: str
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise EstimatorError(f"covariance must be square, got {matrix.shape}")
        if not np.isfinite(matrix).all():
            raise EstimatorError("covariance contains non-finite entries")
        matrix = 0.5 * (matrix + matrix.T)
        eigvals, eigvecs = np.linalg.eigh(matrix)
        scale = float(np.abs(eigvals).max()) if eigvals.size else 0.0
        if eigvals.size and eigvals[0] < -PSD_REL_TOL * max(scale, 1e-300):
            raise EstimatorError(
                f"covariance not PSD: min eigenvalue {eigvals[0]:.3e} "
                f"vs max {scale:.3e}"
            )
        if eigvals.size and eigvals[0] < 0.0:
            matrix = (eigvecs * np.clip(eigvals, 0.0, None)) @ eigvecs.T
            matrix = 0.5 * (matrix + matrix.T)
        matrix = matrix.copy()
        matrix.flags.writeable = False
        object.__setattr__(self, "matrix", matrix)

    @property
    def n_assets(self) -> int:
        return self.matrix.shape[0]


def _demeaned(window: ReturnPanel, min_rows: int = 2) -> np.ndarray:
    tau = window.n_rows
    if tau < min_rows:
        raise EstimatorError(f"window has {tau} rows, need >= {min_rows}")
    returns = window.returns
    return returns - returns.mean(axis=0)


def sample_cov(window: ReturnPanel) -> CovEstimate:
    """Mean-centered sample covariance with divisor tau - 1."""
    x = _demeaned(window)
    tau, n = window.n_rows, window.n_assets
    matrix = x.T @ x / (tau - 1)
    return CovEstimate(matrix, "ml", {"q": n / tau})


def _constant_correlation_target(sample: np.ndarray) -> tuple[np.ndarray, float]:
    """Constant-correlation target built from a sample covariance.

    Zero-variance assets contribute correlation 0 and keep their (zero)
    variance on the diagonal.
    """
    var = np.diag(sample).copy()
    sqrtvar = np.sqrt(np.clip(var, 0.0, None))
    n = sample.shape[0]
    denom = np.outer(sqrtvar, sqrtvar)
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = np.where(denom > 0.0, sample / denom, 0.0)
    if n < 2:
        rbar = 0.0
    else:
        rbar = float((corr.sum() - np.trace(corr)) / (n * (n - 1)))
    target = rbar * denom
    np.fill_diagonal(target, var)
    return target, rbar


def _lw_shrinkage_intensity(x: np.ndarray) -> float:
    """Plug-in shrinkage intensity for the constant-correlation target.

    x is the demeaned window (tau x n).  Follows the standard estimator:
    pi-hat for the variance of sample covariances, rho-hat for the
    covariance between sample entries and the target, gamma-hat for the
    squared distance to the target; intensity = clip(kappa / tau, 0, 1).
    """
    t, n = x.shape
    sample = x.T @ x / t
    target, rbar = _constant_correlation_target(sample)

    x2 = x**2
    phi_mat = x2.T @ x2 / t - sample**2
    phi = float(phi_mat.sum())

    var = np.diag(sample)
    sqrtvar = np.sqrt(np.clip(var, 0.0, None))
    theta_mat = (x**3).T @ x / t - var[:, None] * sample
    np.fill_diagonal(theta_mat, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(
            np.outer(sqrtvar > 0.0, sqrtvar > 0.0),
            np.outer(1.0 / np.where(sqrtvar > 0.0, sqrtvar, 1.0), sqrtvar),
            0.0,
        )
    rho = float(np.trace(phi_mat)) + rbar * float((ratio * theta_mat).sum())

    gamma = float(np.linalg.norm(sample - target, "fro") ** 2)
    if gamma <= 1e-300:
        # target coincides with the sample; any intensity gives the same matrix
        return 1.0
    kappa = (phi - rho) / gamma
    return float(np.clip(kappa / t, 0.0, 1.0))


def lw_linear(window: ReturnPanel, shrink: float | None = None) -> CovEstimate:
    """Linear shrinkage s * target + (1 - s) * sample covariance.

    The target is the constant-correlation matrix (sample variances on the
    diagonal, average sample correlation elsewhere).  ``shrink`` overrides
    the plug-in intensity for diagnostics; it must lie in [0, 1].
    """
    if window.n_assets < 2:
        raise EstimatorError("constant-correlation target needs at least 2 assets")
    x = _demeaned(window)
    tau, n = window.n_rows, window.n_assets
    sample = x.T @ x / (tau - 1)
    target, rbar = _constant_correlation_target(sample)
    if shrink is None:
        s = _lw_shrinkage_intensity(x)
    else:
        s = float(shrink)
        if not 0.0 <= s <= 1.0:
            raise EstimatorError(f"shrink must be in [0, 1], got {shrink}")
    matrix = s * target + (1.0 - s) * sample
    return CovEstimate(matrix, "lw-lin", {"q": n / tau, "s": s, "avg_corr": rbar})


def lw_nonlinear(window: ReturnPanel) -> CovEstimate:
    """Analytic non-linear shrinkage of sample eigenvalues (tau > n regime).

    Sample eigenvectors are kept; each eigenvalue lambda_i is mapped to

        lambda_i / ((pi q lambda_i f(lambda_i))^2
                    + (1 - q - pi q lambda_i Hf(lambda_i))^2)

    where f is an Epanechnikov kernel estimate of the spectral density with
    per-eigenvalue bandwidth h * lambda_j, h = neff^(-1/3), Hf its Hilbert
    transform and q = n / neff the concentration with neff = tau - 1
    effective observations after demeaning.
    """
    tau, n = window.n_rows, window.n_assets
    if tau <= n:
        raise EstimatorError(f"lw_nonlinear needs tau > n, got tau={tau}, n={n}")
    x = _demeaned(window)
    neff = tau - 1
    sample = x.T @ x / neff
    eigvals, eigvecs = np.linalg.eigh(sample)
    lam_max = float(eigvals[-1])
    if lam_max <= 0.0:
        return CovEstimate(
            np.zeros((n, n)), "lw-nl", {"q": n / tau, "bandwidth": neff ** (-1 / 3)}
        )
    # floor tiny eigenvalues inside the kernel only, so degenerate windows
    # cannot zero a bandwidth
    lam = np.clip(eigvals, 0.0, None)
    lam_kernel = np.maximum(lam, 1e-12 * lam_max)

    h = neff ** (-1.0 / 3.0)
    q = n / neff
    bw = h * lam_kernel[None, :]  # per-column bandwidth h * lambda_j
    diff = (lam[:, None] - lam[None, :]) / bw
    sqrt5 = np.sqrt(5.0)

    f_tilde = (3.0 / (4.0 * sqrt5)) * np.mean(
        np.maximum(1.0 - diff**2 / 5.0, 0.0) / bw, axis=1
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        log_term = np.log(np.abs((sqrt5 - diff) / (sqrt5 + diff)))
    hf = (-3.0 / (10.0 * np.pi)) * diff + (3.0 / (4.0 * sqrt5 * np.pi)) * (
        1.0 - diff**2 / 5.0
    ) * log_term
    on_edge = np.abs(diff) == sqrt5
    hf[on_edge] = (-3.0 / (10.0 * np.pi)) * diff[on_edge]
    hf_tilde = np.mean(hf / bw, axis=1)

    denom = (np.pi * q * lam * f_tilde) ** 2 + (
        1.0 - q - np.pi * q * lam * hf_tilde
    ) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d_tilde = np.where(denom > 0.0, lam / np.where(denom > 0.0, denom, 1.0), 0.0)
    matrix = (eigvecs * d_tilde) @ eigvecs.T
    meta = {
        "q": n / tau,
        "bandwidth": h,
        "sample_eigenvalues": eigvals.copy(),
        "shrunk_eigenvalues": d_tilde.copy(),
    }
    return CovEstimate(matrix, "lw-nl", meta)


def poet(window: ReturnPanel, K: int, theta: float = 0.5) -> CovEstimate:
    """POET: K principal components plus a soft-thresholded residual.

    The residual covariance U = S - sum_{i<=K} xi_i v_i v_i' keeps its
    diagonal; off-diagonal entries are soft-thresholded at
    theta * sqrt(u_ii u_jj) * sqrt(log n / tau).  theta = 0 reproduces the
    sample covariance exactly; K = 0 with theta -> inf leaves its diagonal.
    """
    tau, n = window.n_rows, window.n_assets
    if not isinstance(K, (int, np.integer)):
        raise EstimatorError(f"K must be an integer, got {K!r}")
    if not 0 <= K <= min(n, tau):
        raise EstimatorError(f"K must be in [0, min(n, tau)={min(n, tau)}], got {K}")
    if not theta >= 0.0:
        raise EstimatorError(f"theta must be >= 0, got {theta}")
    x = _demeaned(window)
    sample = x.T @ x / (tau - 1)
    eigvals, eigvecs = np.linalg.eigh(sample)
    if K > 0:
        top_vals = eigvals[-K:]
        top_vecs = eigvecs[:, -K:]
        factor_part = (top_vecs * top_vals) @ top_vecs.T
    else:
        factor_part = np.zeros_like(sample)
    residual = sample - factor_part

    u_diag = np.clip(np.diag(residual), 0.0, None)
    scale = np.sqrt(np.outer(u_diag, u_diag)) * np.sqrt(np.log(n) / tau) if n > 1 else np.zeros_like(residual)
    with np.errstate(invalid="ignore"):
        thresh = np.where(scale > 0.0, theta * scale, 0.0)
    soft = np.sign(residual) * np.maximum(np.abs(residual) - thresh, 0.0)
    np.fill_diagonal(soft, np.diag(residual))
    matrix = factor_part + soft
    kept = int((soft != 0.0).sum() - n)
    meta = {"q": n / tau, "K": int(K), "theta": float(theta), "offdiag_kept": kept}
    return CovEstimate(matrix, "poet", meta)


def select_poet_k(
    window: ReturnPanel, k_candidates, theta: float = 0.5
) -> int:
    """Pick the POET factor count by a split-sample distance criterion.

    The window is split into halves; for each candidate K the POET estimate
    on the first half is compared in Frobenius norm with the sample
    covariance of the second half.  Smallest distance wins, ties go to the
    smaller K.
    """
    candidates = [int(k) for k in k_candidates]
    if not candidates:
        raise EstimatorError("k_candidates must be non-empty")
    tau = window.n_rows
    if tau < 4:
        raise EstimatorError(f"window too short to split: tau={tau} < 4")
    half = tau // 2
    first = ReturnPanel(
        window.dates[:half], window.returns[:half], window.asset_ids, validate=False
    )
    second = ReturnPanel(
        window.dates[half:], window.returns[half:], window.asset_ids, validate=False
    )
    limit = min(window.n_assets, half)
    for k in candidates:
        if not 0 <= k <= limit:
            raise EstimatorError(
                f"candidate K={k} outside [0, {limit}] for half-window of {half} rows"
            )
    reference = sample_cov(second).matrix
    best_k = None
    best_dist = np.inf
    for k in sorted(set(candidates)):
        dist = float(np.linalg.norm(poet(first, k, theta).matrix - reference, "fro"))
        if dist < best_dist:
            best_k, best_dist = k, dist
    return best_k


def get_estimator(
    name: str,
    poet_k: int | None = None,
    poet_theta: float = 0.5,
    poet_k_candidates=None,
) -> Callable[[ReturnPanel], CovEstimate]:
    """Look up an estimator by name (``ml``, ``lw-lin``, ``lw-nl``, ``poet``).

    For ``poet``, a fixed ``poet_k`` skips the per-window selection over
    ``poet_k_candidates`` (default 1..8, clipped to the window half-length).
    """
    if name == "ml":
        return sample_cov
    if name == "lw-lin":
        return lw_linear
    if name == "lw-nl":
        return lw_nonlinear
    if name == "poet":
        if poet_k is not None:
            k_fixed = int(poet_k)

            def _poet_fixed(window: ReturnPanel) -> CovEstimate:
                return poet(window, k_fixed, poet_theta)

            return _poet_fixed
        raw = tuple(poet_k_candidates) if poet_k_candidates is not None else tuple(range(1, 9))
        if not raw:
            raise EstimatorError("poet_k_candidates must be non-empty")

        def _poet_auto(window: ReturnPanel) -> CovEstimate:
            limit = min(window.n_assets, window.n_rows // 2)
            usable = [k for k in raw if 0 <= k <= limit]
            if not usable:
                raise EstimatorError(
                    f"no POET candidate in {raw} fits a half-window of "
                    f"{window.n_rows // 2} rows"
                )
            k = select_poet_k(window, usable, poet_theta)
            return poet(window, k, poet_theta)

        return _poet_auto
    raise EstimatorError(f"unknown estimator {name!r}; expected one of {ESTIMATOR_NAMES}")


def write_cov_csv(estimate: CovEstimate, asset_ids, path) -> None:
    """Write the n x n matrix as CSV with asset ids as the header row."""
    import pandas as pd

    ids = [str(a) for a in asset_ids]
    if len(ids) != estimate.n_assets:
        raise EstimatorError(
            f"{len(ids)} asset ids for a {estimate.n_assets}-asset matrix"
        )
    frame = pd.DataFrame(estimate.matrix, columns=ids)
    frame.to_csv(path, index=False, float_format="%.17g")
