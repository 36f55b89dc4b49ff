"""Brute-force reference implementations the test suite checks against.

Everything here trades speed for obviousness: dense grid refinement, explicit
loops, no linear algebra shortcuts.  Expected values frozen in the tests were
produced by these routines (or by hand) before the library code existed.
"""

import numpy as np


def quad_objective(Q, c, x):
    x = np.asarray(x, dtype=float)
    return float(0.5 * x @ Q @ x + c @ x)


def grid_min_box_sum(Q, c, lo, hi, total, pts=9, levels=14, shrink=0.5):
    """Minimize 0.5 x'Qx + c'x over {lo <= x <= hi, sum(x) = total} by
    multilevel dense grid refinement.

    The equality is eliminated by gridding the first m-1 coordinates and
    solving for the last; grid points whose implied last coordinate leaves
    its box are masked out.  Each level re-centers on the incumbent and
    halves the search radius, so the final spacing is about
    (box width / (pts-1)) * shrink**(levels-1).

    Returns (x_best, objective_best).
    """
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    m = Q.shape[0]
    if m == 1:
        if not (lo[0] - 1e-12 <= total <= hi[0] + 1e-12):
            raise RuntimeError("equality is infeasible for the single box")
        x = np.array([total])
        return x, quad_objective(Q, c, x)

    center = 0.5 * (lo[:-1] + hi[:-1])
    radius = 0.5 * (hi[:-1] - lo[:-1])
    best_x = None
    best_f = np.inf
    for _ in range(levels):
        axes = [
            np.linspace(
                max(lo[j], center[j] - radius[j]),
                min(hi[j], center[j] + radius[j]),
                pts,
            )
            for j in range(m - 1)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        head = np.stack([g.ravel() for g in mesh], axis=1)
        last = total - head.sum(axis=1)
        feasible = (last >= lo[-1] - 1e-12) & (last <= hi[-1] + 1e-12)
        if not feasible.any():
            raise RuntimeError("no feasible grid point; widen the boxes")
        X = np.hstack([head, last[:, None]])
        f = 0.5 * np.einsum("ij,jk,ik->i", X, Q, X) + X @ c
        f[~feasible] = np.inf
        idx = int(np.argmin(f))
        if f[idx] < best_f:
            best_f = float(f[idx])
            best_x = X[idx].copy()
        center = np.clip(best_x[:-1], lo[:-1], hi[:-1])
        radius = radius * shrink
    return best_x, best_f


def segment_min_variance(sigma, w1_lo, w1_hi, step, box_lo=None, box_hi=None):
    """Scan w1 over [w1_lo, w1_hi] at a fixed step with w2 = 1 - w1 and
    return the w minimizing w' sigma w, optionally masked by a per-asset box.

    Two-asset helper matching the hand-check protocol used for the pinned
    GMV and turnover examples.
    """
    sigma = np.asarray(sigma, dtype=float)
    w1 = np.arange(w1_lo, w1_hi + step / 2, step)
    w = np.stack([w1, 1.0 - w1], axis=1)
    if box_lo is not None:
        keep = (w >= np.asarray(box_lo) - 1e-12).all(axis=1)
        keep &= (w <= np.asarray(box_hi) + 1e-12).all(axis=1)
        w = w[keep]
    var = np.einsum("ij,jk,ik->i", w, sigma, w)
    return w[int(np.argmin(var))]


def naive_sample_cov(X):
    """Textbook two-pass sample covariance with denominator T-1."""
    X = np.asarray(X, dtype=float)
    T, n = X.shape
    mu = X.mean(axis=0)
    S = np.zeros((n, n))
    for t in range(T):
        d = X[t] - mu
        S += np.outer(d, d)
    return S / (T - 1)


def naive_constant_correlation_target(S):
    """Equal-correlation target: sample variances on the diagonal, average
    sample correlation everywhere else."""
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    sd = np.sqrt(np.diag(S))
    corr_sum = 0.0
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            if sd[i] > 0 and sd[j] > 0:
                corr_sum += S[i, j] / (sd[i] * sd[j])
            pairs += 1
    rbar = corr_sum / pairs if pairs else 0.0
    target = rbar * np.outer(sd, sd)
    np.fill_diagonal(target, np.diag(S))
    return target


def closed_form_gmv(sigma):
    """Minimum-variance weights by explicit inverse (test-only)."""
    inv = np.linalg.inv(np.asarray(sigma, dtype=float))
    ones = np.ones(inv.shape[0])
    return inv @ ones / (ones @ inv @ ones)


def parzen_weight(x):
    ax = abs(float(x))
    if ax <= 0.5:
        return 1.0 - 6.0 * ax**2 + 6.0 * ax**3
    if ax <= 1.0:
        return 2.0 * (1.0 - ax) ** 3
    return 0.0


def naive_hac_lrv(v, bandwidth):
    """Long-run variance of a demeaned series with Parzen weights, written
    as the plain double sum."""
    v = np.asarray(v, dtype=float)
    v = v - v.mean()
    T = len(v)
    total = float(v @ v) / T
    for lag in range(1, bandwidth + 1):
        gamma = float(v[lag:] @ v[:-lag]) / T
        total += 2.0 * parzen_weight(lag / bandwidth) * gamma
    return total


def naive_drift(w, r):
    """Relative-price weight drift, one step, written element by element."""
    w = np.asarray(w, dtype=float)
    r = np.asarray(r, dtype=float)
    port = float(w @ r)
    out = np.array([w[j] * (1.0 + r[j]) / (1.0 + port) for j in range(len(w))])
    return out
