"""Dense convex quadratic programming with a primal active-set method.

Problems are stated as

    minimize   0.5 x'Qx + c'x
    subject to E x = e,  G x <= h

with Q symmetric positive semi-definite.  Callers that think in the
un-halved form w' Sigma w pass Q = 2 Sigma.

The solver pins variables fixed by active single-variable rows of G
(bounds), keeps the remaining active rows in a KKT system, and reports the
maximum KKT violation (stationarity, primal feasibility, complementary
slackness) of the returned point.  A vanishing ridge (1e-12 relative to
max |Q|) keeps every equality-constrained subproblem uniquely solvable;
residuals are always measured against the original, un-ridged data.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max_iterations"

RIDGE_REL = 1e-12
PSD_REL_TOL = 1e-8


class SolverError(RuntimeError):
    """Numerical breakdown or invalid problem data."""


def _as_matrix(a, name: str) -> np.ndarray:
    out = np.asarray(a, dtype=float)
    if out.ndim != 2:
        raise SolverError(f"{name} must be 2-D, got shape {out.shape}")
    return out


def _as_vector(a, name: str) -> np.ndarray:
    out = np.asarray(a, dtype=float)
    if out.ndim != 1:
        raise SolverError(f"{name} must be 1-D, got shape {out.shape}")
    return out


@dataclass(frozen=True)
class QpProblem:
    """Validated QP data.  Construction symmetrizes Q and repairs tiny
    negative eigenvalues; ``assume_psd=True`` skips the spectral check for
    matrices already known PSD (hot paths)."""

    Q: np.ndarray
    c: np.ndarray
    E: np.ndarray | None = None
    e: np.ndarray | None = None
    G: np.ndarray | None = None
    h: np.ndarray | None = None
    assume_psd: InitVar[bool] = False

    def __post_init__(self, assume_psd: bool):
        Q = _as_matrix(self.Q, "Q")
        m = Q.shape[0]
        if Q.shape[1] != m:
            raise SolverError(f"Q must be square, got {Q.shape}")
        c = _as_vector(self.c, "c")
        if c.shape[0] != m:
            raise SolverError(f"c has length {c.shape[0]}, expected {m}")
        if not (np.isfinite(Q).all() and np.isfinite(c).all()):
            raise SolverError("Q and c must be finite")
        Q = 0.5 * (Q + Q.T)
        if not assume_psd:
            eigvals = np.linalg.eigvalsh(Q)
            scale = float(np.abs(eigvals).max()) if m else 0.0
            if m and eigvals[0] < -PSD_REL_TOL * max(scale, 1e-300):
                raise SolverError(
                    f"Q is not PSD: min eigenvalue {eigvals[0]:.3e} vs max {scale:.3e}"
                )
            if m and eigvals[0] < 0.0:
                w, v = np.linalg.eigh(Q)
                Q = (v * np.clip(w, 0.0, None)) @ v.T
                Q = 0.5 * (Q + Q.T)

        if (self.E is None) != (self.e is None):
            raise SolverError("E and e must be given together")
        if (self.G is None) != (self.h is None):
            raise SolverError("G and h must be given together")
        E = _as_matrix(self.E, "E") if self.E is not None else np.zeros((0, m))
        e = _as_vector(self.e, "e") if self.e is not None else np.zeros(0)
        G = _as_matrix(self.G, "G") if self.G is not None else np.zeros((0, m))
        h = _as_vector(self.h, "h") if self.h is not None else np.zeros(0)
        if E.shape[1] != m or E.shape[0] != e.shape[0]:
            raise SolverError(f"E/e shapes {E.shape}/{e.shape} inconsistent with m={m}")
        if G.shape[1] != m or G.shape[0] != h.shape[0]:
            raise SolverError(f"G/h shapes {G.shape}/{h.shape} inconsistent with m={m}")
        if not (np.isfinite(E).all() and np.isfinite(e).all()):
            raise SolverError("E and e must be finite")
        if not (np.isfinite(G).all() and np.isfinite(h).all()):
            raise SolverError("G and h must be finite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "e", e)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)

    @property
    def n_vars(self) -> int:
        return self.Q.shape[0]


@dataclass(frozen=True)
class QpSolution:
    """Solver output; ``working_set`` holds the active rows of G at exit so
    follow-up solves on perturbed data can warm-start."""

    x: np.ndarray
    objective: float
    status: str
    kkt_residual: float
    iterations: int = 0
    working_set: tuple[int, ...] = ()


def _phase_one(problem: QpProblem, tol: float):
    """LP feasibility: minimize the largest inequality violation."""
    from scipy.optimize import linprog

    m = problem.n_vars
    p, q = problem.E.shape[0], problem.G.shape[0]
    if p == 0 and q == 0:
        return np.zeros(m)
    cost = np.zeros(m + 1)
    cost[-1] = 1.0
    a_ub = None
    b_ub = None
    if q:
        a_ub = np.hstack([problem.G, -np.ones((q, 1))])
        b_ub = problem.h
    a_eq = None
    b_eq = None
    if p:
        a_eq = np.hstack([problem.E, np.zeros((p, 1))])
        b_eq = problem.e
    bounds = [(None, None)] * m + [(0.0, None)]
    res = linprog(
        cost, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds,
        method="highs",
    )
    if res.status == 2:
        return None
    if not res.success:
        raise SolverError(f"phase-1 LP failed: {res.message}")
    gap = float(res.x[-1])
    h_scale = 1.0 + (float(np.abs(problem.h).max()) if q else 0.0)
    if gap > max(tol * 100.0, 1e-7) * h_scale:
        return None
    return np.asarray(res.x[:m], dtype=float)


def solve_qp(
    problem: QpProblem,
    tolerance: float = 1e-8,
    max_iter: int = 50000,
    x0: np.ndarray | None = None,
    working_set=None,
) -> QpSolution:
    """Solve a convex QP; returns status ``optimal``, ``infeasible`` or
    ``max_iterations``.

    ``x0``/``working_set`` warm-start the method from a feasible point and
    the active rows of a previous, nearby solve.  An infeasible or missing
    start triggers an LP phase 1.
    """
    if not tolerance > 0.0:
        raise SolverError(f"tolerance must be > 0, got {tolerance}")
    Q, c = problem.Q, problem.c
    E, e, G, h = problem.E, problem.e, problem.G, problem.h
    m = problem.n_vars
    p, q = E.shape[0], G.shape[0]

    q_scale = float(np.abs(Q).max()) if m else 0.0
    ridge = RIDGE_REL * q_scale if q_scale > 0.0 else RIDGE_REL
    Qr = Q + ridge * np.eye(m)

    # classify rows of G: single-nonzero rows pin a variable when active
    bound_var = np.full(q, -1, dtype=int)
    bound_sign = np.zeros(q)
    for i in range(q):
        nz = np.flatnonzero(G[i])
        if nz.size == 1:
            bound_var[i] = nz[0]
            bound_sign[i] = G[i, nz[0]]

    def feasible(x: np.ndarray) -> bool:
        if p and np.abs(E @ x - e).max() > 1e-8 * (1.0 + np.abs(e).max()):
            return False
        if q and (G @ x - h).max() > 1e-8 * (1.0 + np.abs(h).max()):
            return False
        return True

    x = None
    if x0 is not None:
        cand = np.asarray(x0, dtype=float).copy()
        if cand.shape != (m,):
            raise SolverError(f"x0 has shape {cand.shape}, expected ({m},)")
        if np.isfinite(cand).all() and feasible(cand):
            x = cand
    if x is None:
        x = _phase_one(problem, tolerance)
        if x is None:
            return QpSolution(
                np.full(m, np.nan), np.nan, INFEASIBLE, np.inf, 0, ()
            )
        working_set = None

    active = np.zeros(q, dtype=bool)
    pinned = np.full(m, -1, dtype=int)  # row of G pinning each variable
    act_gen: list[int] = []  # active rows that couple several variables

    def adopt(row: int) -> bool:
        j = bound_var[row]
        if j >= 0:
            if pinned[j] >= 0:
                return False
            pinned[j] = row
            x[j] = h[row] / bound_sign[row]
            active[row] = True
            return True
        for r in act_gen:
            if np.abs(G[row] + G[r]).max() <= 1e-12 * (1.0 + np.abs(G[row]).max()):
                return False  # exact negation of an active row
        act_gen.append(row)
        active[row] = True
        return True

    if working_set is not None and q:
        gx0 = G @ x
        for row in working_set:
            row = int(row)
            if 0 <= row < q and abs(gx0[row] - h[row]) <= 1e-9 * (1.0 + abs(h[row])):
                adopt(row)
    elif q:
        gx0 = G @ x
        for row in np.flatnonzero(np.abs(gx0 - h) <= 1e-11 * (1.0 + np.abs(h))):
            if bound_var[row] >= 0:
                adopt(int(row))

    def eqp_target():
        """Optimum of the ridged objective on the current working manifold,
        plus multipliers for equality and active general rows."""
        free = pinned < 0
        idx_f = np.flatnonzero(free)
        idx_b = np.flatnonzero(~free)
        rows = act_gen
        na = p + len(rows)
        a_full = E if not rows else np.vstack([E, G[rows]])
        b_full = e if not rows else np.concatenate([e, h[rows]])
        nf = idx_f.size
        kkt = np.zeros((nf + na, nf + na))
        kkt[:nf, :nf] = Qr[np.ix_(idx_f, idx_f)]
        rhs = np.empty(nf + na)
        rhs[:nf] = -c[idx_f]
        if idx_b.size:
            rhs[:nf] -= Qr[np.ix_(idx_f, idx_b)] @ x[idx_b]
        if na:
            a_f = a_full[:, idx_f]
            kkt[:nf, nf:] = a_f.T
            kkt[nf:, :nf] = a_f
            rhs[nf:] = b_full
            if idx_b.size:
                rhs[nf:] -= a_full[:, idx_b] @ x[idx_b]
        try:
            z = np.linalg.solve(kkt, rhs)
            ok = np.isfinite(z).all()
        except np.linalg.LinAlgError:
            z, ok = None, False
        if ok:
            resid = np.abs(kkt @ z - rhs).max()
            ok = resid <= 1e-7 * max(
                1.0, float(np.abs(rhs).max()), float(np.abs(z).max()) * max(q_scale, 1.0)
            )
        if not ok:
            z, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
            resid = np.abs(kkt @ z - rhs).max()
            if not np.isfinite(z).all() or resid > 1e-6 * max(
                1.0, float(np.abs(rhs).max()), float(np.abs(z).max()) * max(q_scale, 1.0)
            ):
                return None
        x_new = x.copy()
        x_new[idx_f] = z[:nf]
        y = z[nf:]
        return x_new, y

    def bound_multipliers(x_new: np.ndarray, y: np.ndarray) -> np.ndarray:
        rows = act_gen
        s_vec = Qr @ x_new + c
        if p:
            s_vec += E.T @ y[:p]
        if rows:
            s_vec += G[rows].T @ y[p:]
        mu = np.zeros(q)
        if rows:
            mu[rows] = y[p:]
        pinned_vars = np.flatnonzero(pinned >= 0)
        for j in pinned_vars:
            row = pinned[j]
            mu[row] = -s_vec[j] / bound_sign[row]
        return mu

    def final_solution(x_fin, mu, nu, iterations, forced_status=None):
        mu = np.clip(mu, 0.0, None)
        r_st = Q @ x_fin + c
        if p:
            r_st = r_st + E.T @ nu
        if q:
            r_st = r_st + G.T @ mu
        resid = float(np.abs(r_st).max()) if m else 0.0
        if p:
            resid = max(resid, float(np.abs(E @ x_fin - e).max()))
        if q:
            viol = G @ x_fin - h
            resid = max(resid, float(max(viol.max(), 0.0)))
            resid = max(resid, float(np.abs(mu * viol).max()))
        status = forced_status or (OPTIMAL if resid <= tolerance else MAX_ITERATIONS)
        obj = float(0.5 * x_fin @ (Q @ x_fin) + c @ x_fin)
        wset = tuple(sorted(np.flatnonzero(active).tolist()))
        return QpSolution(x_fin, obj, status, resid, iterations, wset)

    last = None
    for it in range(1, max_iter + 1):
        out = eqp_target()
        if out is None:
            # dependent active rows; retreat on the most recent general row
            if act_gen:
                row = act_gen.pop()
                active[row] = False
                continue
            raise SolverError("KKT system numerically singular")
        x_new, y = out
        last = (x_new, y)
        step = float(np.abs(x_new - x).max()) if m else 0.0
        if step <= 1e-12 * (1.0 + float(np.abs(x_new).max())):
            mu = bound_multipliers(x_new, y)
            g_scale = max(1.0, float(np.abs(Qr @ x_new + c).max()))
            mu_tol = 1e-9 * g_scale
            active_rows = np.flatnonzero(active)
            if active_rows.size == 0 or mu[active_rows].min() >= -mu_tol:
                nu = y[:p] if p else np.zeros(0)
                return final_solution(x_new, mu, nu, it)
            worst = active_rows[np.argmin(mu[active_rows])]
            j = bound_var[worst]
            if j >= 0:
                pinned[j] = -1
            else:
                act_gen.remove(int(worst))
            active[worst] = False
            continue

        p_vec = x_new - x
        alpha = 1.0
        block = -1
        if q:
            gp = G @ p_vec
            gx = G @ x
            cand = np.flatnonzero(
                (~active) & (gp > 1e-13 * max(1.0, float(np.abs(gp).max())))
            )
            if cand.size:
                ratios = np.clip((h[cand] - gx[cand]) / gp[cand], 0.0, None)
                best = float(ratios.min())
                if best < 1.0:
                    alpha = best
                    ties = cand[ratios <= best + 1e-12 * (1.0 + best)]
                    block = int(ties.min())
        if block < 0:
            x = x_new
        else:
            x = x + alpha * p_vec
            adopt(block)
    # max_iter exhausted; report the best point found honestly
    if last is not None:
        x_new, y = last
        mu = bound_multipliers(x_new, y)
        nu = y[:p] if p else np.zeros(0)
        return final_solution(x_new, mu, nu, max_iter, forced_status=MAX_ITERATIONS)
    return QpSolution(x, np.nan, MAX_ITERATIONS, np.inf, max_iter, tuple())
