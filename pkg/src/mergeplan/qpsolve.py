"""Dense convex quadratic programming by a primal active-set method.

Solves
    min  1/2 x^T H x + f^T x
    s.t. Aeq  x  = beq
         Aieq x >= bieq

for the planner's small problems (<= 6 variables, a few hundred rows).
Steps are computed in the null space of the working constraints, which keeps
equality rows satisfied to machine precision regardless of the conditioning
of H. A small Tikhonov term bounds the step when H is only semidefinite.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

TIKHONOV = 1e-10
_PSD_TOL = 1e-9


class QpStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


@dataclass(frozen=True)
class QpProblem:
    H: np.ndarray
    f: np.ndarray
    Aeq: np.ndarray = None
    beq: np.ndarray = None
    Aieq: np.ndarray = None
    bieq: np.ndarray = None

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        n = H.shape[0]
        f = np.asarray(self.f, dtype=float).reshape(-1)
        aeq = np.zeros((0, n)) if self.Aeq is None else np.atleast_2d(np.asarray(self.Aeq, float))
        beq = np.zeros(0) if self.beq is None else np.asarray(self.beq, float).reshape(-1)
        aieq = np.zeros((0, n)) if self.Aieq is None else np.atleast_2d(np.asarray(self.Aieq, float))
        bieq = np.zeros(0) if self.bieq is None else np.asarray(self.bieq, float).reshape(-1)
        for name, val in (("H", H), ("f", f), ("Aeq", aeq), ("beq", beq),
                          ("Aieq", aieq), ("bieq", bieq)):
            object.__setattr__(self, name, val)

        scale = 1.0 + np.abs(H).max()
        if H.shape != (n, n) or f.shape != (n,):
            raise ValueError("H must be square and f of matching length")
        if np.abs(H - H.T).max() > _PSD_TOL * scale:
            raise ValueError("H must be symmetric")
        if aeq.shape[1] != n or aieq.shape[1] != n:
            raise ValueError("constraint matrices must have n columns")
        if aeq.shape[0] != beq.shape[0] or aieq.shape[0] != bieq.shape[0]:
            raise ValueError("constraint matrix/vector row counts differ")
        z = _null_space(aeq)
        if z.shape[1]:
            hs = 0.5 * (H + H.T)
            lam_min = np.linalg.eigvalsh(z.T @ hs @ z).min()
            if lam_min < -_PSD_TOL * scale:
                raise ValueError(
                    f"H is not positive semidefinite on the constraint null space "
                    f"(min eigenvalue {lam_min:.3e})")

    @property
    def n(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class QpSolution:
    x: np.ndarray
    status: QpStatus
    kkt_residual: float
    active_set: tuple
    iterations: int = 0


@dataclass(frozen=True)
class KktReport:
    """Normalized KKT residuals with multipliers from a nonnegative LS fit."""

    stationarity: float
    primal_eq: float
    primal_ineq: float
    complementarity: float
    multipliers_eq: np.ndarray = field(repr=False, default=None)
    multipliers_ineq: np.ndarray = field(repr=False, default=None)

    @property
    def max_residual(self) -> float:
        return max(self.stationarity, self.primal_eq, self.primal_ineq,
                   self.complementarity)


def _null_space(a: np.ndarray) -> np.ndarray:
    n = a.shape[1]
    if a.shape[0] == 0:
        return np.eye(n)
    u, s, vh = np.linalg.svd(a, full_matrices=True)
    rank = int(np.sum(s > max(a.shape) * np.finfo(float).eps * (s[0] if s.size else 1.0)))
    return vh[rank:].T


def kkt_check(p: QpProblem, x) -> KktReport:
    """Independent optimality certificate at x.

    Fits nonnegative multipliers for the active inequalities (free-signed for
    equalities) by least squares and reports the worst normalized residual of
    stationarity, primal feasibility and complementarity. Dual feasibility
    holds by construction of the fit.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != p.n:
        raise ValueError("dimension mismatch")
    g = p.H @ x + p.f
    g_scale = 1.0 + np.abs(g).max() if g.size else 1.0

    eq_res = p.Aeq @ x - p.beq if p.Aeq.shape[0] else np.zeros(0)
    primal_eq = np.abs(eq_res).max() / (1.0 + np.abs(p.beq).max()) if eq_res.size else 0.0

    slack = p.Aieq @ x - p.bieq if p.Aieq.shape[0] else np.zeros(0)
    b_scale = 1.0 + (np.abs(p.bieq).max() if p.bieq.size else 0.0)
    primal_ineq = max(0.0, float(-slack.min())) / b_scale if slack.size else 0.0

    active = np.where(slack <= 1e-6 * b_scale)[0] if slack.size else np.zeros(0, int)
    cols = []
    if p.Aeq.shape[0]:
        cols += [p.Aeq.T, -p.Aeq.T]
    if active.size:
        cols.append(p.Aieq[active].T)
    lam_full = np.zeros(p.Aieq.shape[0])
    mu = np.zeros(p.Aeq.shape[0])
    if cols:
        mat = np.hstack(cols)
        coef, _ = nnls(mat, g)
        k = 0
        if p.Aeq.shape[0]:
            me = p.Aeq.shape[0]
            mu = coef[:me] - coef[me:2 * me]
            k = 2 * me
        if active.size:
            lam_full[active] = coef[k:]
        stat_vec = g - mat @ coef
    else:
        stat_vec = g
    stationarity = np.abs(stat_vec).max() / g_scale if stat_vec.size else 0.0
    comp = np.abs(lam_full * slack).max() / g_scale if slack.size else 0.0
    return KktReport(float(stationarity), float(primal_eq), float(primal_ineq),
                     float(comp), mu, lam_full)


def _active_set_loop(H, f, aeq, beq, aieq, bieq, x0, tol, max_iter):
    """Primal active-set iteration from the feasible point x0."""
    n = H.shape[0]
    h_reg = H + TIKHONOV * (1.0 + np.abs(H).max()) * np.eye(n)
    x = x0.copy()
    working: list = []
    step_tol = 1e-11
    for it in range(1, max_iter + 1):
        rows = aeq if not working else np.vstack([aeq, aieq[working]])
        z = _null_space(rows)
        g = H @ x + f
        if z.shape[1] == 0:
            p = np.zeros(n)
        else:
            hr = z.T @ h_reg @ z
            try:
                q = np.linalg.solve(hr, -(z.T @ g))
            except np.linalg.LinAlgError:
                q = np.linalg.lstsq(hr, -(z.T @ g), rcond=None)[0]
            p = z @ q

        if np.abs(p).max() <= step_tol * (1.0 + np.abs(x).max()):
            # Stationary on the working set: check multiplier signs.
            cols = [aeq.T] if aeq.shape[0] else []
            if working:
                cols.append(aieq[working].T)
            if not cols:
                return x, QpStatus.OPTIMAL, working, it
            nu = np.linalg.lstsq(np.hstack(cols), g, rcond=None)[0]
            lam = nu[aeq.shape[0]:]
            if lam.size == 0 or lam.min() >= -tol * (1.0 + np.abs(g).max()):
                return x, QpStatus.OPTIMAL, working, it
            # Bland-style anti-cycling: drop the lowest-index violating row.
            bad = [working[j] for j in range(len(working))
                   if lam[j] < -tol * (1.0 + np.abs(g).max())]
            working.remove(min(bad))
            continue

        # Largest step along p that keeps all non-working inequalities valid.
        alpha = 1.0
        blocking = -1
        if aieq.shape[0]:
            ap = aieq @ p
            slack = aieq @ x - bieq
            decreasing = ap < -1e-13
            if working:
                decreasing[working] = False
            idx = np.where(decreasing)[0]
            if idx.size:
                ratios = np.maximum(-slack[idx] / ap[idx], 0.0)
                best = ratios.min()
                if best < alpha - 1e-13:
                    alpha = best
                    # Smallest constraint index among the tied blockers.
                    blocking = int(idx[ratios <= best + 1e-13].min())
        x = x + alpha * p
        if blocking >= 0:
            working.append(blocking)
            working.sort()
    return x, QpStatus.MAX_ITER, working, max_iter


def _phase1(p: QpProblem, x_ls, tol, max_iter):
    """Feasible point via an auxiliary QP minimizing the worst violation."""
    n = p.n
    h = np.zeros((n + 1, n + 1))
    h[-1, -1] = 1.0
    h[:n, :n] = TIKHONOV * np.eye(n)
    f = np.zeros(n + 1)
    aeq = np.hstack([p.Aeq, np.zeros((p.Aeq.shape[0], 1))])
    aieq = np.hstack([p.Aieq, np.ones((p.Aieq.shape[0], 1))])
    gamma0 = max(0.0, float((p.bieq - p.Aieq @ x_ls).max())) + 1.0
    x0 = np.append(x_ls, gamma0)
    xg, status, _, _ = _active_set_loop(h, f, aeq, p.beq, aieq, p.bieq, x0,
                                        tol, max_iter)
    gamma = xg[-1]
    feas_scale = 1.0 + (np.abs(p.bieq).max() if p.bieq.size else 0.0)
    if status == QpStatus.INFEASIBLE or gamma > 1e-7 * feas_scale:
        return None
    return xg[:n]


def solve(p: QpProblem, tol: float = 1e-8, max_iter: int = 200) -> QpSolution:
    """Solve the QP; see the module docstring for the problem convention.

    Returns OPTIMAL with the minimizer and its active inequality set,
    INFEASIBLE when the constraints admit no point, or MAX_ITER with the
    best iterate if the iteration cap is reached.
    """
    n = p.n
    me, mi = p.Aeq.shape[0], p.Aieq.shape[0]

    if me:
        x_ls, *_ = np.linalg.lstsq(p.Aeq, p.beq, rcond=None)
        if np.abs(p.Aeq @ x_ls - p.beq).max() > 1e-8 * (1.0 + np.abs(p.beq).max()):
            return QpSolution(x_ls, QpStatus.INFEASIBLE, np.inf, (), 0)
    else:
        x_ls = np.zeros(n)

    # Fast path: the equality-constrained minimizer is optimal whenever it
    # already satisfies every inequality.
    z = _null_space(p.Aeq)
    h_reg = p.H + TIKHONOV * (1.0 + np.abs(p.H).max()) * np.eye(n)
    if z.shape[1]:
        g = p.H @ x_ls + p.f
        try:
            q = np.linalg.solve(z.T @ h_reg @ z, -(z.T @ g))
        except np.linalg.LinAlgError:
            q = np.linalg.lstsq(z.T @ h_reg @ z, -(z.T @ g), rcond=None)[0]
        x_eq = x_ls + z @ q
    else:
        x_eq = x_ls
    feas_scale = 1.0 + (np.abs(p.bieq).max() if p.bieq.size else 0.0)
    if mi == 0 or (p.Aieq @ x_eq - p.bieq).min() >= -1e-9 * feas_scale:
        report = kkt_check(p, x_eq)
        return QpSolution(x_eq, QpStatus.OPTIMAL, report.max_residual, (), 1)

    if (p.Aieq @ x_ls - p.bieq).min() >= -1e-9 * feas_scale:
        x0 = x_ls
    else:
        x0 = _phase1(p, x_ls, tol, max_iter)
        if x0 is None:
            return QpSolution(x_ls, QpStatus.INFEASIBLE, np.inf, (), 0)

    x, status, working, its = _active_set_loop(p.H, p.f, p.Aeq, p.beq, p.Aieq,
                                               p.bieq, x0, tol, max_iter)
    report = kkt_check(p, x)
    return QpSolution(x, status, report.max_residual, tuple(sorted(working)), its)
