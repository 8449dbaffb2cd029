"""In-repo ADMM solver for convex quadratic programs.

Operator-splitting method on the form

    minimize    0.5 x' H x + g' x
    subject to  A_eq x = b_eq,   lb <= A_in x <= ub

Internally both row groups are stacked as l <= A x <= u; equality rows get a
stiffer penalty. One quasi-definite KKT factorization is reused across
iterations; an active-set polish after convergence drives the KKT residual
well below the ADMM tolerance. Primal infeasibility is detected from the
divergence direction of the dual iterates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

_EQ_TOL = 1e-12


@dataclass
class QpProblem:
    H: object
    g: np.ndarray
    A_eq: object = None
    b_eq: np.ndarray | None = None
    A_in: object = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.H = sp.csc_matrix(self.H)
        n = self.H.shape[0]
        if self.H.shape != (n, n):
            raise ValueError("H must be square")
        self.g = np.asarray(self.g, dtype=float).ravel()
        if self.g.size != n:
            raise ValueError("g must match H")
        if self.A_eq is None:
            self.A_eq = sp.csc_matrix((0, n))
            self.b_eq = np.zeros(0)
        else:
            self.A_eq = sp.csc_matrix(self.A_eq)
            self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        if self.A_in is None:
            self.A_in = sp.csc_matrix((0, n))
            self.lb = np.zeros(0)
            self.ub = np.zeros(0)
        else:
            self.A_in = sp.csc_matrix(self.A_in)
            mi = self.A_in.shape[0]
            self.lb = np.full(mi, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
            self.ub = np.full(mi, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel()
        if self.A_eq.shape[0] != self.b_eq.size:
            raise ValueError("A_eq and b_eq must agree")
        if self.A_in.shape[0] != self.lb.size or self.lb.size != self.ub.size:
            raise ValueError("A_in, lb, ub must agree")
        if (self.lb > self.ub + 1e-12).any():
            raise ValueError("lb must not exceed ub")

    @property
    def num_vars(self) -> int:
        return self.H.shape[0]


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    status: str
    iterations: int
    objective: float
    kkt_residual: float
    primal_residual: float
    dual_residual: float


def _kkt_factor(H, A, sigma, rho_vec):
    n = H.shape[0]
    m = A.shape[0]
    upper = sp.hstack([H + sigma * sp.eye(n), A.T])
    lower = sp.hstack([A, sp.diags(-1.0 / rho_vec) if m else sp.csc_matrix((0, 0))])
    if m:
        kkt = sp.vstack([upper, lower]).tocsc()
    else:
        kkt = upper.tocsc()
    return spla.splu(kkt)


def _kkt_residual(H, g, A, l, u, x, y):
    stat = np.abs(H @ x + g + (A.T @ y if A.shape[0] else 0.0)).max() if x.size else 0.0
    if A.shape[0] == 0:
        return float(stat)
    ax = A @ x
    viol = np.maximum(l - ax, 0.0)
    viol = np.maximum(viol, np.maximum(ax - u, 0.0))
    # complementarity: a nonzero multiplier must sit on its own bound
    slack_u = np.where(np.isfinite(u), np.abs(u - ax), np.inf)
    slack_l = np.where(np.isfinite(l), np.abs(ax - l), np.inf)
    comp = np.where(y > 0, np.minimum(y, slack_u), np.minimum(-y, slack_l))
    comp = np.maximum(comp, 0.0)
    return float(max(stat, viol.max(initial=0.0), comp.max(initial=0.0)))


def _polish(H, g, A, l, u, eq_mask, x, y, z, delta=1e-8):
    act_tol = 1e-7 * (1.0 + np.abs(z).max(initial=0.0))
    low = (~eq_mask) & np.isfinite(l) & ((z - l <= act_tol) | (y < -1e-9))
    upp = (~eq_mask) & np.isfinite(u) & ((u - z <= act_tol) | (y > 1e-9))
    upp &= ~low
    rows = np.concatenate([np.nonzero(eq_mask)[0], np.nonzero(low)[0], np.nonzero(upp)[0]])
    vals = np.concatenate([l[eq_mask], l[low], u[upp]])
    A_act = A[rows]
    n = H.shape[0]
    ma = rows.size
    kkt = sp.vstack(
        [
            sp.hstack([H + delta * sp.eye(n), A_act.T]),
            sp.hstack([A_act, -delta * sp.eye(ma) if ma else sp.csc_matrix((0, 0))]),
        ]
    ).tocsc()
    try:
        lu = spla.splu(kkt)
    except RuntimeError:
        return None
    rhs = np.concatenate([-g, vals])
    sol = lu.solve(rhs)
    # iterative refinement against the unregularized KKT system
    for _ in range(3):
        rx = -g - H @ sol[:n] - (A_act.T @ sol[n:] if ma else 0.0)
        rz = vals - (A_act @ sol[:n] if ma else np.zeros(0))
        sol = sol + lu.solve(np.concatenate([rx, rz]))
    x_new = sol[:n]
    y_new = np.zeros(A.shape[0])
    y_new[rows] = sol[n:]
    return x_new, y_new


def solve_qp(
    qp: QpProblem,
    warm_start: tuple[np.ndarray, np.ndarray] | QpSolution | None = None,
    *,
    eps_abs: float = 1e-6,
    eps_rel: float = 1e-6,
    max_iter: int = 20000,
    rho: float = 0.1,
    sigma: float = 1e-6,
    alpha: float = 1.6,
    eps_infeas: float = 1e-5,
    polish: bool = True,
    adaptive_rho: bool = True,
) -> QpSolution:
    """Solve a convex QP; see module docstring for the algorithm.

    ``warm_start`` takes (x0, y0) or a previous solution; with an exact
    optimizer supplied, termination occurs within a few iterations.
    """
    H = qp.H
    g = qp.g
    n = qp.num_vars
    A = sp.vstack([qp.A_eq, qp.A_in]).tocsc() if (qp.A_eq.shape[0] or qp.A_in.shape[0]) else sp.csc_matrix((0, n))
    l = np.concatenate([qp.b_eq, qp.lb])
    u = np.concatenate([qp.b_eq, qp.ub])
    m = A.shape[0]

    if m == 0:
        x = spla.spsolve(H.tocsc() + 1e-14 * sp.eye(n), -g)
        obj = float(0.5 * x @ (H @ x) + g @ x)
        res = _kkt_residual(H, g, A, l, u, x, np.zeros(0))
        return QpSolution(x, np.zeros(0), "optimal", 0, obj, res, 0.0, res)

    eq_mask = (u - l) <= _EQ_TOL
    rho_vec = np.full(m, rho)
    rho_vec[eq_mask] = rho * 1e3

    if isinstance(warm_start, QpSolution):
        x = warm_start.x.copy()
        y = warm_start.y.copy()
    elif warm_start is not None:
        x = np.asarray(warm_start[0], dtype=float).copy()
        y = (
            np.asarray(warm_start[1], dtype=float).copy()
            if warm_start[1] is not None
            else np.zeros(m)
        )
    else:
        x = np.zeros(n)
        y = np.zeros(m)
    z = np.clip(A @ x, l, u)

    lu = _kkt_factor(H, A, sigma, rho_vec)
    check_every = 1 if n + m <= 600 else 5
    y_prev_check = y.copy()
    status = "max_iter"
    iters = max_iter
    pri = dua = np.inf

    for k in range(1, max_iter + 1):
        rhs = np.concatenate([sigma * x - g, z - y / rho_vec])
        sol = lu.solve(rhs)
        x_tilde = sol[:n]
        nu = sol[n:]
        z_tilde = z + (nu - y) / rho_vec
        x = alpha * x_tilde + (1.0 - alpha) * x
        z_relaxed = alpha * z_tilde + (1.0 - alpha) * z
        z_new = np.clip(z_relaxed + y / rho_vec, l, u)
        y = y + rho_vec * (z_relaxed - z_new)
        z = z_new

        if k % check_every == 0:
            ax = A @ x
            hx = H @ x
            aty = A.T @ y
            pri = np.abs(ax - z).max(initial=0.0)
            dua = np.abs(hx + g + aty).max(initial=0.0)
            eps_pri = eps_abs + eps_rel * max(np.abs(ax).max(initial=0.0), np.abs(z).max(initial=0.0))
            eps_dua = eps_abs + eps_rel * max(
                np.abs(hx).max(initial=0.0), np.abs(aty).max(initial=0.0), np.abs(g).max(initial=0.0)
            )
            if pri <= eps_pri and dua <= eps_dua:
                status = "optimal"
                iters = k
                break

            dy = y - y_prev_check
            dy_norm = np.abs(dy).max(initial=0.0)
            if dy_norm > 1e-12:
                d = dy / dy_norm
                pos = d > 1e-11
                neg = d < -1e-11
                bounded = not (np.any(pos & ~np.isfinite(u)) or np.any(neg & ~np.isfinite(l)))
                if bounded:
                    gap = float(u[pos] @ d[pos] + l[neg] @ d[neg])
                    atd = np.abs(A.T @ d).max(initial=0.0)
                    if atd <= eps_infeas and gap <= -eps_infeas:
                        status = "primal_infeasible"
                        iters = k
                        break
            y_prev_check = y.copy()

            if adaptive_rho and k % (check_every * 50) == 0 and dua > 0 and pri > 0:
                scale_p = max(np.abs(ax).max(initial=0.0), np.abs(z).max(initial=0.0), 1e-10)
                scale_d = max(
                    np.abs(hx).max(initial=0.0), np.abs(aty).max(initial=0.0),
                    np.abs(g).max(initial=0.0), 1e-10,
                )
                ratio = np.sqrt((pri / scale_p) / (dua / scale_d))
                if ratio > 5.0 or ratio < 0.2:
                    rho = float(np.clip(rho * ratio, 1e-6, 1e6))
                    rho_vec = np.full(m, rho)
                    rho_vec[eq_mask] = rho * 1e3
                    lu = _kkt_factor(H, A, sigma, rho_vec)

    if status == "primal_infeasible":
        obj = float("inf")
        return QpSolution(x, y, status, iters, obj, float("inf"), pri, dua)

    if polish:
        polished = _polish(H, g, A, l, u, eq_mask, x, y, z)
        if polished is not None:
            x_new, y_new = polished
            old_res = _kkt_residual(H, g, A, l, u, x, y)
            new_res = _kkt_residual(H, g, A, l, u, x_new, y_new)
            if np.isfinite(new_res) and new_res < old_res:
                x, y = x_new, y_new
                z = np.clip(A @ x, l, u)
                if status == "max_iter" and new_res <= eps_abs:
                    status = "optimal"

    kkt_res = _kkt_residual(H, g, A, l, u, x, y)
    obj = float(0.5 * x @ (H @ x) + g @ x)
    return QpSolution(x, y, status, iters, obj, kkt_res, pri, dua)
