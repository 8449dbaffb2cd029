"""Small builders shared across test modules."""

import numpy as np

from tubekoop.edmd import SnapshotSet
from tubekoop.lifting import make_monomial_basis


def identity_basis(n: int):
    return make_monomial_basis(np.eye(n, dtype=int))


def random_stable_pair(rng, n: int, m: int, radius: float = 0.9):
    """Random (A, B) with spectral radius scaled to ``radius``."""
    A = rng.normal(size=(n, n))
    A *= radius / max(np.abs(np.linalg.eigvals(A)).max(), 1e-12)
    B = rng.normal(size=(n, m))
    return A, B


def lti_snapshots(A, B, rng, columns: int = 400, working_point: float = 1.0,
                  dt: float = 0.1) -> SnapshotSet:
    """Noiseless snapshot pairs from x+ = A x + B u with random excitation."""
    n, m = A.shape[0], B.shape[1]
    X = rng.normal(size=(n, columns))
    U = rng.normal(size=(m, columns)) if m else np.zeros((0, columns))
    Xp = A @ X + (B @ U if m else 0.0)
    return SnapshotSet(states=X, states_next=Xp, inputs=U,
                       working_point=working_point, dt=dt)


def rotation_scaling_family(angles, factor: float):
    """Contractive planar maps: rotation by each angle then uniform scaling."""
    maps = []
    for theta in angles:
        c, s = np.cos(theta), np.sin(theta)
        maps.append(factor * np.array([[c, -s], [s, c]]))
    return maps


# ---------------------------------------------------------------------------
# dense QP oracle: primal active-set method, independent of the ADMM solver
# ---------------------------------------------------------------------------


def dense_qp_oracle(qp, x_feasible, tol: float = 1e-10, max_iter: int = 500):
    """Solve a strictly convex QP by a dense primal active-set method.

    ``x_feasible`` must satisfy every constraint. Two-sided inequality rows
    are split into one-sided rows a.x <= h. Returns the unique minimizer.
    """
    H = np.asarray(qp.H.todense(), dtype=float)
    g = qp.g
    A_eq = np.asarray(qp.A_eq.todense(), dtype=float)
    b_eq = qp.b_eq
    A_in = np.asarray(qp.A_in.todense(), dtype=float)
    rows, offs = [], []
    for i in range(A_in.shape[0]):
        if np.isfinite(qp.ub[i]):
            rows.append(A_in[i])
            offs.append(qp.ub[i])
        if np.isfinite(qp.lb[i]):
            rows.append(-A_in[i])
            offs.append(-qp.lb[i])
    G = np.array(rows) if rows else np.zeros((0, qp.num_vars))
    h = np.array(offs)

    x = np.asarray(x_feasible, dtype=float).copy()
    active = []
    me = A_eq.shape[0]
    for _ in range(max_iter):
        A_act = np.vstack([A_eq, G[active]]) if (me or active) else np.zeros((0, x.size))
        ma = A_act.shape[0]
        kkt = np.block([[H, A_act.T], [A_act, np.zeros((ma, ma))]])
        rhs = np.concatenate([-(H @ x + g), np.zeros(ma)])
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        d = sol[: x.size]
        lam = sol[x.size + me :]
        if np.abs(d).max(initial=0.0) <= tol:
            if lam.size == 0 or lam.min(initial=0.0) >= -tol:
                return x
            active.pop(int(np.argmin(lam)))
            continue
        alpha = 1.0
        blocking = -1
        for i in range(G.shape[0]):
            if i in active:
                continue
            gd = G[i] @ d
            if gd > tol:
                a = (h[i] - G[i] @ x) / gd
                if a < alpha:
                    alpha = a
                    blocking = i
        x = x + alpha * d
        if blocking >= 0:
            active.append(blocking)
    raise RuntimeError("active-set oracle did not converge")


def random_feasible_qp(rng, n_max: int = 20):
    """Random strictly convex QP with a known strictly feasible point."""
    from tubekoop.qp import QpProblem

    n = int(rng.integers(2, n_max + 1))
    M = rng.normal(size=(n, n))
    H = M.T @ M + 0.1 * np.eye(n)
    g = rng.normal(size=n) * 2.0
    x_feas = rng.normal(size=n)
    me = int(rng.integers(0, 3))
    A_eq = rng.normal(size=(me, n)) if me else None
    b_eq = A_eq @ x_feas if me else None
    mi = int(rng.integers(n, 3 * n + 1))
    A_in = rng.normal(size=(mi, n))
    mid = A_in @ x_feas
    ub = mid + rng.uniform(0.1, 2.0, size=mi)
    lb = mid - rng.uniform(0.1, 2.0, size=mi)
    drop_u = rng.random(mi) < 0.25
    drop_l = rng.random(mi) < 0.25
    ub[drop_u] = np.inf
    lb[drop_l & ~drop_u] = -np.inf
    qp = QpProblem(H, g, A_eq=A_eq, b_eq=b_eq, A_in=A_in, lb=lb, ub=ub)
    return qp, x_feas


def random_infeasible_qp(rng, n_max: int = 20):
    """Random strictly convex QP made infeasible by a contradictory pair."""
    from tubekoop.qp import QpProblem

    qp, _ = random_feasible_qp(rng, n_max)
    n = qp.num_vars
    a = rng.normal(size=n)
    a /= np.linalg.norm(a)
    A_in = np.vstack([np.asarray(qp.A_in.todense()), a, a])
    lb = np.concatenate([qp.lb, [1.0, -np.inf]])
    ub = np.concatenate([qp.ub, [np.inf, -1.0]])
    return QpProblem(qp.H, qp.g, A_eq=qp.A_eq, b_eq=qp.b_eq, A_in=A_in, lb=lb, ub=ub)
