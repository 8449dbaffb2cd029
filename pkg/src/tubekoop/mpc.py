"""Receding-horizon tube control on the lifted vertex family.

The nominal problem plans in the lifted space along the scheduled
(A(p), B(p)) sequence with constraints tightened by the tube cross-section
and the certified (K, P) pair closing the loop: P weights the terminal
state, K corrects the applied input by the measured lifted error. Because
the first nominal state is pinned to the measurement, the correction term
vanishes in closed loop and robustness enters through the tightening and
the terminal ingredients.
"""

from __future__ import annotations

import time

import numpy as np
import scipy.sparse as sp

from dataclasses import dataclass, field

from . import qp as qp_solver
from .lifting import lift_state
from .lpv import ParamVaryingKoopman, evaluate
from .sets import HPolytope, Zonotope, box_zonotope, linear_map, pontryagin_diff, scale, zonotope_contains
from .simlab import forecast
from .synthesis import TubeGain

TERMINAL_MODES = ("equality_to_origin", "tightened_state_set")


class InitialInfeasibility(Exception):
    """The very first optimization is infeasible from the given initial state."""


def _zero_tube(q: int) -> Zonotope:
    return box_zonotope(np.zeros(q), np.zeros(q))


@dataclass
class MpcConfig:
    """Horizon, weights, constraint sets and the certified terminal pair.

    Tightened sets are computed once at construction; an empty tightening
    is rejected immediately rather than at the first solve. The tube
    cross-section comes from gain.rpi_set, with None meaning the zero set
    (no tightening).
    """

    N: int
    Q_lift: np.ndarray
    R: np.ndarray
    state_set: HPolytope
    input_set: HPolytope
    gain: TubeGain
    model: ParamVaryingKoopman
    P_term: np.ndarray | None = None
    terminal_mode: str = "equality_to_origin"

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon must be at least 1")
        if self.terminal_mode not in TERMINAL_MODES:
            raise ValueError(f"terminal_mode must be one of {TERMINAL_MODES}")
        q = self.model.lifted_dim
        m = self.model.input_dim
        n = self.model.state_dim
        self.Q_lift = np.atleast_2d(np.asarray(self.Q_lift, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if self.Q_lift.shape != (q, q):
            raise ValueError("Q_lift must match the lifted dimension")
        if self.R.shape != (m, m):
            raise ValueError("R must match the input dimension")
        if np.linalg.eigvalsh(0.5 * (self.Q_lift + self.Q_lift.T)).min() < -1e-8:
            raise ValueError("Q_lift must be positive semidefinite")
        if m and np.linalg.eigvalsh(0.5 * (self.R + self.R.T)).min() <= 0:
            raise ValueError("R must be positive definite")
        if self.P_term is None:
            self.P_term = self.gain.P
        self.P_term = np.atleast_2d(np.asarray(self.P_term, dtype=float))
        if self.P_term.shape != (q, q):
            raise ValueError("P_term must match the lifted dimension")
        if np.linalg.eigvalsh(0.5 * (self.P_term + self.P_term.T)).min() <= 0:
            raise ValueError("P_term must be positive definite")
        if self.state_set.dim != n:
            raise ValueError("state_set must live in the physical state space")
        if self.input_set.dim != m:
            raise ValueError("input_set must live in the input space")
        tube = self.gain.rpi_set if self.gain.rpi_set is not None else _zero_tube(q)
        if tube.dim != q:
            raise ValueError("tube cross-section must live in the lifted space")
        self.tube = tube
        # empty tightening is a configuration error, surfaced here
        self.state_tight = pontryagin_diff(self.state_set, linear_map(self.model.C, tube))
        self.input_tight = pontryagin_diff(self.input_set, linear_map(self.gain.K, tube))
        self._input_box = None

    @property
    def input_box(self) -> tuple[np.ndarray, np.ndarray]:
        if self._input_box is None:
            self._input_box = self.input_set.box_bounds()
        return self._input_box


@dataclass
class MpcSolution:
    """One solved horizon: the nominal plan plus solver diagnostics."""

    nominal_states: np.ndarray  # (N+1, q)
    nominal_inputs: np.ndarray  # (N, m)
    objective: float
    status: str  # optimal | infeasible | max_iter
    kkt_residual: float
    iterations: int
    certificate_norm: float = 0.0
    x: np.ndarray | None = None
    y: np.ndarray | None = None


def build_qp(cfg: MpcConfig, x0, param_forecast, y0: np.ndarray | None = None) -> qp_solver.QpProblem:
    """Assemble the nominal horizon problem over stacked (ybar_0..N, ubar_0..N-1).

    Equalities pin ybar_0 to the lifted measurement and chain the scheduled
    dynamics; inequalities are the tightened state rows on C ybar_k and the
    tightened input rows, k = 0..N-1 (plus the terminal row per mode).
    ``y0`` supplies an already-lifted measurement, bypassing the lift.
    """
    p_fore = np.asarray(param_forecast, dtype=float).ravel()
    N = cfg.N
    if p_fore.size != N:
        raise ValueError(f"parameter forecast must have length {N}, got {p_fore.size}")
    model = cfg.model
    q, m = model.lifted_dim, model.input_dim
    if y0 is None:
        y0 = lift_state(model.basis, np.asarray(x0, dtype=float))
    y0 = np.asarray(y0, dtype=float).ravel()
    if y0.size != q:
        raise ValueError("initial lifted state has the wrong dimension")

    nv = (N + 1) * q + N * m

    def ysl(k):
        return slice(k * q, (k + 1) * q)

    def usl(k):
        return slice((N + 1) * q + k * m, (N + 1) * q + (k + 1) * m)

    H = sp.block_diag([cfg.Q_lift] * N + [cfg.P_term] + [cfg.R] * N, format="csc") * 2.0
    g = np.zeros(nv)

    terminal_eq = cfg.terminal_mode == "equality_to_origin"
    ne = q * (N + 1) + (q if terminal_eq else 0)
    A_eq = np.zeros((ne, nv))
    b_eq = np.zeros(ne)
    A_eq[:q, ysl(0)] = np.eye(q)
    b_eq[:q] = y0
    for k in range(N):
        Ak, Bk = evaluate(model, p_fore[k])
        r = slice((k + 1) * q, (k + 2) * q)
        A_eq[r, ysl(k)] = -Ak
        A_eq[r, ysl(k + 1)] = np.eye(q)
        if m:
            A_eq[r, usl(k)] = -Bk
    if terminal_eq:
        A_eq[(N + 1) * q :, ysl(N)] = np.eye(q)

    GsC = cfg.state_tight.A @ model.C
    hs = cfg.state_tight.b
    Gu = cfg.input_tight.A
    hu = cfg.input_tight.b
    ns, nu = hs.size, hu.size
    n_state_rows = N + (0 if terminal_eq else 1)
    A_in = np.zeros((ns * n_state_rows + nu * N, nv))
    ub = np.empty(ns * n_state_rows + nu * N)
    for k in range(n_state_rows):
        r = slice(k * ns, (k + 1) * ns)
        A_in[r, ysl(k)] = GsC
        ub[r] = hs
    off = ns * n_state_rows
    for k in range(N):
        r = slice(off + k * nu, off + (k + 1) * nu)
        A_in[r, usl(k)] = Gu
        ub[r] = hu

    meta = {"N": N, "q": q, "m": m, "config": cfg, "forecast": p_fore}
    return qp_solver.QpProblem(
        H=H, g=g, A_eq=sp.csc_matrix(A_eq), b_eq=b_eq,
        A_in=sp.csc_matrix(A_in), lb=None, ub=ub, meta=meta,
    )


def _shifted_start(problem: qp_solver.QpProblem, prev: MpcSolution) -> tuple[np.ndarray, np.ndarray] | None:
    meta = problem.meta
    N, q, m = meta["N"], meta["q"], meta["m"]
    cfg: MpcConfig = meta["config"]
    if prev.x is None or prev.x.size != problem.num_vars:
        return None
    states = prev.nominal_states
    inputs = prev.nominal_inputs
    x = np.empty(problem.num_vars)
    for k in range(N):
        x[k * q : (k + 1) * q] = states[k + 1]
    off = (N + 1) * q
    for k in range(N - 1):
        x[off + k * m : off + (k + 1) * m] = inputs[k + 1]
    u_ext = cfg.gain.K @ states[N]
    x[off + (N - 1) * m : off + N * m] = u_ext
    A_last, B_last = evaluate(cfg.model, meta["forecast"][-1])
    y_last = A_last @ states[N] + (B_last @ u_ext if m else 0.0)
    x[N * q : (N + 1) * q] = y_last
    n_dual = problem.A_eq.shape[0] + problem.A_in.shape[0]
    y = prev.y if prev.y is not None and prev.y.size == n_dual else np.zeros(n_dual)
    return x, y


def solve_qp(problem: qp_solver.QpProblem, warm_start=None, **solver_kwargs) -> MpcSolution:
    """Solve an assembled horizon problem.

    A previous MpcSolution warm start is shifted one step and extended with
    the terminal-gain input; a raw (x, y) pair is used as given.
    """
    meta = problem.meta
    N, q, m = meta["N"], meta["q"], meta["m"]
    ws = None
    if isinstance(warm_start, MpcSolution):
        ws = _shifted_start(problem, warm_start)
    elif warm_start is not None:
        ws = warm_start
    sol = qp_solver.solve_qp(problem, warm_start=ws, **solver_kwargs)
    status = {"optimal": "optimal", "primal_infeasible": "infeasible"}.get(sol.status, "max_iter")
    states = sol.x[: (N + 1) * q].reshape(N + 1, q)
    inputs = sol.x[(N + 1) * q :].reshape(N, m)
    cert = float(np.linalg.norm(sol.y)) if status == "infeasible" else 0.0
    return MpcSolution(
        nominal_states=states,
        nominal_inputs=inputs,
        objective=float(sol.objective),
        status=status,
        kkt_residual=float(sol.kkt_residual),
        iterations=sol.iterations,
        certificate_norm=cert,
        x=sol.x,
        y=sol.y,
    )


def _clip_to_box(u: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, bool]:
    clipped = np.clip(u, lo, hi)
    # flag only material violations, not representation noise at active bounds
    return clipped, bool(np.any(np.abs(clipped - u) > 1e-9))


def tube_control(u_bar0, y_bar0, y, K, input_set: HPolytope) -> tuple[np.ndarray, bool]:
    """u = ubar_0 + K (y - ybar_0), clipped componentwise into the input set.

    The returned flag marks clipping; under a correctly sized tube the raw
    correction already lies inside, so a set flag points at an underestimated
    disturbance set.
    """
    u_bar0 = np.asarray(u_bar0, dtype=float).ravel()
    u = u_bar0 + np.asarray(K) @ (np.asarray(y, dtype=float) - np.asarray(y_bar0, dtype=float))
    lo, hi = input_set.box_bounds()
    return _clip_to_box(u, lo, hi)


@dataclass
class NominalLiftedPlant:
    """The scheduled lifted model itself as the plant (zero disturbance)."""

    model: ParamVaryingKoopman
    dt: float

    @property
    def state_dim(self) -> int:
        return self.model.state_dim

    @property
    def input_dim(self) -> int:
        return self.model.input_dim

    def step_lifted(self, y: np.ndarray, u: np.ndarray, p: float) -> np.ndarray:
        A, B = evaluate(self.model, p)
        return A @ y + (B @ u if self.model.input_dim else 0.0)


@dataclass
class ClosedLoopResult:
    """Per-step records of one receding-horizon run plus monitor events."""

    times: np.ndarray  # (T+1,)
    states: np.ndarray  # (T+1, n)
    inputs: np.ndarray  # (T, m)
    params: np.ndarray  # (T,)
    stage_costs: np.ndarray  # (T,)
    objectives: np.ndarray  # (T,) optimal cost J*_t
    qp_statuses: list
    qp_iterations: np.ndarray  # (T,)
    clipped: np.ndarray  # (T,) bool
    solve_times: np.ndarray  # (T,) seconds per QP solve
    events: list = field(default_factory=list)
    containment_checked: int = 0
    containment_ok: int = 0

    @property
    def feasibility_violations(self) -> int:
        return sum(1 for e in self.events if e[1] == "recursive_feasibility_violation")

    @property
    def lyapunov_violations(self) -> int:
        return sum(1 for e in self.events if e[1] == "lyapunov_violation")

    @property
    def containment_fraction(self) -> float:
        if self.containment_checked == 0:
            return float("nan")
        return self.containment_ok / self.containment_checked


def run_closed_loop(
    cfg: MpcConfig,
    plant,
    x0,
    param_signal,
    steps: int,
    *,
    disturbance_free: bool | None = None,
    stage_weight_x: np.ndarray | None = None,
    solver_kwargs: dict | None = None,
) -> ClosedLoopResult:
    """Run the receding-horizon loop and monitor the theoretical guarantees.

    Each step lifts the measurement, solves the horizon problem with the
    parameter forecast, applies the tube-corrected first input and advances
    the plant. An infeasible problem after the first emits a
    recursive_feasibility_violation event; in a disturbance-free run
    (detected for NominalLiftedPlant, or forced by flag) an optimal-cost
    increase beyond 1e-8 emits a lyapunov_violation event. The first problem
    being infeasible raises InitialInfeasibility.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    dt = plant.dt
    model = cfg.model
    q, m, n = model.lifted_dim, model.input_dim, model.state_dim
    lifted_plant = isinstance(plant, NominalLiftedPlant)
    if disturbance_free is None:
        disturbance_free = lifted_plant
    kwargs = dict(solver_kwargs or {})
    lo, hi = cfg.input_box
    K = cfg.gain.K
    tube_nonzero = cfg.tube.num_generators > 0 and np.abs(cfg.tube.generators).sum() > 0
    tube_infl = scale(cfg.tube, 1.0 + 1e-3) if tube_nonzero else None

    x = np.asarray(x0, dtype=float).ravel()
    y_state = lift_state(model.basis, x)
    if lifted_plant:
        x = model.C @ y_state

    states = np.empty((steps + 1, n))
    inputs = np.empty((steps, m))
    params = np.empty(steps)
    stage_costs = np.empty(steps)
    objectives = np.empty(steps)
    qp_statuses: list[str] = []
    qp_iters = np.empty(steps, dtype=int)
    clipped_flags = np.zeros(steps, dtype=bool)
    solve_times = np.empty(steps)
    events: list[tuple] = []
    states[0] = x

    prev_sol: MpcSolution | None = None
    prev_obj: float | None = None
    cont_checked = 0
    cont_ok = 0

    for t in range(steps):
        p_fore = forecast(param_signal, t, cfg.N, dt)
        y_meas = y_state if lifted_plant else lift_state(model.basis, x)
        problem = build_qp(cfg, x, p_fore, y0=y_meas)
        t0 = time.perf_counter()
        sol = solve_qp(problem, warm_start=prev_sol, **kwargs)
        solve_times[t] = time.perf_counter() - t0

        if prev_sol is not None and tube_infl is not None:
            cont_checked += 1
            err = y_meas - prev_sol.nominal_states[1]
            if bool(zonotope_contains(tube_infl, err[None, :])[0]):
                cont_ok += 1
            else:
                events.append((t, "tube_containment_miss", float(np.abs(err).max())))

        if sol.status == "infeasible":
            if t == 0:
                raise InitialInfeasibility(
                    f"the first horizon problem is infeasible from x0={x0}"
                    f" (certificate norm {sol.certificate_norm:.3g})"
                )
            events.append((t, "recursive_feasibility_violation", sol.certificate_norm))
            # fall back to the pure tube correction about the origin plan
            u, was_clipped = _clip_to_box(K @ y_meas, lo, hi)
            objectives[t] = np.nan
        else:
            u_bar0 = sol.nominal_inputs[0]
            u = u_bar0 + K @ (y_meas - sol.nominal_states[0])
            u, was_clipped = _clip_to_box(u, lo, hi)
            objectives[t] = sol.objective
            if disturbance_free and prev_obj is not None and sol.objective > prev_obj + 1e-8:
                events.append((t, "lyapunov_violation", sol.objective - prev_obj))
            prev_obj = sol.objective

        p_now = float(p_fore[0])
        if stage_weight_x is not None:
            stage = float(x @ stage_weight_x @ x)
        else:
            stage = float(y_meas @ cfg.Q_lift @ y_meas)
        if m:
            stage += float(u @ cfg.R @ u)
        inputs[t] = u
        params[t] = p_now
        stage_costs[t] = stage
        qp_statuses.append(sol.status)
        qp_iters[t] = sol.iterations
        clipped_flags[t] = was_clipped
        prev_sol = sol if sol.status == "optimal" else None

        if lifted_plant:
            y_state = plant.step_lifted(y_state, u, p_now)
            x = model.C @ y_state
        else:
            x = plant.step(x, u if m else None, p_now)
        states[t + 1] = x

    return ClosedLoopResult(
        times=np.arange(steps + 1) * dt,
        states=states,
        inputs=inputs,
        params=params,
        stage_costs=stage_costs,
        objectives=objectives,
        qp_statuses=qp_statuses,
        qp_iterations=qp_iters,
        clipped=clipped_flags,
        solve_times=solve_times,
        events=events,
        containment_checked=cont_checked,
        containment_ok=cont_ok,
    )
