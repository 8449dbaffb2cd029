"""Horizon assembly, tube correction, and the receding-horizon loop."""

import numpy as np
import pytest

from tubekoop.lifting import vdp_monomial_basis
from tubekoop.lpv import LocalModel, ParamVaryingKoopman
from tubekoop.mpc import (
    InitialInfeasibility,
    MpcConfig,
    NominalLiftedPlant,
    build_qp,
    run_closed_loop,
    solve_qp,
    tube_control,
)
from tubekoop.sets import EmptyTightenedSet, Zonotope, box_polytope, box_zonotope
from tubekoop.simlab import Constant
from tubekoop.synthesis import TubeGain, solve_gain
from util import identity_basis, random_stable_pair


def small_setup(N=5, state_halfwidth=50.0, input_halfwidth=50.0, seed=1,
                terminal_mode="equality_to_origin", rpi_set=None):
    rng = np.random.default_rng(seed)
    A, B = random_stable_pair(rng, 2, 1, radius=0.85)
    model = ParamVaryingKoopman(
        [LocalModel(1.0, A, B)], np.eye(2), identity_basis(2)
    )
    gain = solve_gain([model.local_models[0]], np.eye(2), [[0.1]])
    gain.rpi_set = rpi_set
    cfg = MpcConfig(
        N=N,
        Q_lift=np.eye(2),
        R=[[0.1]],
        state_set=box_polytope([-state_halfwidth] * 2, [state_halfwidth] * 2),
        input_set=box_polytope([-input_halfwidth], [input_halfwidth]),
        gain=gain,
        model=model,
        terminal_mode=terminal_mode,
    )
    return cfg, A, B


class TestConfigValidation:
    def test_horizon_and_mode(self):
        cfg, _, _ = small_setup()
        with pytest.raises(ValueError):
            MpcConfig(N=0, Q_lift=np.eye(2), R=[[0.1]], state_set=cfg.state_set,
                      input_set=cfg.input_set, gain=cfg.gain, model=cfg.model)
        with pytest.raises(ValueError, match="terminal_mode"):
            MpcConfig(N=2, Q_lift=np.eye(2), R=[[0.1]], state_set=cfg.state_set,
                      input_set=cfg.input_set, gain=cfg.gain, model=cfg.model,
                      terminal_mode="contraction")

    def test_weight_shapes_and_signs(self):
        cfg, _, _ = small_setup()
        with pytest.raises(ValueError, match="Q_lift"):
            MpcConfig(N=2, Q_lift=np.eye(3), R=[[0.1]], state_set=cfg.state_set,
                      input_set=cfg.input_set, gain=cfg.gain, model=cfg.model)
        with pytest.raises(ValueError, match="R"):
            MpcConfig(N=2, Q_lift=np.eye(2), R=[[0.0]], state_set=cfg.state_set,
                      input_set=cfg.input_set, gain=cfg.gain, model=cfg.model)

    def test_terminal_weight_defaults_to_certificate(self):
        cfg, _, _ = small_setup()
        assert np.array_equal(cfg.P_term, cfg.gain.P)

    def test_set_dimensions_checked(self):
        cfg, _, _ = small_setup()
        with pytest.raises(ValueError, match="state_set"):
            MpcConfig(N=2, Q_lift=np.eye(2), R=[[0.1]],
                      state_set=box_polytope([-1.0], [1.0]),
                      input_set=cfg.input_set, gain=cfg.gain, model=cfg.model)
        with pytest.raises(ValueError, match="input_set"):
            MpcConfig(N=2, Q_lift=np.eye(2), R=[[0.1]], state_set=cfg.state_set,
                      input_set=box_polytope([-1.0] * 2, [1.0] * 2),
                      gain=cfg.gain, model=cfg.model)

    def test_tube_tightens_constraints(self):
        tube = box_zonotope([-0.5] * 2, [0.5] * 2)
        cfg, _, _ = small_setup(state_halfwidth=2.0, input_halfwidth=3.0,
                                rpi_set=tube)
        plain, _, _ = small_setup(state_halfwidth=2.0, input_halfwidth=3.0)
        assert (cfg.state_tight.b < plain.state_tight.b).all()
        assert (cfg.input_tight.b <= plain.input_tight.b).all()

    def test_oversized_tube_rejected_at_construction(self):
        tube = box_zonotope([-5.0] * 2, [5.0] * 2)
        with pytest.raises(EmptyTightenedSet):
            small_setup(state_halfwidth=2.0, rpi_set=tube)


class TestBuildQp:
    def test_table_sized_problem_has_509_variables(self):
        rng = np.random.default_rng(0)
        basis = vdp_monomial_basis()
        A = rng.normal(size=(9, 9)) * 0.1
        B = rng.normal(size=(9, 1))
        model = ParamVaryingKoopman(
            [LocalModel(2.5, A, B)], rng.normal(size=(2, 9)), basis
        )
        gain = TubeGain(K=np.zeros((1, 9)), P=np.eye(9), margins=np.zeros(1))
        cfg = MpcConfig(
            N=50, Q_lift=np.eye(9), R=[[0.1]],
            state_set=box_polytope([-50.0] * 2, [50.0] * 2),
            input_set=box_polytope([-3.0], [3.0]),
            gain=gain, model=model,
        )
        problem = build_qp(cfg, np.array([0.1, 0.2]), np.full(50, 2.5))
        assert problem.num_vars == 9 * 51 + 50 == 509

    def test_forecast_length_checked(self):
        cfg, _, _ = small_setup(N=4)
        with pytest.raises(ValueError, match="forecast"):
            build_qp(cfg, np.zeros(2), np.ones(3))

    def test_solution_satisfies_pinned_start_and_dynamics(self):
        cfg, A, B = small_setup(N=8)
        x0 = np.array([1.5, -0.7])
        problem = build_qp(cfg, x0, np.ones(8))
        sol = solve_qp(problem)
        assert sol.status == "optimal"
        assert np.abs(sol.nominal_states[0] - x0).max() < 1e-6
        for k in range(8):
            pred = A @ sol.nominal_states[k] + B @ sol.nominal_inputs[k]
            assert np.abs(sol.nominal_states[k + 1] - pred).max() < 1e-6
        # terminal equality
        assert np.abs(sol.nominal_states[-1]).max() < 1e-6

    def test_origin_start_costs_nothing(self):
        cfg, _, _ = small_setup(N=6)
        problem = build_qp(cfg, np.zeros(2), np.ones(6))
        sol = solve_qp(problem)
        assert sol.status == "optimal"
        assert abs(sol.objective) < 1e-10
        assert np.abs(sol.nominal_inputs).max() < 1e-7

    def test_single_step_matches_closed_form(self):
        # N=1 with terminal weight only: u* = -(B'PB+R)^-1 B'PA y0
        cfg, A, B = small_setup(N=1, terminal_mode="tightened_state_set",
                                state_halfwidth=1e6, input_halfwidth=1e6)
        P, R = cfg.P_term, cfg.R
        x0 = np.array([0.8, -1.1])
        sol = solve_qp(build_qp(cfg, x0, np.ones(1)))
        expect = -np.linalg.solve(B.T @ P @ B + R, B.T @ P @ A @ x0)
        assert sol.status == "optimal"
        assert np.abs(sol.nominal_inputs[0] - expect).max() < 1e-8

    def test_shifted_warm_start_is_feasible_for_next_problem(self):
        from tubekoop.mpc import _shifted_start

        cfg, A, B = small_setup(N=10, seed=3)
        x0 = np.array([2.0, 1.0])
        first = solve_qp(build_qp(cfg, x0, np.ones(10)))
        assert first.status == "optimal"
        # disturbance-free successor state: the plan shifted one step and
        # extended with the terminal gain must satisfy every constraint
        x1 = A @ x0 + B @ first.nominal_inputs[0]
        nxt = build_qp(cfg, x1, np.ones(10))
        ws = _shifted_start(nxt, first)
        assert ws is not None
        x_ws, _ = ws
        assert np.abs(nxt.A_eq @ x_ws - nxt.b_eq).max() < 1e-5
        assert (nxt.A_in @ x_ws <= nxt.ub + 1e-7).all()
        warm = solve_qp(nxt, warm_start=first)
        cold = solve_qp(build_qp(cfg, x1, np.ones(10)))
        assert warm.status == "optimal"
        assert np.abs(warm.nominal_inputs - cold.nominal_inputs).max() < 1e-5


class TestTubeControl:
    def setup_method(self):
        self.box = box_polytope([-3.0], [3.0])

    def test_zero_error_returns_nominal(self):
        y = np.array([0.5, -0.5])
        u, flag = tube_control([1.0], y, y, np.array([[2.0, -1.0]]), self.box)
        assert np.allclose(u, [1.0])
        assert flag is False

    def test_zero_gain_ignores_error(self):
        u, flag = tube_control(
            [1.0], np.zeros(2), np.array([9.0, -9.0]), np.zeros((1, 2)), self.box
        )
        assert np.allclose(u, [1.0])
        assert flag is False

    def test_correction_applied_and_clipped(self):
        K = np.array([[1.0, 0.0]])
        u, flag = tube_control([2.5], np.zeros(2), np.array([0.2, 0.0]), K, self.box)
        assert np.allclose(u, [2.7])
        assert flag is False
        u, flag = tube_control([2.5], np.zeros(2), np.array([2.0, 0.0]), K, self.box)
        assert np.allclose(u, [3.0])
        assert flag is True

    def test_representation_noise_not_flagged(self):
        K = np.zeros((1, 2))
        u, flag = tube_control([3.0 + 5e-10], np.zeros(2), np.zeros(2), K, self.box)
        assert np.allclose(u, [3.0])
        assert flag is False


class TestClosedLoop:
    def test_nominal_regulation_run(self):
        cfg, _, _ = small_setup(N=8, seed=2)
        plant = NominalLiftedPlant(cfg.model, dt=0.1)
        res = run_closed_loop(cfg, plant, np.array([1.0, -0.5]), Constant(1.0), 30)
        assert res.states.shape == (31, 2)
        assert res.inputs.shape == (30, 1)
        assert res.times[-1] == pytest.approx(3.0)
        assert res.qp_statuses.count("optimal") == 30
        assert res.feasibility_violations == 0
        assert res.lyapunov_violations == 0
        assert not res.clipped.any()
        # optimal cost is a Lyapunov function along the nominal loop
        assert (np.diff(res.objectives) <= 1e-8).all()
        assert np.abs(res.states[-1]).max() < 1e-4
        assert np.isnan(res.containment_fraction)

    def test_lifted_plant_steps_model(self):
        cfg, A, B = small_setup()
        plant = NominalLiftedPlant(cfg.model, dt=0.1)
        y = np.array([0.4, 0.6])
        u = np.array([0.2])
        assert np.allclose(plant.step_lifted(y, u, 1.0), A @ y + B @ u)
        assert plant.state_dim == 2 and plant.input_dim == 1

    def test_initial_infeasibility_raised(self):
        cfg, _, _ = small_setup(N=4, state_halfwidth=0.1)
        plant = NominalLiftedPlant(cfg.model, dt=0.1)
        with pytest.raises(InitialInfeasibility, match="first horizon problem"):
            run_closed_loop(cfg, plant, np.array([3.0, 0.5]), Constant(1.0), 5)

    def test_containment_monitor_with_tube(self):
        tube = box_zonotope([-0.5] * 2, [0.5] * 2)
        cfg, _, _ = small_setup(N=6, seed=4, rpi_set=tube)
        plant = NominalLiftedPlant(cfg.model, dt=0.1)
        res = run_closed_loop(cfg, plant, np.array([0.5, 0.5]), Constant(1.0), 12)
        # zero-disturbance plant: the one-step error is always inside the tube
        assert res.containment_checked == 11
        assert res.containment_fraction == 1.0

    def test_stage_weight_override(self):
        cfg, _, _ = small_setup(N=5, seed=6)
        plant = NominalLiftedPlant(cfg.model, dt=0.1)
        x0 = np.array([1.0, 2.0])
        Qx = np.diag([2.0, 0.5])
        res = run_closed_loop(cfg, plant, x0, Constant(1.0), 3, stage_weight_x=Qx)
        expect = x0 @ Qx @ x0 + res.inputs[0] @ cfg.R @ res.inputs[0]
        assert res.stage_costs[0] == pytest.approx(float(expect))

    def test_step_count_validated(self):
        cfg, _, _ = small_setup()
        plant = NominalLiftedPlant(cfg.model, dt=0.1)
        with pytest.raises(ValueError):
            run_closed_loop(cfg, plant, np.zeros(2), Constant(1.0), 0)
