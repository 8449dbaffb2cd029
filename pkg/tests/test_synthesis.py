"""Common-certificate gain synthesis on scalar and small vertex families."""

import numpy as np
import pytest
import scipy.linalg as sla

from tubekoop.lpv import LocalModel
from tubekoop.synthesis import (
    QuadraticStabilityFailure,
    lift_weights,
    solve_gain,
    verify_certificate,
)


def scalar_grid_oracle(a, b, q, r, grid=None):
    """Minimize the stationary certificate P(k) = (q + r k^2)/(1 - (a+bk)^2)."""
    if grid is None:
        grid = np.linspace(-2.0, 0.0, 20001)
    ac = a + b * grid
    ok = np.abs(ac) < 1.0
    P = np.full(grid.size, np.inf)
    P[ok] = (q + r * grid[ok] ** 2) / (1.0 - ac[ok] ** 2)
    j = int(np.argmin(P))
    return float(grid[j]), float(P[j])


class TestLiftWeights:
    def test_identity_output_map(self):
        Qx = np.diag([1.0, 2.0])
        got = lift_weights(Qx, np.eye(2), ridge=1e-8)
        assert np.allclose(got, Qx + 1e-8 * np.eye(2))

    def test_rectangular_output_map(self):
        C = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, -0.5]])
        got = lift_weights(np.eye(2), C, ridge=0.0)
        assert got.shape == (3, 3)
        assert np.allclose(got, C.T @ C)
        assert np.linalg.eigvalsh(got).min() >= -1e-12

    def test_validation(self):
        with pytest.raises(ValueError):
            lift_weights(np.ones((2, 3)), np.eye(2))
        with pytest.raises(ValueError):
            lift_weights(np.eye(2), np.ones((3, 4)))
        with pytest.raises(ValueError):
            lift_weights(np.eye(2), np.eye(2), ridge=-1e-9)


class TestVerifyCertificate:
    def test_hand_computed_margin(self):
        # scalar: margin = (a+bk)^2 p - p + q + r k^2
        lm = LocalModel(1.0, [[0.5]], [[1.0]])
        k, p, q, r = -0.4, 2.0, 1.0, 0.1
        got = verify_certificate([lm], [[k]], [[p]], [[q]], [[r]])
        expect = (0.5 + k) ** 2 * p - p + q + r * k**2
        assert got.shape == (1,)
        assert got[0] == pytest.approx(expect, abs=1e-12)

    def test_riccati_solution_has_zero_margin(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(3, 3))
        A *= 0.85 / np.abs(np.linalg.eigvals(A)).max()
        B = rng.normal(size=(3, 1))
        Q, R = np.eye(3), np.array([[0.5]])
        P = sla.solve_discrete_are(A, B, Q, R)
        K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        margins = verify_certificate([LocalModel(1.0, A, B)], K, P, Q, R)
        assert np.abs(margins).max() < 1e-8

    def test_rejects_bad_certificates(self):
        lm = LocalModel(1.0, [[0.5]], [[1.0]])
        with pytest.raises(ValueError, match="positive definite"):
            verify_certificate([lm], [[0.0]], [[-1.0]], [[1.0]], [[1.0]])
        with pytest.raises(ValueError, match="symmetric"):
            verify_certificate(
                [LocalModel(1.0, np.eye(2) * 0.5, np.ones((2, 1)))],
                np.zeros((1, 2)),
                np.array([[1.0, 0.5], [0.0, 1.0]]),
                np.eye(2),
                np.eye(1),
            )


class TestSolveGainScalar:
    def test_matches_grid_oracle(self):
        lm = LocalModel(1.0, [[0.5]], [[1.0]])
        gain = solve_gain([lm], [[1.0]], [[0.1]])
        k_ref, p_ref = scalar_grid_oracle(0.5, 1.0, 1.0, 0.1)
        assert gain.margins.max() <= 1e-6
        assert gain.K[0, 0] == pytest.approx(k_ref, abs=2e-3)
        assert gain.P[0, 0] == pytest.approx(p_ref, abs=2e-3)
        assert gain.rpi_set is None
        assert gain.info["solver_status"] in ("optimal", "max_iter")
        # margins round-trip through the standalone checker
        again = verify_certificate([lm], gain.K, gain.P, [[1.0]], [[0.1]])
        assert np.allclose(again, gain.margins, atol=1e-12)

    def test_heavier_input_weight_softens_gain(self):
        lm = LocalModel(1.0, [[0.5]], [[1.0]])
        gain = solve_gain([lm], [[1.0]], [[1.0]])
        k_ref, _ = scalar_grid_oracle(0.5, 1.0, 1.0, 1.0)
        assert gain.K[0, 0] == pytest.approx(k_ref, abs=2e-3)
        assert abs(gain.K[0, 0]) < 0.45547

    def test_trace_p_objective_certifies(self):
        lm = LocalModel(1.0, [[0.5]], [[1.0]])
        gain = solve_gain([lm], [[1.0]], [[0.1]], objective="trace_p")
        _, p_ref = scalar_grid_oracle(0.5, 1.0, 1.0, 0.1)
        assert gain.objective == "trace_p"
        assert gain.margins.max() <= 1e-6
        assert gain.P[0, 0] <= p_ref + 5e-3

    def test_unknown_objective_rejected(self):
        lm = LocalModel(1.0, [[0.5]], [[1.0]])
        with pytest.raises(ValueError):
            solve_gain([lm], [[1.0]], [[0.1]], objective="logdet")

    def test_unactuated_model_rejected(self):
        lm = LocalModel(1.0, [[0.5]], np.zeros((1, 0)))
        with pytest.raises(ValueError, match="actuated"):
            solve_gain([lm], [[1.0]], np.zeros((0, 0)))


class TestSolveGainFamilies:
    def test_duplicate_vertices_behave_like_one(self):
        lm = LocalModel(1.0, [[0.5]], [[1.0]])
        lm2 = LocalModel(2.0, [[0.5]], [[1.0]])
        single = solve_gain([lm], [[1.0]], [[0.1]])
        double = solve_gain([lm, lm2], [[1.0]], [[0.1]])
        assert double.margins.shape == (2,)
        assert double.margins.max() <= 1e-6
        assert double.K[0, 0] == pytest.approx(single.K[0, 0], abs=2e-3)

    def test_two_vertex_family_certifies_both(self):
        rng = np.random.default_rng(12)
        A1 = np.array([[0.9, 0.1], [0.0, 0.8]])
        A2 = np.array([[0.85, 0.0], [0.15, 0.9]])
        B = np.array([[0.0], [1.0]])
        lms = [LocalModel(1.0, A1, B), LocalModel(2.0, A2, B)]
        Q, R = np.eye(2), np.array([[0.1]])
        gain = solve_gain(lms, Q, R)
        assert gain.margins.shape == (2,)
        assert gain.margins.max() <= 1e-6
        # Lyapunov decrease along both closed loops for random states
        for lm in lms:
            Ac = lm.A + lm.B @ gain.K
            for _ in range(100):
                x = rng.normal(size=2)
                lhs = x @ Ac.T @ gain.P @ Ac @ x
                rhs = x @ gain.P @ x - x @ (Q + gain.K.T @ R @ gain.K) @ x
                assert lhs <= rhs + 1e-6 * (x @ x)

    def test_unstabilizable_family_raises(self):
        lm = LocalModel(1.0, [[2.0]], [[0.0]])
        with pytest.raises(QuadraticStabilityFailure) as exc:
            solve_gain([lm], [[1.0]], [[0.1]])
        assert exc.value.vertex == 0
        assert exc.value.margin > 0
