"""Least-squares identification of lifted linear dynamics from snapshots.

The lifted one-step regression [A B] = Y+ [Y; U]^+ is solved through a
truncated SVD so rank-deficient dictionaries degrade explicitly instead of
silently amplifying noise. The output map C is a single pooled least-squares
fit shared by every working point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lifting import Basis, lift_batch


class RankDeficientData(Exception):
    """Raised when the lifted snapshot matrix carries no usable rank."""


@dataclass
class SnapshotSet:
    """Aligned one-step snapshot pairs at a fixed working point.

    states/states_next have shape (n, M); inputs has shape (m, M) with m = 0
    for autonomous plants. Column j holds the pair (x_j, u_j) -> x_j^+.
    """

    states: np.ndarray
    states_next: np.ndarray
    inputs: np.ndarray
    working_point: float
    dt: float

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.states_next = np.atleast_2d(np.asarray(self.states_next, dtype=float))
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if self.states.shape != self.states_next.shape:
            raise ValueError("states and states_next must have the same shape")
        if self.inputs.size == 0:
            self.inputs = np.zeros((0, self.states.shape[1]))
        if self.inputs.shape[1] != self.states.shape[1]:
            raise ValueError("inputs must have one column per snapshot pair")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def state_dim(self) -> int:
        return self.states.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[0]

    @property
    def num_pairs(self) -> int:
        return self.states.shape[1]


def lift_snapshots(basis: Basis, snap: SnapshotSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lift a snapshot set to (Y, Y+, U) with columns aligned to the pairs."""
    Y = lift_batch(basis, snap.states.T).T
    Yp = lift_batch(basis, snap.states_next.T).T
    if not (np.isfinite(Y).all() and np.isfinite(Yp).all()):
        raise ValueError("lifted snapshots contain non-finite values")
    return Y, Yp, snap.inputs


def _svd_pinv_solve(target: np.ndarray, Z: np.ndarray, truncation_tol: float) -> tuple[np.ndarray, int]:
    """Solve G Z ~= target in least squares via truncated SVD of Z."""
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    if s.size == 0 or s[0] <= 0:
        raise RankDeficientData("snapshot matrix is identically zero")
    keep = s > truncation_tol * s[0]
    rank = int(keep.sum())
    if rank == 0:
        raise RankDeficientData("all singular values fall below the truncation threshold")
    G = (target @ Vt[keep].T) * (1.0 / s[keep]) @ U[:, keep].T
    return G, rank


def identify_local(
    Y: np.ndarray,
    Y_next: np.ndarray,
    U: np.ndarray | None = None,
    truncation_tol: float = 1e-10,
) -> tuple[np.ndarray, np.ndarray]:
    """Identify one local lifted model: Y+ ~= A Y + B U.

    Returns (A, B); B has zero columns when there is no input. The stacked
    regressor [Y; U] must have at least q + m columns.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    Y_next = np.atleast_2d(np.asarray(Y_next, dtype=float))
    q = Y.shape[0]
    if U is None or np.asarray(U).size == 0:
        U = np.zeros((0, Y.shape[1]))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    m = U.shape[0]
    if Y_next.shape != Y.shape:
        raise ValueError("Y and Y_next must have the same shape")
    if U.shape[1] != Y.shape[1]:
        raise ValueError("U must have one column per snapshot pair")
    if Y.shape[1] < q + m:
        raise ValueError(
            f"need at least q + m = {q + m} snapshot columns, got {Y.shape[1]}"
        )
    Z = np.vstack([Y, U]) if m > 0 else Y
    G, _ = _svd_pinv_solve(Y_next, Z, truncation_tol)
    return G[:, :q], G[:, q:]


def identify_output_map(
    Y: np.ndarray, X: np.ndarray, truncation_tol: float = 1e-10
) -> np.ndarray:
    """Identify C with X ~= C Y in least squares (Moore-Penrose via SVD)."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise ValueError("X and Y must have the same number of columns")
    C, _ = _svd_pinv_solve(X, Y, truncation_tol)
    return C


def merge_snapshot_sets(sets: list[SnapshotSet], working_point: float | None = None) -> SnapshotSet:
    """Pool several snapshot sets into one, for a single time-invariant fit.

    The pooled set is tagged with the mean working point unless one is
    given; dt must agree across the inputs.
    """
    if not sets:
        raise ValueError("at least one snapshot set is required")
    dt = sets[0].dt
    if any(abs(s.dt - dt) > 1e-15 for s in sets):
        raise ValueError("snapshot sets must share the sampling time")
    wp = float(np.mean([s.working_point for s in sets])) if working_point is None else float(working_point)
    return SnapshotSet(
        states=np.hstack([s.states for s in sets]),
        states_next=np.hstack([s.states_next for s in sets]),
        inputs=np.hstack([s.inputs for s in sets]),
        working_point=wp,
        dt=dt,
    )
