"""Parameter-varying lifted linear models.

A bank of local lifted models identified at fixed working points is blended
by piecewise-linear interpolation of (A, B) in the scheduling parameter,
with clamping outside the covered range. A single shared output map C
projects lifted predictions back to physical states. One-step residuals on
held-out data give a box disturbance set for tube construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import edmd
from .lifting import Basis, lift_batch, lift_state
from .sets import Zonotope, box_zonotope


@dataclass
class LocalModel:
    """One lifted linear model (A, B) identified at a fixed working point."""

    working_point: float
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if self.A.shape[0] != self.A.shape[1]:
            raise ValueError("A must be square")
        if self.B.size == 0:
            self.B = np.zeros((self.A.shape[0], 0))
        if self.B.shape[0] != self.A.shape[0]:
            raise ValueError("B must have as many rows as A")


@dataclass
class ParamVaryingKoopman:
    """Interpolated bank of local lifted models with a shared output map."""

    local_models: list[LocalModel]
    C: np.ndarray
    basis: Basis
    disturbance: Zonotope | None = None
    fit_report: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.local_models:
            raise ValueError("at least one local model is required")
        wps = [lm.working_point for lm in self.local_models]
        if any(b <= a for a, b in zip(wps, wps[1:])):
            raise ValueError("working points must be strictly increasing")
        q = self.local_models[0].A.shape[0]
        m = self.local_models[0].B.shape[1]
        for lm in self.local_models:
            if lm.A.shape != (q, q) or lm.B.shape != (q, m):
                raise ValueError("all local models must share dimensions")
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if self.C.shape[1] != q:
            raise ValueError("C must map lifted vectors to physical states")
        self._wps = np.array(wps)

    @property
    def lifted_dim(self) -> int:
        return self.local_models[0].A.shape[0]

    @property
    def state_dim(self) -> int:
        return self.C.shape[0]

    @property
    def input_dim(self) -> int:
        return self.local_models[0].B.shape[1]

    @property
    def param_range(self) -> tuple[float, float]:
        return float(self._wps[0]), float(self._wps[-1])


def interp_weights(model: ParamVaryingKoopman, p: float) -> np.ndarray:
    """Interpolation weights over the working points: nonnegative, sum to one,
    at most two nonzero, clamped outside the covered range."""
    wps = model._wps
    w = np.zeros(wps.size)
    if p <= wps[0]:
        w[0] = 1.0
        return w
    if p >= wps[-1]:
        w[-1] = 1.0
        return w
    j = int(np.searchsorted(wps, p, side="right") - 1)
    span = wps[j + 1] - wps[j]
    t = (p - wps[j]) / span
    w[j] = 1.0 - t
    w[j + 1] = t
    return w


def evaluate(model: ParamVaryingKoopman, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Interpolated (A(p), B(p)). Exactly reproduces a local model at its node."""
    w = interp_weights(model, p)
    nz = np.nonzero(w)[0]
    if nz.size == 1:
        lm = model.local_models[nz[0]]
        return lm.A, lm.B
    a, b = nz
    A = w[a] * model.local_models[a].A + w[b] * model.local_models[b].A
    B = w[a] * model.local_models[a].B + w[b] * model.local_models[b].B
    return A, B


def predict(
    model: ParamVaryingKoopman,
    x0: np.ndarray,
    p_seq: np.ndarray,
    u_seq: np.ndarray | None = None,
) -> np.ndarray:
    """Roll the lifted model forward and project each step to physical space.

    Returns an (H + 1, n) trajectory including the initial state; the lifted
    state is propagated linearly (lifted once, never re-lifted).
    """
    p_seq = np.asarray(p_seq, dtype=float).ravel()
    H = p_seq.size
    m = model.input_dim
    if u_seq is None:
        if m != 0:
            raise ValueError("model has inputs; u_seq is required")
        u_seq = np.zeros((H, 0))
    u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
    if m > 0 and u_seq.shape != (H, m):
        raise ValueError(f"u_seq must have shape ({H}, {m})")
    y = lift_state(model.basis, np.asarray(x0, dtype=float))
    out = np.empty((H + 1, model.state_dim))
    out[0] = model.C @ y
    for k in range(H):
        A, B = evaluate(model, p_seq[k])
        y = A @ y if m == 0 else A @ y + B @ u_seq[k]
        out[k + 1] = model.C @ y
    return out


def fit_param_varying(
    basis: Basis,
    snapshot_sets: list[edmd.SnapshotSet],
    truncation_tol: float = 1e-10,
) -> ParamVaryingKoopman:
    """Identify the full bank: per-point (A, B) plus one pooled output map C.

    Snapshot sets must come at strictly increasing working points. The fit
    report records per-point relative residuals of the lifted regression.
    """
    if not snapshot_sets:
        raise ValueError("at least one snapshot set is required")
    wps = [s.working_point for s in snapshot_sets]
    if any(b <= a for a, b in zip(wps, wps[1:])):
        raise ValueError("snapshot sets must come at strictly increasing working points")

    local_models = []
    residuals = {}
    lifted_all = []
    states_all = []
    for snap in snapshot_sets:
        Y, Yp, U = edmd.lift_snapshots(basis, snap)
        try:
            A, B = edmd.identify_local(Y, Yp, U, truncation_tol)
        except edmd.RankDeficientData as exc:
            raise edmd.RankDeficientData(
                f"working point {snap.working_point}: {exc}"
            ) from exc
        pred = A @ Y + (B @ U if U.shape[0] > 0 else 0.0)
        denom = np.linalg.norm(Yp)
        residuals[snap.working_point] = float(
            np.linalg.norm(Yp - pred) / denom if denom > 0 else 0.0
        )
        local_models.append(LocalModel(snap.working_point, A, B))
        lifted_all.append(np.hstack([Y, Yp[:, -1:]]))
        states_all.append(np.hstack([snap.states, snap.states_next[:, -1:]]))

    C = edmd.identify_output_map(np.hstack(lifted_all), np.hstack(states_all), truncation_tol)
    report = {"residuals": residuals, "truncation_tol": truncation_tol}
    return ParamVaryingKoopman(local_models=local_models, C=C, basis=basis, fit_report=report)


def estimate_disturbance_set(
    model: ParamVaryingKoopman,
    validation_sets: list[edmd.SnapshotSet],
    inflation: float = 1.1,
) -> Zonotope:
    """Box hull of one-step lifted residuals on held-out data, inflated about
    its center. The result is stored on the model and returned."""
    if inflation < 1.0:
        raise ValueError("inflation must be >= 1")
    if not validation_sets:
        raise ValueError("at least one validation set is required")
    residuals = []
    for snap in validation_sets:
        Y, Yp, U = edmd.lift_snapshots(model.basis, snap)
        A, B = evaluate(model, snap.working_point)
        pred = A @ Y + (B @ U if U.shape[0] > 0 else 0.0)
        residuals.append(Yp - pred)
    R = np.hstack(residuals)
    lo = R.min(axis=1)
    hi = R.max(axis=1)
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * inflation
    W = box_zonotope(center - half, center + half)
    model.disturbance = W
    return W
