"""Hot numeric kernels: plant rollouts and batch lifting.

Each kernel is written as a plain typed loop so numba can compile it
unchanged. With numba installed the loops are jitted at import time
(cache=True, no fastmath so results stay deterministic); setting the
environment variable TUBEKOOP_DISABLE_NUMBA=1 (or "true"/"yes") before
import keeps them as ordinary Python functions and the batch-lifting
dispatchers in lifting.py switch to the vectorized numpy versions below.
benchmarks/bench_kernels.py compares the two paths.
"""

from __future__ import annotations

import os

import numpy as np


def _flag_disabled() -> bool:
    value = os.environ.get("TUBEKOOP_DISABLE_NUMBA", "0").strip().lower()
    return value in ("1", "true", "yes", "on")


NUMBA_ENABLED = False
if not _flag_disabled():
    try:
        from numba import njit as _njit

        NUMBA_ENABLED = True
    except ImportError:
        pass


def _jit(fn):
    if NUMBA_ENABLED:
        return _njit(cache=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# plant rollouts
# ---------------------------------------------------------------------------


def _lorenz_rollout(x0, p_seq, dt):
    # RK4 with the parameter held constant over each step.
    n_steps = p_seq.shape[0]
    out = np.empty((n_steps + 1, 3))
    x = x0.copy()
    out[0] = x
    k1 = np.empty(3)
    k2 = np.empty(3)
    k3 = np.empty(3)
    k4 = np.empty(3)
    tmp = np.empty(3)
    for k in range(n_steps):
        p = p_seq[k]
        k1[0] = 10.0 * (x[1] - x[0])
        k1[1] = p * x[0] - x[1] - x[0] * x[2]
        k1[2] = x[0] * x[1] - x[2]
        for i in range(3):
            tmp[i] = x[i] + 0.5 * dt * k1[i]
        k2[0] = 10.0 * (tmp[1] - tmp[0])
        k2[1] = p * tmp[0] - tmp[1] - tmp[0] * tmp[2]
        k2[2] = tmp[0] * tmp[1] - tmp[2]
        for i in range(3):
            tmp[i] = x[i] + 0.5 * dt * k2[i]
        k3[0] = 10.0 * (tmp[1] - tmp[0])
        k3[1] = p * tmp[0] - tmp[1] - tmp[0] * tmp[2]
        k3[2] = tmp[0] * tmp[1] - tmp[2]
        for i in range(3):
            tmp[i] = x[i] + dt * k3[i]
        k4[0] = 10.0 * (tmp[1] - tmp[0])
        k4[1] = p * tmp[0] - tmp[1] - tmp[0] * tmp[2]
        k4[2] = tmp[0] * tmp[1] - tmp[2]
        for i in range(3):
            x[i] = x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        out[k + 1] = x
    return out


def _vdp_rollout_euler(x0, u_seq, p_seq, dt):
    n_steps = u_seq.shape[0]
    out = np.empty((n_steps + 1, 2))
    a = x0[0]
    b = x0[1]
    out[0, 0] = a
    out[0, 1] = b
    for k in range(n_steps):
        p = p_seq[k]
        u = u_seq[k]
        da = 2.0 * b
        db = -0.8 * a + p * (b - 2.0 * a * a * b) + u
        a = a + dt * da
        b = b + dt * db
        out[k + 1, 0] = a
        out[k + 1, 1] = b
    return out


def _vdp_rollout_rk4(x0, u_seq, p_seq, dt):
    # Input held constant over the step (zero-order hold).
    n_steps = u_seq.shape[0]
    out = np.empty((n_steps + 1, 2))
    a = x0[0]
    b = x0[1]
    out[0, 0] = a
    out[0, 1] = b
    for k in range(n_steps):
        p = p_seq[k]
        u = u_seq[k]
        k1a = 2.0 * b
        k1b = -0.8 * a + p * (b - 2.0 * a * a * b) + u
        ta = a + 0.5 * dt * k1a
        tb = b + 0.5 * dt * k1b
        k2a = 2.0 * tb
        k2b = -0.8 * ta + p * (tb - 2.0 * ta * ta * tb) + u
        ta = a + 0.5 * dt * k2a
        tb = b + 0.5 * dt * k2b
        k3a = 2.0 * tb
        k3b = -0.8 * ta + p * (tb - 2.0 * ta * ta * tb) + u
        ta = a + dt * k3a
        tb = b + dt * k3b
        k4a = 2.0 * tb
        k4b = -0.8 * ta + p * (tb - 2.0 * ta * ta * tb) + u
        a = a + dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
        b = b + dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        out[k + 1, 0] = a
        out[k + 1, 1] = b
    return out


# ---------------------------------------------------------------------------
# batch lifting
# ---------------------------------------------------------------------------


def _thin_plate_features_loop(X, centers):
    # phi(r) = r^2 log r, evaluated as 0.5 * r^2 * log(r^2), zero at r = 0.
    M = X.shape[0]
    n = X.shape[1]
    q = centers.shape[0]
    out = np.empty((M, q))
    for j in range(M):
        for i in range(q):
            r2 = 0.0
            for d in range(n):
                diff = X[j, d] - centers[i, d]
                r2 += diff * diff
            if r2 > 0.0:
                out[j, i] = 0.5 * r2 * np.log(r2)
            else:
                out[j, i] = 0.0
    return out


def _monomial_features_loop(X, exponents):
    M = X.shape[0]
    n = X.shape[1]
    q = exponents.shape[0]
    out = np.empty((M, q))
    for j in range(M):
        for i in range(q):
            v = 1.0
            for d in range(n):
                e = exponents[i, d]
                for _ in range(e):
                    v *= X[j, d]
            out[j, i] = v
    return out


def thin_plate_features_numpy(X, centers):
    """Vectorized fallback for the thin-plate kernel."""
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 0.5 * d2 * np.log(d2)
    out[d2 == 0.0] = 0.0
    return out


def monomial_features_numpy(X, exponents):
    """Vectorized fallback for the monomial kernel."""
    return np.prod(X[:, None, :] ** exponents[None, :, :].astype(np.float64), axis=2)


lorenz_rollout = _jit(_lorenz_rollout)
vdp_rollout_euler = _jit(_vdp_rollout_euler)
vdp_rollout_rk4 = _jit(_vdp_rollout_rk4)
thin_plate_features_loop = _jit(_thin_plate_features_loop)
monomial_features_loop = _jit(_monomial_features_loop)
