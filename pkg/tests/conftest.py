"""Shared fixtures: the frozen identification campaigns and synthesized gains.

The Van der Pol campaign (five working points, 1000 s each) takes a couple of
minutes to simulate; set TUBEKOOP_TEST_CACHE to a directory to pickle the
collected snapshot sets between runs. Gains are always synthesized fresh so
the certificate timing stays measurable.
"""

import os
import pickle
import time

import numpy as np
import pytest

from tubekoop import (
    collect_identification_data,
    fit_param_varying,
    lift_weights,
    merge_snapshot_sets,
    snapshots_from_episodes,
    solve_gain,
    vdp_monomial_basis,
)

VDP_SEED = 20240811
VDP_BOX = [[-3.5, 3.5], [-3.5, 3.5]]
VDP_WPS = (1.0, 2.0, 3.0, 4.0, 5.0)
VDP_DURATION = 1000.0
VDP_DT = 0.01
VDP_INPUT_RANGE = (-3.0, 3.0)

LORENZ_SEED = 20240811
LORENZ_BOX = [[-25.0, 25.0], [-30.0, 30.0], [0.0, 50.0]]
LORENZ_INIT_BOX = [[-15.0, 15.0], [-20.0, 20.0], [10.0, 40.0]]
LORENZ_WPS = (20.0, 25.0, 30.0)
LORENZ_DURATION = 200.0
LORENZ_DT = 0.01


def _cached(name: str, builder):
    cache_dir = os.environ.get("TUBEKOOP_TEST_CACHE")
    if not cache_dir:
        return builder()
    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(cache_dir, name + ".pkl")
    if os.path.exists(path):
        with open(path, "rb") as fh:
            return pickle.load(fh)
    value = builder()
    with open(path, "wb") as fh:
        pickle.dump(value, fh)
    return value


@pytest.fixture(scope="session")
def vdp_snapshots():
    def build():
        snaps = []
        for i, wp in enumerate(VDP_WPS):
            episodes = collect_identification_data(
                "vdp", wp, VDP_DURATION, VDP_DT, VDP_BOX,
                seed=VDP_SEED + 101 * i, restart_every=10.0,
                input_range=VDP_INPUT_RANGE,
            )
            snaps.append(snapshots_from_episodes(episodes))
        return snaps

    return _cached("vdp_snapshots", build)


@pytest.fixture(scope="session")
def vdp_model(vdp_snapshots):
    return fit_param_varying(vdp_monomial_basis(), vdp_snapshots, truncation_tol=1e-10)


@pytest.fixture(scope="session")
def vdp_qlift(vdp_model):
    return lift_weights(np.eye(2), vdp_model.C)


@pytest.fixture(scope="session")
def vdp_gain_timed(vdp_model, vdp_qlift):
    t0 = time.perf_counter()
    gain = solve_gain(vdp_model.local_models, vdp_qlift, np.array([[0.1]]))
    return gain, time.perf_counter() - t0


@pytest.fixture(scope="session")
def vdp_gain(vdp_gain_timed):
    return vdp_gain_timed[0]


@pytest.fixture(scope="session")
def vdp_ko_model(vdp_snapshots):
    pooled = merge_snapshot_sets(vdp_snapshots, working_point=3.0)
    return fit_param_varying(vdp_monomial_basis(), [pooled], truncation_tol=1e-10)


@pytest.fixture(scope="session")
def vdp_ko_gain(vdp_ko_model):
    Q = lift_weights(np.eye(2), vdp_ko_model.C)
    return solve_gain(vdp_ko_model.local_models, Q, np.array([[0.1]]))


@pytest.fixture(scope="session")
def lorenz_snapshots():
    def build():
        snaps = []
        for i, wp in enumerate(LORENZ_WPS):
            episodes = collect_identification_data(
                "lorenz", wp, LORENZ_DURATION, LORENZ_DT, LORENZ_BOX,
                seed=LORENZ_SEED + 101 * i, restart_every=10.0, method="rk4",
            )
            snaps.append(snapshots_from_episodes(episodes))
        return snaps

    return _cached("lorenz_snapshots", build)
