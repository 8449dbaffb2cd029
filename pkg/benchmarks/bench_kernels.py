"""Timing comparison of the jitted kernels against the pure-numpy fallback.

The package picks the path at import time from TUBEKOOP_DISABLE_NUMBA, so
this script runs each side in a subprocess and reports wall-clock medians.
Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, os, time
import numpy as np

from tubekoop import _kernels as k

rng = np.random.default_rng(0)

def median_time(fn, repeat):
    fn()  # warm (jit compilation or first-touch)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))

x0 = np.array([1.0, 1.0, 25.0])
p_lorenz = rng.uniform(20, 30, size=100_000)
u_vdp = rng.uniform(-3, 3, size=100_000)
p_vdp = rng.uniform(1, 5, size=100_000)
X = rng.uniform(-3, 3, size=(20_000, 3))
centers = rng.uniform(-3, 3, size=(50, 3))
expo = np.array([[1,0,0],[0,1,0],[0,0,1],[2,0,0],[0,2,0],[0,0,2],[1,1,0],[0,1,1],[1,0,1]],
                dtype=np.int64)

# feature kernels: measure the path lift_batch actually dispatches to on
# this side (jitted loops with numba, vectorized numpy without)
if k.NUMBA_ENABLED:
    thin_plate = lambda: k.thin_plate_features_loop(X, centers)
    monomial = lambda: k.monomial_features_loop(X, expo)
else:
    thin_plate = lambda: k.thin_plate_features_numpy(X, centers)
    monomial = lambda: k.monomial_features_numpy(X, expo)

repeat = int(os.environ["BENCH_REPEAT"])
results = {
    "numba_enabled": k.NUMBA_ENABLED,
    "lorenz_rollout_100k": median_time(lambda: k.lorenz_rollout(x0, p_lorenz, 0.01), repeat),
    "vdp_rollout_100k": median_time(
        lambda: k.vdp_rollout_euler(x0[:2], u_vdp, p_vdp, 0.01), repeat),
    "thin_plate_20k_x_50": median_time(thin_plate, repeat),
    "monomial_20k_x_9": median_time(monomial, repeat),
}
print(json.dumps(results))
"""


def run_side(disable: bool, repeat: int) -> dict:
    env = dict(os.environ)
    env["TUBEKOOP_DISABLE_NUMBA"] = "1" if disable else "0"
    env["BENCH_REPEAT"] = str(repeat)
    out = subprocess.run([sys.executable, "-c", WORKER], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    jit = run_side(disable=False, repeat=args.repeat)
    plain = run_side(disable=True, repeat=args.repeat)
    if not jit.pop("numba_enabled"):
        print("note: numba unavailable; both columns run the python/numpy path")
    plain.pop("numba_enabled")

    width = max(len(name) for name in jit)
    print(f"{'kernel':<{width}}  {'jitted':>10}  {'fallback':>10}  speedup")
    for name in jit:
        a, b = jit[name], plain[name]
        print(f"{name:<{width}}  {a * 1e3:>8.2f}ms  {b * 1e3:>8.2f}ms  {b / a:>6.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
