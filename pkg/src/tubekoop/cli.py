"""Command-line pipeline: collect, identify, synthesize, simulate, evaluate.

Every command reads one JSON config (schema in config_schema.json next to
this module), validates it completely before touching the filesystem, and
drops a manifest listing each produced file with its content hash. Reruns
from the same config and seed are byte-identical up to the manifest
timestamp. Exit codes: 0 success, 2 config or parse error, 3 numerical
failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
import scipy

from . import __version__
from . import serialize as sz
from .edmd import RankDeficientData, merge_snapshot_sets
from .lifting import make_monomial_basis, make_thin_plate_basis
from .lpv import estimate_disturbance_set, fit_param_varying
from .mpc import (
    InitialInfeasibility,
    MpcConfig,
    NominalLiftedPlant,
    run_closed_loop,
)
from .sets import NotContractive, box_polytope, rpi_outer_approx
from .simlab import (
    Constant,
    ForecastUnavailable,
    PhysicalPlant,
    RandomWalk,
    Schedule,
    collect_identification_data,
    monte_carlo_prediction,
    snapshots_from_episodes,
    split_episodes,
)
from .synthesis import (
    QuadraticStabilityFailure,
    SolverStall,
    TubeGain,
    lift_weights,
    solve_gain,
    verify_certificate,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

NUMERICAL_ERRORS = (
    QuadraticStabilityFailure,
    SolverStall,
    NotContractive,
    InitialInfeasibility,
    ForecastUnavailable,
    RankDeficientData,
)


class ConfigError(ValueError):
    """Config rejected; the message names the offending field."""


# ---------------------------------------------------------------------------
# field-precise config access

_TYPES = {
    "number": (int, float),
    "integer": (int,),
    "string": (str,),
    "boolean": (bool,),
    "array": (list,),
    "object": (dict,),
}


def _get(cfg: dict, key: str, typ: str, where: str, *, required=True,
         default=None, enum=None):
    if not isinstance(cfg, dict):
        raise ConfigError(f"{where}: expected an object")
    if key not in cfg or cfg[key] is None:
        if required:
            raise ConfigError(f"{where}: missing field '{key}'")
        return default
    value = cfg[key]
    kinds = _TYPES[typ]
    if isinstance(value, bool) and typ != "boolean":
        raise ConfigError(f"{where}: field '{key}' must be a {typ}, got boolean")
    if not isinstance(value, kinds):
        raise ConfigError(f"{where}: field '{key}' must be a {typ}, got {type(value).__name__}")
    if enum is not None and value not in enum:
        raise ConfigError(f"{where}: field '{key}' must be one of {'|'.join(map(str, enum))}, got {value!r}")
    return value


def _box(value, where: str, rows: int | None = None) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected [[lo, hi], ...] rows of numbers") from None
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ConfigError(f"{where}: expected [[lo, hi], ...] rows, got shape {arr.shape}")
    if (arr[:, 0] > arr[:, 1]).any():
        raise ConfigError(f"{where}: every row must satisfy lo <= hi")
    if rows is not None and arr.shape[0] != rows:
        raise ConfigError(f"{where}: expected {rows} rows, got {arr.shape[0]}")
    return arr


def _matrix(value, where: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a rectangular list of number rows") from None
    if arr.ndim != 2:
        raise ConfigError(f"{where}: expected a matrix, got array of dim {arr.ndim}")
    return arr


def _positive(value, where: str, key: str) -> float:
    if value <= 0:
        raise ConfigError(f"{where}: field '{key}' must be positive, got {value}")
    return float(value)


# ---------------------------------------------------------------------------
# manifest

@dataclass
class RunManifest:
    """Provenance record for one command invocation."""

    command: str
    config_digest: str
    seeds: dict
    versions: dict = field(default_factory=lambda: {
        "tubekoop": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": ".".join(map(str, sys.version_info[:3])),
    })
    outputs: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    def add_output(self, path: str) -> None:
        with open(path, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        self.outputs.append({"path": os.path.basename(path), "sha256": digest})

    def write(self, out_dir: str) -> str:
        doc = {
            "command": self.command,
            "config_digest": self.config_digest,
            "seeds": self.seeds,
            "versions": self.versions,
            "timestamp_utc": datetime.now(timezone.utc).isoformat(),
            "outputs": self.outputs,
            "metrics": self.metrics,
        }
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w", newline="\n") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        return path


def _digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------------------
# collect

def cmd_collect(cfg: dict, out_dir: str, seed_override: int | None, threads: int) -> RunManifest:
    where = "collect config"
    plant = _get(cfg, "plant", "string", where, enum=("lorenz", "vdp"))
    wps = _get(cfg, "working_points", "array", where)
    if not wps or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in wps):
        raise ConfigError(f"{where}: field 'working_points' must be a nonempty array of numbers")
    duration = _positive(_get(cfg, "duration", "number", where), where, "duration")
    dt = _positive(_get(cfg, "dt", "number", where), where, "dt")
    n = 3 if plant == "lorenz" else 2
    domain_box = _box(_get(cfg, "domain_box", "array", where), f"{where}: domain_box", rows=n)
    seed = _get(cfg, "seed", "integer", where)
    if seed_override is not None:
        seed = seed_override
    restart_every = _get(cfg, "restart_every", "number", where, required=False, default=10.0)
    method = _get(cfg, "method", "string", where, required=False, default="euler",
                  enum=("euler", "rk4"))
    input_range = _get(cfg, "input_range", "array", where, required=False)
    if plant == "vdp":
        if input_range is None:
            raise ConfigError(f"{where}: field 'input_range' is required for the vdp plant")
        rng_arr = _box([input_range], f"{where}: input_range")[0]
        input_range = (float(rng_arr[0]), float(rng_arr[1]))
    else:
        input_range = None

    os.makedirs(out_dir, exist_ok=True)
    manifest = RunManifest("collect", "", {"base": int(seed)})
    for i, wp in enumerate(wps):
        episodes = collect_identification_data(
            plant, float(wp), duration, dt, domain_box,
            seed=int(seed) + 101 * i, restart_every=restart_every,
            input_range=input_range, method=method,
        )
        path = os.path.join(out_dir, f"snapshots_{plant}_wp{float(wp):g}.csv")
        sz.episodes_to_csv(episodes, path)
        manifest.add_output(path)
        manifest.seeds[f"wp{float(wp):g}"] = int(seed) + 101 * i
        print(f"collect: {path} ({len(episodes)} episodes)")
    return manifest


# ---------------------------------------------------------------------------
# identify

def _build_basis(spec: dict, where: str, seed_override: int | None):
    kind = _get(spec, "kind", "string", where, enum=("monomial", "thin_plate_rbf"))
    if kind == "monomial":
        table = _get(spec, "exponents", "array", where)
        try:
            return make_monomial_basis(table)
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    num = _get(spec, "num_centers", "integer", where)
    box = _box(_get(spec, "domain_box", "array", where), f"{where}: domain_box")
    seed = _get(spec, "seed", "integer", where)
    if seed_override is not None:
        seed = seed_override
    append_state = _get(spec, "append_state", "boolean", where, required=False, default=False)
    return make_thin_plate_basis(int(num), box, int(seed), append_state=append_state)


def cmd_identify(cfg: dict, out_dir: str, seed_override: int | None, threads: int) -> RunManifest:
    where = "identify config"
    paths = _get(cfg, "snapshots", "array", where)
    if not paths or not all(isinstance(p, str) for p in paths):
        raise ConfigError(f"{where}: field 'snapshots' must be a nonempty array of paths")
    basis = _build_basis(_get(cfg, "basis", "object", where), f"{where}: basis", seed_override)
    truncation_tol = _get(cfg, "truncation_tol", "number", where, required=False, default=1e-10)
    validation = _get(cfg, "validation", "object", where, required=False,
                      default={"fraction": 0.2, "inflation": 1.1})
    if validation is not None:
        frac = _get(validation, "fraction", "number", f"{where}: validation")
        inflation = _get(validation, "inflation", "number", f"{where}: validation")
        if not 0.0 < frac < 1.0:
            raise ConfigError(f"{where}: validation.fraction must lie in (0, 1)")

    per_point = []
    for path in paths:
        episodes = sz.episodes_from_csv(path)
        wp = episodes[0].working_point
        if any(ep.working_point != wp for ep in episodes):
            raise sz.FormatError(f"{path}: mixes working points; one file per point")
        per_point.append((wp, episodes))
    per_point.sort(key=lambda pair: pair[0])

    train_sets, val_sets = [], []
    for wp, episodes in per_point:
        if validation is None:
            train_sets.append(snapshots_from_episodes(episodes))
        else:
            train, held = split_episodes(episodes, validation_fraction=frac)
            train_sets.append(snapshots_from_episodes(train))
            val_sets.append(snapshots_from_episodes(held))

    model = fit_param_varying(basis, train_sets, truncation_tol=truncation_tol)
    if validation is not None:
        estimate_disturbance_set(model, val_sets, inflation=inflation)

    os.makedirs(out_dir, exist_ok=True)
    model_path = os.path.join(out_dir, "model.json")
    sz.save_model(model, model_path)
    manifest = RunManifest("identify", "", {})
    manifest.add_output(model_path)
    for wp, res in sorted(model.fit_report["residuals"].items()):
        print(f"identify: wp={wp:g} one-step relative residual {res:.3e}")
    if model.disturbance is not None:
        radii = np.abs(model.disturbance.generators).sum(axis=1)
        print(f"identify: disturbance box radius max {radii.max():.3e}")
        manifest.metrics["disturbance_radius_max"] = float(radii.max())
    manifest.metrics["residuals"] = {f"{wp:g}": v for wp, v in model.fit_report["residuals"].items()}
    print(f"identify: {model_path}")
    return manifest


# ---------------------------------------------------------------------------
# synthesize

def cmd_synthesize(cfg: dict, out_dir: str, seed_override: int | None, threads: int) -> RunManifest:
    where = "synthesize config"
    model_path = _get(cfg, "model", "string", where)
    model = sz.load_model(model_path)

    if "Q_lift" in cfg and "Q" in cfg:
        raise ConfigError(f"{where}: give either 'Q' (physical) or 'Q_lift', not both")
    if "Q_lift" in cfg:
        Q_lift = _matrix(_get(cfg, "Q_lift", "array", where), f"{where}: Q_lift")
    else:
        Qx = _matrix(_get(cfg, "Q", "array", where), f"{where}: Q")
        if Qx.shape[0] != model.state_dim:
            raise ConfigError(f"{where}: Q must be {model.state_dim}x{model.state_dim} "
                              f"for this model, got {Qx.shape[0]}x{Qx.shape[1]}")
        Q_lift = lift_weights(Qx, model.C)
    R = _matrix(_get(cfg, "R", "array", where), f"{where}: R")
    objective = _get(cfg, "objective", "string", where, required=False,
                     default="trace_s", enum=("trace_s", "trace_p"))

    supplied = _get(cfg, "supplied_gain", "object", where, required=False)
    tube_cfg = _get(cfg, "tube", "object", where, required=False, default={"mode": "zero"})
    tube_mode = _get(tube_cfg, "mode", "string", f"{where}: tube", enum=("zero", "rpi"))
    mpc_cfg = _get(cfg, "mpc", "object", where)
    horizon = _get(mpc_cfg, "horizon", "integer", f"{where}: mpc")
    if horizon < 1:
        raise ConfigError(f"{where}: mpc.horizon must be at least 1")
    state_box = _box(_get(mpc_cfg, "state_box", "array", f"{where}: mpc"),
                     f"{where}: mpc.state_box", rows=model.state_dim)
    input_box = _box(_get(mpc_cfg, "input_box", "array", f"{where}: mpc"),
                     f"{where}: mpc.input_box", rows=model.input_dim)
    terminal_mode = _get(mpc_cfg, "terminal_mode", "string", f"{where}: mpc",
                         required=False, default="equality_to_origin",
                         enum=("equality_to_origin", "tightened_state_set"))

    if supplied is not None:
        K = _matrix(_get(supplied, "K", "array", f"{where}: supplied_gain"),
                    f"{where}: supplied_gain.K")
        P = _matrix(_get(supplied, "P", "array", f"{where}: supplied_gain"),
                    f"{where}: supplied_gain.P")
        margins = verify_certificate(model.local_models, K, P, Q_lift, R)
        gain = TubeGain(K=K, P=P, margins=margins, objective="supplied",
                        info={"recovery": "supplied", "certificate": "verified"})
        print(f"synthesize: supplied gain verified, worst margin {margins.max():.3e}")
    else:
        gain = solve_gain(model.local_models, Q_lift, R, objective=objective)
        print(f"synthesize: solved gain, worst margin {gain.margins.max():.3e}")

    if tube_mode == "rpi":
        if model.disturbance is None:
            raise ConfigError(f"{where}: tube.mode 'rpi' needs a model with an estimated "
                              "disturbance set (identify with validation enabled)")
        epsilon = _get(tube_cfg, "epsilon", "number", f"{where}: tube",
                       required=False, default=1e-4)
        max_depth = _get(tube_cfg, "max_depth", "integer", f"{where}: tube",
                         required=False, default=50)
        maps = [lm.A + lm.B @ gain.K for lm in model.local_models]
        rpi = rpi_outer_approx(maps, model.disturbance, epsilon=epsilon, max_depth=max_depth)
        gain.rpi_set = rpi.outer
        radius = float((np.abs(rpi.outer.center) + np.abs(rpi.outer.generators).sum(axis=1)).max())
        print(f"synthesize: rpi tube radius {radius:.3e} (depth {rpi.depth}, "
              f"contraction {rpi.contraction:.3f})")
    else:
        radius = 0.0
        print("synthesize: zero tube (exact constraints)")

    mpc = MpcConfig(
        N=int(horizon),
        Q_lift=Q_lift,
        R=R,
        state_set=box_polytope(state_box[:, 0], state_box[:, 1]),
        input_set=box_polytope(input_box[:, 0], input_box[:, 1]),
        gain=gain,
        model=model,
        terminal_mode=terminal_mode,
    )

    os.makedirs(out_dir, exist_ok=True)
    controller_path = os.path.join(out_dir, "controller.json")
    # reference the model relative to the bundle so the output tree relocates
    model_ref = os.path.relpath(os.path.abspath(model_path), os.path.abspath(out_dir))
    sz.save_controller(mpc, model_ref, controller_path)
    manifest = RunManifest("synthesize", "", {})
    manifest.add_output(controller_path)
    manifest.metrics = {
        "worst_margin": float(gain.margins.max()),
        "rpi_radius": radius,
    }
    print(f"synthesize: {controller_path}")
    return manifest


# ---------------------------------------------------------------------------
# simulate

def _build_signal(spec: dict, where: str, seed_override: int | None):
    kind = _get(spec, "kind", "string", where, enum=("constant", "random_walk", "schedule"))
    if kind == "constant":
        return Constant(float(_get(spec, "value", "number", where)))
    if kind == "random_walk":
        seed = _get(spec, "seed", "integer", where)
        if seed_override is not None:
            seed = seed_override
        bounds = _get(spec, "bounds", "array", where)
        bounds_arr = _box([bounds], f"{where}: bounds")[0]
        start = _get(spec, "start", "number", where, required=False)
        try:
            return RandomWalk(
                seed=int(seed),
                step_bound=float(_get(spec, "step_bound", "number", where)),
                bounds=(float(bounds_arr[0]), float(bounds_arr[1])),
                start=None if start is None else float(start),
            )
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    times = _get(spec, "times", "array", where)
    values = _get(spec, "values", "array", where)
    end_time = _get(spec, "end_time", "number", where, required=False)
    try:
        return Schedule(np.asarray(times, dtype=float), np.asarray(values, dtype=float),
                        end_time=end_time)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _write_plot_script(path: str, csv_name: str, n: int, m: int) -> None:
    stage_col = n + m + 3
    state_lines = ", ".join(
        f"'{csv_name}' using 1:{1 + i} with lines title 'x{i}'" for i in range(1, n + 1)
    )
    input_lines = ", ".join(
        f"'{csv_name}' using 1:{1 + n + j} with lines title 'u{j}'" for j in range(1, m + 1)
    )
    script = f"""# four-panel closed-loop summary; run: gnuplot {os.path.basename(path)}
set terminal pngcairo size 1200,800
set output 'trajectory.png'
set datafile separator ','
set key autotitle columnhead
set multiplot layout 2,2
set xlabel 't [s]'
set title 'states'
plot {state_lines}
set title 'scheduling parameter'
plot '{csv_name}' using 1:{n + m + 2} with lines title 'p'
set title 'inputs'
plot {input_lines}
set title 'cumulative cost'
cum = 0
plot '{csv_name}' using 1:(cum = cum + column({stage_col}), cum) with lines title 'J_c'
unset multiplot
"""
    with open(path, "w", newline="\n") as fh:
        fh.write(script)


def cmd_simulate(cfg: dict, out_dir: str, seed_override: int | None, threads: int) -> RunManifest:
    where = "simulate config"
    controller_path = _get(cfg, "controller", "string", where)
    mpc = sz.load_controller(controller_path)

    plant_cfg = _get(cfg, "plant", "object", where)
    plant_kind = _get(plant_cfg, "kind", "string", f"{where}: plant", enum=("vdp", "nominal"))
    plant_dt = _positive(_get(plant_cfg, "dt", "number", f"{where}: plant"),
                         f"{where}: plant", "dt")
    if plant_kind == "nominal":
        plant = NominalLiftedPlant(mpc.model, plant_dt)
    else:
        method = _get(plant_cfg, "method", "string", f"{where}: plant",
                      required=False, default="euler", enum=("euler", "rk4"))
        plant = PhysicalPlant(plant_kind, plant_dt, method=method)

    x0 = _get(cfg, "x0", "array", where)
    x0_arr = np.asarray(x0, dtype=float).ravel()
    if x0_arr.size != mpc.model.state_dim:
        raise ConfigError(f"{where}: x0 must have {mpc.model.state_dim} entries, got {x0_arr.size}")
    steps = _get(cfg, "steps", "integer", where)
    if steps < 1:
        raise ConfigError(f"{where}: field 'steps' must be at least 1")
    signal = _build_signal(_get(cfg, "parameter", "object", where),
                           f"{where}: parameter", seed_override)
    stage_weight = _get(cfg, "stage_weight", "array", where, required=False)
    if stage_weight is not None:
        stage_weight = _matrix(stage_weight, f"{where}: stage_weight")
        if stage_weight.shape != (mpc.model.state_dim,) * 2:
            raise ConfigError(f"{where}: stage_weight must be "
                              f"{mpc.model.state_dim}x{mpc.model.state_dim}")

    result = run_closed_loop(mpc, plant, x0_arr, signal, int(steps),
                             stage_weight_x=stage_weight)

    os.makedirs(out_dir, exist_ok=True)
    traj_path = os.path.join(out_dir, "trajectory.csv")
    sz.trajectory_to_csv(result, traj_path)
    plot_path = os.path.join(out_dir, "plot.gp")
    _write_plot_script(plot_path, os.path.basename(traj_path),
                       result.states.shape[1], result.inputs.shape[1])

    manifest = RunManifest("simulate", "", {})
    manifest.add_output(traj_path)
    manifest.add_output(plot_path)
    final_cost = float(result.stage_costs.sum())
    manifest.metrics = {
        "final_cost": final_cost,
        "mean_solve_time_s": float(result.solve_times.mean()),
        "feasibility_violations": int(result.feasibility_violations),
        "lyapunov_violations": int(result.lyapunov_violations),
        "clipped_steps": int(result.clipped.sum()),
    }
    print(f"simulate: {steps} steps, final cost {final_cost:.1f}, "
          f"feasibility violations {result.feasibility_violations}, "
          f"mean solve {result.solve_times.mean() * 1e3:.1f} ms")
    print(f"simulate: {traj_path}")
    return manifest


# ---------------------------------------------------------------------------
# evaluate

def cmd_evaluate(cfg: dict, out_dir: str, seed_override: int | None, threads: int) -> RunManifest:
    where = "evaluate config"
    mode = _get(cfg, "mode", "string", where, enum=("rmse-mc", "cost-table"))
    if mode == "rmse-mc":
        return _evaluate_rmse_mc(cfg, out_dir, seed_override, threads)
    return _evaluate_cost_table(cfg, out_dir)


def _evaluate_rmse_mc(cfg: dict, out_dir: str, seed_override: int | None,
                      threads: int) -> RunManifest:
    where = "evaluate config (rmse-mc)"
    wps = _get(cfg, "working_points", "array", where)
    duration = _positive(_get(cfg, "duration", "number", where), where, "duration")
    dt = _positive(_get(cfg, "dt", "number", where), where, "dt")
    domain_box = _box(_get(cfg, "domain_box", "array", where), f"{where}: domain_box", rows=3)
    seed = _get(cfg, "seed", "integer", where)
    if seed_override is not None:
        seed = seed_override
    trial_seed = _get(cfg, "trial_seed", "integer", where, required=False, default=int(seed) + 7)
    basis_seed = _get(cfg, "basis_seed", "integer", where, required=False, default=int(seed) + 13)
    trials = _get(cfg, "trials", "integer", where)
    horizon_steps = _get(cfg, "horizon_steps", "integer", where)
    orders = _get(cfg, "orders", "array", where)
    if not orders or not all(isinstance(v, int) and not isinstance(v, bool) and v > 0
                             for v in orders):
        raise ConfigError(f"{where}: field 'orders' must be a nonempty array of positive integers")
    init_box = _box(_get(cfg, "init_box", "array", where), f"{where}: init_box", rows=3)
    append_state = _get(cfg, "append_state", "boolean", where, required=False, default=False)
    signal_kwargs = _get(cfg, "signal", "object", where, required=False, default={})
    restart_every = _get(cfg, "restart_every", "number", where, required=False, default=10.0)
    truncation_tol = _get(cfg, "truncation_tol", "number", where, required=False, default=1e-10)

    snaps = []
    for i, wp in enumerate(sorted(float(v) for v in wps)):
        episodes = collect_identification_data(
            "lorenz", wp, duration, dt, domain_box,
            seed=int(seed) + 101 * i, restart_every=restart_every, method="rk4",
        )
        snaps.append(snapshots_from_episodes(episodes))
    pooled = merge_snapshot_sets(snaps)

    rows = []
    for order in orders:
        basis = make_thin_plate_basis(int(order), domain_box, int(basis_seed) + int(order),
                                      append_state=append_state)
        pvko = fit_param_varying(basis, snaps, truncation_tol=truncation_tol)
        ko = fit_param_varying(basis, [pooled], truncation_tol=truncation_tol)
        stats = monte_carlo_prediction(
            {"pvko": pvko, "ko": ko}, int(trials), int(horizon_steps), dt,
            init_box, seed=int(trial_seed), signal_kwargs=signal_kwargs, threads=threads,
        )
        rows.append((int(order), stats["pvko"]["mean"], stats["pvko"]["std"],
                     stats["ko"]["mean"], stats["ko"]["std"]))
        print(f"evaluate: order {order}: pvko {rows[-1][1]:.2f}% +- {rows[-1][2]:.2f}, "
              f"ko {rows[-1][3]:.2f}% +- {rows[-1][4]:.2f}")

    os.makedirs(out_dir, exist_ok=True)
    results_path = os.path.join(out_dir, "results.csv")
    with open(results_path, "w", newline="\n") as fh:
        fh.write("order,pvko_mean,pvko_std,ko_mean,ko_std\n")
        for row in rows:
            fh.write(",".join([str(row[0])] + [repr(float(v)) for v in row[1:]]) + "\n")

    manifest = RunManifest("evaluate", "", {"collect": int(seed), "trials": int(trial_seed)})
    manifest.add_output(results_path)
    print(f"evaluate: {results_path}")
    return manifest


def _evaluate_cost_table(cfg: dict, out_dir: str) -> RunManifest:
    where = "evaluate config (cost-table)"
    entries = _get(cfg, "trajectories", "array", where)
    if not entries:
        raise ConfigError(f"{where}: field 'trajectories' must be a nonempty array")
    reference = _get(cfg, "reference", "string", where)

    labels, costs, solve_ms = [], [], []
    for i, entry in enumerate(entries):
        tag = f"{where}: trajectories[{i}]"
        label = _get(entry, "label", "string", tag)
        traj_path = _get(entry, "trajectory", "string", tag)
        columns = sz.trajectory_from_csv(traj_path)
        cost = float(np.sum(columns["stageCost"]))
        manifest_path = _get(entry, "manifest", "string", tag, required=False)
        mean_ms = float("nan")
        if manifest_path is not None:
            with open(manifest_path) as fh:
                try:
                    doc = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise sz.FormatError(f"{manifest_path}: invalid JSON: {exc}") from None
            mean_ms = 1e3 * float(doc.get("metrics", {}).get("mean_solve_time_s", float("nan")))
        labels.append(label)
        costs.append(cost)
        solve_ms.append(mean_ms)
    if reference not in labels:
        raise ConfigError(f"{where}: reference '{reference}' is not one of the trajectory labels")
    ref_cost = costs[labels.index(reference)]

    os.makedirs(out_dir, exist_ok=True)
    results_path = os.path.join(out_dir, "results.csv")
    with open(results_path, "w", newline="\n") as fh:
        fh.write("label,final_cost,mean_solve_time_ms,cost_ratio_pct\n")
        for label, cost, ms in zip(labels, costs, solve_ms):
            ratio = 100.0 * (cost - ref_cost) / ref_cost
            fh.write(f"{label},{repr(cost)},{repr(ms)},{repr(ratio)}\n")
            print(f"evaluate: {label}: J_c {cost:.1f}, solve {ms:.1f} ms, "
                  f"ratio {ratio:+.2f}% vs {reference}")

    manifest = RunManifest("evaluate", "", {})
    manifest.add_output(results_path)
    print(f"evaluate: {results_path}")
    return manifest


# ---------------------------------------------------------------------------
# entry point

COMMANDS = {
    "collect": cmd_collect,
    "identify": cmd_identify,
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tubekoop",
        description="parameter-varying Koopman identification and tube MPC pipeline",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to the command's JSON config")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config's primary seed")
    parser.add_argument("--out", default=".", help="output directory (default: cwd)")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for Monte Carlo trials")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        try:
            with open(args.config, "rb") as fh:
                raw = fh.read()
        except OSError as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return EXIT_IO
        try:
            cfg = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            print(f"error: {args.config}: invalid JSON: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if not isinstance(cfg, dict):
            print(f"error: {args.config}: config must be a JSON object", file=sys.stderr)
            return EXIT_CONFIG
        manifest = COMMANDS[args.command](cfg, args.out, args.seed, max(1, args.threads))
        manifest.config_digest = _digest_bytes(raw)
        manifest_path = manifest.write(args.out)
        print(f"{args.command}: {manifest_path}")
        return EXIT_OK
    except (ConfigError, sz.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
