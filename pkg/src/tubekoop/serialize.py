"""File formats: model and controller JSON, snapshot and trajectory CSV.

Matrices are stored row-major as flat arrays with explicit shape so a reader
in any language can rebuild them without guessing. Snapshot logs keep the
column layout t, x1..xn, u1..um, p with episodes separated by a blank line;
pairing across that separator would mix trajectories from different initial
states, so readers must respect it. All floats round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .lifting import Monomial, ThinPlateRbf
from .lpv import LocalModel, ParamVaryingKoopman
from .mpc import MpcConfig
from .sets import HPolytope, Zonotope
from .simlab import EpisodeLog
from .synthesis import TubeGain

MODEL_FORMAT = "pvko-model"
CONTROLLER_FORMAT = "tube-controller"

TRAJECTORY_FIELDS = ("stageCost", "Jstar", "qpStatus", "qpIterations", "clippedFlag")


class FormatError(ValueError):
    """A document failed structural validation; the message names the spot."""


def _fmt(v) -> str:
    # repr of a python float is the shortest exact decimal form
    return repr(float(v))


def _mat_to_obj(M, dtype=float) -> dict:
    M = np.atleast_2d(np.asarray(M))
    data = M.ravel(order="C")
    if dtype is int:
        values = [int(v) for v in data]
    else:
        values = [float(v) for v in data]
    return {"rows": int(M.shape[0]), "cols": int(M.shape[1]), "data": values}


def _mat_from_obj(obj, name: str, dtype=float) -> np.ndarray:
    if not isinstance(obj, dict):
        raise FormatError(f"{name}: expected a matrix object, got {type(obj).__name__}")
    for key in ("rows", "cols", "data"):
        if key not in obj:
            raise FormatError(f"{name}: missing matrix key '{key}'")
    rows, cols, data = obj["rows"], obj["cols"], obj["data"]
    if not isinstance(rows, int) or not isinstance(cols, int) or rows < 0 or cols < 0:
        raise FormatError(f"{name}: rows/cols must be nonnegative integers")
    if not isinstance(data, list) or len(data) != rows * cols:
        raise FormatError(f"{name}: expected {rows * cols} entries, got "
                          f"{len(data) if isinstance(data, list) else type(data).__name__}")
    arr = np.asarray(data, dtype=dtype)
    return arr.reshape(rows, cols)


def _vec(v) -> list:
    return [float(x) for x in np.asarray(v, dtype=float).ravel()]


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise FormatError(f"{where}: missing key '{key}'")
    return doc[key]


def _sanitize(obj):
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_sanitize(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


# ---------------------------------------------------------------------------
# sets

def zonotope_to_obj(z: Zonotope) -> dict:
    return {"center": _vec(z.center), "generators": _mat_to_obj(z.generators)}


def zonotope_from_obj(obj, name: str) -> Zonotope:
    center = _require(obj, "center", name)
    G = _mat_from_obj(_require(obj, "generators", name), f"{name}.generators")
    return Zonotope(center=np.asarray(center, dtype=float), generators=G)


def polytope_to_obj(s: HPolytope) -> dict:
    return {"halfspaces": _mat_to_obj(s.A), "offsets": _vec(s.b)}


def polytope_from_obj(obj, name: str) -> HPolytope:
    A = _mat_from_obj(_require(obj, "halfspaces", name), f"{name}.halfspaces")
    b = np.asarray(_require(obj, "offsets", name), dtype=float)
    if b.size != A.shape[0]:
        raise FormatError(f"{name}: {A.shape[0]} halfspace rows but {b.size} offsets")
    return HPolytope(A=A, b=b)


# ---------------------------------------------------------------------------
# lifting dictionaries

def basis_to_obj(basis) -> dict:
    if isinstance(basis, Monomial):
        return {
            "kind": "monomial",
            "dim": basis.dim,
            "state_dim": basis.state_dim,
            "exponents": _mat_to_obj(basis.exponents, dtype=int),
        }
    if isinstance(basis, ThinPlateRbf):
        return {
            "kind": "thin_plate_rbf",
            "dim": basis.dim,
            "state_dim": basis.state_dim,
            "append_state": bool(basis.append_state),
            "seed": None if basis.seed is None else int(basis.seed),
            "centers": _mat_to_obj(basis.centers),
            "domain_box": None if basis.domain_box is None else _mat_to_obj(basis.domain_box),
        }
    raise TypeError(f"unknown basis type {type(basis).__name__}")


def basis_from_obj(obj, name: str = "basis"):
    kind = _require(obj, "kind", name)
    if kind == "monomial":
        expo = _mat_from_obj(_require(obj, "exponents", name), f"{name}.exponents", dtype=int)
        basis = Monomial(exponents=expo)
    elif kind == "thin_plate_rbf":
        centers = _mat_from_obj(_require(obj, "centers", name), f"{name}.centers")
        box = obj.get("domain_box")
        basis = ThinPlateRbf(
            centers=centers,
            append_state=bool(obj.get("append_state", False)),
            seed=obj.get("seed"),
            domain_box=None if box is None else _mat_from_obj(box, f"{name}.domain_box"),
        )
    else:
        raise FormatError(f"{name}: unknown kind '{kind}'")
    for key in ("dim", "state_dim"):
        if key in obj and obj[key] != getattr(basis, key):
            raise FormatError(f"{name}: declared {key}={obj[key]} but data gives {getattr(basis, key)}")
    return basis


# ---------------------------------------------------------------------------
# models

def model_to_obj(model: ParamVaryingKoopman) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": 1,
        "basis": basis_to_obj(model.basis),
        "working_points": [float(lm.working_point) for lm in model.local_models],
        "local_models": [
            {"working_point": float(lm.working_point), "A": _mat_to_obj(lm.A), "B": _mat_to_obj(lm.B)}
            for lm in model.local_models
        ],
        "C": _mat_to_obj(model.C),
        "disturbance": None if model.disturbance is None else zonotope_to_obj(model.disturbance),
        "fit_report": _sanitize(model.fit_report),
    }


def model_from_obj(doc: dict, where: str = "model file") -> ParamVaryingKoopman:
    if _require(doc, "format", where) != MODEL_FORMAT:
        raise FormatError(f"{where}: format is '{doc['format']}', expected '{MODEL_FORMAT}'")
    basis = basis_from_obj(_require(doc, "basis", where), f"{where}.basis")
    raw_models = _require(doc, "local_models", where)
    if not isinstance(raw_models, list) or not raw_models:
        raise FormatError(f"{where}: local_models must be a nonempty list")
    local_models = []
    for i, lm in enumerate(raw_models):
        tag = f"{where}.local_models[{i}]"
        local_models.append(
            LocalModel(
                working_point=float(_require(lm, "working_point", tag)),
                A=_mat_from_obj(_require(lm, "A", tag), f"{tag}.A"),
                B=_mat_from_obj(_require(lm, "B", tag), f"{tag}.B"),
            )
        )
    C = _mat_from_obj(_require(doc, "C", where), f"{where}.C")
    dist = doc.get("disturbance")
    model = ParamVaryingKoopman(
        local_models=local_models,
        C=C,
        basis=basis,
        disturbance=None if dist is None else zonotope_from_obj(dist, f"{where}.disturbance"),
        fit_report=doc.get("fit_report", {}),
    )
    return model


def save_model(model: ParamVaryingKoopman, path: str) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(model_to_obj(model), fh, indent=2)
        fh.write("\n")


def load_model(path: str) -> ParamVaryingKoopman:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON: {exc}") from None
    return model_from_obj(doc, where=path)


# ---------------------------------------------------------------------------
# gains and controller bundles

def gain_to_obj(gain: TubeGain) -> dict:
    return {
        "K": _mat_to_obj(gain.K),
        "P": _mat_to_obj(gain.P),
        "margins": _vec(gain.margins),
        "objective": gain.objective,
        "rpi_set": None if gain.rpi_set is None else zonotope_to_obj(gain.rpi_set),
        "solver": _sanitize(gain.info),
    }


def gain_from_obj(obj, name: str = "gain") -> TubeGain:
    rpi = obj.get("rpi_set")
    return TubeGain(
        K=_mat_from_obj(_require(obj, "K", name), f"{name}.K"),
        P=_mat_from_obj(_require(obj, "P", name), f"{name}.P"),
        margins=np.asarray(_require(obj, "margins", name), dtype=float),
        objective=obj.get("objective", "trace_s"),
        rpi_set=None if rpi is None else zonotope_from_obj(rpi, f"{name}.rpi_set"),
        info=obj.get("solver", {}),
    )


def controller_to_obj(cfg: MpcConfig, model_ref: str) -> dict:
    return {
        "format": CONTROLLER_FORMAT,
        "version": 1,
        "horizon": int(cfg.N),
        "Q_lift": _mat_to_obj(cfg.Q_lift),
        "R": _mat_to_obj(cfg.R),
        "P_term": _mat_to_obj(cfg.P_term),
        "terminal_mode": cfg.terminal_mode,
        "state_set": polytope_to_obj(cfg.state_set),
        "input_set": polytope_to_obj(cfg.input_set),
        "gain": gain_to_obj(cfg.gain),
        "model": model_ref,
    }


def save_controller(cfg: MpcConfig, model_ref: str, path: str) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(controller_to_obj(cfg, model_ref), fh, indent=2)
        fh.write("\n")


def load_controller(path: str, model: ParamVaryingKoopman | None = None) -> MpcConfig:
    """Rebuild the MpcConfig; the referenced model file is resolved relative
    to the controller file unless a model object is supplied."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON: {exc}") from None
    where = path
    if _require(doc, "format", where) != CONTROLLER_FORMAT:
        raise FormatError(f"{where}: format is '{doc['format']}', expected '{CONTROLLER_FORMAT}'")
    if model is None:
        ref = _require(doc, "model", where)
        model_path = ref if os.path.isabs(ref) else os.path.join(os.path.dirname(path) or ".", ref)
        model = load_model(model_path)
    return MpcConfig(
        N=int(_require(doc, "horizon", where)),
        Q_lift=_mat_from_obj(_require(doc, "Q_lift", where), f"{where}.Q_lift"),
        R=_mat_from_obj(_require(doc, "R", where), f"{where}.R"),
        state_set=polytope_from_obj(_require(doc, "state_set", where), f"{where}.state_set"),
        input_set=polytope_from_obj(_require(doc, "input_set", where), f"{where}.input_set"),
        gain=gain_from_obj(_require(doc, "gain", where), f"{where}.gain"),
        model=model,
        P_term=_mat_from_obj(_require(doc, "P_term", where), f"{where}.P_term"),
        terminal_mode=_require(doc, "terminal_mode", where),
    )


# ---------------------------------------------------------------------------
# snapshot CSV

def episodes_to_csv(episodes: list[EpisodeLog], path: str) -> None:
    """One row per time step (t, x, u, p); a blank line separates episodes."""
    if not episodes:
        raise ValueError("no episodes given")
    n = episodes[0].states.shape[1]
    m = episodes[0].inputs.shape[1]
    header = (["t"] + [f"x{i+1}" for i in range(n)]
              + [f"u{j+1}" for j in range(m)] + ["p"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for k, ep in enumerate(episodes):
            if k > 0:
                fh.write("\n")
            for t, x, u in zip(ep.times, ep.states, ep.inputs):
                writer.writerow([_fmt(t)] + [_fmt(v) for v in x]
                                + [_fmt(v) for v in u] + [_fmt(ep.working_point)])


def episodes_from_csv(path: str) -> list[EpisodeLog]:
    """Rebuild episode logs; the sampling interval is recovered from the time
    column and snapped to 12 significant digits so episodes share one dt."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = rows[0]
    if not header or header[0] != "t" or header[-1] != "p":
        raise FormatError(f"{path} line 1: header must run t, x1..xn, u1..um, p")
    n = sum(1 for name in header if name.startswith("x"))
    m = sum(1 for name in header if name.startswith("u"))
    expected = [f"x{i+1}" for i in range(n)] + [f"u{j+1}" for j in range(m)]
    if header != ["t"] + expected + ["p"]:
        raise FormatError(f"{path} line 1: malformed header {header}")
    width = len(header)

    episodes: list[EpisodeLog] = []
    block: list[list[float]] = []

    def flush(line_no: int):
        if not block:
            return
        arr = np.asarray(block, dtype=float)
        times = arr[:, 0]
        p_col = arr[:, -1]
        if not np.all(p_col == p_col[0]):
            raise FormatError(f"{path}: episode ending at line {line_no} mixes working points")
        if len(times) < 2:
            raise FormatError(f"{path}: episode ending at line {line_no} has fewer than 2 rows")
        steps = np.diff(times)
        dt = float(f"{np.median(steps):.12g}")
        if dt <= 0 or not np.allclose(steps, dt, rtol=0, atol=1e-9 * max(1.0, abs(dt))):
            raise FormatError(f"{path}: episode ending at line {line_no} is not uniformly sampled")
        episodes.append(
            EpisodeLog(
                times=times,
                states=arr[:, 1:1 + n],
                inputs=arr[:, 1 + n:1 + n + m],
                working_point=float(p_col[0]),
                dt=float(dt),
            )
        )
        block.clear()

    for line_no, row in enumerate(rows[1:], start=2):
        if not row:
            flush(line_no)
            continue
        if len(row) != width:
            raise FormatError(f"{path} line {line_no}: expected {width} fields, got {len(row)}")
        try:
            block.append([float(v) for v in row])
        except ValueError as exc:
            raise FormatError(f"{path} line {line_no}: {exc}") from None
    flush(len(rows) + 1)
    if not episodes:
        raise FormatError(f"{path}: no data rows")
    return episodes


# ---------------------------------------------------------------------------
# trajectory CSV

def trajectory_to_csv(result, path: str) -> None:
    """One row per control step; the state column holds the pre-step state."""
    T = result.inputs.shape[0]
    n = result.states.shape[1]
    m = result.inputs.shape[1]
    header = (["t"] + [f"x{i+1}" for i in range(n)] + [f"u{j+1}" for j in range(m)]
              + ["p"] + list(TRAJECTORY_FIELDS))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t in range(T):
            writer.writerow(
                [_fmt(result.times[t])]
                + [_fmt(v) for v in result.states[t]]
                + [_fmt(v) for v in result.inputs[t]]
                + [_fmt(result.params[t]), _fmt(result.stage_costs[t]), _fmt(result.objectives[t]),
                   result.qp_statuses[t], str(int(result.qp_iterations[t])),
                   str(int(result.clipped[t]))]
            )


def trajectory_from_csv(path: str) -> dict:
    """Columns back as arrays keyed by header name (qpStatus stays a list)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        for field in ("t", "p") + TRAJECTORY_FIELDS:
            if field not in header:
                raise FormatError(f"{path} line 1: missing column '{field}'")
        columns: dict[str, list] = {name: [] for name in header}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path} line {line_no}: expected {len(header)} fields, got {len(row)}")
            for name, value in zip(header, row):
                columns[name].append(value)
    out: dict[str, object] = {}
    for name, values in columns.items():
        if name == "qpStatus":
            out[name] = values
        elif name in ("qpIterations", "clippedFlag"):
            out[name] = np.asarray(values, dtype=int)
        else:
            out[name] = np.asarray(values, dtype=float)
    return out
