"""Checkpoint, trajectory, report, and mesh persistence.

Checkpoints are human-diffable JSON; floats are serialized with repr so a
resume reproduces the interrupted run bitwise.  Trajectories are CSV with a
header row; meshes are Wavefront OBJ.
"""
import csv
import json
import os

import numpy as np

from .errors import CheckpointError
from .flow import FlowState, TrajectoryRecord
from .grid import HemisphereGrid
from .surface import GraphState

CHECKPOINT_FORMAT = "capflow-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, state: FlowState, config, config_hash=None):
    grid = config.grid
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash or config.config_hash(),
        "n": config.n,
        "theta": config.theta,
        "mode": config.mode,
        "scheme": config.scheme,
        "grid": {"mode": grid.mode, "n_beta": grid.n_beta, "n_xi": grid.n_xi},
        "t": state.graph.t,
        "step_index": state.step_index,
        "dt_last": state.dt_last,
        "u": [float(x) for x in np.asarray(state.graph.u).reshape(-1)],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def _require(payload, field, types, path):
    if field not in payload:
        raise CheckpointError(f"checkpoint {path}: missing field '{field}'")
    val = payload[field]
    if not isinstance(val, types):
        raise CheckpointError(
            f"checkpoint {path}: field '{field}' has invalid type {type(val).__name__}")
    return val


def load_checkpoint(path):
    """Load and validate a checkpoint; returns (state, info dict)."""
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint {path}: file not found")
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path}: invalid JSON ({exc})")
    if not isinstance(payload, dict):
        raise CheckpointError(f"checkpoint {path}: top level must be an object")
    fmt = _require(payload, "format", str, path)
    if fmt != CHECKPOINT_FORMAT:
        raise CheckpointError(f"checkpoint {path}: field 'format' has value {fmt!r}")
    n = _require(payload, "n", int, path)
    theta = _require(payload, "theta", (int, float), path)
    mode = _require(payload, "mode", str, path)
    scheme = _require(payload, "scheme", str, path)
    gridinfo = _require(payload, "grid", dict, path)
    gmode = _require(gridinfo, "mode", str, path)
    n_beta = _require(gridinfo, "n_beta", int, path)
    n_xi = _require(gridinfo, "n_xi", int, path)
    t = _require(payload, "t", (int, float), path)
    step_index = _require(payload, "step_index", int, path)
    dt_last = _require(payload, "dt_last", (int, float), path)
    u_list = _require(payload, "u", list, path)
    try:
        grid = HemisphereGrid(gmode, n=n, n_beta=n_beta, n_xi=n_xi)
    except ValueError as exc:
        raise CheckpointError(f"checkpoint {path}: field 'grid' invalid ({exc})")
    u = np.asarray(u_list, dtype=float)
    if u.size != grid.n_nodes or not np.all(np.isfinite(u)):
        raise CheckpointError(f"checkpoint {path}: field 'u' has wrong size or non-finite entries")
    u = u.reshape(grid.shape)
    state = FlowState(graph=GraphState(u=u, t=float(t)),
                      step_index=step_index, dt_last=float(dt_last))
    info = {"config_hash": payload.get("config_hash"), "n": n, "theta": float(theta),
            "mode": mode, "scheme": scheme, "grid": grid}
    return state, info


def save_trajectory(path, traj: TrajectoryRecord):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(traj.columns)
        for row in traj.data:
            writer.writerow([repr(float(v)) for v in row])


def load_trajectory(path, metadata=None) -> TrajectoryRecord:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        columns = next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    return TrajectoryRecord(columns=columns, data=data, metadata=metadata or {})


def save_report(path, report: dict):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def export_obj(path, sample):
    """Wavefront OBJ mesh of a full2d sample (pole fan + quads as triangles)."""
    grid = sample.grid
    if grid.mode != "full2d":
        raise ValueError("OBJ export needs a full2d sample")
    nb, nx = grid.n_beta, grid.n_xi
    X = sample.x.reshape(nb, nx, 3)
    lines = ["# capflow surface mesh"]
    lines.append("v {} {} {}".format(*X[0, 0]))          # pole vertex (index 1)
    index = {}
    vid = 2
    for i in range(1, nb):
        for j in range(nx):
            index[(i, j)] = vid
            lines.append("v {} {} {}".format(*X[i, j]))
            vid += 1
    for j in range(nx):
        jn = (j + 1) % nx
        lines.append(f"f 1 {index[(1, j)]} {index[(1, jn)]}")
    for i in range(1, nb - 1):
        for j in range(nx):
            jn = (j + 1) % nx
            a, b = index[(i, j)], index[(i, jn)]
            c, d = index[(i + 1, jn)], index[(i + 1, j)]
            lines.append(f"f {a} {b} {c}")
            lines.append(f"f {a} {c} {d}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def save_axisym_csv(path, sample):
    """CSV dump (beta, u, kappa_min, kappa_max) of an axisym sample."""
    grid = sample.grid
    if grid.mode != "axisym":
        raise ValueError("axisym CSV dump needs an axisym sample")
    from .verify import _graph_field_from_sample
    u = _graph_field_from_sample(sample)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["beta", "u", "kappa_min", "kappa_max"])
        for i in range(grid.n_beta):
            writer.writerow([repr(float(grid.beta[i])), repr(float(u[i])),
                             repr(float(sample.kappa[i].min())),
                             repr(float(sample.kappa[i].max()))])


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
