"""Batch command-line interface.

Subcommands: run, resume, cap, quermass, verify, export-obj.
Exit codes: 0 success, 2 not converged, 3 invalid input, 4 numerical failure.
"""
import argparse
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import cap as capmod
from . import flow as flowmod
from . import quermass as qm
from . import storage, verify
from .errors import (CapflowError, CheckpointError, DegenerateMetric, NotConverged,
                     ObliquenessViolated, OutOfRange, QuadratureFailure, ShellViolation,
                     StarShapeLost, StepFailure)
from .grid import HemisphereGrid
from .surface import GraphState, reconstruct

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_INVALID = 3
EXIT_NUMERICAL = 4


def worker_count():
    try:
        return max(1, int(os.environ.get("CAPFLOW_THREADS", "1")))
    except ValueError:
        return 1


def parse_grid(spec):
    """Parse 'axisym:<n_beta>' or 'full2d:<n_beta>x<n_xi>'."""
    try:
        mode, dims = spec.split(":", 1)
        if mode == "axisym":
            return HemisphereGrid("axisym", n_beta=int(dims))
        if mode == "full2d":
            nb, nx = dims.split("x")
            return HemisphereGrid("full2d", n_beta=int(nb), n_xi=int(nx))
    except (ValueError, TypeError):
        pass
    raise ValueError(f"cannot parse grid spec {spec!r}")


@dataclass
class RunManifest:
    """Everything needed to reproduce one flow run."""

    theta: float
    n: int
    grid_spec: str
    mode: str
    scheme: str
    initial: str
    t_max: float
    stop_tol: float
    dt_safety: float
    monitor_every: int
    seed: int
    out_dir: str
    dt_fixed: float | None = None
    max_steps: int | None = None
    checkpoint_every: int = 0

    def to_dict(self):
        return dict(self.__dict__)


def parse_initial(spec, grid, theta, seed):
    """Initial-condition spec: cap:<r> | flat | perturbed_cap:<amp>,<wavenumber>[,r=<r>]
    | file:<path>."""
    if spec == "flat":
        return capmod.cap_graph(capmod.CapParams(theta, math.inf, grid.n), grid)
    if spec.startswith("cap:"):
        r = float(spec.split(":", 1)[1])
        return capmod.cap_graph(capmod.CapParams(theta, r, grid.n), grid)
    if spec.startswith("perturbed_cap:"):
        parts = spec.split(":", 1)[1].split(",")
        amp = float(parts[0])
        wav = int(parts[1]) if len(parts) > 1 else 2
        r = 1.0
        for p in parts[2:]:
            if p.startswith("r="):
                r = float(p[2:])
        if amp < 0 or wav < 1:
            raise ValueError("perturbed_cap needs amplitude >= 0 and wavenumber >= 1")
        base = capmod.cap_profile(grid.beta, theta, r)
        pert = amp * np.cos(wav * grid.beta)
        if grid.mode == "full2d":
            u = base[:, None] + pert[:, None] * np.ones(grid.n_xi)[None, :]
        else:
            u = base + pert
        return GraphState(u=u)
    if spec.startswith("file:"):
        path = spec.split(":", 1)[1]
        state, info = storage.load_checkpoint(path)
        return state.graph
    raise ValueError(f"cannot parse initial-condition spec {spec!r}")


def cmd_run(manifest: RunManifest):
    grid = parse_grid(manifest.grid_spec)
    config = flowmod.FlowConfig(
        mode=manifest.mode, theta=manifest.theta, n=manifest.n, grid=grid,
        dt_safety=manifest.dt_safety, t_max=manifest.t_max,
        stop_tol=manifest.stop_tol, monitor_every=manifest.monitor_every,
        scheme=manifest.scheme, dt_fixed=manifest.dt_fixed,
        max_steps=manifest.max_steps)
    out = storage.ensure_dir(manifest.out_dir)
    storage.save_report(os.path.join(out, "run_manifest.json"),
                        {**manifest.to_dict(), "config_hash": config.config_hash()})
    initial = parse_initial(manifest.initial, grid, manifest.theta, manifest.seed)

    counter = {"k": 0}

    def checkpoint_cb(state):
        if manifest.checkpoint_every and \
                state.step_index % manifest.checkpoint_every == 0:
            storage.save_checkpoint(
                os.path.join(out, f"checkpoint_{state.step_index:08d}.json"),
                state, config)
        counter["k"] += 1

    status = EXIT_OK
    try:
        traj = flowmod.run(config, initial, checkpoint_cb=checkpoint_cb)
    except NotConverged as exc:
        traj = exc.trajectory
        status = EXIT_NOT_CONVERGED
    storage.save_trajectory(os.path.join(out, "trajectory.csv"), traj)
    storage.save_checkpoint(os.path.join(out, "checkpoint_final.json"),
                            traj.final_state, config)
    report = {
        "metadata": traj.metadata,
        "monotonicity": verify.monotonicity_report(traj),
        "convergence": verify.convergence_check(traj, manifest.theta, manifest.n),
    }
    storage.save_report(os.path.join(out, "final_report.json"), report)
    return status


def _cmd_run_args(args):
    manifest = RunManifest(
        theta=args.theta, n=args.n, grid_spec=args.grid, mode=args.mode,
        scheme=args.scheme, initial=args.initial, t_max=args.tmax,
        stop_tol=args.stop_tol, dt_safety=args.dt_safety,
        monitor_every=args.monitor_every, seed=args.seed, out_dir=args.out,
        dt_fixed=args.dt, max_steps=args.steps,
        checkpoint_every=args.checkpoint_every)
    return cmd_run(manifest)


def _cmd_resume(args):
    state, info = storage.load_checkpoint(args.checkpoint)
    grid = info["grid"]
    config = flowmod.FlowConfig(
        mode=info["mode"], theta=info["theta"], n=info["n"], grid=grid,
        dt_safety=args.dt_safety, t_max=args.tmax, stop_tol=args.stop_tol,
        monitor_every=args.monitor_every, scheme=info["scheme"], dt_fixed=args.dt)
    if info["config_hash"] is not None and args.expect_hash \
            and info["config_hash"] != args.expect_hash:
        raise CheckpointError(
            f"checkpoint config_hash {info['config_hash']} does not match "
            f"expected {args.expect_hash}; refusing to resume")
    out = storage.ensure_dir(args.out)
    status = EXIT_OK
    try:
        traj = flowmod.run(config, state.graph)
    except NotConverged as exc:
        traj = exc.trajectory
        status = EXIT_NOT_CONVERGED
    storage.save_trajectory(os.path.join(out, "trajectory.csv"), traj)
    storage.save_checkpoint(os.path.join(out, "checkpoint_final.json"),
                            traj.final_state, config)
    storage.save_report(os.path.join(out, "final_report.json"),
                        {"metadata": traj.metadata})
    return status


def _cmd_cap(args):
    params = capmod.CapParams(theta=args.theta, r=args.r, n=args.n)
    values = {f"f{k}": capmod.cap_quermass(params, k) for k in range(args.n + 1)}
    payload = {"theta": args.theta, "r": args.r, "n": args.n, **values}
    json.dump(payload, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def _cmd_quermass(args):
    state, info = storage.load_checkpoint(args.snapshot)
    sample = reconstruct(state.graph, info["grid"], info["theta"])
    vec = qm.quermass_vector(sample)
    json.dump(vec.to_dict(), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def _cmd_export_obj(args):
    state, info = storage.load_checkpoint(args.snapshot)
    sample = reconstruct(state.graph, info["grid"], info["theta"])
    if info["grid"].mode == "axisym":
        storage.save_axisym_csv(args.out, sample)
    else:
        storage.export_obj(args.out, sample)
    return EXIT_OK


def _cmd_verify(args):
    grid = parse_grid(args.grid)
    out = {}
    if args.suite == "af":
        out = verify.af_suite([args.theta], grid, args.samples, args.seed,
                              workers=worker_count())
    elif args.suite == "order":
        out = verify.consistency_suite(thetas=(args.theta,), n_betas=(64, 128, 256))
    elif args.suite in ("mono", "conv"):
        config = flowmod.FlowConfig(mode="mct", theta=args.theta, n=2, grid=grid,
                                    stop_tol=1e-6, t_max=args.tmax, scheme="imex",
                                    monitor_every=50)
        initial = parse_initial(f"perturbed_cap:{args.amplitude},2", grid,
                                args.theta, args.seed)
        traj = flowmod.run(config, initial)
        if args.suite == "mono":
            out = verify.monotonicity_report(traj)
        else:
            out = verify.convergence_check(traj, args.theta, 2)
    elif args.suite == "est":
        rng = np.random.default_rng(args.seed)
        state, sample = verify.random_convex_state(args.theta, grid, rng)
        bundle = verify.bundle_for_state(state.u, grid, args.theta)
        out = verify.estimates_check(sample, bundle)
        out["bundle"] = bundle.__dict__
    else:
        raise ValueError(f"unknown suite {args.suite!r}")
    if args.out:
        storage.ensure_dir(args.out)
        storage.save_report(os.path.join(args.out, f"verify_{args.suite}.json"), out)
    json.dump(out, sys.stdout, indent=2, default=storage._json_default)
    sys.stdout.write("\n")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="capflow",
                                 description="capillary-hypersurface curvature flow toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run a flow and write artifacts")
    runp.add_argument("--theta", type=float, required=True, help="contact angle (rad)")
    runp.add_argument("--n", type=int, default=2)
    runp.add_argument("--grid", default="axisym:128")
    runp.add_argument("--mode", choices=("mct", "mcf"), default="mct")
    runp.add_argument("--scheme", choices=("explicit_euler", "imex"), default="imex")
    runp.add_argument("--initial", default="perturbed_cap:0.1,2")
    runp.add_argument("--tmax", type=float, default=50.0)
    runp.add_argument("--stop-tol", dest="stop_tol", type=float, default=1e-6)
    runp.add_argument("--dt", type=float, default=None, help="fixed dt (overrides CFL)")
    runp.add_argument("--dt-safety", dest="dt_safety", type=float, default=0.5)
    runp.add_argument("--steps", type=int, default=None, help="hard step budget")
    runp.add_argument("--monitor-every", dest="monitor_every", type=int, default=50)
    runp.add_argument("--checkpoint-every", dest="checkpoint_every", type=int, default=0)
    runp.add_argument("--seed", type=int, default=0)
    runp.add_argument("--out", required=True)
    runp.set_defaults(func=_cmd_run_args)

    res = sub.add_parser("resume", help="resume from a checkpoint")
    res.add_argument("--checkpoint", required=True)
    res.add_argument("--out", required=True)
    res.add_argument("--tmax", type=float, default=50.0)
    res.add_argument("--stop-tol", dest="stop_tol", type=float, default=1e-6)
    res.add_argument("--dt", type=float, default=None)
    res.add_argument("--dt-safety", dest="dt_safety", type=float, default=0.5)
    res.add_argument("--monitor-every", dest="monitor_every", type=int, default=50)
    res.add_argument("--expect-hash", default=None)
    res.set_defaults(func=_cmd_resume)

    capp = sub.add_parser("cap", help="print cap quermassintegrals as JSON")
    capp.add_argument("--theta", type=float, required=True)
    capp.add_argument("--r", type=float, required=True)
    capp.add_argument("--n", type=int, default=2)
    capp.set_defaults(func=_cmd_cap)

    qmp = sub.add_parser("quermass", help="quermass vector of a snapshot")
    qmp.add_argument("--snapshot", required=True)
    qmp.set_defaults(func=_cmd_quermass)

    obj = sub.add_parser("export-obj", help="export snapshot mesh (OBJ / axisym CSV)")
    obj.add_argument("--snapshot", required=True)
    obj.add_argument("--out", required=True)
    obj.set_defaults(func=_cmd_export_obj)

    ver = sub.add_parser("verify", help="run a verification suite")
    ver.add_argument("--suite", choices=("af", "mono", "conv", "est", "order"),
                     required=True)
    ver.add_argument("--samples", type=int, default=5)
    ver.add_argument("--theta", type=float, default=math.pi / 2)
    ver.add_argument("--grid", default="axisym:128")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--amplitude", type=float, default=0.1)
    ver.add_argument("--tmax", type=float, default=50.0)
    ver.add_argument("--out", default=None)
    ver.set_defaults(func=_cmd_verify)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OutOfRange, CheckpointError, ObliquenessViolated) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (StepFailure, StarShapeLost, DegenerateMetric, QuadratureFailure,
            ShellViolation) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CapflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
