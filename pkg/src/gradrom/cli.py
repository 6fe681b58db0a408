"""Command line driver: ``gradrom {fom,reduce,rom,compare,report}``.

Artifacts live under ``<out>/{fom,reduce,rom,compare}``. Exit codes: 0 on
success, 2 for configuration or consistency errors, 3 for numerical
failures and 4 for I/O errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import io
from .config import ExperimentConfig, load_config
from .diagnostics import energy_series
from .errors import ConfigError, FormatError, InputError, StepFailure
from .integrator import Trajectory, run_to_steady_state
from .models import build_system, initial_condition
from .pipeline import (FOMRun, Reduction, ROMRun, bound_summary, compare, grid_of, model_of,
                       operators_of, reduce_snapshots, relative_state_error, run_roms, solver_of)
from .reduction import MassFactor, PODBasis, deim_from_basis
from .rom import build_rom

log = logging.getLogger("gradrom")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _prepare_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    # fail before any computation if the directory is not writable
    with tempfile.TemporaryFile(dir=path):
        pass
    return path


def _out_root(cfg: ExperimentConfig, args) -> Path:
    root = args.out or cfg.output_dir
    if root is None:
        raise ConfigError("no output directory: pass --out or set output_dir")
    return Path(root)


def _histogram(iters) -> dict:
    return {str(k): int(v) for k, v in enumerate(np.bincount(np.asarray(iters, dtype=int)))} if len(iters) else {}


# -- fom ---------------------------------------------------------------------------

def _write_fom(d: Path, cfg, ops, system, traj: Trajectory, seconds, status, failure=None):
    N = ops.N
    W = traj.matrix()
    io.write_matrix(d / "u.grdm", W[:N])
    io.write_matrix(d / "v.grdm", W[N:])
    loads = [system.nonlinear(w) for w in traj.states]
    io.write_matrix(d / "b1.grdm", np.column_stack([b[0] for b in loads]))
    if cfg.model == "rgl":
        io.write_matrix(d / "b2.grdm", np.column_stack([b[1] for b in loads]))
    E = energy_series(traj, model_of(cfg), ops)
    io.write_energy_csv(d / "energy.csv", E.times, E.values)
    u, v = system.split(traj.states[-1])
    io.write_vtk(d / "field_final.vtk", ops.space, {"u": u, "v": v}, f"{cfg.model} t={traj.times[-1]:g}")
    meta = {
        "status": status,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "N": N,
        "times": traj.times,
        "stride": traj.stride,
        "n_steps": len(traj.newton_iterations),
        "steady": traj.steady,
        "seconds": seconds,
        "newton_histogram": _histogram(traj.newton_iterations),
        "max_newton_iterations": int(max(traj.newton_iterations, default=0)),
    }
    if failure is not None:
        meta["failure"] = failure
    io.write_json(d / "fom.json", meta)
    return meta


def cmd_fom(cfg: ExperimentConfig, root: Path) -> int:
    d = _prepare_dir(root / "fom")
    ops = operators_of(cfg)
    model = model_of(cfg)
    system = build_system(model, ops)
    u0, v0 = initial_condition(model, ops, cfg.seed)
    t0 = time.perf_counter()
    try:
        traj = run_to_steady_state(system, np.concatenate([u0, v0]), grid_of(cfg), solver_of(cfg),
                                   snapshot_every=cfg.snapshot_stride)
    except StepFailure as exc:
        log.error("FOM step %s failed: %s", exc.time_level, exc)
        partial = exc.partial or Trajectory([0.0], [np.concatenate([u0, v0])],
                                            dt=cfg.dt, stride=cfg.snapshot_stride)
        _write_fom(d, cfg, ops, system, partial, time.perf_counter() - t0, "failed",
                   {"time_level": exc.time_level, "message": str(exc), "residuals": exc.residuals})
        return EXIT_NUMERIC
    meta = _write_fom(d, cfg, ops, system, traj, time.perf_counter() - t0, "ok")
    log.info("fom: %d steps, steady=%s, %.2fs", meta["n_steps"], meta["steady"], meta["seconds"])
    return EXIT_OK


def _load_fom(cfg: ExperimentConfig, root: Path, ops=None) -> FOMRun:
    d = root / "fom"
    meta = io.read_json(d / "fom.json")
    if meta.get("status") != "ok":
        raise InputError("the FOM run in this directory did not complete")
    ops = ops or operators_of(cfg)
    U, V = io.read_matrix(d / "u.grdm"), io.read_matrix(d / "v.grdm")
    if U.shape[0] != ops.N or V.shape != U.shape:
        raise InputError(f"snapshot shapes {U.shape}, {V.shape} do not match N = {ops.N}")
    traj = Trajectory(list(meta["times"]), [np.concatenate([U[:, j], V[:, j]]) for j in range(U.shape[1])],
                      dt=cfg.dt, stride=int(meta["stride"]))
    traj.newton_iterations = [0] * int(meta["n_steps"])
    run = FOMRun(cfg, ops, build_system(model_of(cfg), ops), traj, U[:, 0], V[:, 0], float(meta["seconds"]))
    _, E = io.read_energy_csv(d / "energy.csv")
    run.energy = energy_series(traj, model_of(cfg), ops)
    if not np.allclose(E, run.energy.values, rtol=1e-12, atol=0):
        log.warning("stored energy series differs from the recomputed one")
    run.nonlinear = [io.read_matrix(d / "b1.grdm")]
    if cfg.model == "rgl":
        run.nonlinear.append(io.read_matrix(d / "b2.grdm"))
    return run


# -- reduce ------------------------------------------------------------------------

def cmd_reduce(cfg: ExperimentConfig, root: Path, snapshots: Path | None = None) -> int:
    src = Path(snapshots) if snapshots else root / "fom"
    d = _prepare_dir(root / "reduce")
    ops = operators_of(cfg)
    U, V = io.read_matrix(src / "u.grdm"), io.read_matrix(src / "v.grdm")
    B = [io.read_matrix(src / "b1.grdm")]
    if cfg.model == "rgl":
        B.append(io.read_matrix(src / "b2.grdm"))
    red = reduce_snapshots(cfg, ops, U, V, B)
    io.write_matrix(d / "psi_u.grdm", red.pod_u.Psi)
    io.write_matrix(d / "psi_v.grdm", red.pod_v.Psi)
    meta = {"counts": red.counts, "seconds": red.seconds,
            "ric": {"u": red.pod_u.ric, "v": red.pod_v.ric},
            "singular_values": {"u": red.pod_u.singular_values, "v": red.pod_v.singular_values},
            "tail_energy": {"u": red.pod_u.tail_energy, "v": red.pod_v.tail_energy}}
    for i, op in enumerate(red.deims, 1):
        io.write_matrix(d / f"q{i}.grdm", op.Q)
        io.write_matrix(d / f"deim{i}_indices.grdm", op.indices.astype(float))
        meta["ric"][f"b{i}"] = op.ric
        meta["singular_values"][f"b{i}"] = op.singular_values
        meta[f"deim{i}_inv_norm"] = op.inv_norm
    io.write_json(d / "reduce.json", meta)
    log.info("reduce: %s", red.counts)
    return EXIT_OK


def _load_reduction(cfg: ExperimentConfig, root: Path, ops) -> Reduction:
    d = root / "reduce"
    meta = io.read_json(d / "reduce.json")
    pod_u = PODBasis(io.read_matrix(d / "psi_u.grdm"), meta["ric"]["u"], "u")
    pod_v = PODBasis(io.read_matrix(d / "psi_v.grdm"), meta["ric"]["v"], "v")
    for pod in (pod_u, pod_v):
        if pod.Psi.shape[0] != ops.N:
            raise InputError(f"basis has {pod.Psi.shape[0]} rows, the configured space has {ops.N}")
    deims = []
    n_nl = 2 if cfg.model == "rgl" else 1
    for i, pod in zip(range(1, n_nl + 1), (pod_u, pod_v)):
        Q = io.read_matrix(d / f"q{i}.grdm")
        idx = io.read_matrix(d / f"deim{i}_indices.grdm")[:, 0].astype(np.int64)
        deims.append(deim_from_basis(Q, idx, pod, f"b{i}"))
    return Reduction(pod_u, pod_v, deims, MassFactor(ops.M, ops.space.n_q), float(meta["seconds"]))


# -- rom ---------------------------------------------------------------------------

def cmd_rom(cfg: ExperimentConfig, root: Path) -> int:
    d = _prepare_dir(root / "rom")
    ops = operators_of(cfg)
    fom = _load_fom(cfg, root, ops)
    red = _load_reduction(cfg, root, ops)
    roms = run_roms(cfg, ops, red, fom.u0, fom.v0, fom.n_steps)
    meta = {}
    for mode, rr in roms.items():
        traj = rr.trajectory
        io.write_matrix(d / f"{mode}_reduced.grdm", traj.matrix())
        E = [rr.system.energy(w) for w in traj.states]
        io.write_energy_csv(d / f"{mode}_energy.csv", traj.times, E)
        u, v = np.split(rr.system.lift(traj.states[-1]), 2)
        io.write_vtk(d / f"{mode}_field_final.vtk", ops.space, {"u": u, "v": v})
        meta[mode] = {"seconds": rr.seconds, "offline_seconds": rr.system.offline_seconds,
                      "times": traj.times, "newton_histogram": _histogram(traj.newton_iterations),
                      "rows_per_evaluation": rr.system.rows_per_evaluation}
    io.write_json(d / "rom.json", meta)
    return EXIT_OK


def _load_roms(cfg, root: Path, ops, red: Reduction) -> dict:
    d = root / "rom"
    meta = io.read_json(d / "rom.json")
    out = {}
    model = model_of(cfg)
    for mode, m in meta.items():
        deims = red.deims if mode == "deim" else ()
        rs = build_rom(model, ops, red.pod_u, red.pod_v, *deims)
        X = io.read_matrix(d / f"{mode}_reduced.grdm")
        if X.shape[0] != rs.n:
            raise InputError(f"{mode} trajectory has {X.shape[0]} rows, the reduced system has {rs.n}")
        traj = Trajectory(list(m["times"]), [X[:, j] for j in range(X.shape[1])], dt=cfg.dt, stride=1)
        out[mode] = ROMRun(mode, rs, traj, float(m["seconds"]))
    return out


# -- compare / report --------------------------------------------------------------

def cmd_compare(cfg: ExperimentConfig, root: Path) -> int:
    d = _prepare_dir(root / "compare")
    ops = operators_of(cfg)
    fom = _load_fom(cfg, root, ops)
    red = _load_reduction(cfg, root, ops)
    if not (root / "rom" / "rom.json").exists():
        cmd_rom(cfg, root)
    roms = _load_roms(cfg, root, ops, red)
    cmp_ = compare(fom, roms, red)
    rep = cmp_.report
    counts = rep.mode_counts
    rows = []
    for mode in roms:
        eu, ev = rep.state_errors[mode]
        rel = relative_state_error(fom, cmp_, mode)
        rows.append([mode, counts.get("k_u"), counts.get("k_v"), counts.get("m1", ""), counts.get("m2", ""),
                     float(eu), float(ev), float(rel[0]), float(rel[1]), float(rep.energy_errors[mode])])
    io.write_table_csv(d / "errors.csv", ["mode", "k_u", "k_v", "m1", "m2", "error_u", "error_v",
                                          "relative_error_u", "relative_error_v", "energy_error"], rows)
    io.write_table_csv(d / "timing.csv", ["run", "seconds", "speedup"],
                       [[k, float(v), float(rep.speedups.get(k, 1.0 if k == "fom" else float("nan")))]
                        for k, v in rep.timings.items()])
    summary = {"errors": rep.state_errors, "energy_errors": rep.energy_errors, "counts": counts,
               "timings": rep.timings, "speedups": rep.speedups, "truncated": rep.truncated,
               "rom_energy_increases": cmp_.rom_violations}
    if "deim" in cmp_.bounds:
        b = cmp_.bounds["deim"]
        io.write_table_csv(d / "bounds.csv", ["step", "dt_max", "satisfied"],
                           [[n + 1, float(x), int(s)] for n, (x, s) in enumerate(zip(b.dt_max, b.satisfied))])
        summary["bounds"] = bound_summary(b)
    io.write_json(d / "compare.json", summary)
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig, root: Path, stream=None) -> int:
    stream = stream or sys.stdout
    s = io.read_json(root / "compare" / "compare.json")
    lines = [f"# {cfg.model} reduced-order comparison", "",
             "| mode | error u | error v | energy error | seconds | speedup |",
             "|---|---|---|---|---|---|"]
    for mode, (eu, ev) in s["errors"].items():
        lines.append(f"| {mode} | {eu:.3e} | {ev:.3e} | {s['energy_errors'][mode]:.3e} | "
                     f"{s['timings'][mode]:.2f} | {s['speedups'][mode]:.2f} |")
    lines += ["", f"FOM wall-clock: {s['timings']['fom']:.2f} s",
              "Mode counts: " + ", ".join(f"{k}={v}" for k, v in s["counts"].items())]
    if "bounds" in s:
        b = s["bounds"]
        lines.append(f"Step-size bound satisfied at {100 * b['fraction_satisfied']:.1f}% of {b['steps']} steps")
    text = "\n".join(lines) + "\n"
    io.atomic_write(root / "compare" / "report.md", text)
    stream.write(text)
    return EXIT_OK


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gradrom", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in ("fom", "reduce", "rom", "compare", "report"):
        s = sub.add_parser(verb)
        s.add_argument("--config", type=Path, help="JSON experiment configuration")
        s.add_argument("--preset", choices=("rgl", "sh"), help="start from a shipped preset")
        s.add_argument("--out", type=Path, help="output directory")
        s.add_argument("--seed", type=int, help="override the random seed")
        s.add_argument("-v", "--verbose", action="store_true")
        if verb == "reduce":
            s.add_argument("--snapshots", type=Path, help="directory with u/v/b snapshot files")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.preset, seed=args.seed)
        root = _out_root(cfg, args)
        if args.verb == "fom":
            return cmd_fom(cfg, root)
        if args.verb == "reduce":
            return cmd_reduce(cfg, root, args.snapshots)
        if args.verb == "rom":
            return cmd_rom(cfg, root)
        if args.verb == "compare":
            return cmd_compare(cfg, root)
        return cmd_report(cfg, root)
    except (ConfigError, InputError) as exc:
        print(f"gradrom: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StepFailure, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"gradrom: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"gradrom: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
