"""End-to-end experiment steps shared by the command line and the tests."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .diagnostics import (BoundReport, ErrorReport, EnergySeries, check_dissipation, energy_error,
                          energy_series, stepsize_bound, timing_report)
from .errors import InputError
from .integrator import SolverConfig, TimeGrid, Trajectory, run_to_steady_state
from .mesh import build_uniform_mesh
from .models import ModelSpec, build_system, initial_condition
from .reduction import DEIMOperator, MassFactor, PODBasis, compute_pod_basis, deim_build
from .rom import ReducedSystem, build_rom, run_rom
from .sipg import AssembledOperators, DGSpace, assemble_operators, evaluate_energy

log = logging.getLogger(__name__)


def model_of(cfg: ExperimentConfig) -> ModelSpec:
    return ModelSpec(cfg.model, cfg.mu)


def solver_of(cfg: ExperimentConfig) -> SolverConfig:
    return SolverConfig(newton_tol=cfg.newton_tol, max_newton_iters=cfg.max_newton_iters,
                        linear_solver=cfg.linear_solver, linear_tol=cfg.linear_tol,
                        steady_tol=cfg.steady_tol)


def grid_of(cfg: ExperimentConfig) -> TimeGrid:
    return TimeGrid(cfg.dt, cfg.t_max)


def operators_of(cfg: ExperimentConfig) -> AssembledOperators:
    mesh = build_uniform_mesh(tuple(cfg.domain), cfg.nx, cfg.ny)
    return assemble_operators(DGSpace(mesh, cfg.q_poly, cfg.penalty))


@dataclass
class FOMRun:
    cfg: ExperimentConfig
    operators: AssembledOperators
    system: object
    trajectory: Trajectory
    u0: np.ndarray
    v0: np.ndarray
    seconds: float
    energy: EnergySeries = None
    nonlinear: list = field(default_factory=list)   # b1 (and b2) snapshot matrices

    @property
    def levels(self) -> np.ndarray:
        return np.rint(np.asarray(self.trajectory.times) / self.cfg.dt).astype(int)

    @property
    def n_steps(self) -> int:
        return len(self.trajectory.newton_iterations)


def run_fom(cfg: ExperimentConfig, operators: AssembledOperators | None = None) -> FOMRun:
    ops = operators or operators_of(cfg)
    model = model_of(cfg)
    system = build_system(model, ops)
    u0, v0 = initial_condition(model, ops, cfg.seed)
    t0 = time.perf_counter()
    traj = run_to_steady_state(system, np.concatenate([u0, v0]), grid_of(cfg), solver_of(cfg),
                               snapshot_every=cfg.snapshot_stride)
    seconds = time.perf_counter() - t0
    run = FOMRun(cfg, ops, system, traj, u0, v0, seconds)
    run.energy = energy_series(traj, model, ops)
    loads = [system.nonlinear(w) for w in traj.states]
    run.nonlinear = [np.column_stack([b[0] for b in loads])]
    if cfg.model == "rgl":
        run.nonlinear.append(np.column_stack([b[1] for b in loads]))
    return run


@dataclass
class Reduction:
    pod_u: PODBasis
    pod_v: PODBasis
    deims: list
    factor: MassFactor
    seconds: float

    @property
    def counts(self) -> dict:
        out = {"k_u": self.pod_u.k, "k_v": self.pod_v.k}
        for i, d in enumerate(self.deims, 1):
            out[f"m{i}"] = d.m
        return out


def reduce_snapshots(cfg: ExperimentConfig, operators: AssembledOperators, U, V, nonlinear) -> Reduction:
    if cfg.rsvd_oversampling != "k":
        log.info("fixed oversampling is not used by the adaptive rSVD; p = k is applied")
    t0 = time.perf_counter()
    N = operators.N
    for X in (U, V, *nonlinear):
        if X.shape[0] != N:
            raise InputError(f"snapshot rows {X.shape[0]} do not match the space dimension {N}")
    factor = MassFactor(operators.M, operators.space.n_q)
    q = cfg.rsvd_power_iters
    pod_u = compute_pod_basis(U, operators.M, cfg.pod_eps, seed=cfg.seed, power_iters=q, factor=factor)
    pod_v = compute_pod_basis(V, operators.M, cfg.pod_eps, seed=cfg.seed + 1, power_iters=q, factor=factor)
    deims = [deim_build(B, cfg.deim_eps, pod, seed=cfg.seed + 2 + i, power_iters=q)
             for i, (B, pod) in enumerate(zip(nonlinear, (pod_u, pod_v)))]
    return Reduction(pod_u, pod_v, deims, factor, time.perf_counter() - t0)


def reduce_fom(run: FOMRun) -> Reduction:
    W = run.trajectory.matrix()
    N = run.operators.N
    return reduce_snapshots(run.cfg, run.operators, W[:N], W[N:], run.nonlinear)


@dataclass
class ROMRun:
    mode: str
    system: ReducedSystem
    trajectory: Trajectory
    seconds: float


def run_roms(cfg: ExperimentConfig, operators: AssembledOperators, red: Reduction, u0, v0,
             n_steps: int, modes=None) -> dict:
    out = {}
    model = model_of(cfg)
    for mode in modes or cfg.modes:
        deims = red.deims if mode == "deim" else ()
        rs = build_rom(model, operators, red.pod_u, red.pod_v, *deims)
        wr0 = rs.initial_state(u0, v0)
        t0 = time.perf_counter()
        traj = run_rom(rs, wr0, grid_of(cfg), solver_of(cfg), n_steps=n_steps)
        out[mode] = ROMRun(mode, rs, traj, time.perf_counter() - t0)
    return out


def aligned_lift(rom: ROMRun, levels) -> list:
    """Lifted ROM states at the given time levels (ROM runs record every level)."""
    states = rom.trajectory.states
    return [rom.system.lift(states[n]) for n in levels if n < len(states)]


@dataclass
class Comparison:
    report: ErrorReport
    bounds: dict
    rom_energy: dict
    rom_violations: dict


def _scan(fom: FOMRun, rr: ROMRun, levels):
    """One pass over the ROM run: lifted energies at every level and squared
    per-component mass-norm differences at the FOM's recorded levels.

    Lifted states are not kept, which matters at preset scale.
    """
    ops, model, N = fom.operators, model_of(fom.cfg), fom.operators.N
    states = rr.trajectory.states
    want = {int(n): j for j, n in enumerate(levels) if n < len(states)}
    energies = np.empty(len(states))
    acc = np.zeros(2)
    for n, wr in enumerate(states):
        w = rr.system.lift(wr)
        energies[n] = evaluate_energy(model, ops, w[:N], w[N:])
        j = want.get(n)
        if j is not None:
            d = fom.trajectory.states[j] - w
            acc[0] += float(d[:N] @ (ops.M @ d[:N]))
            acc[1] += float(d[N:] @ (ops.M @ d[N:]))
    aligned = energies[[n for n in levels if n < len(states)]]
    return energies, aligned, acc


def compare(fom: FOMRun, roms: dict, red: Reduction | None = None) -> Comparison:
    cfg = fom.cfg
    levels = fom.levels
    dt_rec = cfg.dt * fom.trajectory.stride
    report = ErrorReport()
    report.timings["fom"] = fom.seconds
    if red is not None:
        report.mode_counts = red.counts
        report.timings["offline"] = red.seconds
    bounds, energies, violations = {}, {}, {}
    for mode, rr in roms.items():
        full, aligned, acc = _scan(fom, rr, levels)
        n = len(aligned)
        report.truncated = report.truncated or n < len(levels)
        report.state_errors[mode] = np.sqrt(np.maximum(acc, 0.0) * dt_rec).tolist()
        report.energy_errors[mode] = energy_error(fom.energy.values[:n], aligned, dt_rec)
        report.timings[mode] = rr.seconds
        series = EnergySeries(np.asarray(rr.trajectory.times, dtype=float), full)
        energies[mode] = series
        violations[mode] = check_dissipation(series, 1e-8).violations
        if mode == "deim" and red is not None:
            bounds[mode] = stepsize_bound(rr.system, rr.trajectory, red.factor.inverse_norm())
    report.speedups = timing_report(fom.seconds, **{m: r.seconds for m, r in roms.items()})
    return Comparison(report, bounds, energies, violations)


def trajectory_norm(fom: FOMRun) -> np.ndarray:
    """Per-component ``sqrt(sum_n |w_n|_M^2 * dt)`` of the FOM run (the error of a zero ROM)."""
    ops, N = fom.operators, fom.operators.N
    acc = np.zeros(2)
    for w in fom.trajectory.states:
        acc += [float(w[:N] @ (ops.M @ w[:N])), float(w[N:] @ (ops.M @ w[N:]))]
    return np.sqrt(acc * fom.cfg.dt * fom.trajectory.stride)


def relative_state_error(fom: FOMRun, comparison: Comparison, mode: str) -> np.ndarray:
    """State error of ``mode`` divided by the same norm of the FOM trajectory."""
    return np.asarray(comparison.report.state_errors[mode]) / trajectory_norm(fom)


def bound_summary(b: BoundReport) -> dict:
    finite = b.dt_max[np.isfinite(b.dt_max)]
    return {
        "dt": b.dt,
        "R_inv_norm": b.R_inv_norm,
        "deim_inv_norms": list(b.deim_inv_norms),
        "steps": int(len(b.dt_max)),
        "fraction_satisfied": b.fraction_satisfied,
        "min_dt_max": float(finite.min()) if len(finite) else float("inf"),
        "violating_steps": np.flatnonzero(~b.satisfied).tolist(),
    }
