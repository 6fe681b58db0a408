"""Energy bookkeeping, DEIM step-size bounds and FOM-vs-ROM error reports."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .integrator import Trajectory
from .sipg import AssembledOperators, evaluate_energy


def _states(traj):
    return traj.states if isinstance(traj, Trajectory) else list(traj)


def _split(w, N):
    return w[:N], w[N:]


@dataclass(frozen=True)
class EnergySeries:
    times: np.ndarray
    values: np.ndarray

    @property
    def drops(self) -> np.ndarray:
        """``E[n] - E[n+1]`` per recorded interval."""
        return self.values[:-1] - self.values[1:]

    def __len__(self):
        return len(self.values)


def energy_series(trajectory, model, operators: AssembledOperators, times=None) -> EnergySeries:
    """Discrete energy at every recorded level of ``trajectory``.

    ``trajectory`` is a :class:`Trajectory` or a sequence of full-space
    state vectors (e.g. lifted ROM states).
    """
    states = _states(trajectory)
    if times is None:
        times = trajectory.times if isinstance(trajectory, Trajectory) else np.arange(len(states))
    N = operators.N
    E = [evaluate_energy(model, operators, *_split(w, N)) for w in states]
    return EnergySeries(np.asarray(times, dtype=float), np.asarray(E, dtype=float))


@dataclass(frozen=True)
class DissipationCheck:
    passed: bool
    violations: list


def check_dissipation(series, slack: float = 1e-8) -> DissipationCheck:
    """Flag every n with ``E[n+1] > E[n] + slack * (1 + |E[n]|)``."""
    E = np.asarray(series.values if isinstance(series, EnergySeries) else series, dtype=float)
    bad = np.flatnonzero(E[1:] > E[:-1] + slack * (1.0 + np.abs(E[:-1])))
    return DissipationCheck(len(bad) == 0, bad.tolist())


def avf_identity_residual(trajectory, model, operators: AssembledOperators, dt: float) -> np.ndarray:
    """Per-step defect of the discrete energy identity.

    ``r_n = (E[n] - E[n+1]) - (|du|_M^2 + |dv|_M^2) / dt`` for RGL and the
    same with only the ``u`` term for SH. The trajectory must record every
    step.
    """
    states = _states(trajectory)
    if isinstance(trajectory, Trajectory) and trajectory.stride != 1 and len(states) > 2:
        raise InputError("the energy identity needs every time level recorded")
    series = energy_series(states, model, operators)
    M, N = operators.M, operators.N
    out = np.empty(max(len(states) - 1, 0))
    for n in range(len(out)):
        du, dv = _split(states[n + 1] - states[n], N)
        diss = float(du @ (M @ du))
        if model.name == "rgl":
            diss += float(dv @ (M @ dv))
        out[n] = series.values[n] - series.values[n + 1] - diss / dt
    return out


@dataclass
class BoundReport:
    """Per-step DEIM step-size bounds and their ingredients.

    ``dt_max`` holds the minimum over the nonlinear components; the
    per-component values are in ``dt_component`` (steps x components).
    """

    dt: float
    R_inv_norm: float
    deim_inv_norms: tuple
    residual_norms: np.ndarray
    state_diff_norms: np.ndarray
    dt_component: np.ndarray
    dt_max: np.ndarray = field(init=False)
    satisfied: np.ndarray = field(init=False)

    def __post_init__(self):
        self.dt_max = np.min(self.dt_component, axis=1) if self.dt_component.size else np.zeros(0)
        self.satisfied = self.dt <= self.dt_max

    @property
    def fraction_satisfied(self) -> float:
        return float(np.mean(self.satisfied)) if len(self.satisfied) else 1.0


def _bound(diff, R_inv_norm, inv_norm, res):
    if diff == 0 or res == 0:
        return math.inf
    return diff / (R_inv_norm * inv_norm * res)


def stepsize_bound(rom, trajectory: Trajectory, R_inv_norm: float, dt: float | None = None) -> BoundReport:
    """Largest step size that guarantees energy decrease for a DEIM ROM run.

    The DEIM residual ``|(I - Q Q^T) b(Psi w_hat)|_2`` is evaluated at the
    AVF midpoint ``w_hat = (w_n + w_{n+1}) / 2``; state differences use the
    mass norm of the lifted increments.
    """
    if rom.mode != "deim":
        raise InputError("step-size bounds apply to deim-mode reduced systems")
    states = trajectory.states
    if trajectory.stride != 1 and len(states) > 2:
        raise InputError("step-size bounds need every time level recorded")
    dt = trajectory.dt if dt is None else dt
    ops = [op for op in (rom.deim1, rom.deim2) if op is not None]
    space = rom.space
    Pu, Pv = rom.pod_u.Psi, rom.pod_v.Psi
    n_steps = len(states) - 1
    res = np.zeros((n_steps, len(ops)))
    diffs = np.zeros((n_steps, len(ops)))
    bounds = np.zeros((n_steps, len(ops)))
    for n in range(n_steps):
        ur, vr = rom.split(0.5 * (states[n] + states[n + 1]))
        U = space.values_at_quadrature(Pu @ ur)
        V = space.values_at_quadrature(Pv @ vr)
        g = rom.model.cubic(U, V)
        du, dv = rom.split(states[n + 1] - states[n])
        d = (math.sqrt(max(float(du @ rom.Mu @ du), 0.0)),
             math.sqrt(max(float(dv @ rom.Mv @ dv), 0.0)))
        for i, op in enumerate(ops):
            b = space.load(g[i])
            res[n, i] = np.linalg.norm(b - op.Q @ (op.Q.T @ b))
            diffs[n, i] = d[i]
            bounds[n, i] = _bound(d[i], R_inv_norm, op.inv_norm, res[n, i])
    return BoundReport(float(dt), float(R_inv_norm), tuple(op.inv_norm for op in ops),
                       res, diffs, bounds)


def _check_pair(a, b):
    if len(a) != len(b):
        raise InputError(f"trajectories have different lengths ({len(a)} vs {len(b)})")


def l2l2_error(fom, rom, M, dt: float, n_components: int = 2) -> np.ndarray:
    """``sqrt(sum_n |delta_n|_M^2 * dt)`` per component.

    ``fom`` and ``rom`` are trajectories or sequences of full-space states
    on the same grid; ``dt`` is the spacing of the recorded levels.
    """
    a, b = _states(fom), _states(rom)
    _check_pair(a, b)
    if isinstance(fom, Trajectory) and isinstance(rom, Trajectory):
        if not np.allclose(fom.times, rom.times):
            raise InputError("trajectories are recorded on different time grids")
    N = M.shape[0]
    acc = np.zeros(n_components)
    for x, y in zip(a, b):
        d = np.asarray(x) - np.asarray(y)
        if d.shape != (n_components * N,):
            raise InputError(f"state of length {d.shape} does not match {n_components} x {N}")
        for c in range(n_components):
            dc = d[c * N:(c + 1) * N]
            acc[c] += float(dc @ (M @ dc))
    return np.sqrt(np.maximum(acc, 0.0) * dt)


def energy_error(fom_series, rom_series, dt: float) -> float:
    """``sqrt(sum_n (E_fom[n] - E_rom[n])^2 * dt)``."""
    a = np.asarray(fom_series.values if isinstance(fom_series, EnergySeries) else fom_series, dtype=float)
    b = np.asarray(rom_series.values if isinstance(rom_series, EnergySeries) else rom_series, dtype=float)
    _check_pair(a, b)
    return float(math.sqrt(np.sum((a - b) ** 2) * dt))


def common_length(*sequences) -> tuple[int, bool]:
    """Shortest length among the sequences and whether any was truncated."""
    lengths = [len(s) for s in sequences]
    n = min(lengths)
    return n, any(L != n for L in lengths)


@dataclass
class ErrorReport:
    state_errors: dict = field(default_factory=dict)     # mode -> per-component errors
    energy_errors: dict = field(default_factory=dict)    # mode -> scalar
    mode_counts: dict = field(default_factory=dict)      # k_u, k_v, m1, m2
    timings: dict = field(default_factory=dict)          # name -> seconds
    speedups: dict = field(default_factory=dict)         # name -> FOM / name
    truncated: bool = False


def timing_report(fom_seconds: float, **online_seconds) -> dict:
    """Speedup of every named online run relative to the FOM wall-clock."""
    out = {}
    for name, sec in online_seconds.items():
        if sec is None:
            continue
        out[name] = math.inf if sec <= 0 else fom_seconds / sec
    return out
