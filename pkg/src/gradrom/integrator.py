"""Average vector field time stepping with Newton's method."""
from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, StepFailure

log = logging.getLogger(__name__)

# Two-point Gauss-Legendre rule on [0, 1]: integrates cubics in xi exactly,
# which is all the AVF average of a cubic reaction needs.
AVF_NODES = np.array([0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0)])
AVF_WEIGHTS = np.array([0.5, 0.5])


def cubic_average(a, b):
    """Closed form of the integral over xi in [0, 1] of (xi*a + (1 - xi)*b)**3."""
    return (a**3 + a**2 * b + a * b**2 + b**3) / 4.0


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    t_max: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"time step must be positive, got {self.dt}")
        if not self.t_max > 0:
            raise ConfigError(f"final time must be positive, got {self.t_max}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-10
    max_newton_iters: int = 10
    linear_solver: str = "direct"   # "direct" or "iterative"
    linear_tol: float = 1e-12
    steady_tol: float = 1e-4
    steady_floor: float = 1e-14

    def __post_init__(self):
        for name in ("newton_tol", "linear_tol", "steady_tol", "steady_floor"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_newton_iters < 0:
            raise ConfigError("max_newton_iters must be non-negative")
        if self.linear_solver not in ("direct", "iterative"):
            raise ConfigError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class Trajectory:
    """Recorded time levels of a run.

    ``states`` are full concatenated state vectors (both components for two
    field systems). ``newton_iterations`` and ``step_seconds`` are per step,
    recorded or not.
    """

    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    newton_iterations: list = field(default_factory=list)
    step_seconds: list = field(default_factory=list)
    steady: bool = False
    dt: float = float("nan")
    stride: int = 1

    def append(self, t, w):
        self.times.append(float(t))
        self.states.append(np.array(w, copy=True))

    @property
    def wall_clock(self) -> float:
        return float(np.sum(self.step_seconds))

    def matrix(self) -> np.ndarray:
        return np.column_stack(self.states)


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residuals: list


class _DirectSolve:
    def __init__(self, J):
        if sp.issparse(J):
            self._lu = spla.splu(sp.csc_matrix(J))
            self.solve = self._lu.solve
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                self._lu = sla.lu_factor(np.asarray(J))
            if np.any(np.diag(self._lu[0]) == 0):
                raise np.linalg.LinAlgError("exactly singular matrix")
            self.solve = lambda r: sla.lu_solve(self._lu, r)


def _as_solver(J):
    if hasattr(J, "solve"):
        return J
    try:
        return _DirectSolve(J)
    except (RuntimeError, np.linalg.LinAlgError, ValueError) as exc:
        raise StepFailure(f"singular Newton matrix: {exc}") from exc


def newton_solve(residual_fn, jacobian_fn, guess, solver: SolverConfig) -> NewtonResult:
    """Solve ``residual_fn(x) = 0`` starting from ``guess``.

    ``jacobian_fn(x)`` returns a dense or sparse matrix, or any object with a
    ``solve(rhs)`` method. Raises :class:`StepFailure` if the residual norm is
    still above ``solver.newton_tol`` after ``solver.max_newton_iters`` updates.
    """
    x = np.array(guess, dtype=float, copy=True)
    r = residual_fn(x)
    history = [float(np.linalg.norm(r))]
    if solver.max_newton_iters == 0:
        raise StepFailure("max_newton_iters = 0 allows no Newton update", history)
    for it in range(solver.max_newton_iters + 1):
        if history[-1] <= solver.newton_tol:
            return NewtonResult(x, it, history)
        if it == solver.max_newton_iters:
            break
        dx = _as_solver(jacobian_fn(x)).solve(-r)
        if not np.all(np.isfinite(dx)):
            raise StepFailure("non-finite Newton update", history)
        x = x + dx
        r = residual_fn(x)
        history.append(float(np.linalg.norm(r)))
    raise StepFailure(
        f"Newton did not reach {solver.newton_tol:g} in {solver.max_newton_iters} iterations "
        f"(last residual {history[-1]:.3e})", history)


def avf_step(system, state, dt: float, solver: SolverConfig):
    """One AVF step; returns ``(new_state, NewtonResult)``."""
    state = np.asarray(state, dtype=float)
    if not np.all(np.isfinite(state)):
        raise StepFailure("non-finite state")
    res = newton_solve(
        lambda x: system.residual(x, state, dt),
        lambda x: system.newton_matrix(x, state, dt, solver),
        state, solver)
    return res.x, res


def run_to_steady_state(system, w0, grid: TimeGrid, solver: SolverConfig,
                        snapshot_every: int = 1, stop_at_steady: bool = True,
                        n_steps: int | None = None) -> Trajectory:
    """Step until every component's relative change is below ``solver.steady_tol``.

    The relative change of each component uses ``system.component_norms``.
    Levels ``0, s, 2s, ...`` (``s = snapshot_every``) are recorded together
    with the final level. ``n_steps`` overrides the step budget of ``grid``.
    A :class:`StepFailure` carries the levels recorded so far as ``partial``.
    """
    if snapshot_every < 1:
        raise ConfigError("snapshot_every must be at least 1")
    total = grid.n_steps if n_steps is None else int(n_steps)
    traj = Trajectory(dt=grid.dt, stride=snapshot_every)
    w = np.array(w0, dtype=float, copy=True)
    traj.append(0.0, w)
    for n in range(total):
        t0 = time.perf_counter()
        try:
            w_new, res = avf_step(system, w, grid.dt, solver)
        except StepFailure as exc:
            exc.time_level = n + 1
            exc.partial = traj
            raise
        traj.step_seconds.append(time.perf_counter() - t0)
        traj.newton_iterations.append(res.iterations)
        level = n + 1
        diff = system.component_norms(w_new - w)
        ref = system.component_norms(w)
        rel = [d / max(r, solver.steady_floor) for d, r in zip(diff, ref)]
        w = w_new
        done = stop_at_steady and all(x <= solver.steady_tol for x in rel)
        if level % snapshot_every == 0 or done or level == total:
            traj.append(level * grid.dt, w)
        if done:
            traj.steady = True
            log.info("steady state after %d steps (t = %g)", level, level * grid.dt)
            break
    return traj


class SemiDiscreteSystem:
    """Generic ``M w' = -K w + b(w)`` with an optional nonlinear load.

    ``nonlinear(w)`` and ``nonlinear_jacobian(w)`` evaluate ``b`` and its
    Jacobian; the AVF average is taken with the two-point Gauss rule in xi.
    Residuals are scaled by ``dt``.
    """

    def __init__(self, M, K, nonlinear=None, nonlinear_jacobian=None):
        self.M = M
        self.K = K
        self.nonlinear = nonlinear
        self.nonlinear_jacobian = nonlinear_jacobian
        self.n = M.shape[0]

    def component_norms(self, w):
        return [math.sqrt(max(float(w @ (self.M @ w)), 0.0))]

    def residual(self, w1, w0, dt):
        r = self.M @ (w1 - w0) + 0.5 * dt * (self.K @ (w1 + w0))
        if self.nonlinear is not None:
            for xi, wt in zip(AVF_NODES, AVF_WEIGHTS):
                r = r - dt * wt * self.nonlinear(xi * w1 + (1 - xi) * w0)
        return r

    def newton_matrix(self, w1, w0, dt, solver=None):
        J = self.M + 0.5 * dt * self.K
        if self.nonlinear_jacobian is not None:
            for xi, wt in zip(AVF_NODES, AVF_WEIGHTS):
                J = J - dt * wt * xi * self.nonlinear_jacobian(xi * w1 + (1 - xi) * w0)
        return J
