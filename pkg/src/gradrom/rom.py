"""POD-Galerkin and POD-DEIM reduced systems for the RGL and SH models.

Reduced coordinates are coefficients in separate mass-orthonormal bases for
``u`` and ``v``. Both modes evaluate the cubic loads from basis values at the
nonlinear quadrature points; galerkin mode integrates over every element and
projects with the basis, deim mode integrates only the rows picked by the
DEIM indices (one element each) and applies the precomputed ``B``.
"""
from __future__ import annotations

import math
import time

import numpy as np

from .errors import InputError
from .integrator import AVF_NODES, AVF_WEIGHTS, SolverConfig, TimeGrid, Trajectory, run_to_steady_state
from .models import ModelSpec
from .reduction import DEIMOperator, PODBasis
from .sipg import AssembledOperators, evaluate_energy


class _Sampler:
    """Basis values at a set of quadrature points plus integration weights.

    ``PU`` and ``PV`` have shape (rows, n_qp, k); ``W`` (rows, n_qp) holds
    quadrature weights times the test function of each row.
    """

    def __init__(self, PU, PV, W):
        self.PU, self.PV, self.W = PU, PV, W

    def values(self, ur, vr):
        return self.PU @ ur, self.PV @ vr

    def rows(self, g):
        return np.sum(self.W * g, axis=1)

    def row_jacobian(self, g, basis):
        return np.einsum("mq,mqa->ma", self.W * g, basis)


def _basis_at_quadrature(space, Psi, elements):
    """Values of every basis vector at the nonlinear rule points of ``elements``."""
    local = Psi[space.dofs(elements)]                  # (r, n_q, k)
    return np.einsum("qi,rik->rqk", space._phi_nl, local)


class ReducedSystem:
    """Reduced AVF system in reduced coordinates ``w_r = (u_r, v_r)``.

    The SH constraint is tested with the ``v`` basis, so the reduced system
    is square for any pair of mode counts.
    """

    def __init__(self, model: ModelSpec, operators: AssembledOperators, pod_u: PODBasis,
                 pod_v: PODBasis, deim1: DEIMOperator | None = None, deim2: DEIMOperator | None = None):
        t0 = time.perf_counter()
        N = operators.N
        if pod_u.Psi.shape[0] != N or pod_v.Psi.shape[0] != N:
            raise InputError(f"basis row count does not match the space dimension {N}")
        if model.name == "sh" and deim2 is not None:
            raise InputError("the SH model has a single nonlinear component")
        self.mode = "deim" if deim1 is not None else "galerkin"
        if self.mode == "deim" and model.name == "rgl" and deim2 is None:
            raise InputError("deim mode for RGL needs operators for both nonlinearities")
        self.model = model
        self.operators = operators
        self.space = space = operators.space
        self.pod_u, self.pod_v = pod_u, pod_v
        self.deim1, self.deim2 = deim1, deim2
        Pu, Pv = pod_u.Psi, pod_v.Psi
        self.ku, self.kv = Pu.shape[1], Pv.shape[1]
        self.n = self.ku + self.kv
        M, A = operators.M, operators.A
        MPu, MPv, APu, APv = M @ Pu, M @ Pv, A @ Pu, A @ Pv
        self.Mu = Pu.T @ MPu
        self.Mv = Pv.T @ MPv
        if model.name == "rgl":
            self.Au = Pu.T @ APu
            self.Av = Pv.T @ APv
        else:
            self.A1 = Pu.T @ APv          # Psi_u^T A Psi_v
            self.A2 = Pu.T @ APu          # Psi_u^T A Psi_u
            self.M2 = Pu.T @ MPv          # Psi_u^T M Psi_v
            self.Cu = Pv.T @ (MPu - APu)  # constraint, tested with Psi_v
            self.Cv = self.Mv

        for op, pod in ((deim1, pod_u), (deim2, pod_v)):
            if op is not None:
                if op.Q.shape[0] != N or op.B.shape[0] != pod.k:
                    raise InputError("DEIM operator does not match the basis dimensions")

        nq = space.n_q
        if self.mode == "galerkin":
            allk = np.arange(space.n_K)
            PU = _basis_at_quadrature(space, Pu, allk)
            PV = _basis_at_quadrature(space, Pv, allk)
            s = _Sampler(PU, PV, space._wdet_nl)
            self._samplers = [s, s] if model.name == "rgl" else [s]
            self.rows_per_evaluation = N * (2 if model.name == "rgl" else 1)
        else:
            self._samplers = []
            for op in (deim1, deim2):
                if op is None:
                    continue
                el, loc = op.indices // nq, op.indices % nq
                W = space._wdet_nl[el] * space._phi_nl[:, loc].T
                self._samplers.append(_Sampler(_basis_at_quadrature(space, Pu, el),
                                               _basis_at_quadrature(space, Pv, el), W))
            self.rows_per_evaluation = sum(op.m for op in (deim1, deim2) if op is not None)
        self.offline_seconds = time.perf_counter() - t0

    # -- helpers ---------------------------------------------------------------------

    @property
    def ms(self):
        return tuple(op.m for op in (self.deim1, self.deim2) if op is not None)

    def split(self, wr):
        return wr[: self.ku], wr[self.ku:]

    def join(self, ur, vr):
        return np.concatenate([ur, vr])

    def component_norms(self, wr):
        ur, vr = self.split(wr)
        return [math.sqrt(max(float(ur @ self.Mu @ ur), 0.0)),
                math.sqrt(max(float(vr @ self.Mv @ vr), 0.0))]

    def lift(self, wr):
        ur, vr = self.split(np.asarray(wr))
        return np.concatenate([self.pod_u.Psi @ ur, self.pod_v.Psi @ vr])

    def energy(self, wr) -> float:
        ur, vr = self.split(np.asarray(wr))
        return evaluate_energy(self.model, self.operators, self.pod_u.Psi @ ur, self.pod_v.Psi @ vr)

    def _test_bases(self, i):
        s = self._samplers[i]
        return s.PU if i == 0 else s.PV

    def _project(self, i, vec):
        """Map integrated rows (galerkin: per element dof; deim: m rows) to the reduced space."""
        if self.mode == "deim":
            op = self.deim1 if i == 0 else self.deim2
            return op.B @ vec
        return vec

    def _reduced_load(self, i, g):
        s = self._samplers[i]
        if self.mode == "galerkin":
            T = self._test_bases(i)
            return (s.W * g).ravel() @ T.reshape(-1, T.shape[2])
        return self._project(i, s.rows(g))

    def _reduced_jacobian(self, i, g, trial):
        s = self._samplers[i]
        basis = s.PU if trial == 0 else s.PV
        if self.mode == "galerkin":
            T = self._test_bases(i)
            T = T.reshape(-1, T.shape[2]) * (s.W * g).reshape(-1, 1)
            return T.T @ basis.reshape(-1, basis.shape[2])
        return self._project(i, s.row_jacobian(g, basis))

    def initial_state(self, u0, v0):
        """``Psi^T M w0`` per component; SH takes ``v_r`` from the reduced constraint."""
        M = self.operators.M
        ur = self.pod_u.Psi.T @ (M @ u0)
        if self.model.name == "sh":
            vr = np.linalg.solve(self.Cv, self.Cu @ ur)
        else:
            vr = self.pod_v.Psi.T @ (M @ v0)
        return np.concatenate([ur, vr])

    # -- nonlinearity --------------------------------------------------------------

    def nonlinear(self, ur, vr):
        out = []
        for i in range(len(self._samplers)):
            U, V = self._samplers[i].values(ur, vr)
            g = self.model.cubic(U, V)[i]
            out.append(self._reduced_load(i, g))
        return out

    def _avf(self, w1, w0, jac=False):
        u1, v1 = self.split(w1)
        u0, v0 = self.split(w0)
        loads, jacs = [], []
        for i, s in enumerate(self._samplers):
            U1, V1 = s.values(u1, v1)
            U0, V0 = s.values(u0, v0)
            g = 0.0
            dg = [0.0, 0.0]
            for xi, wt in zip(AVF_NODES, AVF_WEIGHTS):
                U, V = xi * U1 + (1 - xi) * U0, xi * V1 + (1 - xi) * V0
                g = g + wt * self.model.cubic(U, V)[i]
                if jac:
                    d = self.model.cubic_derivatives(U, V)[i]
                    dg = [dg[j] + wt * xi * d[j] for j in range(2)]
            loads.append(self._reduced_load(i, g))
            if jac:
                n_trial = 2 if self.model.name == "rgl" else 1
                jacs.append([self._reduced_jacobian(i, dg[j], j) for j in range(n_trial)])
        return loads, jacs

    # -- AVF system ------------------------------------------------------------------

    def residual(self, w1, w0, dt):
        u1, v1 = self.split(w1)
        u0, v0 = self.split(w0)
        (b1, *rest), _ = self._avf(w1, w0)
        mu = self.model.mu
        su, sv = u1 + u0, v1 + v0
        if self.model.name == "rgl":
            ru = self.Mu @ (u1 - u0 - 0.5 * dt * mu * su) + 0.5 * dt * (self.Au @ su) - dt * b1
            rv = self.Mv @ (v1 - v0 - 0.5 * dt * mu * sv) + 0.5 * dt * (self.Av @ sv) - dt * rest[0]
        else:
            ru = (self.Mu @ (u1 - u0 - 0.5 * dt * mu * su) + 0.5 * dt * (self.M2 @ sv)
                  - 0.5 * dt * (self.A1 @ sv) - dt * b1)
            rv = 0.5 * (self.Cu @ su - self.Cv @ sv)
        return np.concatenate([ru, rv])

    def newton_matrix(self, w1, w0, dt, solver=None):
        _, jacs = self._avf(w1, w0, jac=True)
        c = 1.0 - 0.5 * dt * self.model.mu
        if self.model.name == "rgl":
            (J11, J12), (J21, J22) = jacs
            return np.block([[c * self.Mu + 0.5 * dt * self.Au - dt * J11, -dt * J12],
                             [-dt * J21, c * self.Mv + 0.5 * dt * self.Av - dt * J22]])
        (J11,), = jacs
        return np.block([[c * self.Mu - dt * J11, 0.5 * dt * (self.M2 - self.A1)],
                         [0.5 * self.Cu, -0.5 * self.Cv]])


def build_rom(model: ModelSpec, operators: AssembledOperators, pod_u: PODBasis, pod_v: PODBasis,
              deim1: DEIMOperator | None = None, deim2: DEIMOperator | None = None) -> ReducedSystem:
    return ReducedSystem(model, operators, pod_u, pod_v, deim1, deim2)


def reduced_nonlinearity(system: ReducedSystem, ur, vr):
    """Reduced cubic loads ``(b1_r, b2_r)`` (``b2_r`` None for SH)."""
    ur, vr = np.asarray(ur, dtype=float), np.asarray(vr, dtype=float)
    if ur.shape != (system.ku,) or vr.shape != (system.kv,):
        raise InputError(f"reduced state lengths must be ({system.ku}, {system.kv})")
    out = system.nonlinear(ur, vr)
    return (out[0], out[1] if len(out) > 1 else None)


def run_rom(system: ReducedSystem, wr0, grid: TimeGrid, solver: SolverConfig,
            n_steps: int | None = None, snapshot_every: int = 1,
            stop_at_steady: bool = False) -> Trajectory:
    """AVF integration of the reduced system.

    By default runs the full step budget (``n_steps`` or the grid's) without
    the steady-state stop, so the trajectory aligns with a FOM reference.
    """
    wr0 = np.asarray(wr0, dtype=float)
    if wr0.shape != (system.n,):
        raise InputError(f"reduced initial state must have length {system.n}")
    return run_to_steady_state(system, wr0, grid, solver, snapshot_every=snapshot_every,
                               stop_at_steady=stop_at_steady, n_steps=n_steps)


def lift_trajectory(system: ReducedSystem, traj: Trajectory) -> list:
    return [system.lift(w) for w in traj.states]
