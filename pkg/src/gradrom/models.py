"""Real Ginzburg-Landau and Swift-Hohenberg full-order systems.

Linear reaction terms (``mu*u``, ``mu*v``, ``-v``, ``u - v``) are treated as
mass-matrix terms; only the cubic parts are assembled as nonlinear loads.
All residuals are scaled by the time step: the first block row of every
step residual reads ``M (w1 - w0) - dt * (...)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, InputError, StepFailure
from .integrator import AVF_NODES, AVF_WEIGHTS
from .sipg import AssembledOperators, evaluate_energy


@dataclass(frozen=True)
class ModelSpec:
    name: str
    mu: float

    def __post_init__(self):
        if self.name not in ("rgl", "sh"):
            raise ConfigError(f"unknown model {self.name!r}")

    @property
    def coupling(self) -> str:
        return "parabolic-parabolic" if self.name == "rgl" else "parabolic-elliptic"

    # pure cubic parts and their partial derivatives -------------------------------

    def cubic(self, u, v):
        if self.name == "rgl":
            r2 = u * u + v * v
            return -r2 * u, -r2 * v
        return -u**3, None

    def cubic_derivatives(self, u, v):
        """``((dg1/du, dg1/dv), (dg2/du, dg2/dv))``; SH has no second cubic."""
        if self.name == "rgl":
            uv = -2.0 * u * v
            return (-(3 * u * u + v * v), uv), (uv, -(u * u + 3 * v * v))
        return (-3.0 * u * u, 0.0 * u), None

    # full reactions and potential --------------------------------------------------

    def reaction(self, u, v):
        mu = self.mu
        if self.name == "rgl":
            r2 = u * u + v * v
            return mu * u - r2 * u, mu * v - r2 * v
        return mu * u - u**3 - v, u - v

    def potential(self, u, v):
        mu = self.mu
        if self.name == "rgl":
            r2 = u * u + v * v
            return 0.5 * mu * r2 - 0.25 * r2 * r2
        return 0.5 * mu * u * u - 0.25 * u**4 - u * v + 0.5 * v * v

    def potential_gradient(self, u, v):
        mu = self.mu
        if self.name == "rgl":
            r2 = u * u + v * v
            return mu * u - r2 * u, mu * v - r2 * v
        return mu * u - u**3 - v, -u + v

    @property
    def Q(self) -> np.ndarray:
        return np.eye(2) if self.name == "rgl" else np.diag([1.0, -1.0])


def rgl_model(mu: float = 0.5) -> ModelSpec:
    return ModelSpec("rgl", float(mu))


def sh_model(mu: float = 0.3) -> ModelSpec:
    return ModelSpec("sh", float(mu))


class _FOMBase:
    def __init__(self, model: ModelSpec, operators: AssembledOperators):
        self.model = model
        self.operators = operators
        self.space = operators.space
        self.N = operators.N
        self.n = 2 * self.N
        self.M = operators.M
        self.A = operators.A

    def split(self, w):
        return w[: self.N], w[self.N:]

    def join(self, u, v):
        return np.concatenate([u, v])

    def component_norms(self, w):
        u, v = self.split(w)
        return [math.sqrt(max(float(u @ (self.M @ u)), 0.0)),
                math.sqrt(max(float(v @ (self.M @ v)), 0.0))]

    def energy(self, w) -> float:
        u, v = self.split(w)
        return evaluate_energy(self.model, self.operators, u, v)

    def nonlinear(self, w):
        """Cubic load vectors at the state ``w`` (``(b1, b2)``, ``b2`` None for SH)."""
        u, v = self.split(w)
        sp_ = self.space
        g1, g2 = self.model.cubic(sp_.values_at_quadrature(u), sp_.values_at_quadrature(v))
        return sp_.load(g1), (None if g2 is None else sp_.load(g2))

    def _avf_points(self, w1, w0):
        """Quadrature values of both fields at the two AVF nodes in xi."""
        sp_ = self.space
        u1, v1 = self.split(w1)
        u0, v0 = self.split(w0)
        U1, U0 = sp_.values_at_quadrature(u1), sp_.values_at_quadrature(u0)
        V1, V0 = sp_.values_at_quadrature(v1), sp_.values_at_quadrature(v0)
        return [(xi, wt, xi * U1 + (1 - xi) * U0, xi * V1 + (1 - xi) * V0)
                for xi, wt in zip(AVF_NODES, AVF_WEIGHTS)]

    def _avf_load(self, pts):
        g1 = g2 = 0.0
        for _, wt, U, V in pts:
            a, b = self.model.cubic(U, V)
            g1 = g1 + wt * a
            if b is not None:
                g2 = g2 + wt * b
        load2 = None if self.model.name == "sh" else self.space.load(g2)
        return self.space.load(g1), load2

    def _avf_jacobian_blocks(self, pts):
        """Element blocks of d(avf load)/d(w1) for every (field, field) pair."""
        acc = {}
        for xi, wt, U, V in pts:
            d1, d2 = self.model.cubic_derivatives(U, V)
            rows = [d1] if d2 is None else [d1, d2]
            for i, row in enumerate(rows):
                for j, g in enumerate(row):
                    acc[i, j] = acc.get((i, j), 0.0) + wt * xi * g
        return {key: self.space.local_mass_weighted(g) for key, g in acc.items()}

    def _diag_blocks(self, matrix):
        return self.operators.diagonal_blocks(matrix)


class RGLSystem(_FOMBase):
    """``M u' = -A u + mu M u + b1``, ``M v' = -A v + mu M v + b2``."""

    def __init__(self, model, operators):
        super().__init__(model, operators)
        self._A_blocks = self._diag_blocks(self.A)

    def residual(self, w1, w0, dt):
        u1, v1 = self.split(w1)
        u0, v0 = self.split(w0)
        b1, b2 = self._avf_load(self._avf_points(w1, w0))
        c = 0.5 * dt * self.model.mu
        su, sv = u1 + u0, v1 + v0
        ru = self.M @ (u1 - u0 - c * su) + 0.5 * dt * (self.A @ su) - dt * b1
        rv = self.M @ (v1 - v0 - c * sv) + 0.5 * dt * (self.A @ sv) - dt * b2
        return np.concatenate([ru, rv])

    def _linear_part(self, dt):
        return (1.0 - 0.5 * dt * self.model.mu) * self.M + 0.5 * dt * self.A

    def newton_matrix(self, w1, w0, dt, solver=None):
        J = self._avf_jacobian_blocks(self._avf_points(w1, w0))
        if solver is None or solver.linear_solver == "direct":
            L = self._linear_part(dt)
            bd = {k: self.space.block_diagonal(v) for k, v in J.items()}
            return sp.bmat([[L - dt * bd[0, 0], -dt * bd[0, 1]],
                            [-dt * bd[1, 0], L - dt * bd[1, 1]]], format="csc")
        c = 1.0 - 0.5 * dt * self.model.mu
        Lb = c * self.operators.mass_blocks + 0.5 * dt * self._A_blocks
        nK, nq = self.space.n_K, self.space.n_q
        P = np.empty((nK, 2 * nq, 2 * nq))
        P[:, :nq, :nq] = Lb - dt * J[0, 0]
        P[:, :nq, nq:] = -dt * J[0, 1]
        P[:, nq:, :nq] = -dt * J[1, 0]
        P[:, nq:, nq:] = Lb - dt * J[1, 1]
        M, A, N = self.M, self.A, self.N
        perm = np.arange(2 * N).reshape(2, nK, nq).transpose(1, 0, 2).ravel()
        inv_perm = np.argsort(perm)

        def matvec(x):
            xu, xv = x[:N], x[N:]
            XU, XV = xu.reshape(nK, nq), xv.reshape(nK, nq)
            yu = c * (M @ xu) + 0.5 * dt * (A @ xu) - dt * (
                np.einsum("kij,kj->ki", J[0, 0], XU) + np.einsum("kij,kj->ki", J[0, 1], XV)).ravel()
            yv = c * (M @ xv) + 0.5 * dt * (A @ xv) - dt * (
                np.einsum("kij,kj->ki", J[1, 0], XU) + np.einsum("kij,kj->ki", J[1, 1], XV)).ravel()
            return np.concatenate([yu, yv])

        Pinv = np.linalg.inv(P)

        def prec(x):
            z = x[perm].reshape(nK, 2 * nq)
            return np.einsum("kij,kj->ki", Pinv, z).ravel()[inv_perm]

        return _CG(matvec, prec, 2 * N, solver.linear_tol)


class SHSystem(_FOMBase):
    """``M u' = A v + mu M u - M v + b1`` with ``0 = -A u + M u - M v``.

    The constraint is imposed on the AVF-averaged state.
    """

    def __init__(self, model, operators):
        super().__init__(model, operators)
        ops = operators
        self._AmM = (self.A - self.M).tocsr()
        minv = np.linalg.inv(ops.mass_blocks)
        self._Minv = self.space.block_diagonal(minv)
        self._P = (self._AmM @ self._Minv @ self._AmM).tocsr()
        self._P_blocks = self._diag_blocks(self._P)

    def residual(self, w1, w0, dt):
        u1, v1 = self.split(w1)
        u0, v0 = self.split(w0)
        b1, _ = self._avf_load(self._avf_points(w1, w0))
        su, sv = u1 + u0, v1 + v0
        mu = self.model.mu
        ru = self.M @ (u1 - u0 - 0.5 * dt * mu * su + 0.5 * dt * sv) - 0.5 * dt * (self.A @ sv) - dt * b1
        rv = 0.5 * (self.M @ (su - sv) - self.A @ su)
        return np.concatenate([ru, rv])

    def newton_matrix(self, w1, w0, dt, solver=None):
        J = self._avf_jacobian_blocks(self._avf_points(w1, w0))[0, 0]
        c = 1.0 - 0.5 * dt * self.model.mu
        if solver is None or solver.linear_solver == "direct":
            Jb = self.space.block_diagonal(J)
            return sp.bmat([[c * self.M - dt * Jb, -0.5 * dt * self._AmM],
                            [-0.5 * self._AmM, -0.5 * self.M]], format="csc")
        return _SHSchur(self, J, c, dt, solver.linear_tol)

    def constraint_residual(self, w):
        u, v = self.split(w)
        return self.M @ (u - v) - self.A @ u


class _CG:
    def __init__(self, matvec, prec, n, tol):
        self._op = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
        self._prec = spla.LinearOperator((n, n), matvec=prec, dtype=float)
        self._tol = tol

    def solve(self, rhs):
        if not np.any(rhs):
            return np.zeros_like(rhs)
        x, info = spla.cg(self._op, rhs, rtol=self._tol, atol=0.0, M=self._prec,
                          maxiter=20 * len(rhs))
        if info != 0:
            raise StepFailure(f"conjugate gradients failed (info={info})")
        return x


class _SHSchur:
    """Exact block elimination of the SH Newton system.

    Solves for the ``u`` update with CG on the symmetric positive definite
    Schur complement ``c M - dt J + dt/2 (A - M) M^-1 (A - M)``, then
    recovers the ``v`` update from the linearized constraint.
    """

    def __init__(self, system: SHSystem, J, c, dt, tol):
        self.s = system
        nK, nq = system.space.n_K, system.space.n_q
        M, P = system.M, system._P

        def matvec(x):
            return (c * (M @ x) + 0.5 * dt * (P @ x)
                    - dt * np.einsum("kij,kj->ki", J, x.reshape(nK, nq)).ravel())

        blocks = c * system.operators.mass_blocks + 0.5 * dt * system._P_blocks - dt * J
        Pinv = np.linalg.inv(blocks)

        def prec(x):
            return np.einsum("kij,kj->ki", Pinv, x.reshape(nK, nq)).ravel()

        self._cg = _CG(matvec, prec, system.N, tol)
        self.dt = dt

    def solve(self, rhs):
        s = self.s
        r1, r2 = s.split(rhs)
        du = self._cg.solve(r1 - self.dt * (s._AmM @ (s._Minv @ r2)))
        dv = s._Minv @ (-(s._AmM @ du) - 2.0 * r2)
        return np.concatenate([du, dv])


def rgl_system(mu: float, operators: AssembledOperators) -> RGLSystem:
    return RGLSystem(rgl_model(mu), operators)


def sh_system(mu: float, operators: AssembledOperators) -> SHSystem:
    return SHSystem(sh_model(mu), operators)


def build_system(model: ModelSpec, operators: AssembledOperators):
    return RGLSystem(model, operators) if model.name == "rgl" else SHSystem(model, operators)


def initial_condition(model: ModelSpec, operators: AssembledOperators, seed: int):
    """Seeded random nodal data around the reference constant state.

    RGL draws independent ``2 + U[0, 1]`` values for ``u`` and ``v``; SH
    draws ``u`` from ``U[-5e-5, 5e-5]`` and sets ``v`` from the constraint
    ``M v = (M - A) u``.
    """
    rng = np.random.default_rng(seed)
    N = operators.N
    if model.name == "rgl":
        u0 = 2.0 + rng.uniform(0.0, 1.0, N)
        v0 = 2.0 + rng.uniform(0.0, 1.0, N)
        return u0, v0
    if model.name == "sh":
        u0 = rng.uniform(-5e-5, 5e-5, N)
        v0 = operators.solve_mass(operators.M @ u0 - operators.A @ u0)
        return u0, v0
    raise InputError(f"unknown model {model.name!r}")
