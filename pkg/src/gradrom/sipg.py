"""Symmetric interior penalty dG space and operator assembly on periodic meshes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, InputError
from .mesh import Mesh
from .quadrature import edge_rule, lagrange_basis, local_dimension, triangle_rule


def default_penalty(q: int) -> float:
    return 10.0 * q * q


class DGSpace:
    """Discontinuous piecewise polynomials of degree ``q`` with a nodal basis.

    Global dofs are element-major: dof ``k*n_q + i`` is local node ``i`` of
    element ``k``.
    """

    def __init__(self, mesh: Mesh, q: int = 1, penalty: float | None = None):
        if q not in (1, 2):
            raise ConfigError(f"polynomial degree must be 1 or 2, got {q}")
        penalty = default_penalty(q) if penalty is None else float(penalty)
        if not penalty > 0:
            raise ConfigError(f"penalty must be positive, got {penalty}")
        self.mesh = mesh
        self.q = q
        self.penalty = penalty
        self.n_q = local_dimension(q)
        self.n_K = mesh.n_elements
        self.N = self.n_K * self.n_q

        p = mesh.vertices[mesh.triangles]
        self.origin = p[:, 0]
        self.jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # (nK, 2, 2)
        self.det = self.jac[:, 0, 0] * self.jac[:, 1, 1] - self.jac[:, 0, 1] * self.jac[:, 1, 0]
        self.jac_inv = np.linalg.inv(self.jac)

        # rule used for the mass and volume stiffness terms, and the one
        # shared by nonlinear loads, their Jacobians and the potential
        self.linear_rule = triangle_rule(2 * q)
        self.nonlinear_rule = triangle_rule(4 * q)
        self.edge_degree = 2 * q + 1
        self._phi_nl, _ = lagrange_basis(q, self.nonlinear_rule.points)
        self._wdet_nl = np.abs(self.det)[:, None] * self.nonlinear_rule.weights[None, :]

    def dofs(self, elements) -> np.ndarray:
        elements = np.asarray(elements)
        return elements[..., None] * self.n_q + np.arange(self.n_q)

    def to_reference(self, elements, x) -> np.ndarray:
        """Reference coordinates of physical points ``x`` (..., 2) in ``elements``."""
        d = x - self.origin[elements]
        return np.einsum("...ij,...j->...i", self.jac_inv[elements], d)

    def node_coordinates(self) -> np.ndarray:
        """Physical coordinates of every dof, shape (N, 2)."""
        from .quadrature import lagrange_nodes

        ref = lagrange_nodes(self.q)
        x = self.origin[:, None, :] + np.einsum("kij,nj->kni", self.jac, ref)
        return x.reshape(-1, 2)

    # -- fields at quadrature points -------------------------------------------------

    def values_at_quadrature(self, w: np.ndarray) -> np.ndarray:
        """Field values at the nonlinear rule points, shape (n_K, n_qp)."""
        return w.reshape(self.n_K, self.n_q) @ self._phi_nl.T

    def load(self, g: np.ndarray) -> np.ndarray:
        """Vector of integrals of quadrature-point data ``g`` against each basis function."""
        return ((self._wdet_nl * g) @ self._phi_nl).ravel()

    def local_mass_weighted(self, g: np.ndarray) -> np.ndarray:
        """Element blocks of the integrals of ``g`` times basis products, (n_K, n_q, n_q)."""
        return np.einsum("kp,pi,pj->kij", self._wdet_nl * g, self._phi_nl, self._phi_nl)

    def integrate(self, g: np.ndarray) -> float:
        return float(np.sum(self._wdet_nl * g))

    def block_diagonal(self, blocks: np.ndarray) -> sp.csr_matrix:
        rows = np.repeat(self.dofs(np.arange(self.n_K)), self.n_q, axis=1).reshape(self.n_K, self.n_q, self.n_q)
        cols = np.transpose(rows, (0, 2, 1))
        return sp.csr_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(self.N, self.N))


@dataclass(frozen=True)
class AssembledOperators:
    space: DGSpace
    M: sp.csr_matrix
    A: sp.csr_matrix
    mass_blocks: np.ndarray = field(repr=False)
    quadrature: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.space.N

    def solve_mass(self, rhs: np.ndarray) -> np.ndarray:
        """Apply the inverse of the block-diagonal mass matrix."""
        nK, nq = self.space.n_K, self.space.n_q
        x = np.linalg.solve(self.mass_blocks, np.asarray(rhs).reshape(nK, nq, 1))
        return x.reshape(-1)

    def diagonal_blocks(self, matrix) -> np.ndarray:
        """Element diagonal blocks (n_K, n_q, n_q) of a sparse N x N matrix."""
        space = self.space
        dofs = space.dofs(np.arange(space.n_K))
        rows = np.repeat(dofs, space.n_q, axis=1).ravel()
        cols = np.tile(dofs, (1, space.n_q)).ravel()
        vals = np.asarray(sp.csr_matrix(matrix)[rows, cols]).ravel()
        return vals.reshape(space.n_K, space.n_q, space.n_q)


def mass_blocks(space: DGSpace) -> np.ndarray:
    rule = space.linear_rule
    phi, _ = lagrange_basis(space.q, rule.points)
    local = np.einsum("p,pi,pj->ij", rule.weights, phi, phi)
    return np.abs(space.det)[:, None, None] * local[None]


def assemble_mass(space: DGSpace) -> sp.csr_matrix:
    return space.block_diagonal(mass_blocks(space))


def _face_data(space: DGSpace):
    """Faces as (plus element, minus element, endpoints on the plus side, shift, normal, length)."""
    m = space.mesh
    v = m.vertices
    kp = np.concatenate([m.interior_elements[:, 0], m.periodic_elements[:, 0]])
    km = np.concatenate([m.interior_elements[:, 1], m.periodic_elements[:, 1]])
    p0 = np.concatenate([v[m.interior_vertices[:, 0]], v[m.periodic_vertices[:, 0, 0]]])
    p1 = np.concatenate([v[m.interior_vertices[:, 1]], v[m.periodic_vertices[:, 0, 1]]])
    shift = np.concatenate([np.zeros((len(m.interior_elements), 2)), m.periodic_shifts])
    normal = np.concatenate([m.interior_normals, m.periodic_normals])
    length = np.concatenate([m.interior_lengths, m.periodic_lengths])
    return kp, km, p0, p1, shift, normal, length


def assemble_stiffness(space: DGSpace, penalty: float | None = None) -> sp.csr_matrix:
    """SIPG stiffness matrix including the periodic edge-pair terms."""
    kappa = space.penalty if penalty is None else float(penalty)
    if not kappa > 0:
        raise ConfigError(f"penalty must be positive, got {kappa}")
    q, nq = space.q, space.n_q

    # volume part
    rule = space.linear_rule
    _, dref = lagrange_basis(q, rule.points)                        # (nqp, nq, 2)
    grads = np.einsum("kji,pnj->kpni", space.jac_inv, dref)          # B^{-T} grad
    vol = np.einsum("p,kpia,kpja->kij", rule.weights, grads, grads) * np.abs(space.det)[:, None, None]
    rows = np.repeat(space.dofs(np.arange(space.n_K)), nq, axis=1).reshape(-1, nq, nq)
    cols = np.transpose(rows, (0, 2, 1))
    data_all = [vol.ravel()]
    rows_all = [rows.ravel()]
    cols_all = [cols.ravel()]

    # edge part: interior edges and periodic pairs share one formula
    kp, km, p0, p1, shift, normal, length = _face_data(space)
    s, ws = edge_rule(space.edge_degree)
    x_plus = p0[:, None, :] + s[None, :, None] * (p1 - p0)[:, None, :]     # (F, ne, 2)
    x_minus = x_plus + shift[:, None, :]
    vp, gp = _physical_basis(space, kp, x_plus)
    vm, gm = _physical_basis(space, km, x_minus)
    trace = np.concatenate([vp, -vm], axis=2)                               # jump coefficient
    flux = 0.5 * np.concatenate([np.einsum("fena,fa->fen", gp, normal),
                                 np.einsum("fena,fa->fen", gm, normal)], axis=2)
    w = ws[None, :] * length[:, None]                                       # (F, ne)
    cons = np.einsum("fe,fei,fej->fij", w, trace, flux)                     # {grad w}.n [phi]
    pen = np.einsum("fe,fei,fej->fij", w, trace, trace) * (kappa / length)[:, None, None]
    local = pen - cons - np.transpose(cons, (0, 2, 1))
    dof = np.concatenate([space.dofs(kp), space.dofs(km)], axis=1)          # (F, 2nq)
    r = np.repeat(dof, 2 * nq, axis=1).reshape(-1, 2 * nq, 2 * nq)
    data_all.append(local.ravel())
    rows_all.append(r.ravel())
    cols_all.append(np.transpose(r, (0, 2, 1)).ravel())

    A = sp.coo_matrix((np.concatenate(data_all),
                       (np.concatenate(rows_all), np.concatenate(cols_all))),
                      shape=(space.N, space.N)).tocsr()
    A.sum_duplicates()
    return A


def _physical_basis(space, elements, x):
    ref = space.to_reference(elements[:, None], x)
    vals, dref = lagrange_basis(space.q, ref)
    grads = np.einsum("fji,fenj->feni", space.jac_inv[elements], dref)
    return vals, grads


def assemble_operators(space: DGSpace) -> AssembledOperators:
    blocks = mass_blocks(space)
    return AssembledOperators(
        space=space,
        M=space.block_diagonal(blocks),
        A=assemble_stiffness(space),
        mass_blocks=blocks,
        quadrature={
            "mass_stiffness": space.linear_rule.name,
            "nonlinear": space.nonlinear_rule.name,
            "edge_degree": space.edge_degree,
        },
    )


def _check(space, *ws):
    for w in ws:
        if np.shape(w) != (space.N,):
            raise InputError(f"expected a coefficient vector of length {space.N}, got shape {np.shape(w)}")


def assemble_nonlinear(space: DGSpace, f, u, v=None) -> np.ndarray:
    """Load vector of ``f(u_h, v_h)`` against every basis function."""
    if v is None:
        v = np.zeros(space.N)
    _check(space, u, v)
    g = f(space.values_at_quadrature(u), space.values_at_quadrature(v))
    return space.load(np.broadcast_to(g, space._wdet_nl.shape))


def assemble_nonlinear_jacobian(space: DGSpace, df, u, v=None) -> sp.csr_matrix:
    """Block-diagonal matrix of ``df(u_h, v_h)`` times basis products.

    Pass the partial derivative of the reaction with respect to the field
    being differentiated; the result is the Jacobian of
    :func:`assemble_nonlinear` with respect to that field's coefficients.
    """
    if v is None:
        v = np.zeros(space.N)
    _check(space, u, v)
    g = df(space.values_at_quadrature(u), space.values_at_quadrature(v))
    return space.block_diagonal(space.local_mass_weighted(np.broadcast_to(g, space._wdet_nl.shape)))


def potential_integral(space: DGSpace, F, u, v) -> float:
    return space.integrate(F(space.values_at_quadrature(u), space.values_at_quadrature(v)))


def evaluate_energy(model, operators: AssembledOperators, u, v) -> float:
    """Discrete free energy of the state ``(u, v)``."""
    space = operators.space
    _check(space, u, v)
    A = operators.A
    pot = potential_integral(space, model.potential, u, v)
    if model.name == "rgl":
        return 0.5 * float(u @ (A @ u)) + 0.5 * float(v @ (A @ v)) - pot
    if model.name == "sh":
        return -float(u @ (A @ v)) - pot
    raise InputError(f"unknown model {model.name!r}")
