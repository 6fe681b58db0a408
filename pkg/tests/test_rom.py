import numpy as np
import pytest

from conftest import small_ops
from gradrom.diagnostics import avf_identity_residual, check_dissipation, energy_series, l2l2_error
from gradrom.errors import InputError
from gradrom.integrator import SolverConfig, TimeGrid, run_to_steady_state
from gradrom.models import build_system, initial_condition, rgl_model, sh_model
from gradrom.reduction import MassFactor, PODBasis, compute_pod_basis, deim_build, lift
from gradrom.rom import build_rom, lift_trajectory, reduced_nonlinearity, run_rom

SOLVER = SolverConfig(linear_solver="direct")


def _fom(name, ops, steps=20, dt=0.01, seed=1):
    model = rgl_model(0.5) if name == "rgl" else sh_model(0.3)
    system = build_system(model, ops)
    u0, v0 = initial_condition(model, ops, seed)
    if name == "sh":   # lift the tiny SH noise so the cubic term matters over a short run
        u0, v0 = 1e4 * u0, 1e4 * v0
    traj = run_to_steady_state(system, np.concatenate([u0, v0]), TimeGrid(dt, steps * dt), SOLVER,
                               stop_at_steady=False)
    return model, system, u0, v0, traj


def _bases(ops, traj, eps=1e-3):
    W = traj.matrix()
    N = ops.N
    return compute_pod_basis(W[:N], ops.M, eps, seed=0), compute_pod_basis(W[N:], ops.M, eps, seed=1)


def _deims(system, traj, pod_u, pod_v, eps=1e-6):
    loads = [system.nonlinear(w) for w in traj.states]
    ops = [deim_build(np.column_stack([b[0] for b in loads]), eps, pod_u, seed=2)]
    if loads[0][1] is not None:
        ops.append(deim_build(np.column_stack([b[1] for b in loads]), eps, pod_v, seed=3))
    return ops


@pytest.fixture(scope="module")
def rgl_case():
    ops = small_ops(3, 8.0, 1)
    model, system, u0, v0, traj = _fom("rgl", ops)
    pod_u, pod_v = _bases(ops, traj)
    return ops, model, system, u0, v0, traj, pod_u, pod_v


@pytest.fixture(scope="module")
def sh_case():
    ops = small_ops(3, 10.0, 1)
    model, system, u0, v0, traj = _fom("sh", ops)
    pod_u, pod_v = _bases(ops, traj)
    return ops, model, system, u0, v0, traj, pod_u, pod_v


@pytest.mark.parametrize("name,length,q", [("rgl", 8.0, 1), ("sh", 10.0, 1), ("rgl", 8.0, 2), ("sh", 10.0, 2)])
def test_full_basis_reproduces_fom(name, length, q):
    ops = small_ops(3, length, q)
    model, system, u0, v0, traj = _fom(name, ops, steps=10)
    full = PODBasis(MassFactor(ops.M, ops.space.n_q).R_inv(np.eye(ops.N)))
    rs = build_rom(model, ops, full, full)
    rtraj = run_rom(rs, rs.initial_state(u0, v0), TimeGrid(0.01, 0.1), SOLVER)
    lifted = lift_trajectory(rs, rtraj)
    assert len(lifted) == len(traj.states)
    assert max(np.abs(a - b).max() for a, b in zip(lifted, traj.states)) <= 1e-8
    assert np.all(l2l2_error(traj, lifted, ops.M, 0.01) <= 1e-7)


def test_reduced_matrices_rgl(rgl_case):
    ops, model, _, _, _, _, pod_u, pod_v = rgl_case
    rs = build_rom(model, ops, pod_u, pod_v)
    assert np.abs(rs.Au - rs.Au.T).max() <= 1e-12 * max(1.0, np.abs(rs.Au).max())
    assert np.abs(rs.Mu - np.eye(rs.ku)).max() <= 1e-10
    assert np.abs(rs.Mv - np.eye(rs.kv)).max() <= 1e-10
    assert rs.ku < ops.N and rs.kv < ops.N


def test_reduced_matrices_sh(sh_case):
    ops, model, _, _, _, _, pod_u, pod_v = sh_case
    rs = build_rom(model, ops, pod_u, pod_v)
    assert np.abs(rs.Mu - np.eye(rs.ku)).max() <= 1e-10
    assert np.allclose(rs.A2, rs.A2.T, atol=1e-12 * np.abs(rs.A2).max())
    M, A = ops.M, ops.A
    Pu, Pv = pod_u.Psi, pod_v.Psi
    assert np.allclose(rs.A1, Pu.T @ (A @ Pv))
    assert np.allclose(rs.M2, Pu.T @ (M @ Pv))


@pytest.mark.parametrize("case", ["rgl_case", "sh_case"])
def test_zero_state_gives_zero_loads(case, request):
    ops, model, system, _, _, traj, pod_u, pod_v = request.getfixturevalue(case)
    for deims in ((), _deims(system, traj, pod_u, pod_v)):
        rs = build_rom(model, ops, pod_u, pod_v, *deims)
        b1, b2 = reduced_nonlinearity(rs, np.zeros(rs.ku), np.zeros(rs.kv))
        assert np.all(b1 == 0)
        assert (b2 is None) == (model.name == "sh")
        if b2 is not None:
            assert np.all(b2 == 0)


@pytest.mark.parametrize("case", ["rgl_case", "sh_case"])
def test_galerkin_load_is_projected_fom_load(case, request, rng):
    ops, model, system, _, _, _, pod_u, pod_v = request.getfixturevalue(case)
    rs = build_rom(model, ops, pod_u, pod_v)
    ur, vr = rng.standard_normal(rs.ku), rng.standard_normal(rs.kv)
    full = system.nonlinear(np.concatenate([pod_u.Psi @ ur, pod_v.Psi @ vr]))
    got = reduced_nonlinearity(rs, ur, vr)
    for b, br, pod in zip(full, got, (pod_u, pod_v)):
        if b is None:
            continue
        ref = pod.Psi.T @ b
        assert np.allclose(br, ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())


@pytest.mark.parametrize("case", ["rgl_case", "sh_case"])
def test_deim_matches_dense_formula(case, request, rng):
    ops, model, system, _, _, traj, pod_u, pod_v = request.getfixturevalue(case)
    deims = _deims(system, traj, pod_u, pod_v)
    rs = build_rom(model, ops, pod_u, pod_v, *deims)
    ur, vr = 0.1 * rng.standard_normal(rs.ku), 0.1 * rng.standard_normal(rs.kv)
    full = system.nonlinear(np.concatenate([pod_u.Psi @ ur, pod_v.Psi @ vr]))
    got = reduced_nonlinearity(rs, ur, vr)
    for op, pod, b, br in zip(deims, (pod_u, pod_v), full, got):
        P = np.zeros((ops.N, op.m))
        P[op.indices, np.arange(op.m)] = 1.0
        ref = pod.Psi.T @ op.Q @ np.linalg.solve(P.T @ op.Q, P.T @ b)
        assert np.allclose(br, ref, rtol=1e-12, atol=1e-12 * np.abs(ref).max())


def test_deim_equals_galerkin_on_its_range(rgl_case, rng):
    ops, model, system, _, _, _, pod_u, pod_v = rgl_case
    states = [rng.standard_normal(pod_u.k + pod_v.k) for _ in range(4)]
    loads = [system.nonlinear(np.concatenate([pod_u.Psi @ s[:pod_u.k], pod_v.Psi @ s[pod_u.k:]]))
             for s in states]
    d1 = deim_build(np.column_stack([b[0] for b in loads]), 0.0, pod_u, seed=0)
    d2 = deim_build(np.column_stack([b[1] for b in loads]), 0.0, pod_v, seed=0)
    gal = build_rom(model, ops, pod_u, pod_v)
    deim = build_rom(model, ops, pod_u, pod_v, d1, d2)
    s = states[2]
    a = reduced_nonlinearity(gal, s[:pod_u.k], s[pod_u.k:])
    b = reduced_nonlinearity(deim, s[:pod_u.k], s[pod_u.k:])
    for x, y in zip(a, b):
        assert np.abs(x - y).max() <= 1e-10 * max(1.0, np.abs(x).max())


def test_deim_rows_per_evaluation(rgl_case, sh_case):
    for case in (rgl_case, sh_case):
        ops, model, system, _, _, traj, pod_u, pod_v = case
        deims = _deims(system, traj, pod_u, pod_v)
        rs = build_rom(model, ops, pod_u, pod_v, *deims)
        assert rs.mode == "deim"
        assert rs.rows_per_evaluation == sum(d.m for d in deims)
        assert all(s.PU.shape[0] == d.m for s, d in zip(rs._samplers, deims))


@pytest.mark.parametrize("case", ["rgl_case", "sh_case"])
@pytest.mark.parametrize("use_deim", [False, True])
def test_newton_matrix_matches_finite_differences(case, use_deim, request, rng):
    ops, model, system, _, _, traj, pod_u, pod_v = request.getfixturevalue(case)
    deims = _deims(system, traj, pod_u, pod_v) if use_deim else ()
    rs = build_rom(model, ops, pod_u, pod_v, *deims)
    w0 = 0.3 * rng.standard_normal(rs.n)
    w1 = w0 + 0.01 * rng.standard_normal(rs.n)
    dt, h = 0.05, 1e-6
    J = rs.newton_matrix(w1, w0, dt)
    fd = np.column_stack([(rs.residual(w1 + h * e, w0, dt) - rs.residual(w1 - h * e, w0, dt)) / (2 * h)
                          for e in np.eye(rs.n)])
    assert np.allclose(J, fd, rtol=1e-6, atol=1e-7 * np.abs(J).max())


def test_sh_initial_state_satisfies_reduced_constraint(sh_case):
    ops, model, _, u0, v0, _, pod_u, pod_v = sh_case
    rs = build_rom(model, ops, pod_u, pod_v)
    w = rs.initial_state(u0, v0)
    ur, vr = rs.split(w)
    assert np.allclose(ur, pod_u.Psi.T @ (ops.M @ u0))
    assert np.abs(rs.Cu @ ur - rs.Cv @ vr).max() <= 1e-12 * max(1.0, np.abs(vr).max())


def test_rgl_initial_state_is_mass_projection(rgl_case):
    ops, model, _, u0, v0, _, pod_u, pod_v = rgl_case
    rs = build_rom(model, ops, pod_u, pod_v)
    w = rs.initial_state(u0, v0)
    assert np.allclose(w, np.r_[pod_u.project(ops.M, u0), pod_v.project(ops.M, v0)])


def test_galerkin_rgl_energy_identity_and_dissipation(rgl_case):
    ops, model, _, u0, v0, _, pod_u, pod_v = rgl_case
    rs = build_rom(model, ops, pod_u, pod_v)
    rtraj = run_rom(rs, rs.initial_state(u0, v0), TimeGrid(0.01, 0.2), SolverConfig())
    lifted = lift_trajectory(rs, rtraj)
    E = energy_series(lifted, model, ops)
    assert check_dissipation(E).passed
    r = avf_identity_residual(lifted, model, ops, 0.01)
    assert np.abs(r).max() <= 1e-6 * (1 + np.abs(E.values).max())
    assert max(rtraj.newton_iterations) <= 3


def test_galerkin_sh_dissipation(sh_case):
    ops, model, _, u0, v0, _, pod_u, pod_v = sh_case
    rs = build_rom(model, ops, pod_u, pod_v)
    rtraj = run_rom(rs, rs.initial_state(u0, v0), TimeGrid(0.01, 0.2), SolverConfig())
    lifted = lift_trajectory(rs, rtraj)
    E = energy_series(lifted, model, ops)
    assert check_dissipation(E).passed
    r = avf_identity_residual(lifted, model, ops, 0.01)
    assert np.abs(r).max() <= 1e-6 * (1 + np.abs(E.values).max())


def test_rom_horizon_matches_fom_steps(rgl_case):
    ops, model, _, u0, v0, traj, pod_u, pod_v = rgl_case
    rs = build_rom(model, ops, pod_u, pod_v)
    rtraj = run_rom(rs, rs.initial_state(u0, v0), TimeGrid(0.01, 5.0), SOLVER, n_steps=7)
    assert len(rtraj.states) == 8
    assert np.allclose(rtraj.times, 0.01 * np.arange(8))


def test_lift_matches_psi_product(rgl_case, rng):
    ops, model, _, _, _, _, pod_u, pod_v = rgl_case
    rs = build_rom(model, ops, pod_u, pod_v)
    wr = rng.standard_normal(rs.n)
    assert np.allclose(rs.lift(wr), np.r_[lift(pod_u, wr[:rs.ku]), lift(pod_v, wr[rs.ku:])])


def test_dimension_checks(rgl_case, sh_case):
    ops, model, system, u0, v0, traj, pod_u, pod_v = rgl_case
    other = small_ops(2, 8.0, 1)
    with pytest.raises(InputError):
        build_rom(model, other, pod_u, pod_v)
    d1, d2 = _deims(system, traj, pod_u, pod_v)
    with pytest.raises(InputError):
        build_rom(model, ops, pod_u, pod_v, d1)
    rs = build_rom(model, ops, pod_u, pod_v)
    with pytest.raises(InputError):
        reduced_nonlinearity(rs, np.zeros(rs.ku + 1), np.zeros(rs.kv))
    with pytest.raises(InputError):
        run_rom(rs, np.zeros(rs.n + 1), TimeGrid(0.01, 0.1), SOLVER)
    sops, smodel, *_ , spu, spv = sh_case
    with pytest.raises(InputError):
        build_rom(smodel, sops, spu, spv, d1, d2)
