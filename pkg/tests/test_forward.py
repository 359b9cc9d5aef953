import numpy as np
import pytest

from ellreg import assembly
from ellreg.experiments import ManufacturedProblem
from ellreg.forward import (
    RegularizationSchedule,
    RegularizedForwardOperator,
    ScheduleEntry,
    SingularSystemError,
    default_schedule,
    mean_zero_projection,
    minimum_s_norm_selection,
    riesz_dual_norm,
    solve_neumann_mean_zero,
)
from ellreg.mesh import build_unit_square


@pytest.fixture(scope="module")
def prob():
    return ManufacturedProblem.build(8)


def test_solve_matches_dense(prob):
    rng = np.random.Generator(np.random.Philox(key=10))
    A = rng.uniform(0.1, 10.0, size=prob.mesh.node_count)
    op = RegularizedForwardOperator(prob.mesh, A, eps=1e-3, tau=1e-4)
    V = op.solve_state(prob.P)
    dense = np.linalg.solve(op.system.toarray(), prob.P)
    assert np.linalg.norm(V - dense) <= 1e-10 * np.linalg.norm(dense)


def test_system_spd_for_positive_eps(prob):
    rng = np.random.Generator(np.random.Philox(key=11))
    A = rng.uniform(0.1, 10.0, size=prob.mesh.node_count)
    op = RegularizedForwardOperator(prob.mesh, A, eps=1e-6)
    S = op.system.toarray()
    assert np.allclose(S, S.T, atol=1e-14)
    assert np.linalg.eigvalsh(0.5 * (S + S.T)).min() > 0


def test_singular_at_eps_zero(prob):
    A = np.ones(prob.mesh.node_count)
    op = RegularizedForwardOperator(prob.mesh, A, eps=0.0)
    with pytest.raises(SingularSystemError) as exc:
        op.solve_state(prob.P)
    assert exc.value.condition_estimate > 1e12


def test_near_singular_warning_flag(prob):
    A = np.ones(prob.mesh.node_count)
    op = RegularizedForwardOperator(prob.mesh, A, eps=1e-12)
    op.solve_state(prob.P)
    assert op.near_singular
    op2 = RegularizedForwardOperator(prob.mesh, A, eps=1e-4)
    op2.solve_state(prob.P)
    assert not op2.near_singular


def test_negative_eps_tau_rejected(prob):
    A = np.ones(prob.mesh.node_count)
    with pytest.raises(ValueError):
        RegularizedForwardOperator(prob.mesh, A, eps=-1e-3)
    with pytest.raises(ValueError):
        RegularizedForwardOperator(prob.mesh, A, eps=1e-3, tau=-1.0)


def test_sensitivity_finite_difference(prob):
    mesh = prob.mesh
    rng = np.random.Generator(np.random.Philox(key=12))
    A = rng.uniform(0.5, 2.0, size=mesh.node_count)
    dA = rng.standard_normal(mesh.node_count)
    eps, tau = 1e-2, 1e-3
    op = RegularizedForwardOperator(mesh, A, eps=eps, tau=tau)
    V = op.solve_state(prob.P)
    dV = op.solve_sensitivity(V, dA)
    errs = []
    for h in (1e-3, 1e-4, 1e-5):
        Vp = RegularizedForwardOperator(mesh, A + h * dA, eps=eps, tau=tau).solve_state(prob.P)
        Vm = RegularizedForwardOperator(mesh, A - h * dA, eps=eps, tau=tau).solve_state(prob.P)
        fd = (Vp - Vm) / (2 * h)
        errs.append(np.linalg.norm(dV - fd) / np.linalg.norm(fd))
    assert min(errs) <= 1e-7


def test_second_sensitivity_finite_difference(prob):
    mesh = prob.mesh
    rng = np.random.Generator(np.random.Philox(key=13))
    A = rng.uniform(0.5, 2.0, size=mesh.node_count)
    dA = rng.standard_normal(mesh.node_count)
    eps, tau = 1e-2, 0.0
    op = RegularizedForwardOperator(mesh, A, eps=eps, tau=tau)
    V = op.solve_state(prob.P)
    dV = op.solve_sensitivity(V, dA)
    d2V = op.solve_second_sensitivity(V, dA, dA, dV, dV)
    errs = []
    for h in (1e-2, 1e-3, 1e-4):
        Vp = RegularizedForwardOperator(mesh, A + h * dA, eps=eps).solve_state(prob.P)
        Vm = RegularizedForwardOperator(mesh, A - h * dA, eps=eps).solve_state(prob.P)
        fd2 = (Vp - 2 * V + Vm) / h**2
        errs.append(np.linalg.norm(d2V - fd2) / np.linalg.norm(fd2))
    assert min(errs) <= 1e-5


def test_adjoint_is_weighted_residual_solve(prob):
    mesh = prob.mesh
    A = np.full(mesh.node_count, 2.0)
    op = RegularizedForwardOperator(mesh, A, eps=1e-3)
    V = op.solve_state(prob.P)
    w = op.solve_adjoint(V, prob.Z)
    assert np.allclose(op.system @ w, op.M @ (prob.Z - V), atol=1e-10)


def test_neumann_mean_zero_oracle(prob):
    mesh = prob.mesh
    A = np.ones(mesh.node_count)
    u = solve_neumann_mean_zero(mesh, A, prob.P)
    K = assembly.assemble_stiffness(mesh, A)
    M = assembly.assemble_mass(mesh)
    ones = np.ones(mesh.node_count)
    # residual lies in the constant direction only, and the mean vanishes
    r = K @ u - prob.P
    r -= (r @ ones) / mesh.node_count * ones
    assert np.linalg.norm(r) <= 1e-9 * np.linalg.norm(prob.P)
    assert abs(ones @ (M @ u)) < 1e-12


def test_regularized_solution_approaches_neumann_selection(prob):
    mesh = prob.mesh
    A = np.ones(mesh.node_count)
    u0 = solve_neumann_mean_zero(mesh, A, prob.P)
    gaps = []
    for eps in (1e-2, 1e-3, 1e-4):
        V = RegularizedForwardOperator(mesh, A, eps=eps).solve_state(prob.P)
        gaps.append(np.linalg.norm(mean_zero_projection(V - u0)))
    assert gaps[1] < gaps[0] and gaps[2] < gaps[1]


def test_minimum_s_norm_selection(prob):
    mesh = prob.mesh
    W = assembly.assemble_s_matrix(mesh)
    rng = np.random.Generator(np.random.Philox(key=14))
    u = rng.standard_normal(mesh.node_count)
    u_star = minimum_s_norm_selection(mesh, u)
    base = u_star @ (W @ u_star)
    for c in (-0.5, -0.01, 0.01, 0.5):
        shifted = u_star + c
        assert shifted @ (W @ shifted) > base


def test_riesz_dual_norm_definition(prob):
    mesh = prob.mesh
    W = assembly.assemble_s_matrix(mesh)
    rng = np.random.Generator(np.random.Philox(key=15))
    r = rng.standard_normal(mesh.node_count)
    val = riesz_dual_norm(W, r)
    q = np.linalg.solve(W.toarray(), r)
    assert val == pytest.approx(np.sqrt(r @ q), rel=1e-10)


def test_schedule_default_ratios():
    sched = default_schedule()
    assert len(sched) == 8
    assert sched.ratios_decrease()
    e0 = sched[0]
    assert e0.eps == 0.1 and e0.tau == pytest.approx(0.01)
    assert e0.nu == pytest.approx(0.1**1.5) and e0.kappa == 0.1


def test_schedule_validation():
    with pytest.raises(ValueError):
        RegularizationSchedule(entries=(ScheduleEntry(-1e-3, 0, 0, 0, 0),))
    bad = RegularizationSchedule(entries=(
        ScheduleEntry(eps=1e-2, tau=1e-4, nu=0, delta=0, kappa=1e-2),
        ScheduleEntry(eps=1e-1, tau=1e-2, nu=0, delta=0, kappa=1e-1),
    ))
    assert not bad.ratios_decrease()


def test_mean_zero_projection():
    v = np.array([3.0, 1.0, 2.0])
    p = mean_zero_projection(v)
    assert p.sum() == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(p + 2.0, v)
