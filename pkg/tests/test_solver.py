import dataclasses
import warnings

import numpy as np
import pytest

from ddelm.assembly import assemble_local, flux_size, global_blocks, interface_size
from ddelm.case import DdmCase
from ddelm.metrics import relative_error
from ddelm.problems import fd_reference_solve
from ddelm.solver import (
    ConvergenceWarning,
    LocalSystem,
    SchurOperator,
    SerialExecutor,
    solve_ddm,
    solve_monolithic_elm,
    solve_oracle,
)

from .conftest import rel, toy_setup


def _dense(problem, layout, bases):
    blocks = [assemble_local(problem, layout, s, bases[s]) for s in range(layout.n_subdomains)]
    K, B, A, F = global_blocks(blocks, interface_size(problem, layout), flux_size(problem, layout))
    Kp = np.linalg.pinv(K)
    N = np.eye(K.shape[0]) - K @ Kp + Kp.T @ A.T @ A @ Kp
    return K, B, A, F, Kp, N


@pytest.mark.parametrize("name", ["poisson", "plate"])
def test_schur_operator_matches_dense_formula(name):
    _, problem, layout, bases = toy_setup(name, n=8, k=3)
    _, B, _, F, _, N = _dense(problem, layout, bases)
    G = B.shape[1]
    with SerialExecutor(problem, layout, bases) as ex:
        ex.setup()
        op = SchurOperator(ex)
        M = np.column_stack([op.apply(e) for e in np.eye(G)])
        g = op.rhs()
    want = B.T @ N @ B
    assert np.abs(M - want).max() <= 1e-10 * np.abs(want).max()
    assert rel(g, B.T @ N @ F) <= 1e-10
    assert op.matvecs == G + 1


def test_schur_operator_symmetric_psd_on_probes():
    _, problem, layout, bases = toy_setup(grid=(2, 2), n=256, k=5)
    rng = np.random.default_rng(0)
    with SerialExecutor(problem, layout, bases) as ex:
        ex.setup()
        op = SchurOperator(ex)
        for _ in range(5):
            u, v = rng.standard_normal((2, op.n_gamma))
            Mu, Mv = op(u), op(v)
            assert abs(u @ Mv - v @ Mu) <= 1e-12 * np.linalg.norm(u) * np.linalg.norm(Mv)
            assert u @ Mu >= -1e-12 * np.linalg.norm(u) * np.linalg.norm(Mu)
        with pytest.raises(ValueError):
            op.apply(np.ones(op.n_gamma + 1))


def test_backsolve_is_local_least_squares():
    _, problem, layout, bases = toy_setup(n=32, k=4)
    sol, diag = solve_ddm(problem, layout, bases, cg_tol=1e-13)
    K, B, _, F, Kp, N = _dense(problem, layout, bases)
    c = np.concatenate(sol.coeffs)
    u = sol.u_gamma
    assert rel(c, Kp @ (F - B @ u)) <= 1e-9
    M = B.T @ N @ B
    g = B.T @ N @ F
    assert np.linalg.norm(M @ u - g) <= 1e-9 * np.linalg.norm(g)
    assert diag.converged and diag.cg_iterations <= 5 * diag.n_gamma


def test_local_system_requires_flux_stage_first():
    _, problem, layout, bases = toy_setup()
    blk = assemble_local(problem, layout, 0, bases[0])
    sys_ = LocalSystem(blk, interface_size(problem, layout), flux_size(problem, layout))
    with pytest.raises(RuntimeError):
        sys_.interface_stage(np.zeros(sys_.n_flux))
    info = sys_.info()
    assert info["rows"] == blk.K.shape[0] and info["method"] in ("qr", "svd")


@pytest.mark.parametrize("name", ["poisson", "grf", "varcoef", "plate"])
def test_ddm_matches_oracle(name):
    _, problem, layout, bases = toy_setup(name, grid=(2, 2))
    sol, _ = solve_ddm(problem, layout, bases, cg_tol=1e-12)
    ref, _ = solve_oracle(problem, layout, bases)
    assert rel(sol.vector(), ref.vector()) <= 1e-8


def test_homogeneous_problem_gives_zero():
    _, problem, layout, bases = toy_setup()
    zero = dataclasses.replace(
        problem, rhs=lambda p: np.zeros(len(p)),
        boundary=tuple((op, lambda p: np.zeros(len(p))) for op, _ in problem.boundary),
    )
    sol, diag = solve_ddm(zero, layout, bases)
    assert diag.cg_iterations == 0
    assert not np.concatenate(sol.coeffs).any()


def test_single_subdomain_equals_monolithic():
    case = DdmCase(grid=(1, 1), n=64, k=4)
    layout = case.build_layout()
    bases = case.build_bases(layout)
    problem = case.build_problem()
    a, da = solve_ddm(problem, layout, bases)
    b, _ = solve_monolithic_elm(problem, layout, bases[0])
    assert da.n_gamma == 0 and da.cg_iterations is None
    np.testing.assert_allclose(a.coeffs[0], b.coeffs[0], rtol=1e-12, atol=1e-12)


def test_monolithic_guards():
    _, problem, layout, bases = toy_setup()
    with pytest.raises(ValueError):
        solve_monolithic_elm(problem, layout, bases[0])
    case = DdmCase(grid=(1, 1), n=64, k=4)
    lay1 = case.build_layout()
    with pytest.raises(MemoryError):
        solve_monolithic_elm(problem, lay1, case.build_bases(lay1)[0], max_columns=10)


def test_wrong_number_of_bases():
    _, problem, layout, bases = toy_setup()
    with pytest.raises(ValueError):
        solve_ddm(problem, layout, bases[:1])


def test_convergence_warning_on_iteration_cap():
    _, problem, layout, bases = toy_setup(grid=(2, 2), n=256, k=5)
    with pytest.warns(ConvergenceWarning):
        _, diag = solve_ddm(problem, layout, bases, max_iter=2)
    assert not diag.converged and diag.cg_iterations == 2


def test_interface_continuity_and_accuracy():
    case = DdmCase(grid=(2, 2), n=1024, k=6)
    layout = case.build_layout()
    problem = case.build_problem()
    sol, diag = solve_ddm(problem, layout, case.build_bases(layout))
    assert diag.converged
    pts = layout.interface_points
    for s, sd in enumerate(layout.subdomains):
        sel = sd.gamma_index
        vals = sol.evaluate_on(s, sd.interface, (0, 0))
        np.testing.assert_allclose(vals, sol.u_trace[sel], atol=1e-6)
    assert np.max(np.abs(sol.u_trace - problem.exact(pts))) < 1e-5
    assert diag.t_total >= diag.t_setup > 0


def test_smooth_variable_coefficient_against_finite_differences():
    case = DdmCase(problem="varcoef", problem_params={"alpha": 2.0}, grid=(2, 2), n=1024, k=6)
    layout = case.build_layout()
    problem = case.build_problem()
    sol, diag = solve_ddm(problem, layout, case.build_bases(layout))
    assert diag.converged
    ref = fd_reference_solve(problem, 129)
    assert relative_error(sol, ref, "l2", resolution=129) <= 5e-3


def test_diagnostics_phase_times():
    _, problem, layout, bases = toy_setup()
    with warnings.catch_warnings():
        warnings.simplefilter("error", ConvergenceWarning)
        _, diag = solve_ddm(problem, layout, bases)
    assert len(diag.subdomains) == 2
    assert diag.t_solve == pytest.approx(diag.t_interface + diag.t_backsolve)
    assert diag.matvecs >= diag.cg_iterations + 1
