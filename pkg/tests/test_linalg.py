import warnings

import numpy as np
import pytest

from ddelm.linalg import LsFactorization, NumericalBreakdown, RankWarning, cg, factorize_ls, lanczos_ritz


def _tall(m, n, seed=0):
    return np.random.default_rng(seed).standard_normal((m, n))


def test_qr_path_matches_pinv():
    K = _tall(40, 12)
    fac = factorize_ls(K)
    assert fac.method == "qr" and fac.rank == 12
    P = np.linalg.pinv(K)
    v, z = np.random.default_rng(1).standard_normal(40), np.random.default_rng(2).standard_normal(12)
    np.testing.assert_allclose(fac.apply_pinv(v), P @ v, rtol=1e-10)
    np.testing.assert_allclose(fac.apply_pinv_t(z), P.T @ z, rtol=1e-10)
    np.testing.assert_allclose(fac.apply_range_proj(v), K @ (P @ v), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(fac.solve_ls(v), np.linalg.lstsq(K, v, rcond=None)[0], rtol=1e-10)


def test_penrose_identities():
    K = _tall(30, 8, 4)
    fac = LsFactorization(K)
    c = fac.apply_pinv(K)  # K^+ K = I for full column rank
    np.testing.assert_allclose(c, np.eye(8), atol=1e-12)
    v = np.random.default_rng(5).standard_normal(30)
    Pv = fac.apply_range_proj(v)
    np.testing.assert_allclose(fac.apply_range_proj(Pv), Pv, atol=1e-12)


def test_rank_deficient_falls_back_to_minimum_norm_svd():
    rng = np.random.default_rng(3)
    K = rng.standard_normal((50, 6)) @ rng.standard_normal((6, 10))  # rank 6
    with pytest.warns(RankWarning):
        fac = LsFactorization(K)
    assert fac.method == "svd" and fac.rank == 6
    v = rng.standard_normal(50)
    np.testing.assert_allclose(fac.apply_pinv(v), np.linalg.pinv(K, rcond=1e-12) @ v, rtol=1e-8, atol=1e-12)
    assert fac.sigma_ratio < 1e-14


def test_orth_coordinates_reproduce_products():
    K = _tall(25, 7, 8)
    Kd = np.hstack([K, K[:, :2]])  # duplicated columns push it onto the SVD path
    for M in (K, Kd):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RankWarning)
            fac = LsFactorization(M)
        z = np.random.default_rng(0).standard_normal(M.shape[1])
        want = np.linalg.pinv(M, rcond=1e-12).T @ z
        np.testing.assert_allclose(fac.orth @ fac.core_solve_t(z), want, rtol=1e-9, atol=1e-12)
    assert fac.method == "svd" and fac.rank == 7


def test_factorization_errors():
    with pytest.raises(ValueError):
        LsFactorization(np.ones((3, 5)))
    with pytest.raises(ValueError):
        LsFactorization(np.ones(4))
    fac = LsFactorization(_tall(10, 3))
    with pytest.raises(ValueError):
        fac.apply_pinv(np.ones(9))
    with pytest.raises(ValueError):
        fac.apply_pinv_t(np.ones(4))


def test_empty_column_block():
    fac = LsFactorization(np.zeros((5, 0)))
    assert fac.rank == 0
    assert fac.apply_pinv(np.ones(5)).shape == (0,)


def _spd(n, cond, seed=0):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Q @ np.diag(np.geomspace(1.0, cond, n)) @ Q.T


def test_cg_solves_spd_system():
    A = _spd(60, 1e4)
    b = np.random.default_rng(1).standard_normal(60)
    rep = cg(lambda v: A @ v, b, tol=1e-10)
    assert rep.converged and rep.residual <= 1e-10
    np.testing.assert_allclose(A @ rep.x, b, rtol=0, atol=1e-8 * np.linalg.norm(b))
    assert len(rep.history) == rep.iterations + 1


def test_cg_zero_rhs_and_warm_start():
    A = _spd(10, 10.0)
    rep = cg(lambda v: A @ v, np.zeros(10))
    assert rep.converged and rep.iterations == 0 and not rep.x.any()
    x_true = np.arange(10.0)
    rep = cg(lambda v: A @ v, A @ x_true, x0=x_true)
    assert rep.iterations == 0
    np.testing.assert_allclose(rep.x, x_true)


def test_cg_reports_non_convergence():
    A = _spd(200, 1e8)
    rep = cg(lambda v: A @ v, np.ones(200), tol=1e-12, max_iter=5)
    assert not rep.converged and rep.iterations == 5 and rep.residual > 1e-12


def test_cg_breakdown_on_non_finite_operator():
    with pytest.raises(NumericalBreakdown):
        cg(lambda v: v * np.nan, np.ones(4))


def test_cg_semidefinite_consistent_system():
    A = _spd(30, 100.0)
    U = np.linalg.qr(np.random.default_rng(2).standard_normal((30, 30)))[0][:, :20]
    S = U @ U.T @ A @ U @ U.T  # rank 20, rhs in range
    b = S @ np.random.default_rng(3).standard_normal(30)
    rep = cg(lambda v: S @ v, b, tol=1e-10)
    assert rep.converged


def test_cg_callback_sees_iterates():
    A = _spd(8, 5.0)
    seen = []
    cg(lambda v: A @ v, np.ones(8), callback=lambda k, x: seen.append(k))
    assert seen == list(range(1, len(seen) + 1))


def test_lanczos_extremes_match_eigh():
    A = _spd(40, 1e3, seed=4)
    ritz = lanczos_ritz(lambda v: A @ v, 40, steps=40, rng=0)
    ev = np.linalg.eigvalsh(A)
    assert ritz[0] == pytest.approx(ev[0], rel=1e-8)
    assert ritz[-1] == pytest.approx(ev[-1], rel=1e-10)
    assert lanczos_ritz(lambda v: v, 0).size == 0
