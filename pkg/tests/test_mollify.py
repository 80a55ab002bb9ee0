import math

import numpy as np
import pytest
from scipy import integrate

from pqgrowth import covering as C
from pqgrowth import integrand as I
from pqgrowth import mesh as M
from pqgrowth import mollify as Mo
from pqgrowth.errors import InvalidArgument


@pytest.mark.parametrize("n", [1, 2])
def test_kernel_unit_mass(n):
    K = Mo.Kernel(0.3, n)
    if n == 1:
        mass = integrate.quad(lambda t: float(K(np.array([[t]]))[0]), -0.3, 0.3)[0]
    else:
        mass = integrate.dblquad(lambda y, x: float(K(np.array([[x, y]]))[0]),
                                 -0.3, 0.3, -0.3, 0.3, epsabs=1e-12)[0]
    assert mass == pytest.approx(1.0, rel=1e-8)
    with pytest.raises(InvalidArgument):
        Mo.Kernel(0.0)


@pytest.mark.parametrize("g", ["3", "2*x1 - x2 + 0.5"])
def test_mollify_reproduces_affine(unit2, g):
    m = M.Mesh(unit2, 32)
    u = M.interpolate(m, g)
    v = Mo.mollify(u, 0.1)
    assert v.support.any()
    assert np.allclose(v.values[v.support], u.values[v.support], atol=1e-12)


def test_mollify_below_mesh_scale(unit2):
    with pytest.raises(InvalidArgument):
        Mo.mollify(M.zero_field(M.Mesh(unit2, 8)), 0.01)


def test_mollify_kink_quadrature_oracle():
    m = M.Mesh([[0, 1]], 2048)
    x0, eps = 0.5, 0.1
    u = M.interpolate(m, lambda X: np.abs(X[:, 0] - x0))
    v = Mo.mollify(u, eps)
    K = Mo.Kernel(eps, 1)
    oracle = integrate.quad(lambda y: abs(y) * float(K(np.array([[y]]))[0]), -eps, eps,
                            points=[0.0], epsabs=1e-13)[0]
    k = int(round(x0 * 2048))
    assert v.values[k, 0] == pytest.approx(oracle, rel=1e-4)


def test_mollify_callable_affine():
    X = np.random.default_rng(0).random((10, 2))
    out = Mo.mollify_callable(lambda P: 1 + P[:, 0] - 2 * P[:, 1], X, 0.05)
    assert np.allclose(out, 1 + X[:, 0] - 2 * X[:, 1])


def test_theta_formula():
    assert Mo.theta_exponent(2, 2, 2.2) == pytest.approx(10 / 11)
    assert Mo.theta_exponent(2, 1.5, 2.0) == pytest.approx(1 + 2 * (1 / 2 - 1 / 1.5))


def test_config_invariants():
    cfg = Mo.ApproximantConfig(2, 2, 2.2)
    gap = cfg.Theta - 2 * 1.2 / 2 * (1 - 2 / 2.2)
    assert cfg.m * gap > 1 and cfg.m == pytest.approx(cfg.m_prime + 0.5)
    with pytest.raises(InvalidArgument):
        Mo.ApproximantConfig(2, 2, 2.2, m=1.0)
    with pytest.raises(InvalidArgument):
        Mo.ApproximantConfig(2, 1.7, 3.5)  # far above threshold: no admissible m
    assert cfg.with_epsilon(0.01).epsilon == 0.01


@pytest.fixture(scope="module")
def cover6():
    cov = C.wb_enlarge(C.whitney("unit-square", 6))
    return cov, C.partition_of_unity(cov)


def test_wb_approximant_affine(cover6):
    cov, pou = cover6
    m = M.Mesh(cov.domain.box, 64)
    u = M.interpolate(m, "x1 - 0.5*x2 + 2")
    ue = Mo.wb_approximant(u, cov, pou, Mo.ApproximantConfig(2, 2, 2.2, epsilon=0.25))
    assert np.allclose(ue.values, u.values, atol=1e-10)


def test_wb_approximant_mismatch(cover6):
    cov, _ = cover6
    other = C.partition_of_unity(C.wb_enlarge(C.whitney("unit-square", 4)))
    u = M.zero_field(M.Mesh(cov.domain.box, 16))
    with pytest.raises(InvalidArgument):
        Mo.wb_approximant(u, cov, other, Mo.ApproximantConfig(2, 2, 2.2))


def test_radii_clamped(cover6):
    cov, _ = cover6
    r = Mo.cube_radii(cov, Mo.ApproximantConfig(2, 2, 2.2, epsilon=10.0), h=1 / 64)
    assert np.all(r >= 1 / 64 - 1e-15)
    assert np.all((r < cov.distances()) | (cov.distances() <= 1 / 64))


def test_convergence_along_ladder(cover6):
    cov, _ = cover6
    m = M.Mesh(cov.domain.box, 64)
    u = Mo.point_singularity_field(m, (0.3, 0.6), 0.5)
    F = I.example_library("double-phase", {"p": 2, "q": 2.2, "a": "dist_half(1)^0.5",
                                           "alpha": 0.5})
    rows = Mo.convergence_study(F, u, cov, Mo.ApproximantConfig(2, 2, 2.2),
                                [2.0 ** -k for k in range(2, 6)])
    errs = [r["w1p_error"] for r in rows]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(errs, errs[1:]))
    bd = [r["boundary_defect"] for r in rows]
    assert all(b <= a + 1e-12 for a, b in zip(bd, bd[1:]))
    assert "epsilon,w1p_error" in Mo.rows_to_csv(rows)


def test_h4_defect_autonomous_is_zero(unit2):
    m = M.Mesh(unit2, 64)
    F = I.example_library("p-power", {"p": 3})
    u = M.interpolate(m, "sin(4*x1)*x2^2")
    rep = Mo.h4_commutation_defect(F, u, 0.05, C=1.0)
    d = rep.defect[np.isfinite(rep.defect)]
    # Jensen: F((Du)_eps) <= (F(Du))_eps
    assert d.size and np.all(d == 0)
    with pytest.raises(InvalidArgument):
        Mo.h4_commutation_defect(F, u, 0.001)


def test_star_scale_linear(unit2):
    m = M.Mesh(unit2, 16)
    u = M.interpolate(m, "(x1 - 0.5) - 2*(x2 - 0.5)")
    v = Mo.star_scale(u, 0.8)
    assert np.allclose(v.values, u.values, atol=1e-12)
    with pytest.raises(InvalidArgument):
        Mo.star_scale(u, 0.4)


def test_star_scale_constant_inside_shrunken_box(unit2):
    m = M.Mesh(unit2, 16)
    s = 0.75
    v = Mo.star_scale(M.interpolate(m, "2"), s)
    inner = np.all(np.abs(m.nodes - 0.5) <= 0.5 * s + 1e-12, axis=1)
    assert np.allclose(v.values[inner], s * 2)
    # outside it the homogeneous extension grows with the gauge
    assert np.all(v.values[~inner] >= s * 2 - 1e-12)


def test_star_scale_converges(unit2):
    m = M.Mesh(unit2, 32)
    u = M.interpolate(m, "x1^2 + x2")
    errs = [M.sobolev_norm(Mo.star_scale(u, s).with_values(Mo.star_scale(u, s).values - u.values), 2)
            for s in (0.6, 0.8, 0.95)]
    assert errs[0] > errs[1] > errs[2]
