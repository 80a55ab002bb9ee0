from dataclasses import replace
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pqgrowth import integrand as I
from pqgrowth.errors import InvalidArgument, UnsupportedFlavor

FAST = I.SampleSpec(count=2000, seed=3, h4_centers=16, h4_directions=12)
ALL = [I.example_library(name) for name in I.LIBRARY_NAMES]
RADIAL = [F for F in ALL if F.radial is not None]


def zvec(*c):
    return np.array(c, dtype=float).reshape(2, 1)


# ---------------------------------------------------------------------------
# evaluation


def test_double_phase_direct_value():
    F = I.example_library("double-phase", {"p": 2, "q": 3, "a": "0.5"})
    assert F(np.array([0.3, 0.3]), zvec(0.6, 0.8)) == pytest.approx(1.5)


@pytest.mark.parametrize("F", ALL, ids=lambda F: F.name)
def test_zero_gradient_has_zero_density(F):
    X = np.random.default_rng(0).random((5, F.n))
    assert np.allclose(I.evaluate(F, X, np.zeros((5, F.n, F.m))), 0.0, atol=1e-14)


def test_f4_identity_coupling():
    F = I.example_library("F4", {"p": 2, "q": 2})
    z = zvec(0.6, 0.8)
    # |z|^2 + (<z, z>)^{q/2}, written out by hand
    assert F(np.array([0.5, 0.5]), z) == pytest.approx(0.36 + 0.64 + (0.36 + 0.64) ** 1.0)
    assert F(np.array([0.5, 0.5]), z) == pytest.approx(2.0)


def test_f4_general_coupling_against_explicit_formula():
    C = np.array([[2.0, 0.5], [0.5, 1.0]])
    F = I.example_library("F4", {"p": 2.5, "q": 3.0, "lam": "1 + x1", "coupling": C.tolist()})
    x, z = np.array([0.25, 0.75]), np.array([0.3, -1.2])
    expected = np.linalg.norm(z) ** 2.5 + ((1.25) * z @ C @ z) ** 1.5
    assert F(x, z.reshape(2, 1)) == pytest.approx(expected, rel=1e-13)


def test_non_finite_input_rejected():
    F = I.example_library("p-power")
    with pytest.raises(InvalidArgument):
        F(np.array([0.5, 0.5]), zvec(np.nan, 0))


def test_grad_examples():
    x = np.array([0.5, 0.5])
    F = I.example_library("p-power", {"p": 2})
    assert np.allclose(I.grad_z(F, x, zvec(1.5, -2.0)), 2 * zvec(1.5, -2.0))
    F = I.example_library("p-power", {"p": 1.5})
    assert np.allclose(I.grad_z(F, x, zvec(0, 0)), 0.0)
    F = I.example_library("double-phase", {"p": 2, "q": 3, "a": "0.5"})
    assert np.allclose(I.grad_z(F, x, zvec(1, 0)), zvec(3.5, 0))


def _fd_check(F, X, Z, h=1e-6):
    G = F.gradient(X, Z)
    num = np.zeros_like(Z)
    for i in range(F.n):
        for a in range(F.m):
            E = np.zeros_like(Z)
            E[:, i, a] = h
            num[:, i, a] = (F.density(X, Z + E) - F.density(X, Z - E)) / (2 * h)
    return np.linalg.norm((G - num).reshape(len(Z), -1), axis=1) / (
        1 + np.linalg.norm(G.reshape(len(Z), -1), axis=1))


@pytest.mark.parametrize("F", ALL, ids=lambda F: F.name)
def test_gradient_matches_finite_differences(F):
    rng = np.random.default_rng(1)
    X = I.sample_points(F.box, 1000, rng)
    Z = I.sample_matrices(F.n, F.m, 1000, 1e-2, 10.0, rng)
    assert np.max(_fd_check(F, X, Z)) < 1e-4


@pytest.mark.parametrize("F", ALL, ids=lambda F: F.name)
def test_midpoint_convexity(F):
    rng = np.random.default_rng(2)
    X = I.sample_points(F.box, 2000, rng)
    Z = I.sample_matrices(F.n, F.m, 2000, 1e-3, 1e2, rng)
    W = I.sample_matrices(F.n, F.m, 2000, 1e-3, 1e2, rng)
    mid = F.density(X, (Z + W) / 2)
    avg = (F.density(X, Z) + F.density(X, W)) / 2
    assert np.all(mid <= avg * (1 + 1e-12) + 1e-12)


# ---------------------------------------------------------------------------
# regularisation


def test_regularize_examples():
    F = I.example_library("p-power", {"p": 2})
    Fe = I.regularize(F, 0.5)
    assert Fe(np.array([0.1, 0.1]), zvec(0.6, 0.8)) == pytest.approx(1.5)
    with pytest.raises(InvalidArgument):
        I.regularize(F, 0.0)
    D = I.example_library("double-phase", {"p": 2, "q": 3, "a": "0"})
    assert I.regularize(D, 0.1)(np.array([0.2, 0.2]), zvec(2, 0)) == pytest.approx(4.8)


def test_regularized_bounds_inherit_constants():
    F = I.example_library("double-phase")
    Fe = I.regularize(F, 0.05)
    assert Fe.params.Lambda == pytest.approx(F.params.Lambda + 0.05)
    assert Fe.params.nu == F.params.nu
    for h in ("H1", "H2", "H3"):
        assert I.check_hypothesis(Fe, h, FAST).passed


@pytest.mark.parametrize("name", ["double-phase", "F1", "F7-max"])
def test_h4_stable_under_regularization(name):
    F = I.example_library(name)
    assert I.check_hypothesis(F, "H4", FAST).passed
    assert I.check_hypothesis(I.regularize(F, 0.1), "H4", FAST).passed


@given(st.floats(1.0, 4.0), st.floats(1e-3, 1.0), st.floats(0.0, 10.0))
def test_regularize_is_additive(p, eps, r):
    F = I.example_library("p-power", {"p": max(p, 1.01)})
    z = zvec(r, 0.0)
    x = np.array([0.5, 0.5])
    assert I.regularize(F, eps)(x, z) == pytest.approx(F(x, z) + eps * r ** F.params.q,
                                                       rel=1e-12, abs=1e-14)


# ---------------------------------------------------------------------------
# hypothesis audits


def test_quadratic_h1_identity():
    F = I.example_library("p-power", {"p": 2})
    rep = I.check_hypothesis(F, "H1", FAST)
    assert rep.passed
    # Bregman gap of |z|^2 equals |z - w|^2 exactly, weight is 1
    assert rep.fitted["nu"] == pytest.approx(1.0, rel=1e-9)


def test_double_phase_h3_brute_force_oracle():
    F = I.example_library("double-phase", {"p": 2, "q": 3, "a": "abs(x1)^1", "alpha": 1.0,
                                           "Lambda": 1.0})
    rep = I.check_hypothesis(F, "H3", FAST)
    assert rep.passed and rep.fitted["Lambda"] <= 1.0
    # brute force over a grid: |a(x) - a(y)| |z|^3 / (|x - y| (1 + |z|^2)^{3/2}) <= 1
    g = np.linspace(0, 1, 21)
    X = np.array([(a, b) for a in g for b in g])
    r = np.geomspace(1e-3, 1e2, 30)
    best = 0.0
    for x in X[::7]:
        d = np.linalg.norm(X - x, axis=1)
        keep = d > 0
        diff = np.abs(X[keep, 0] - x[0])
        ratio = diff[:, None] * r ** 3 / (d[keep, None] * (1 + r ** 2) ** 1.5)
        best = max(best, ratio.max())
    assert best <= 1.0
    assert rep.fitted["Lambda"] <= best * (1 + 1e-9) or rep.fitted["Lambda"] <= 1.0


def test_f1_h4_witness_is_left_endpoint():
    F = I.example_library("F1", {"a": "1 + x1", "n": 1})
    rep = I.check_hypothesis(F, "H4", FAST)
    assert rep.passed
    for w in rep.details["witnesses"]:
        assert w["y_hat"][0] == pytest.approx(max(0.0, w["x"][0] - w["radius"]), abs=1e-12)


@pytest.mark.parametrize("F", ALL, ids=lambda F: F.name)
def test_declared_hypotheses_pass(F):
    for h in F.hypotheses:
        assert I.check_hypothesis(F, h, FAST).passed, h


def test_broken_integrand_is_caught():
    F = I.example_library("double-phase", {"p": 2, "q": 3})
    broken = replace(F, params=replace(F.params, p=F.params.q))
    rep = I.check_hypothesis(broken, "H1", FAST)
    assert not rep.passed and rep.details["violation_count"] >= 1


def test_variable_exponent_h11():
    F = I.example_library("px-laplacian")
    assert F.flavor == "variable-exponent"
    vals = F.exponent(I.sample_points(F.box, 1000, np.random.default_rng(0)))
    assert np.all((F.params.p <= vals + 1e-12) & (vals <= F.params.q + 1e-12))
    assert I.check_hypothesis(F, "H1.1", FAST).passed


def test_anisotropic_exponents_ordered():
    with pytest.raises(InvalidArgument):
        I.example_library("F2", {"exponents": [3.0, 2.0]})
    F = I.example_library("F2")
    assert list(F.exponents) == sorted(F.exponents)
    assert F.params.p == F.exponents[0] and F.params.q == F.exponents[-1]


@pytest.mark.parametrize("hyp", ["lower-bound-1.2", "derivative-bound-1.3", "lemma-2.13"],
                         ids=["lower-bound", "derivative-bound", "dual-lower-bound"])
@pytest.mark.parametrize("name", ["p-power", "double-phase", "F8"])
def test_derived_bounds(name, hyp):
    assert I.check_hypothesis(I.example_library(name), hyp, FAST).passed


def test_fitted_constants_stable_under_refinement():
    F = I.example_library("double-phase")
    a = I.check_hypothesis(F, "H3", I.SampleSpec(count=10_000, seed=5)).fitted["Lambda"]
    b = I.check_hypothesis(F, "H3", I.SampleSpec(count=40_000, seed=6)).fitted["Lambda"]
    assert abs(a - b) <= 0.1 * b


def test_unknown_hypothesis():
    with pytest.raises(InvalidArgument):
        I.check_hypothesis(I.example_library("p-power"), "H9")


def test_report_json_roundtrip():
    rep = I.check_hypothesis(I.example_library("p-power"), "H2", FAST)
    import json
    d = json.loads(rep.to_json())
    assert d["passed"] and d["seed"] == 3 and d["sample_count"] == 2000


# ---------------------------------------------------------------------------
# V-functional and Fenchel identity


def test_v_functional_examples():
    z = np.array([[0.3], [-0.4]])
    assert np.allclose(I.v_functional(0.7, 2, z), z)
    z2 = np.array([[2.0], [0.0]])
    assert np.allclose(I.v_functional(0.0, 4, z2), 2 * z2)
    one = np.array([[1.0], [0.0]])
    # (1 + 1)^{(3 - 2)/4} = 2^{1/4}, also via the power of the squared norm
    assert np.allclose(I.v_functional(1.0, 3, one), math.sqrt(math.sqrt(2)) * one)
    with pytest.raises(InvalidArgument):
        I.v_functional(1.0, 0.0, one)


def test_v_functional_equivalence_constants():
    rng = np.random.default_rng(4)
    for t in (1.5, 2.0, 3.0):
        ratios = []
        for _ in range(500):
            z1, z2 = rng.standard_normal((2, 2, 1)) * rng.uniform(0.01, 10)
            lhs = np.sum((I.v_functional(0.0, t, z1) - I.v_functional(0.0, t, z2)) ** 2)
            rhs = (np.sum(z1 ** 2) + np.sum(z2 ** 2)) ** ((t - 2) / 2) * np.sum((z1 - z2) ** 2)
            ratios.append(lhs / rhs)
        lo, hi = min(ratios), max(ratios)
        assert 0 < lo <= hi < 10


def test_fenchel_examples():
    x = np.array([0.5, 0.5])
    half = replace(I.example_library("p-power", {"p": 2}))
    # |z|^2 (conjugate |xi|^2 / 4) is exact
    assert I.fenchel_identity_check(half, x, zvec(0.3, 1.1)) < 1e-9
    F3 = I.example_library("p-power", {"p": 3})
    assert I.fenchel_identity_check(F3, x, zvec(2.0, 0.0)) < 1e-6
    D = I.example_library("double-phase", {"p": 2, "q": 3, "a": "1"})
    assert I.fenchel_identity_check(D, x, zvec(1.0, 0.0)) < 1e-5


@pytest.mark.parametrize("F", RADIAL, ids=lambda F: F.name)
def test_fenchel_defect_on_radial_builtins(F):
    rng = np.random.default_rng(7)
    for _ in range(10):
        x = I.sample_points(F.box, 1, rng)[0]
        z = I.sample_matrices(F.n, F.m, 1, 1e-2, 10.0, rng)[0]
        assert I.fenchel_identity_check(F, x, z) <= 1e-5


def test_fenchel_requires_radial():
    with pytest.raises(UnsupportedFlavor):
        I.fenchel_identity_check(I.example_library("F2"), np.array([0.5, 0.5]), zvec(1, 1))


# ---------------------------------------------------------------------------
# library and serialisation


def test_library_flavors():
    assert I.example_library("double-phase", {"p": 2, "q": 2.5,
                                              "a": "dist_quadrant(3)^1"}).flavor == "x-dependent"
    assert I.example_library("p-power", {"p": 2}).flavor == "autonomous"
    with pytest.raises(InvalidArgument):
        I.example_library("nope")
    with pytest.raises(InvalidArgument):
        I.example_library("double-phase", {"p": 3, "q": 2})
    with pytest.raises(InvalidArgument):
        I.example_library("double-phase", {"bogus": 1})


def test_growth_params_invariants():
    with pytest.raises(InvalidArgument):
        I.GrowthParams(p=1.0, q=2.0)
    with pytest.raises(InvalidArgument):
        I.GrowthParams(p=2.0, q=2.0, alpha=1.5)
    with pytest.raises(InvalidArgument):
        I.GrowthParams(p=1.5, q=7.0, n=2)  # beyond np/(n-p) = 6
    P = I.GrowthParams(p=2.0, q=2.2, alpha=0.5)
    assert P.threshold == pytest.approx(2.5)
    assert P.q_conj == pytest.approx(2.2 / 1.2)


@pytest.mark.parametrize("name", I.LIBRARY_NAMES)
def test_spec_roundtrip(name):
    F = I.example_library(name)
    G = I.from_spec(I.loads_spec(I.dumps_spec(F)))
    rng = np.random.default_rng(8)
    X = I.sample_points(F.box, 50, rng)
    Z = I.sample_matrices(F.n, F.m, 50, 1e-2, 10, rng)
    assert np.allclose(F.density(X, Z), G.density(X, Z), rtol=1e-13)
    assert I.dumps_spec(G) == I.dumps_spec(F)
