import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pqgrowth.errors import InvalidArgument
from pqgrowth.expr import as_field, compile_expr

BOX = np.array([[0.0, 1.0], [0.0, 1.0]])
coord = st.floats(0.0, 1.0, allow_nan=False)


def ev(text, x=0.0, y=0.0):
    return float(compile_expr(text, BOX)(np.array([[x, y]]))[0])


def test_precedence_and_associativity():
    assert ev("1 + 2*3") == 7
    assert ev("2^3^2") == 2 ** 9
    assert ev("-2^2") == -4
    assert ev("(1 + 2)*3") == 9
    assert ev("8/2/2") == 2


def test_variables_and_aliases():
    assert ev("x1 + 10*x2", 0.25, 0.5) == pytest.approx(5.25)
    assert ev("x + 10*y", 0.25, 0.5) == pytest.approx(5.25)
    assert ev("pi") == pytest.approx(math.pi)


def test_functions():
    assert ev("abs(-3) + sqrt(4) + exp(0) + log(1)") == pytest.approx(6.0)
    assert ev("max(1, 3, 2) - min(4, 5)") == -1
    assert ev("sin(pi/2) + cos(0)") == pytest.approx(2.0)


def test_geometric_helpers():
    # corner 3 = (1, 1)
    assert ev("dist_corner(3)", 0.0, 0.0) == pytest.approx(math.sqrt(2))
    # quadrant 3 is lower-left of the centre (0.5, 0.5)
    assert ev("dist_quadrant(3)", 0.2, 0.1) == 0.0
    assert ev("dist_quadrant(3)", 0.8, 0.5) == pytest.approx(0.3)
    assert ev("dist_quadrant(1)", 0.2, 0.1) == pytest.approx(math.hypot(0.3, 0.4))
    assert ev("dist_half(1)", 0.2, 0.9) == 0.0
    assert ev("dist_half(1)", 0.9, 0.2) == pytest.approx(0.7 / math.sqrt(2))
    assert ev("angle()", 1.0, 0.5) == 0.0
    assert ev("angle()", 0.5, 1.0) == pytest.approx(math.pi / 2)


@pytest.mark.parametrize("bad", ["x3", "foo(1)", "1 +", "(1", "1 $ 2", "abs(1, 2)", "max(1)",
                                 "angle(1)"])
def test_rejects_malformed(bad):
    with pytest.raises(InvalidArgument):
        compile_expr(bad, BOX)


def test_helper_needs_dimension_two():
    with pytest.raises(InvalidArgument):
        compile_expr("dist_quadrant(1)", np.array([[0.0, 1.0]]))(np.array([[0.5]]))


def test_as_field_variants():
    X = np.array([[0.1, 0.2], [0.3, 0.4]])
    assert np.allclose(as_field(2.5, BOX)(X), 2.5)
    assert np.allclose(as_field("x1*x2", BOX)(X), X[:, 0] * X[:, 1])
    assert np.allclose(as_field(lambda P: P[:, 1], BOX)(X), X[:, 1])
    assert as_field(None, BOX) is None


@given(coord, coord)
def test_quadrant_distances_partition(x, y):
    # a point is at distance zero from at least one closed quadrant, and the
    # opposite-pair minimum vanishes exactly on that pair
    d = [ev(f"dist_quadrant({k})", x, y) for k in (1, 2, 3, 4)]
    assert min(d) == 0.0
    assert ev("min(dist_quadrant(1), dist_quadrant(3))", x, y) == min(d[0], d[2])


@given(coord, coord)
def test_angle_matches_atan2(x, y):
    assert ev("angle()", x, y) == pytest.approx(math.atan2(y - 0.5, x - 0.5), abs=1e-15)
