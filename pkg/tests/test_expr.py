import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from kramers import expr as ex


def ev(src, x, dim=None):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return ex.evaluate(ex.parse(src, dim or len(x)), x)


def test_parse_examples():
    assert ev("1 + x1^2", [2.0]) == 5.0
    assert ev("2 + sin(x1)", [0.0]) == 2.0
    with pytest.raises(ex.ExprSyntaxError, match="unknown identifier"):
        ex.parse("x2", 1)


def test_eval_examples():
    assert ev("exp(0)", [0.0]) == 1.0
    assert ev("x1*x2", [3.0, 4.0]) == 12.0
    with pytest.raises(ex.ExprDomainError, match="division by zero"):
        ev("1/x1", [0.0])


@pytest.mark.parametrize("src,x,expected", [
    ("-x1^2", 3.0, -9.0),           # ^ binds tighter than unary minus
    ("2^3^2", 0.0, 512.0),          # right associative
    ("2^-1", 0.0, 0.5),
    ("8/4/2", 0.0, 1.0),            # / left associative
    ("1 - 2 - 3", 0.0, -4.0),
    ("2*pi", 0.0, 2 * math.pi),
    ("e", 0.0, math.e),
    ("(1 + x1) * 2", 1.0, 4.0),
    ("1.5e2 + .5", 0.0, 150.5),
    ("tanh(0) + cos(0) + sqrt(4) + log(e)", 0.0, 4.0),
])
def test_precedence_and_literals(src, x, expected):
    assert ev(src, [x]) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("src,offset", [
    ("1 +", 3),
    ("(1 + 2", 6),
    ("1 $ 2", 2),
    ("sin(1, 2)", 5),
    ("foo(1)", 0),
    ("2 3", 2),
])
def test_syntax_errors_carry_offsets(src, offset):
    with pytest.raises(ex.ExprSyntaxError) as info:
        ex.parse(src, 1)
    assert info.value.offset == offset


def test_variable_beyond_dim_rejected():
    ex.parse("x1 + x3", 3)
    with pytest.raises(ex.ExprSyntaxError):
        ex.parse("x1 + x3", 2)
    with pytest.raises(ex.ExprSyntaxError):
        ex.parse("x0", 2)


@pytest.mark.parametrize("src,x,what", [
    ("log(x1)", -1.0, "log"),
    ("sqrt(x1)", -1.0, "sqrt"),
    ("1 + 1/(x1 - 2)", 2.0, "division"),
    ("exp(x1)", 1e4, "overflow"),
])
def test_domain_errors_name_the_subexpression(src, x, what):
    with pytest.raises(ex.ExprDomainError, match=what) as info:
        ev(src, [x])
    assert info.value.offset >= 0


def test_batched_evaluation():
    e = ex.parse("x1 * x2 + 1", 2)
    pts = np.arange(12.0).reshape(2, 3, 2)
    out = ex.evaluate(e, pts)
    assert out.shape == (2, 3)
    assert np.array_equal(out, pts[..., 0] * pts[..., 1] + 1)
    assert ex.evaluate(ex.parse("3", 2), pts).shape == (2, 3)


def test_deriv_examples():
    d = ex.deriv(ex.parse("x1^2", 1), 1)
    assert ex.evaluate(d, [3.0]) == pytest.approx(6.0)
    assert ex.evaluate(ex.deriv(ex.parse("sin(x1)", 1), 1), [0.0]) == pytest.approx(1.0)
    d = ex.deriv(ex.parse("exp(-x1^2)", 1), 1)
    assert ex.evaluate(d, [1.0]) == pytest.approx(-2 * math.exp(-1), rel=1e-14)


def test_deriv_of_other_variable_is_zero():
    d = ex.deriv(ex.parse("sin(x2) * x2", 2), 1)
    assert ex.to_string(d) in ("0", "0.0")


def test_depends_on():
    e = ex.parse("x1 + 2*x3", 3)
    assert ex.depends_on(e) and ex.depends_on(e, 3) and not ex.depends_on(e, 2)
    assert not ex.depends_on(ex.parse("pi + 2", 1))


# -- random expression trees ---------------------------------------------------

@st.composite
def trees(draw, depth=6, dim=2):
    """Smooth expression strings of depth <= ``depth`` without singularities."""
    if depth <= 1 or draw(st.integers(0, 3)) == 0:
        return draw(st.sampled_from([f"x{i + 1}" for i in range(dim)]
                                    + ["0.5", "1.5", "2", "pi"]))
    a = draw(trees(depth=depth - 1, dim=dim))
    kind = draw(st.integers(0, 9))
    if kind == 0:
        return f"sin({a})"
    if kind == 1:
        return f"cos({a})"
    if kind == 2:
        return f"tanh({a})"
    if kind == 3:
        return f"exp(tanh({a}))"
    if kind == 4:
        return f"sqrt(1 + ({a})^2)"
    if kind == 5:
        return f"log(2 + sin({a}))"
    if kind == 6:
        return f"-({a})"
    b = draw(trees(depth=depth - 1, dim=dim))
    if kind == 7:
        return f"({a}) {draw(st.sampled_from(['+', '-', '*']))} ({b})"
    if kind == 8:
        return f"({a}) / (2 + cos({b}))"
    return f"({a})^{draw(st.sampled_from(['2', '3']))}"


points = st.lists(st.floats(-2.0, 2.0), min_size=2, max_size=2)


@settings(max_examples=500, deadline=None)
@given(trees(), points, st.integers(1, 2))
def test_deriv_matches_central_differences(src, x, axis):
    e = ex.parse(src, 2)
    x = np.array(x)
    h = 1e-5 * max(1.0, abs(x[axis - 1]))
    step = np.zeros(2)
    step[axis - 1] = h
    fd = (ex.evaluate(e, x + step) - ex.evaluate(e, x - step)) / (2 * h)
    exact = ex.evaluate(ex.deriv(e, axis), x)
    assume(abs(ex.evaluate(e, x)) < 1e6)
    assert abs(exact - fd) <= 1e-5 * max(1.0, abs(fd))


@settings(max_examples=200, deadline=None)
@given(trees(), st.integers(0, 2**32 - 1))
def test_print_parse_round_trip(src, seed):
    e = ex.parse(src, 2)
    again = ex.parse(ex.to_string(e), 2)
    pts = np.random.default_rng(seed).uniform(-2, 2, size=(100, 2))
    assert np.array_equal(ex.evaluate(e, pts), ex.evaluate(again, pts))
    assert again == e


@settings(max_examples=100, deadline=None)
@given(trees(depth=4), st.integers(0, 2**32 - 1))
def test_derivative_round_trips_through_text(src, seed):
    d = ex.deriv(ex.parse(src, 2), 1)
    again = ex.parse(ex.to_string(d), 2)
    pts = np.random.default_rng(seed).uniform(-2, 2, size=(20, 2))
    assert np.array_equal(ex.evaluate(d, pts), ex.evaluate(again, pts))
