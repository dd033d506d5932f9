import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tractor_forge.errors import DomainError, ExprSyntaxError
from tractor_forge.expr import (Add, Mul, Num, Pow, Var, differentiate, evaluate, free_vars, lambdify,
                                parse, render, simplify)


def test_parse_structure():
    e = parse("x1^2 + 2*x2")
    assert e == Add(Pow(Var("x1"), Num(2.0)), Mul(Num(2.0), Var("x2")))
    assert repr(e) == "Add(Pow(x1, 2), Mul(2, x2))"


@pytest.mark.parametrize("text, point, value", [
    ("4/(1+x1^2+x2^2+x3^2)^2", (0, 0, 0), 4.0),
    ("x1*x2", (3, 4), 12.0),
    ("exp(0)", (), 1.0),
    ("-x1^2", (3,), -9.0),
    ("2^3^2", (), 512.0),
    ("2^-1", (), 0.5),
    ("-2^2", (), -4.0),
    ("8/4/2", (), 1.0),
    ("1 - 2 - 3", (), -4.0),
])
def test_evaluate_precedence(text, point, value):
    assert evaluate(parse(text), point) == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("text, offset", [
    ("sin(x1", 6),
    ("(x1 + 1", 7),
    ("x1 + foo", 5),
    ("1.2.3", 0),
    ("x1 +", 4),
    ("x1 )", 3),
])
def test_syntax_errors_carry_offset(text, offset):
    with pytest.raises(ExprSyntaxError) as info:
        parse(text)
    assert info.value.offset == offset


def test_offsets_are_utf8_bytes():
    with pytest.raises(ExprSyntaxError) as info:
        parse("x1 + α")
    assert info.value.offset == 5


@pytest.mark.parametrize("text", ["log(x1)", "sqrt(x1)", "1/(x1+1)", "x1^0.5"])
def test_domain_errors(text):
    with pytest.raises(DomainError) as info:
        evaluate(parse(text), (-1.0,))
    assert info.value.node is not None


def test_compiled_reports_failing_node():
    fn = lambdify([parse("x1 + log(x2)")])
    with pytest.raises(DomainError) as info:
        fn({"x1": np.array([1.0, 2.0]), "x2": np.array([1.0, -1.0])})
    assert "log" in str(info.value.node)


def test_derivative_examples():
    assert render(differentiate(parse("x1^2"), 1)) == "2 * x1"
    assert differentiate(parse("x1"), 2) == Num(0.0)
    d = differentiate(parse("exp(x1*x2)"), 1)
    assert evaluate(d, (1.0, 1.0)) == pytest.approx(math.e, abs=1e-12)
    f = lambda a: math.exp(a)
    fd = (f(1 + 1e-5) - f(1 - 1e-5)) / 2e-5
    assert evaluate(d, (1.0, 1.0)) == pytest.approx(fd, abs=1e-7)


def test_flat_metric_differentiates_to_literal_zero():
    for text in ("1", "0", "3*x1^0"):
        assert differentiate(parse(text), 1) == Num(0.0)


def test_reserved_variables():
    e = parse("t^2*r + s")
    assert free_vars(e) == {"t", "r", "s"}
    assert evaluate(differentiate(e, "t"), {"t": 2.0, "r": 3.0, "s": 0.0}) == 12.0


def test_lambdify_broadcasts():
    fn = lambdify([parse("x1*x2"), parse("1")])
    out = fn({"x1": np.arange(3.0), "x2": 2.0})
    assert out.shape == (3, 2)
    assert out[:, 1].tolist() == [1.0, 1.0, 1.0]
    assert fn({"x1": 2.0, "x2": 3.0}).tolist() == [6.0, 1.0]


# -- random expressions ------------------------------------------------------

LEAVES = st.one_of(
    st.sampled_from(["x1", "x2", "x3"]),
    st.floats(min_value=-3, max_value=3, allow_nan=False).map(lambda v: f"{v:.3f}".replace("-", "0-")),
)


def _extend(children):
    return st.one_of(
        st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})"),
        st.tuples(children, children).map(lambda t: f"({t[0]})/(2 + ({t[1]})^2)"),
        st.tuples(children, st.integers(0, 3)).map(lambda t: f"({t[0]})^{t[1]}"),
        st.tuples(st.sampled_from(["sin", "cos", "tanh"]), children).map(lambda t: f"{t[0]}({t[1]})"),
        children.map(lambda c: f"exp(0.3*sin({c}))"),
        children.map(lambda c: f"log(1.5 + cos({c}))"),
        children.map(lambda c: f"sqrt(1 + ({c})^2)"),
        children.map(lambda c: f"-({c})"),
    )


EXPRESSIONS = st.recursive(LEAVES, _extend, max_leaves=8)
POINTS = st.tuples(*[st.floats(min_value=-1, max_value=1, allow_nan=False)] * 3)


@settings(max_examples=100, deadline=None)
@given(EXPRESSIONS, POINTS, st.integers(1, 3))
def test_derivative_matches_central_difference(text, point, var):
    e = parse(text)
    d = differentiate(e, var)
    h = 1e-5
    plus, minus = list(point), list(point)
    plus[var - 1] += h
    minus[var - 1] -= h
    fd = (evaluate(e, plus) - evaluate(e, minus)) / (2 * h)
    value = evaluate(d, point)
    assert abs(value - fd) <= 1e-6 * max(1.0, abs(value))


@settings(max_examples=100, deadline=None)
@given(EXPRESSIONS, POINTS)
def test_render_round_trip(text, point):
    e = parse(text)
    again = parse(render(e))
    assert evaluate(again, point) == pytest.approx(evaluate(e, point), rel=1e-12, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(EXPRESSIONS, POINTS)
def test_simplify_preserves_value(text, point):
    e = parse(text)
    assert evaluate(simplify(e), point) == pytest.approx(evaluate(e, point), rel=1e-12, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(EXPRESSIONS, POINTS)
def test_compiled_matches_tree_evaluation(text, point):
    e = parse(text)
    env = {f"x{i + 1}": v for i, v in enumerate(point)}
    assert lambdify([e])(env)[0] == pytest.approx(evaluate(e, point), rel=1e-12, abs=1e-12)
