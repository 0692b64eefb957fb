import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weylkit.expr_dsl import (BinOp, Call, ExprDomainError, ExprSyntaxError, Neg, Num,
                              UnknownIdentifier, Var, eval_expr, parse_expr, to_text)


def test_zero_is_constant_tree():
    e = parse_expr("0")
    assert e.root == Num(0.0)
    assert e.is_constant


def test_grammar_shape_of_a_difference():
    assert parse_expr("t^2 - 1").root == BinOp("-", BinOp("^", Var(), Num(2.0)), Num(1.0))


@pytest.mark.parametrize("text,t,want", [
    ("2*sin(t)+1", 0.0, 1.0),
    ("1", 3.7, 1.0),
    ("t^2", 2.0, 4.0),
    ("exp(-t)", 1.0, 0.36787944117144233),
    ("2^3^2", 0.0, 512.0),
    ("-t^2", 3.0, -9.0),
    ("sqrt(abs(t - 5))", 1.0, 2.0),
    ("1e-3*t", 2.0, 2e-3),
])
def test_hand_evaluations(text, t, want):
    assert eval_expr(parse_expr(text), t) == pytest.approx(want, rel=1e-14)


def test_vectorised_evaluation_matches_scalar():
    e = parse_expr("cos(t)*exp(t/3) - log(1 + t)")
    ts = np.linspace(0, 4, 9)
    assert np.allclose(e(ts), [e(float(t)) for t in ts], rtol=0, atol=1e-15)


@pytest.mark.parametrize("text,offset", [("1 +", 3), ("(t", 2), ("2 ** t", 3), ("t)", 1), ("", 0)])
def test_syntax_errors_carry_offset(text, offset):
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr(text)
    assert info.value.offset == offset


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifier):
        parse_expr("x + 1")
    with pytest.raises(UnknownIdentifier):
        parse_expr("tan(t)")


@pytest.mark.parametrize("text,t", [("log(t)", 0.0), ("1/(t-1)", 1.0), ("sqrt(t-2)", 1.0)])
def test_domain_errors_report_t(text, t):
    with pytest.raises(ExprDomainError) as info:
        parse_expr(text)(t)
    assert info.value.t == t


# -- round trip property --------------------------------------------------------

_leaf = st.one_of(st.just(Var()), st.floats(0, 50, allow_nan=False).map(lambda v: Num(round(v, 3))))


def _extend(children):
    return st.one_of(
        st.builds(Neg, children),
        st.builds(BinOp, st.sampled_from("+-*/^"), children, children),
        st.builds(Call, st.sampled_from(["sin", "cos", "exp", "abs"]), children),
    )


trees = st.recursive(_leaf, _extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(trees)
def test_print_parse_round_trip(tree):
    assert parse_expr(to_text(tree)).root == tree


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 3))
def test_polynomial_agrees_with_python(a, b, t):
    e = parse_expr(f"{a!r}*t^2 + ({b!r})*t - 1")
    assert e(t) == pytest.approx(a * t * t + b * t - 1, rel=1e-12, abs=1e-12)


def test_against_sympy_oracle():
    sympy = pytest.importorskip("sympy")
    ts = sympy.Symbol("t")
    text = "exp(-t/2)*sin(3*t) + sqrt(1 + t^2)"
    oracle = sympy.lambdify(ts, sympy.sympify(text.replace("^", "**")), "mpmath")
    e = parse_expr(text)
    for t in (0.0, 0.3, 1.7, 4.2):
        assert e(t) == pytest.approx(float(oracle(t)), rel=1e-14)


def test_no_pi_constant():
    with pytest.raises(UnknownIdentifier):
        parse_expr("pi*t")
    assert math.isclose(parse_expr("4*t")(math.pi / 4), math.pi)
