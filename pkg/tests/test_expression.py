import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from discounted_empc.expression import (
    BinOp,
    Expression,
    ExpressionSyntaxError,
    Neg,
    Num,
    Pow,
    Var,
    evaluate,
    parse_expression,
    to_string,
)


@pytest.mark.parametrize(
    "text, x, u, expected",
    [
        ("x", 0.7, 3.0, 0.7),
        ("0.01*u*(1-x)+0.96*x", 0.5, 4.0, 0.5),
        ("(u-4)^2", 0.0, 4.0, 0.0),
        ("-1.5*u + 2*u*x + 0.1*(u - 4)^2", 0.0, 0.0, 1.6),
        ("2^3", 0.0, 0.0, 8.0),
        ("1e-2*u", 0.0, 3.0, 0.03),
    ],
)
def test_evaluates(text, x, u, expected):
    assert evaluate(parse_expression(text), x, u) == pytest.approx(expected, abs=1e-15)


def test_precedence():
    # power binds tighter than unary minus
    assert evaluate(parse_expression("-x^2"), 3.0, 0.0) == -9.0
    assert evaluate(parse_expression("(-x)^2"), 3.0, 0.0) == 9.0
    assert evaluate(parse_expression("1+2*3"), 0.0, 0.0) == 7.0
    assert evaluate(parse_expression("8/4/2"), 0.0, 0.0) == 1.0
    assert evaluate(parse_expression("8-4-2"), 0.0, 0.0) == 2.0
    assert evaluate(parse_expression("2*x^2"), 3.0, 0.0) == 18.0
    assert evaluate(parse_expression("--x"), 3.0, 0.0) == 3.0


def test_tree_shape():
    assert parse_expression("x+u*2") == BinOp("+", Var("x"), BinOp("*", Var("u"), Num(2.0)))
    assert parse_expression("-x^2") == Neg(Pow(Var("x"), 2))


@pytest.mark.parametrize(
    "text, position",
    [
        ("(x+1", 0),
        ("x+", 2),
        ("y*2", 0),
        ("x*)", 2),
        ("x @ 2", 2),
        ("", 0),
    ],
)
def test_syntax_errors_report_position(text, position):
    with pytest.raises(ExpressionSyntaxError) as info:
        parse_expression(text)
    assert info.value.position == position


@pytest.mark.parametrize("text", ["x^u", "x^1.5", "x^-1", "x^2^2", "x 2", "()"])
def test_rejects(text):
    with pytest.raises(ExpressionSyntaxError):
        parse_expression(text)


def test_vectorised_matches_scalar():
    e = Expression.parse("0.01*u*(1-x)+0.96*x")
    xs = np.linspace(0, 1, 7)
    us = np.linspace(0, 20, 7)
    vec = e(xs, us)
    assert np.array_equal(vec, [e(float(a), float(b)) for a, b in zip(xs, us)])


def test_constant_expression_broadcasts_on_grid():
    e = Expression.parse("3")
    assert e(np.zeros(4), np.zeros(4)) * np.ones(4) == pytest.approx(3.0)


def test_division_by_zero_is_ieee():
    with np.errstate(divide="ignore"):
        assert np.isinf(evaluate(parse_expression("1/x"), np.array(0.0), 0.0))


# -- round trip --------------------------------------------------------------

CORPUS = [
    "x",
    "0.01*u*(1-x)+0.96*x",
    "-1.5*u + 2*u*x + 0.1*(u - 4)^2",
    "(u-4)^2",
    "-x^2 + -(u)",
    "x/u/2 - 3*(x - (u - 1))",
    "1.25e-3*x^3",
]

numbers = st.floats(min_value=0, max_value=1e6, allow_nan=False, allow_infinity=False).map(Num)
leaves = st.one_of(numbers, st.sampled_from([Var("x"), Var("u")]))
trees = st.recursive(
    leaves,
    lambda sub: st.one_of(
        sub.map(Neg),
        st.tuples(sub, st.integers(0, 4)).map(lambda t: Pow(*t)),
        st.tuples(st.sampled_from("+-*/"), sub, sub).map(lambda t: BinOp(*t)),
    ),
    max_leaves=12,
)


@pytest.mark.parametrize("text", CORPUS)
def test_corpus_round_trip(text):
    tree = parse_expression(text)
    assert parse_expression(to_string(tree)) == tree


@settings(max_examples=300, deadline=None)
@given(trees)
def test_round_trip_property(tree):
    assert parse_expression(to_string(tree)) == tree
