import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nhim import expr as ex
from nhim.errors import ParseError


def ev(text, x=(0.0,), y=(0.0,), params=None, dx=1, dy=1):
    params = params or {}
    node = ex.parse_expr(text, dx, dy, list(params))
    return float(ex.compile_expr(node, params)(np.array(x), np.array(y)))


@pytest.mark.parametrize("text, value", [
    ("1 + 2*3", 7.0),
    ("(1 + 2)*3", 9.0),
    ("2^3^2", 512.0),          # right associative
    ("-2^2", -4.0),            # power binds tighter than unary minus
    ("2^-1", 0.5),
    ("8/4/2", 1.0),            # left associative
    ("1 - 2 - 3", -4.0),
    ("--3", 3.0),
    ("+3", 3.0),
    ("1.5e2", 150.0),
    (".5", 0.5),
    ("pi", math.pi),
    ("sqrt(16) + abs(-2)", 6.0),
    ("exp(log(3))", 3.0),
])
def test_precedence_and_literals(text, value):
    assert ev(text) == pytest.approx(value, rel=1e-15)


def test_variables_and_params():
    assert ev("x1*y2 + k", x=(3.0,), y=(1.0, 2.0), params={"k": 0.5}, dy=2) == 6.5
    assert ev("sin(x1)", x=(math.pi / 6,)) == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("text, fragment, column", [
    ("1 + foo(x1)", "unknown function 'foo'", 5),
    ("1 + z", "unknown identifier 'z'", 5),
    ("x2", "exceeds dimension", 1),
    ("(1 + x1", "expected ')'", 8),
    ("1 +", "unexpected token", 4),
    ("1 $ 2", "unexpected character", 3),
    ("sin", "requires an argument", 1),
    ("", "empty expression", 1),
])
def test_parse_errors_carry_location(text, fragment, column):
    with pytest.raises(ParseError) as info:
        ex.parse_expr(text, 1, 1, line=4)
    assert fragment in str(info.value)
    assert info.value.line == 4
    assert info.value.column == column


def test_y_forbidden_where_requested():
    with pytest.raises(ParseError, match="depends on x only"):
        ex.parse_expr("y1 + x1", 1, 1, allow_y=False)


def test_variables_collects_state_refs():
    node = ex.parse_expr("x1 + sin(y2) * -x1", 1, 2)
    assert ex.variables(node) == {("x", 0), ("y", 1)}


# ------------------------------------------------------------ round trip

_leaf = st.one_of(
    st.floats(min_value=0, max_value=1e3, allow_nan=False).map(ex.Const),
    st.sampled_from([ex.Var("x", 0), ex.Var("x", 1), ex.Var("y", 0), ex.Param("k")]),
)


def _extend(children):
    return st.one_of(
        children.map(ex.Neg),
        st.tuples(st.sampled_from(list(ex.BINARY_OPS)), children, children)
          .map(lambda t: ex.BinOp(*t)),
        st.tuples(st.sampled_from(list(ex.FUNCTIONS)), children).map(lambda t: ex.Call(*t)),
    )


trees = st.recursive(_leaf, _extend, max_leaves=12)
_rng = np.random.default_rng(1234)
_X = _rng.uniform(-3, 3, (1000, 2))
_Y = _rng.uniform(-3, 3, (1000, 1))


@settings(max_examples=150, deadline=None)
@given(trees)
def test_print_parse_round_trip(tree):
    text = ex.to_string(tree)
    again = ex.parse_expr(text, 2, 1, ["k"])
    p = {"k": 0.75}
    with np.errstate(all="ignore"):
        a = np.broadcast_to(ex.compile_expr(tree, p)(_X, _Y), (1000,))
        b = np.broadcast_to(ex.compile_expr(again, p)(_X, _Y), (1000,))
    assert np.array_equal(a, b, equal_nan=True)
    assert ex.to_string(again) == text
