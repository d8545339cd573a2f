import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urnflow.expressions import (
    ArityError,
    BinOp,
    Call,
    Neg,
    Num,
    ParseError,
    UnknownIdentifierError,
    Var,
    parse_coefficient,
)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def test_scalar_evaluation():
    expr = parse_coefficient("2*u + 1", 1)
    assert expr(0.25) == 1.5
    assert isinstance(expr(0.25), float)


def test_vector_evaluation_broadcasts():
    expr = parse_coefficient("u + 2*v", 2)
    u = np.array([[0.0], [1.0]])
    v = np.array([[10.0, 20.0]])
    out = expr(u, v)
    assert out.shape == (2, 2)
    assert np.array_equal(out, [[20.0, 40.0], [21.0, 41.0]])


def test_constant_broadcasts_to_input_shape():
    expr = parse_coefficient("3", 1)
    out = expr(np.zeros(5))
    assert out.shape == (5,)
    assert np.all(out == 3.0)


def test_function_calls():
    expr = parse_coefficient("min(u, v) + max(u, v)", 2)
    assert expr(0.2, 0.7) == pytest.approx(0.9)
    expr = parse_coefficient("exp(0) + sqrt(4) + abs(-2)", 1)
    assert expr(0.0) == 5.0
    expr = parse_coefficient("sin(u)*sin(u) + cos(u)*cos(u)", 1)
    assert expr(0.3) == pytest.approx(1.0)


def test_precedence_and_unary_minus():
    assert parse_coefficient("2 + 3 * 4", 1)(0.0) == 14.0
    assert parse_coefficient("-u*u", 1)(2.0) == -4.0  # -(u*u)
    assert parse_coefficient("2 - 3 - 4", 1)(0.0) == -5.0  # left-assoc
    assert parse_coefficient("8 / 4 / 2", 1)(0.0) == 1.0


def test_binary_requires_both_arguments():
    expr = parse_coefficient("u*v", 2)
    with pytest.raises(TypeError):
        expr(0.5)


# ---------------------------------------------------------------------------
# errors carry positions
# ---------------------------------------------------------------------------

def test_unknown_identifier_position():
    with pytest.raises(UnknownIdentifierError) as err:
        parse_coefficient("1 + w", 1)
    assert err.value.position == 4


def test_unknown_function():
    with pytest.raises(UnknownIdentifierError):
        parse_coefficient("tan(u)", 1)


def test_variable_v_rejected_at_arity_one():
    with pytest.raises(ArityError) as err:
        parse_coefficient("u + v", 1)
    assert err.value.position == 4


def test_function_arity_mismatch():
    with pytest.raises(ArityError):
        parse_coefficient("min(u)", 2)
    with pytest.raises(ArityError):
        parse_coefficient("sqrt(u, v)", 2)


def test_dangling_operator():
    with pytest.raises(ParseError) as err:
        parse_coefficient("2 +", 1)
    assert err.value.position == 3


def test_unbalanced_parenthesis():
    with pytest.raises(ParseError):
        parse_coefficient("(1 + 2", 1)


def test_bad_character_position():
    with pytest.raises(ParseError) as err:
        parse_coefficient("1 $ 2", 1)
    assert err.value.position == 2


def test_trailing_garbage():
    with pytest.raises(ParseError):
        parse_coefficient("1 2", 1)


def test_bad_arity_argument():
    with pytest.raises(ValueError):
        parse_coefficient("u", 3)


# ---------------------------------------------------------------------------
# canonical form round trip
# ---------------------------------------------------------------------------

@pytest.mark.parametrize(
    "source,canonical",
    [
        ("u*(v+1)", "u * (v + 1.0)"),
        ("-u - 1", "-u - 1.0"),
        ("1-(2-3)", "1.0 - (2.0 - 3.0)"),
        ("u/v/2", "u / v / 2.0"),
        ("min(u, max(v, 0.5))", "min(u, max(v, 0.5))"),
        ("-(u+v)", "-(u + v)"),
    ],
)
def test_canonical_examples(source, canonical):
    assert parse_coefficient(source, 2).canonical() == canonical


_LEAVES = st.one_of(
    st.builds(
        Num,
        st.floats(
            min_value=0.0, max_value=100.0, allow_nan=False, allow_infinity=False
        ),
    ),
    st.sampled_from([Var("u"), Var("v")]),
)


def _composites(children):
    return st.one_of(
        st.builds(Neg, children),
        st.builds(BinOp, st.sampled_from(list("+-*/")), children, children),
        st.builds(
            Call,
            st.sampled_from(["sin", "cos", "exp", "sqrt", "abs"]),
            st.tuples(children),
        ),
        st.builds(
            Call,
            st.sampled_from(["min", "max"]),
            st.tuples(children, children),
        ),
    )


_TREES = st.recursive(_LEAVES, _composites, max_leaves=25)


@given(_TREES)
@settings(max_examples=300, deadline=None)
def test_canonical_round_trip_reproduces_ast(tree):
    """Printing any tree and re-parsing it yields the identical tree (so
    evaluation agrees bit for bit), and the printed form is a fixpoint."""
    expr = parse_coefficient("0", 2)
    printed = type(expr)(source="", ast=tree, arity=2).canonical()
    reparsed = parse_coefficient(printed, 2)
    assert reparsed.ast == tree
    assert reparsed.canonical() == printed
