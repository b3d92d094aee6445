import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bilateral.expr import (Binary, Const, ExprDomainError, ExprSyntaxError, Var, differentiate,
                            evaluate, parse, to_string)

ZS = np.linspace(0.01, 0.99, 100)


def test_parse_first_diffusion_entry():
    e = parse("z^2+2")
    assert np.allclose(evaluate(e, ZS), ZS**2 + 2, rtol=0, atol=1e-15)


def test_parse_second_diffusion_entry():
    e = parse("exp(-z)+0.5")
    assert np.allclose(evaluate(e, ZS), np.exp(-ZS) + 0.5, rtol=0, atol=1e-15)


def test_unbalanced_parenthesis_reports_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse("(z+")
    assert info.value.offset == 3


def test_unknown_identifier_rejected():
    with pytest.raises(ExprSyntaxError, match="unknown identifier"):
        parse("tan(z)")


@pytest.mark.parametrize("text", ["", "z+", "2*", "sin z", "z)", "1..2", "3 4"])
def test_malformed_text(text):
    with pytest.raises(ExprSyntaxError):
        parse(text)


@pytest.mark.parametrize("text, z, want", [
    ("z^2+2", 0.0, 2.0),
    ("exp(-z)+0.5", 0.0, 1.5),
    ("1+z", 0.5, 1.5),
    ("2^3^2", 0.0, 512.0),
    ("-z^2", 3.0, -9.0),
    ("8/4/2", 0.0, 1.0),
    ("pi", 0.0, math.pi),
    (" 1 + 2 * z ", 2.0, 5.0),
    ("1e-3*z", 2.0, 2e-3),
])
def test_eval_points(text, z, want):
    assert evaluate(parse(text), z) == pytest.approx(want, rel=1e-15, abs=0)


def test_scalar_in_scalar_out():
    assert isinstance(evaluate(parse("3"), 0.2), float)
    assert evaluate(parse("3"), ZS).shape == ZS.shape


@pytest.mark.parametrize("text, z", [("1/z", 0.0), ("sqrt(z-1)", 0.5), ("z^0.5", -1.0)])
def test_domain_errors(text, z):
    with pytest.raises(ExprDomainError):
        evaluate(parse(text), z)


def test_derivative_power_rule():
    d = differentiate(parse("z^2+2"))
    assert np.allclose(evaluate(d, ZS), 2 * ZS, rtol=0, atol=1e-15)


def test_derivative_chain_rule():
    d = differentiate(parse("exp(-z)"))
    assert np.allclose(evaluate(d, ZS), -np.exp(-ZS), rtol=0, atol=1e-15)


def test_derivative_of_constant_is_zero():
    assert np.all(evaluate(differentiate(parse("5")), ZS) == 0)


def test_second_derivative_closure():
    e = parse("sqrt(1+z^2)*sin(3*z)")
    dd = differentiate(differentiate(e))
    h = 1e-4
    fd = (evaluate(e, ZS + h) - 2 * evaluate(e, ZS) + evaluate(e, ZS - h)) / h**2
    assert np.allclose(evaluate(dd, ZS), fd, atol=1e-5)


def test_printer_keeps_precedence():
    e = Binary("-", Const(1.0), Binary("-", Var(), Const(2.0)))
    assert evaluate(parse(to_string(e)), 0.5) == 1.0 - (0.5 - 2.0)


# -- properties


def _expressions():
    leaf = st.sampled_from(["z", "1", "2.5", "pi", "0.5", "3"])

    def grow(sub):
        return st.one_of(
            st.tuples(sub, st.sampled_from("+-*"), sub).map(lambda t: f"({t[0]}){t[1]}({t[2]})"),
            st.tuples(sub, sub).map(lambda t: f"({t[0]})/(2+({t[1]})^2)"),
            sub.map(lambda s: f"sin({s})"),
            sub.map(lambda s: f"cos({s})"),
            sub.map(lambda s: f"exp(sin({s}))"),
            sub.map(lambda s: f"sqrt(1+({s})^2)"),
            st.tuples(sub, st.integers(0, 3)).map(lambda t: f"({t[0]})^{t[1]}"),
            sub.map(lambda s: f"-({s})"),
        )

    return st.recursive(leaf, grow, max_leaves=6)


@given(_expressions())
def test_symbolic_matches_central_difference(text):
    e = parse(text)
    d = evaluate(differentiate(e), ZS)
    h = 1e-6
    fd = (evaluate(e, ZS + h) - evaluate(e, ZS - h)) / (2 * h)
    assert np.all(np.abs(d - fd) <= 1e-6 * (1 + np.abs(d)))


@given(_expressions())
def test_print_parse_round_trip(text):
    e = parse(text)
    again = parse(to_string(e))
    assert np.array_equal(evaluate(again, ZS), evaluate(e, ZS))


@given(_expressions(), st.floats(0.0, 1.0))
def test_evaluation_is_deterministic(text, z):
    e = parse(text)
    assert evaluate(e, z) == evaluate(e, z)
