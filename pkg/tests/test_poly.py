import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sos_almost.poly import (
    ParseError,
    Polynomial,
    PolynomialError,
    add,
    basis,
    evaluate,
    format_polynomial,
    gradient,
    hessian,
    l1_norm,
    mul,
    parse,
    perturbation_series,
    scale,
    square,
)

MOTZKIN = "x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1"


def x(n, i):
    return Polynomial.variable(n, i)


# -- construction and arithmetic ------------------------------------------------


def test_zero_coefficients_dropped():
    p = Polynomial(2, {(1, 0): 0.0, (0, 1): 2.0})
    assert dict(p.terms) == {(0, 1): 2.0}
    assert add(x(1, 1), scale(x(1, 1), -1.0)).is_zero()


def test_square_and_mul():
    one = Polynomial.constant(1, 1.0)
    assert square(one - x(1, 1)) == parse("1 - 2*x1 + x1^2", 1)
    assert mul(x(2, 1), x(2, 2)) == Polynomial(2, {(1, 1): 1.0})


def test_dimension_mismatch():
    with pytest.raises(PolynomialError):
        add(x(1, 1), x(2, 1))
    with pytest.raises(PolynomialError):
        mul(x(1, 1), x(2, 1))


def test_gradient():
    assert gradient(parse("x1^2", 1), 1) == parse("2*x1", 1)
    assert gradient(parse("x1*x2", 2), 2) == parse("x1", 2)
    assert gradient(Polynomial.constant(2, 3.0), 1).is_zero()
    with pytest.raises(PolynomialError):
        gradient(x(2, 1), 3)
    with pytest.raises(PolynomialError):
        gradient(x(2, 1), 0)


def test_hessian_of_quadratic():
    H = hessian(parse("x1^2 + 3*x1*x2 - x2^2", 2))
    vals = [[float(evaluate(h, [0.3, -0.7])) for h in row] for row in H]
    assert vals == [[2.0, 3.0], [3.0, -2.0]]


def test_l1_norm():
    assert l1_norm(parse(MOTZKIN, 2)) == 6.0
    assert l1_norm(Polynomial.zero(3)) == 0.0
    assert l1_norm(parse("1 + x1^2 + 0.5*x1^4", 1)) == 2.5


def test_evaluate_batch_matches_pointwise():
    p = parse(MOTZKIN, 2)
    pts = np.array([[1.0, 1.0], [0.0, 0.0], [2.0, -1.0]])
    vals = evaluate(p, pts)
    assert vals.shape == (3,)
    assert vals[0] == 0.0 and vals[1] == 1.0
    assert vals[2] == pytest.approx(16 + 4 - 12 + 1)


# -- basis ----------------------------------------------------------------------


def test_basis_order_n2():
    b = basis(2, 2)
    assert list(b.monomials) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert b.size == 6


def test_basis_small_cases():
    assert list(basis(1, 3).monomials) == [(0,), (1,), (2,), (3,)]
    assert basis(3, 2).size == 10


@pytest.mark.parametrize("n", range(1, 6))
@pytest.mark.parametrize("r", range(0, 7))
def test_basis_enumeration_oracle(n, r):
    b = basis(n, r)
    brute = {a for a in itertools.product(range(r + 1), repeat=n) if sum(a) <= r}
    assert b.size == math.comb(n + r, n)
    assert len(set(b.monomials)) == b.size
    assert set(b.monomials) == brute
    degs = [sum(a) for a in b.monomials]
    assert degs == sorted(degs)


def test_basis_is_deterministic():
    assert basis(3, 3).monomials == basis(3, 3).monomials
    assert all(basis(3, 3).position(a) == i for i, a in enumerate(basis(3, 3).monomials))


# -- perturbation series ------------------------------------------------------------


def test_perturbation_series_examples():
    assert perturbation_series(1, 2) == parse("1 + x1^2 + 0.5*x1^4", 1)
    assert perturbation_series(2, 1) == parse("2 + x1^2 + x2^2", 2)
    assert perturbation_series(2, 0) == Polynomial.constant(2, 2.0)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
@pytest.mark.parametrize("r", [0, 1, 4, 10, 20])
def test_perturbation_series_norm(n, r):
    expected = n * math.fsum(1 / math.factorial(k) for k in range(r + 1))
    norm = l1_norm(perturbation_series(n, r))
    assert norm == pytest.approx(expected, rel=1e-15)
    assert norm <= n * math.e * (1 + 1e-15)


def test_perturbation_series_cap():
    with pytest.raises(PolynomialError):
        perturbation_series(1, 21)


# -- parsing --------------------------------------------------------------------


def test_parse_motzkin():
    p = parse(MOTZKIN, 2)
    assert p.degree == 6
    assert p.coefficient((2, 2)) == -3.0
    assert len(p) == 4


def test_parse_whitespace_and_signs():
    assert parse(" - x1 +2.5* x2^3 ", 2) == Polynomial(2, {(1, 0): -1.0, (0, 3): 2.5})
    assert parse("x1x2", 2) == parse("x1*x2", 2)
    assert parse("x1^2*x1", 1) == parse("x1^3", 1)
    assert parse("0", 1).is_zero()


@pytest.mark.parametrize("text, pos", [
    ("x1^^2", 3),
    ("x3", 0),
    ("x1 + ", 5),
    ("2 x1 $", 5),
    ("", 0),
    ("x1 x2 3", 6),
])
def test_parse_errors(text, pos):
    with pytest.raises(ParseError) as info:
        parse(text, 2)
    assert info.value.position == pos


coeffs = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False).filter(lambda c: c != 0)


@st.composite
def polynomials(draw, n=None, max_deg=4):
    n = n or draw(st.integers(1, 3))
    mons = draw(st.lists(st.tuples(*[st.integers(0, max_deg)] * n), max_size=6, unique=True))
    return Polynomial(n, {m: draw(coeffs) for m in mons})


@settings(max_examples=100, deadline=None)
@given(polynomials())
def test_parse_format_roundtrip(p):
    q = parse(format_polynomial(p), p.n)
    assert dict(q.terms) == dict(p.terms)


@st.composite
def poly_pairs(draw):
    n = draw(st.integers(1, 3))
    return draw(polynomials(n=n, max_deg=3)), draw(polynomials(n=n, max_deg=3))


@settings(max_examples=50, deadline=None)
@given(poly_pairs(), st.integers(0, 2**32 - 1))
def test_arithmetic_matches_evaluation(pair, seed):
    p, q = pair
    pts = np.random.default_rng(seed).uniform(-1.5, 1.5, size=(100, p.n))
    vp, vq = evaluate(p, pts), evaluate(q, pts)
    s = 1.0 + np.abs(vp) + np.abs(vq)
    np.testing.assert_array_less(np.abs(evaluate(add(p, q), pts) - (vp + vq)), 1e-10 * s)
    prod = evaluate(mul(p, q), pts)
    np.testing.assert_array_less(np.abs(prod - vp * vq), 1e-10 * (1.0 + np.abs(vp * vq)))


def test_from_gram_matches_quadratic_form():
    b = basis(2, 1)
    G = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, -0.3], [0.0, -0.3, 4.0]])
    p = Polynomial.from_gram(G, b)
    pt = np.array([0.7, -1.2])
    v = np.array([1.0, *pt])
    assert float(evaluate(p, pt)) == pytest.approx(v @ G @ v, rel=1e-14)
