import math

import numpy as np
import pytest

from sos_almost.moment import build_moment_matrix, lin_functional, moments_from_atoms
from sos_almost.poly import Polynomial, basis, l1_norm, parse
from sos_almost.relaxation import (
    DualShape,
    RelaxationConfig,
    RelaxationError,
    build_primal,
    dual_objective,
    dual_residual,
    exp_budget,
    feasible_start,
    min_order,
)

from oracles import MOTZKIN, exponents


def test_exp_budget():
    assert exp_budget(2, 1.0) == pytest.approx(5.436563657, rel=1e-10)
    assert exp_budget(1, 0.0) == 1.0
    assert exp_budget(3, 2.0) == pytest.approx(163.794450, rel=1e-8)
    with pytest.raises(RelaxationError):
        exp_budget(1, 26.5)


@pytest.mark.parametrize("r, M, tol", [(0, 1.0, 1e-8), (2, 0.0, 1e-8), (2, 27.0, 1e-8), (2, 1.0, 0.0)])
def test_config_validation(r, M, tol):
    with pytest.raises(RelaxationError):
        build_primal(parse(MOTZKIN, 2) if r == 0 else parse("x1^2", 1), RelaxationConfig(r, M, tol))


def test_min_order():
    assert min_order(parse(MOTZKIN, 2)) == 3
    assert min_order(parse("x1^3", 1)) == 2
    assert min_order(Polynomial.constant(1, 2.0)) == 1


def test_assembly_square():
    prob = build_primal(parse("x1^2", 1), RelaxationConfig(1, 1.0))
    assert prob.variables == ((1,), (2,))
    assert prob.objective.tolist() == [0.0, 1.0] and prob.objective_constant == 0.0
    # M_1(y) = [[1, y1], [y1, y2]]
    y = np.array([0.3, 0.5])
    assert prob.moment_matrix(y).tolist() == [[1.0, 0.3], [0.3, 0.5]]
    assert prob.budget_value(y) == pytest.approx(1.5)
    assert prob.budget == pytest.approx(math.e)
    # the scaled row keeps the same feasible set
    assert prob.budget_coeffs @ y <= prob.budget_rhs
    assert (prob.budget_coeffs @ y - prob.budget_rhs) / prob.budget_scale == pytest.approx(1.5 - math.e)


def test_assembly_motzkin_sizes():
    prob = build_primal(parse(MOTZKIN, 2), RelaxationConfig(3, 2.0))
    assert prob.num_variables == 27 == len(exponents(2, 6)) - 1
    assert prob.base.shape == (10, 10)
    assert prob.budget == pytest.approx(2 * math.exp(4))


def test_constant_objective():
    prob = build_primal(Polynomial.constant(2, 3.0), RelaxationConfig(1, 1.0))
    assert prob.objective_value(np.random.default_rng(0).normal(size=prob.num_variables)) == 3.0


def test_assembly_psd_map_positions():
    prob = build_primal(parse(MOTZKIN, 2), RelaxationConfig(3, 1.5))
    b = prob.basis.monomials
    for k, alpha in enumerate(prob.variables):
        rows, cols = np.nonzero(prob.coeff_mats[k])
        assert len(rows) > 0
        for i, j in zip(rows, cols):
            assert tuple(p + q for p, q in zip(b[i], b[j])) == alpha


def test_objective_is_lin_functional():
    f = parse(MOTZKIN, 2)
    prob = build_primal(f, RelaxationConfig(3, 2.0))
    rng = np.random.default_rng(5)
    y = moments_from_atoms(rng.uniform(-1, 1, (4, 2)), np.full(4, 0.25), 3)
    assert prob.objective_value(prob.reduced_vector(y)) == pytest.approx(lin_functional(y, f), rel=1e-13)
    np.testing.assert_allclose(prob.moment_matrix(prob.reduced_vector(y)),
                               build_moment_matrix(y, 3).entries, rtol=0, atol=0)


def test_dual_objective():
    G = np.zeros((2, 2))
    assert dual_objective(DualShape(1.0, 0.0, G), 1, 1.0) == 1.0
    assert dual_objective(DualShape(0.0, 1.0, G), 1, 1.0) == pytest.approx(-math.e)
    with pytest.raises(RelaxationError):
        dual_objective(DualShape(0.0, -1e-3, G), 1, 1.0)


def test_dual_residual():
    f = parse("x1^2", 1)
    assert dual_residual(f, DualShape(0.0, 0.0, np.diag([0.0, 1.0])), 1, 1).is_zero()
    assert dual_residual(f, DualShape(-1.0, 0.0, np.eye(2)), 1, 1).is_zero()
    G = np.diag([0.0, 1.0])
    G[0, 0] += 1e-3
    assert l1_norm(dual_residual(f, DualShape(0.0, 0.0, G), 1, 1)) == pytest.approx(1e-3)
    with pytest.raises(RelaxationError):
        dual_residual(f, DualShape(0.0, 0.0, np.eye(3)), 1, 1)


def test_dual_residual_theta_term():
    # x^2 - gamma = (1 + lam) x^2 - lam (1 + x^2) with gamma = lam
    lam = 0.25
    d = DualShape(lam, lam, np.diag([0.0, 1.0 + lam]))
    assert dual_residual(parse("x1^2", 1), d, 1, 1).is_zero()


def test_feasible_start_examples():
    cfg = RelaxationConfig(1, 2.0)
    y = feasible_start(cfg, 1)
    assert y.vector() == pytest.approx([1.0, 0.0, 1 / 3])
    prob = build_primal(parse("x1^2", 1), cfg)
    assert prob.budget_value(prob.reduced_vector(y)) == pytest.approx(4 / 3)
    y = feasible_start(RelaxationConfig(2, 2.0), 2)
    assert build_moment_matrix(y, 2).min_eigenvalue() > 0


@pytest.mark.parametrize("n", [1, 2, 3, 4])
@pytest.mark.parametrize("M", [1.0, 2.0, 3.0])
def test_feasible_start_strict(n, M):
    r = 3
    cfg = RelaxationConfig(r, M)
    prob = build_primal(Polynomial.zero(n), cfg)
    y = feasible_start(cfg, n)
    yv = prob.reduced_vector(y)
    assert prob.budget_value(yv) < exp_budget(n, M)
    assert prob.budget_coeffs @ yv < prob.budget_rhs
    assert np.linalg.eigvalsh(prob.moment_matrix(yv))[0] > 0


def test_budget_holds_for_measures_in_box():
    rng = np.random.default_rng(8)
    for _ in range(50):
        n, r, M = int(rng.integers(1, 4)), int(rng.integers(1, 4)), float(rng.choice([1.0, 1.5, 2.0]))
        k = int(rng.integers(1, 5))
        y = moments_from_atoms(rng.uniform(-M, M, (k, n)), np.full(k, 1 / k), r)
        prob = build_primal(Polynomial.zero(n), RelaxationConfig(r, M))
        assert prob.budget_value(prob.reduced_vector(y)) <= exp_budget(n, M)


def test_rejects_high_degree():
    with pytest.raises(RelaxationError):
        build_primal(parse(MOTZKIN, 2), RelaxationConfig(2, 1.0))


def test_odd_degree_accepted():
    prob = build_primal(parse("x1^3", 1), RelaxationConfig(2, 1.0))
    assert prob.num_variables == 4


def test_basis_shared_with_poly():
    prob = build_primal(parse(MOTZKIN, 2), RelaxationConfig(3, 1.0))
    assert prob.basis == basis(2, 3)
