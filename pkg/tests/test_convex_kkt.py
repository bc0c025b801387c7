import copy
import math

import numpy as np
import pytest

from sos_almost.certificate import find_r_eps, verify
from sos_almost.convex_kkt import (
    ConvexityError,
    ConvexProgram,
    NegativeOnSetError,
    build_representation,
    check_convexity,
    kkt_residuals,
    lagrangian,
    representation_from_dict,
    representation_to_dict,
    sample_feasible,
    solve_convex_program,
    verify_representation,
)
from sos_almost.poly import Polynomial, evaluate, l1_norm, parse, perturbation_series

DISK = "1 - x1^2 - x2^2"
R2 = 1 / math.sqrt(2)


def disk_program(f="x1 + x2 + 2"):
    return ConvexProgram(parse(f, 2), [parse(DISK, 2)], [0.0, 0.0])


@pytest.fixture(scope="module")
def disk_rep():
    return build_representation(disk_program(), 0.5)


def test_program_validation():
    with pytest.raises(ValueError):
        ConvexProgram(parse("x1", 2), [parse(DISK, 2)], [1.0, 0.0])
    with pytest.raises(ValueError):
        ConvexProgram(parse("x1", 2), [parse(DISK, 2)], [0.0])
    with pytest.raises(ValueError):
        ConvexProgram(parse("x1", 2), [parse("1 - x1^2", 1)], [0.0, 0.0])


def test_disk_kkt():
    kkt = solve_convex_program(disk_program())
    assert kkt.x_star == pytest.approx([-R2, -R2], abs=1e-7)
    assert kkt.multipliers[0] == pytest.approx(R2, abs=1e-8)
    assert kkt.f_star == pytest.approx(2 - math.sqrt(2), abs=1e-8)
    stat, comp = kkt_residuals(disk_program(), kkt.x_star, kkt.multipliers)
    assert stat <= 1e-6 and comp <= 1e-6


def test_interior_minimum():
    kkt = solve_convex_program(disk_program("x1^2 + x2^2"))
    assert np.abs(kkt.x_star).max() < 1e-8
    assert kkt.multipliers.tolist() == [0.0]


def test_unconstrained():
    prog = ConvexProgram(parse("x1^2 - 2*x1 + 1", 2), [], [0.0, 0.0])
    kkt = solve_convex_program(prog)
    assert kkt.x_star[0] == pytest.approx(1.0, abs=1e-8)
    assert kkt.multipliers.size == 0 and kkt.f_star == pytest.approx(0.0, abs=1e-14)


def test_two_active_constraints():
    # min x1 + x2 on {x1 >= 0.5, x2 >= 0.25, disk}: corner (0.5, 0.25), lam = (1, 1)
    prog = ConvexProgram(parse("x1 + x2", 2),
                         [parse("x1 - 0.5", 2), parse("x2 - 0.25", 2), parse("1 - x1^2 - x2^2", 2)],
                         [0.6, 0.3])
    kkt = solve_convex_program(prog)
    assert kkt.x_star == pytest.approx([0.5, 0.25], abs=1e-7)
    assert kkt.multipliers == pytest.approx([1.0, 1.0, 0.0], abs=1e-7)


def test_convexity_rejection():
    with pytest.raises(ConvexityError) as info:
        check_convexity(disk_program("x1^2 - x2^2 + 2"))
    assert info.value.which == "f" and info.value.eigenvalue < -1e-6
    H_witness = info.value.witness
    assert H_witness.shape == (2,)
    prog = ConvexProgram(parse("x1", 2), [parse("x1^2 + 1 - x2^2", 2)], [0.0, 0.0])
    with pytest.raises(ConvexityError) as info:
        check_convexity(prog)
    assert info.value.which == "g1"


def test_lagrangian():
    prog = disk_program()
    assert lagrangian(prog, [0.0]) == prog.f
    L = lagrangian(prog, [R2])
    expect = prog.f - R2 * parse(DISK, 2)
    assert l1_norm(L - expect) == 0.0
    with pytest.raises(ValueError):
        lagrangian(prog, [0.1, 0.2])
    with pytest.raises(ValueError):
        lagrangian(prog, [-0.1])


def test_lagrangian_minimum_is_f_star():
    prog = disk_program()
    kkt = solve_convex_program(prog)
    L = lagrangian(prog, kkt.multipliers)
    assert float(evaluate(L, kkt.x_star)) == pytest.approx(kkt.f_star, abs=1e-8)
    pts = np.random.default_rng(0).uniform(-5, 5, size=(1000, 2))
    assert np.min(evaluate(L, pts)) >= kkt.f_star - 1e-9


def test_sample_feasible():
    prog = disk_program()
    pts = sample_feasible(prog, count=500)
    assert len(pts) == 500 and np.all(prog.feasible(pts))


def test_disk_representation(disk_rep):
    assert disk_rep.multipliers[0] == pytest.approx(R2, abs=1e-4)
    assert disk_rep.residual <= 1e-6 * (1 + l1_norm(disk_rep.program.f))
    rep = verify_representation(disk_rep)
    assert rep.passed, rep.reason
    # the identity is a coefficient statement: L + eps Theta + lam g = f + eps Theta
    prog = disk_rep.program
    lhs = disk_rep.certificate.f_eps() + disk_rep.multipliers[0] * prog.constraints[0]
    rhs = prog.f + 0.5 * perturbation_series(2, disk_rep.r_eps)
    assert l1_norm(lhs - rhs) < 1e-12


def test_interior_degenerates_to_unconstrained():
    prog = disk_program("x1^2 + x2^2")
    rep = build_representation(prog, 0.5)
    assert rep.multipliers.tolist() == [0.0]
    direct = find_r_eps(prog.f, 0.5)
    assert rep.certificate.r_eps == direct.r_eps
    np.testing.assert_allclose(rep.certificate.gram, direct.gram, atol=1e-12)
    assert verify_representation(rep).passed


def test_zero_objective():
    rep = build_representation(disk_program("0"), 0.5)
    assert rep.multipliers.tolist() == [0.0]
    assert verify(Polynomial.zero(2), rep.certificate).passed


def test_unconstrained_representation_is_plain_certificate():
    prog = ConvexProgram(parse("x1^2 + x2^2 - 2*x1 + 1", 2), [], [0.0, 0.0])
    rep = build_representation(prog, 0.5)
    assert rep.multipliers.size == 0
    assert verify(prog.f, rep.certificate).passed


def test_negative_on_set_rejected():
    with pytest.raises(NegativeOnSetError):
        build_representation(disk_program("x1 + x2"), 0.5)


def test_verify_detects_negated_multiplier(disk_rep):
    bad = copy.copy(disk_rep)
    bad.multipliers = -disk_rep.multipliers
    rep = verify_representation(bad)
    assert not rep.passed and not rep.multipliers_nonnegative


def test_verify_detects_constant_perturbation(disk_rep):
    bad = copy.copy(disk_rep)
    cert = copy.copy(disk_rep.certificate)
    cert.gram = cert.gram.copy()
    cert.gram[0, 0] += 1e-3
    bad.certificate = cert
    rep = verify_representation(bad)
    assert not rep.passed
    assert rep.identity_residual == pytest.approx(1e-3, rel=1e-3)


def test_representation_roundtrip(disk_rep):
    data = representation_to_dict(disk_rep)
    assert data["kind"] == "kkt-representation"
    assert data["lambda"][0] == pytest.approx(R2, abs=1e-4)
    back = representation_from_dict(data)
    assert back.program.f == disk_rep.program.f
    assert verify_representation(back).passed
