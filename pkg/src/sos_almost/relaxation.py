"""Moment relaxation of global minimization with an exponential moment budget.

Primal (over moments ``y`` with ``y_0 = 1``)::

    min  L_y(f)
    s.t. M_r(y) >= 0
         sum_{k<=r} sum_i y^(i)_{2k} / k!  <=  n e^{M^2}

Dual (over ``gamma``, ``lam >= 0`` and a PSD Gram matrix ``G``)::

    max  gamma - n e^{M^2} lam
    s.t. f - gamma = v_r^T G v_r - lam * Theta_r
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .moment import MomentSequence, moment_index_map, uniform_box_moments
from .poly import (
    MonomialBasis,
    Polynomial,
    basis,
    inverse_factorials,
    perturbation_series,
)

#: exp(M^2) stays finite in float64 up to M ~ 26.6.
MAX_RADIUS = 26.0
DEFAULT_RADII = (1.0, 1.5, 2.0, 2.5, 3.0)


class RelaxationError(ValueError):
    pass


def exp_budget(n: int, M: float) -> float:
    """``n * e^{M^2}``, the right-hand side of the moment budget."""
    if M > MAX_RADIUS:
        raise RelaxationError(f"radius {M} exceeds overflow guard {MAX_RADIUS}")
    return n * math.exp(M * M)


@dataclass(frozen=True)
class RelaxationConfig:
    r: int
    M: float
    tol: float = 1e-8

    def validate(self, f: Polynomial) -> None:
        if self.M <= 0:
            raise RelaxationError(f"radius must be positive, got {self.M}")
        if self.M > MAX_RADIUS:
            raise RelaxationError(f"radius {self.M} exceeds overflow guard {MAX_RADIUS}")
        if self.tol <= 0:
            raise RelaxationError(f"tolerance must be positive, got {self.tol}")
        if 2 * self.r < f.degree:
            raise RelaxationError(
                f"relaxation order {self.r} too small for degree {f.degree} (need 2r >= deg f)")


def min_order(f: Polynomial) -> int:
    return max(1, math.ceil(f.degree / 2))


@dataclass(frozen=True)
class DualShape:
    gamma: float
    lam: float
    gram: np.ndarray


@dataclass(frozen=True)
class SdpProblem:
    """One moment relaxation in solver-neutral form.

    Variables are the moments ``y_alpha`` with ``0 < |alpha| <= 2r`` listed in
    ``variables`` (graded order, ``y_0`` eliminated).  The PSD block is
    ``base + sum_k y_k * coeff_mats[k]``; the budget row is
    ``budget_coeffs . y <= budget_rhs`` and is stored pre-scaled by
    ``budget_scale = e^{-M^2}``.
    """

    f: Polynomial
    config: RelaxationConfig
    basis: MonomialBasis
    moment_basis: MonomialBasis
    objective: np.ndarray
    objective_constant: float
    base: np.ndarray
    coeff_mats: np.ndarray
    budget_coeffs: np.ndarray
    budget_rhs: float
    budget_scale: float

    @property
    def n(self) -> int:
        return self.f.n

    @property
    def r(self) -> int:
        return self.config.r

    @property
    def M(self) -> float:
        return self.config.M

    @property
    def variables(self):
        return self.moment_basis.monomials[1:]

    @property
    def num_variables(self) -> int:
        return self.moment_basis.size - 1

    @property
    def budget(self) -> float:
        """Unscaled bound ``n e^{M^2}``."""
        return exp_budget(self.n, self.M)

    def moment_matrix(self, yvec: np.ndarray) -> np.ndarray:
        return self.base + np.tensordot(yvec, self.coeff_mats, axes=1)

    def objective_value(self, yvec: np.ndarray) -> float:
        return self.objective_constant + float(self.objective @ yvec)

    def budget_value(self, yvec: np.ndarray) -> float:
        """Unscaled ``sum_k sum_i y^(i)_{2k}/k!`` including the ``k = 0`` term ``n``."""
        return self.n + float(self.budget_coeffs @ yvec) / self.budget_scale

    def full_vector(self, yvec: np.ndarray) -> np.ndarray:
        return np.concatenate(([1.0], yvec))

    def reduced_vector(self, y: MomentSequence) -> np.ndarray:
        if y.n != self.n or y.order < 2 * self.r:
            raise RelaxationError("moment sequence does not match the relaxation")
        return np.array([y[a] for a in self.variables])

    def moments(self, yvec: np.ndarray) -> MomentSequence:
        return MomentSequence.from_vector(self.n, 2 * self.r, self.full_vector(yvec))


def _theta_coeffs(n: int, r: int, mb: MonomialBasis) -> np.ndarray:
    """Coefficients of ``Theta_r`` over ``mb`` (includes the constant n)."""
    out = np.zeros(mb.size)
    for k, w in enumerate(inverse_factorials(r)):
        for j in range(n):
            alpha = [0] * n
            alpha[j] = 2 * k
            out[mb.index[tuple(alpha)]] += w
    return out


def build_primal(f: Polynomial, cfg: RelaxationConfig) -> SdpProblem:
    cfg.validate(f)
    n, r = f.n, cfg.r
    b = basis(n, r)
    mb = basis(n, 2 * r)
    fvec = mb.coefficients(f)
    idx = moment_index_map(n, r)
    m = mb.size - 1
    mats = np.zeros((m + 1, b.size, b.size))
    rows, cols = np.indices(idx.shape)
    mats[idx.ravel(), rows.ravel(), cols.ravel()] = 1.0
    scale = math.exp(-cfg.M * cfg.M)
    theta = _theta_coeffs(n, r, mb)
    return SdpProblem(
        f=f,
        config=cfg,
        basis=b,
        moment_basis=mb,
        objective=fvec[1:],
        objective_constant=float(fvec[0]),
        base=mats[0],
        coeff_mats=mats[1:],
        budget_coeffs=theta[1:] * scale,
        # n e^{M^2} minus the y_0 term n, scaled by e^{-M^2}
        budget_rhs=n * (1.0 - scale),
        budget_scale=scale,
    )


def dual_objective(d: DualShape, n: int, M: float) -> float:
    if d.lam < 0:
        raise RelaxationError(f"dual multiplier must be nonnegative, got {d.lam}")
    return d.gamma - exp_budget(n, M) * d.lam


def dual_residual(f: Polynomial, d: DualShape, r: int, n: int) -> Polynomial:
    """``f - gamma - v_r^T G v_r + lam * Theta_r``; zero exactly at dual feasibility."""
    b = basis(n, r)
    if f.n != n:
        raise RelaxationError(f"dimension mismatch: {f.n} vs {n}")
    gram = np.asarray(d.gram, dtype=float)
    if gram.shape != (b.size, b.size):
        raise RelaxationError(f"Gram shape {gram.shape} does not match basis size {b.size}")
    q = Polynomial.from_gram(gram, b)
    return f - d.gamma - q + d.lam * perturbation_series(n, r)


def feasible_start(cfg: RelaxationConfig, n: int) -> MomentSequence:
    """Moments of the uniform measure on ``[-M/2, M/2]^n``; strictly feasible."""
    return uniform_box_moments(n, cfg.r, cfg.M / 2.0)
