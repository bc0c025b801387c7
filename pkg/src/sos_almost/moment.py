"""Truncated moment sequences, moment matrices and the diagnostics built on them."""
from __future__ import annotations

import math
from dataclasses import dataclass
from types import MappingProxyType
from typing import Callable, Mapping, Sequence

import numpy as np

from .poly import Exponent, MonomialBasis, Polynomial, PolynomialError, basis

#: Relative eigenvalue floor below which a matrix is not treated as PSD.
PSD_RTOL = 1e-8


class MomentError(ValueError):
    pass


class PsdHypothesisError(MomentError):
    """The matrix handed to :func:`diag_bound_check` is not PSD."""


class MomentSequence:
    """Values ``y_alpha`` for every ``|alpha| <= order`` in ``n`` variables."""

    __slots__ = ("n", "order", "_values")

    def __init__(self, n: int, order: int, values: Mapping[Sequence[int], float]):
        self.n = n
        self.order = order
        vals = {tuple(int(a) for a in k): float(v) for k, v in values.items()}
        full = basis(n, order)
        missing = [a for a in full.monomials if a not in vals]
        if missing:
            raise MomentError(f"moment sequence of order {order} lacks y at {missing[0]}")
        self._values = {a: vals[a] for a in full.monomials}

    @classmethod
    def from_vector(cls, n: int, order: int, vec) -> "MomentSequence":
        b = basis(n, order)
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (b.size,):
            raise MomentError(f"expected {b.size} moments, got shape {vec.shape}")
        return cls(n, order, dict(zip(b.monomials, vec)))

    @property
    def values(self) -> Mapping[Exponent, float]:
        return MappingProxyType(self._values)

    @property
    def y0(self) -> float:
        return self._values[(0,) * self.n]

    def __getitem__(self, alpha: Sequence[int]) -> float:
        alpha = tuple(alpha)
        try:
            return self._values[alpha]
        except KeyError:
            raise MomentError(f"no moment stored for {alpha} (order {self.order})") from None

    def marginal(self, i: int, k: int) -> float:
        """Even marginal moment ``y^(i)_{2k}``, the value at ``2k * e_i`` (``i`` is 1-based)."""
        if not 1 <= i <= self.n:
            raise MomentError(f"variable index {i} out of range 1..{self.n}")
        alpha = [0] * self.n
        alpha[i - 1] = 2 * k
        return self[alpha]

    def vector(self) -> np.ndarray:
        return np.array([self._values[a] for a in basis(self.n, self.order).monomials])

    def __repr__(self) -> str:
        return f"MomentSequence(n={self.n}, order={self.order}, y0={self.y0})"


@dataclass(frozen=True)
class MomentMatrix:
    basis: MonomialBasis
    entries: np.ndarray

    @property
    def r(self) -> int:
        return self.basis.r

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])

    def is_psd(self, rtol: float = PSD_RTOL) -> bool:
        scale = max(1.0, float(np.max(np.diag(self.entries))))
        return self.min_eigenvalue() >= -rtol * scale


def lin_functional(y: MomentSequence, p: Polynomial) -> float:
    if p.n != y.n:
        raise MomentError(f"dimension mismatch: {p.n} vs {y.n}")
    if p.degree > y.order:
        raise MomentError(f"polynomial degree {p.degree} exceeds moment order {y.order}")
    return math.fsum(c * y[a] for a, c in p.terms.items())


def moments_from_atoms(points, weights, r: int) -> MomentSequence:
    """Moments up to order ``2r`` of the atomic measure ``sum_l w_l delta_{x_l}``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    w = np.asarray(weights, dtype=float)
    if pts.shape[0] != w.shape[0]:
        raise MomentError(f"{pts.shape[0]} atoms but {w.shape[0]} weights")
    if np.any(w < 0):
        raise MomentError("weights must be nonnegative")
    if abs(math.fsum(w) - 1.0) > 1e-12:
        raise MomentError(f"weights sum to {math.fsum(w)!r}, not 1")
    n = pts.shape[1]
    b = basis(n, 2 * r)
    alphas = np.array(b.monomials, dtype=int)
    vals = np.prod(pts[:, None, :] ** alphas[None, :, :], axis=-1).T @ w
    return MomentSequence(n, 2 * r, dict(zip(b.monomials, vals)))


def uniform_box_moments(n: int, r: int, h: float) -> MomentSequence:
    """Moments of the uniform probability measure on ``[-h, h]^n``."""
    if h <= 0:
        raise MomentError(f"half-width must be positive, got {h}")
    b = basis(n, 2 * r)
    vals = {}
    for alpha in b.monomials:
        if any(a % 2 for a in alpha):
            vals[alpha] = 0.0
        else:
            vals[alpha] = math.prod(h ** a / (a + 1) for a in alpha)
    return MomentSequence(n, 2 * r, vals)


def moment_index_map(n: int, r: int) -> np.ndarray:
    """Integer matrix whose (i, j) entry is the position of ``alpha_i + alpha_j`` in basis(n, 2r)."""
    b = basis(n, r)
    big = basis(n, 2 * r)
    out = np.empty((b.size, b.size), dtype=int)
    for i, a in enumerate(b.monomials):
        for j in range(i, b.size):
            s = tuple(p + q for p, q in zip(a, b.monomials[j]))
            out[i, j] = out[j, i] = big.index[s]
    return out


def build_moment_matrix(y: MomentSequence, r: int) -> MomentMatrix:
    if 2 * r > y.order:
        raise MomentError(f"moment matrix of order {r} needs moments up to {2 * r}, have {y.order}")
    vec = np.array([y[a] for a in basis(y.n, 2 * r).monomials])
    return MomentMatrix(basis(y.n, r), vec[moment_index_map(y.n, r)])


def quad_form(y: MomentSequence, p: Polynomial) -> float:
    """``p^T M_r(y) p`` with ``r = deg p``; equals ``L_y(p^2)``."""
    r = p.degree
    if 2 * r > y.order:
        raise MomentError(f"degree {r} too high for moments of order {y.order}")
    mm = build_moment_matrix(y, r)
    try:
        v = mm.basis.coefficients(p)
    except PolynomialError as exc:
        raise MomentError(str(exc)) from exc
    return float(v @ mm.entries @ v)


@dataclass(frozen=True)
class DiagBoundReport:
    holds: bool
    hypothesis: bool
    tau: float
    max_diagonal: float
    max_entry: float
    violation: Exponent | None = None
    detail: str = ""


def diag_bound_check(mm: MomentMatrix, tau: float, rtol: float = 1e-8) -> DiagBoundReport:
    """Check that bounded marginal moments bound the whole moment matrix.

    Hypothesis: every marginal diagonal entry ``y^(i)_{2k}``, ``0 <= k <= r``,
    is at most ``tau``.  Conclusion: every diagonal entry ``y_{2alpha}`` and
    every entry ``|y_alpha|`` is at most ``tau * (1 + rtol)``.  The k = 0
    entry (``y_0``) is part of the hypothesis; without it the entry bound fails
    for measures concentrated near the origin.
    """
    A = mm.entries
    scale = max(1.0, float(np.max(np.abs(np.diag(A)))))
    lam_min = float(np.linalg.eigvalsh(A)[0])
    if lam_min < -PSD_RTOL * scale:
        raise PsdHypothesisError(
            f"moment matrix is not PSD: min eigenvalue {lam_min:.3e} (scale {scale:.3e})")
    mons = mm.basis.monomials
    diag = np.diag(A)
    marginal = [i for i, a in enumerate(mons) if sum(1 for v in a if v) <= 1]
    max_marginal = float(np.max(diag[marginal]))
    hypothesis = max_marginal <= tau
    bound = tau * (1.0 + rtol) + (0.0 if tau > 0 else rtol)
    violation = None
    detail = ""
    k = int(np.argmax(diag))
    if diag[k] > bound:
        violation = tuple(2 * v for v in mons[k])
        detail = f"diagonal y{violation} = {diag[k]!r} > tau = {tau!r}"
    else:
        i, j = np.unravel_index(int(np.argmax(np.abs(A))), A.shape)
        if abs(A[i, j]) > bound:
            violation = tuple(p + q for p, q in zip(mons[i], mons[j]))
            detail = f"entry |y{violation}| = {abs(A[i, j])!r} > tau = {tau!r}"
    if not hypothesis and not detail:
        detail = f"hypothesis fails: max marginal {max_marginal!r} > tau"
    conclusion = violation is None
    return DiagBoundReport(
        holds=(not hypothesis) or conclusion,
        hypothesis=hypothesis,
        tau=tau,
        max_diagonal=float(np.max(diag)),
        max_entry=float(np.max(np.abs(A))),
        violation=violation if hypothesis else None,
        detail=detail,
    )


def marginal_tau(mm: MomentMatrix) -> float:
    """Largest marginal diagonal entry ``y^(i)_{2k}`` (``k = 0..r``) of a moment matrix."""
    diag = np.diag(mm.entries)
    idx = [i for i, a in enumerate(mm.basis.monomials) if sum(1 for v in a if v) <= 1]
    return float(np.max(diag[idx]))


def carleman_partial_sums(even_moment: Callable[[int], float] | MomentSequence,
                          i: int = 1, K: int | None = None) -> np.ndarray:
    """Partial sums ``sum_{k=1}^{K} (y^(i)_{2k})^(-1/2k)``, one per ``K``.

    ``even_moment`` maps ``k`` to ``y^(i)_{2k}``; a :class:`MomentSequence` may be
    passed instead, in which case ``K`` defaults to half its order.
    """
    if isinstance(even_moment, MomentSequence):
        y = even_moment
        kmax = y.order // 2
        if K is None:
            K = kmax
        if K > kmax:
            raise MomentError(f"K={K} exceeds available even moments (max {kmax})")
        fn = lambda k: y.marginal(i, k)  # noqa: E731
    else:
        if K is None:
            raise MomentError("K is required when passing a moment callable")
        fn = even_moment
    terms = np.empty(K)
    for k in range(1, K + 1):
        v = float(fn(k))
        if not v > 0:
            raise MomentError(f"even moment y^({i})_{2 * k} = {v!r} is not positive")
        terms[k - 1] = math.exp(-math.log(v) / (2 * k))
    return np.cumsum(terms)


@dataclass(frozen=True)
class CarlemanReport:
    partial_sums: np.ndarray
    threshold: float
    indicated: bool

    @property
    def verdict(self) -> str:
        # Divergence is never proved by a finite sum.
        return "indicated" if self.indicated else "not indicated"


def carleman_diagnostic(even_moment, i: int = 1, K: int | None = None,
                        threshold: float | None = None) -> CarlemanReport:
    sums = carleman_partial_sums(even_moment, i, K)
    if threshold is None:
        threshold = math.sqrt(len(sums))
    return CarlemanReport(sums, threshold, bool(sums[-1] > threshold))
