"""Explicit sum-of-squares certificates for ``f + eps * Theta_r``.

For a nonnegative ``f`` the search solves the dual relaxation for growing
box radius ``M`` until the budget multiplier drops below ``eps``; the dual
identity ``f + lam_M Theta_{r_M} = q_M + gamma_M`` is then padded with
explicitly SOS pieces of ``Theta`` until it reads
``f + eps Theta_{r_eps} = (PSD Gram form)``.
"""
from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .poly import (
    MonomialBasis,
    _rebuild_basis,
    Polynomial,
    basis,
    evaluate,
    format_polynomial,
    inverse_factorials,
    l1_norm,
    parse,
    perturbation_series,
    square,
)
from .relaxation import (
    DualShape,
    RelaxationConfig,
    RelaxationError,
    build_primal,
    feasible_start,
    min_order,
)
from .sdp import SdpError, solve

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
#: Negative Gram eigenvalues above ``-GRAM_CLIP_RTOL * trace`` are treated as zero.
GRAM_CLIP_RTOL = 1e-9
#: Verification floor on the Gram spectrum, relative to ``max(1, trace)``.
GRAM_FLOOR_RTOL = 1e-8
#: Identity residual allowed by :func:`verify`, relative to ``1 + ||f_eps||_1``.
VERIFY_RTOL = 1e-6
NEGATIVITY_TOL = 1e-9


class CertificateError(ValueError):
    """Malformed certificate (dimension or basis mismatch, bad file)."""


class NegativePolynomialError(ValueError):
    """A sampled point shows the input polynomial is negative."""

    def __init__(self, message: str, witness: np.ndarray | None = None, value: float | None = None):
        super().__init__(message)
        self.witness = witness
        self.value = value


class ScheduleExhausted(RuntimeError):
    def __init__(self, message: str, best_lambda: float | None, cells: list[dict]):
        super().__init__(message)
        self.best_lambda = best_lambda
        self.cells = cells


@dataclass
class SosCertificate:
    n: int
    f: Polynomial
    epsilon: float
    r_eps: int
    basis: MonomialBasis
    gram: np.ndarray
    squares: list[Polynomial]
    identity_residual: float
    l1_gap: float
    provenance: dict[str, Any] = field(default_factory=dict)

    def f_eps(self) -> Polynomial:
        return build_f_eps(self.f, self.epsilon, self.r_eps)

    def sum_of_squares(self) -> Polynomial:
        return _sum_squares(self.squares, self.n)


def build_f_eps(f: Polynomial, eps: float, r_eps: int) -> Polynomial:
    if eps < 0 or r_eps < 0:
        raise ValueError(f"need eps >= 0 and r_eps >= 0, got {eps}, {r_eps}")
    if eps == 0:
        return f
    return f + eps * perturbation_series(f.n, r_eps)


def l1_gap(eps: float, n: int, r_eps: int) -> float:
    """``||f - f_eps||_1 = eps * n * sum_{k<=r_eps} 1/k!``."""
    return eps * n * math.fsum(inverse_factorials(r_eps))


def lambda_bound(M: float, f_at_0: float, f_star_lb: float, n: int) -> float:
    """Upper bound ``(1/M + f(0) - f*) / (n (e^{M^2} - 1))`` on the budget multiplier."""
    if M <= 0:
        raise ValueError(f"radius must be positive, got {M}")
    if f_star_lb < 0:
        raise ValueError(f"lower bound on the minimum must be nonnegative, got {f_star_lb}")
    if f_at_0 < f_star_lb:
        raise ValueError(f"f(0) = {f_at_0} lies below the claimed minimum {f_star_lb}")
    return (1.0 / M + f_at_0 - f_star_lb) / (n * math.expm1(M * M))


def _sum_squares(squares: Iterable[Polynomial], n: int) -> Polynomial:
    total: dict = {}
    for s in squares:
        for a, c in square(s).terms.items():
            total[a] = total.get(a, 0.0) + c
    return Polynomial(n, total)


def gram_min_eigenvalue(G: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(G)[0]) if G.size else 0.0


def gram_to_squares(G: np.ndarray, b: MonomialBasis, clip_rtol: float = GRAM_CLIP_RTOL) -> list[Polynomial]:
    """Spectral factorization ``G = sum mu_i u_i u_i^T`` into squares ``sqrt(mu_i) u_i . v``."""
    G = np.asarray(G, dtype=float)
    if G.shape != (b.size, b.size):
        raise CertificateError(f"Gram shape {G.shape} does not match basis size {b.size}")
    G = 0.5 * (G + G.T)
    d = np.diag(G)
    if not np.any(G - np.diag(d)):
        # diagonal Gram: one monomial square per positive entry, no rotation noise
        if d.size and d.min() < -clip_rtol * max(float(d.sum()), 1.0):
            raise CertificateError(f"Gram matrix is indefinite: diagonal entry {d.min():.3e}")
        return [Polynomial(b.n, {b.monomials[i]: math.sqrt(d[i])}) for i in range(d.size) if d[i] > 0]
    mu, U = np.linalg.eigh(G)
    tr = max(float(np.trace(G)), 0.0)
    if mu.size and mu[0] < -clip_rtol * max(tr, 1.0):
        raise CertificateError(f"Gram matrix is indefinite: eigenvalue {mu[0]:.3e} (trace {tr:.3e})")
    squares = []
    for k in range(mu.size - 1, -1, -1):
        if mu[k] <= 0:
            continue
        coeffs = math.sqrt(mu[k]) * U[:, k]
        p = b.polynomial(coeffs)
        if not p.is_zero():
            squares.append(p)
    return squares


# -- sampling guard --------------------------------------------------------------


def sample_points(n: int, radius: float = 2.0, count: int = 2000, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    pts = [rng.uniform(-radius, radius, size=(count, n)), rng.normal(size=(count, n)) * 3.0]
    if n <= 3:
        axis = np.linspace(-radius, radius, 21)
        pts.append(np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n))
    return np.concatenate(pts)


def check_nonnegative(f: Polynomial, points: np.ndarray | None = None) -> None:
    """Reject ``f`` if it has odd degree or a sampled negative value."""
    if f.degree % 2 == 1:
        raise NegativePolynomialError(f"odd degree {f.degree}: f takes negative values")
    if points is None:
        points = sample_points(f.n)
    vals = evaluate(f, points)
    k = int(np.argmin(vals))
    if vals[k] < -NEGATIVITY_TOL:
        raise NegativePolynomialError(
            f"f({points[k].tolist()}) = {vals[k]:.6g} < 0", points[k], float(vals[k]))


# -- assembly --------------------------------------------------------------------


def _add_theta_diagonal(G: np.ndarray, b: MonomialBasis, weight: float, k_from: int, k_to: int) -> None:
    """Add ``weight * sum_{k=k_from}^{k_to} sum_j x_j^(2k)/k!`` on the Gram diagonal."""
    if weight == 0.0:
        return
    n = b.n
    inv = inverse_factorials(max(k_to, 0))
    for k in range(max(k_from, 0), k_to + 1):
        if k == 0:
            G[0, 0] += weight * n
            continue
        for j in range(n):
            alpha = [0] * n
            alpha[j] = k
            i = b.index[tuple(alpha)]
            G[i, i] += weight * inv[k]


def assemble_gram(dual: DualShape, r_m: int, shift: float, lam: float, r: int, n: int) -> np.ndarray:
    """Gram matrix of ``f + lam * Theta_r`` from a dual point for ``f + shift``.

    The dual identity is ``f + shift + lam_M Theta_{r_M} = q_M + gamma_M``.
    Requires ``r >= r_M``, ``gamma_M >= 0`` and ``lam >= lam_M + shift/n``;
    every added piece is then a nonnegative diagonal term.
    """
    if r < r_m:
        raise ValueError(f"target order {r} below relaxation order {r_m}")
    slack = lam - dual.lam - shift / n
    if slack < 0:
        raise ValueError(f"multiplier {lam} below lam_M + shift/n = {dual.lam + shift / n}")
    if dual.gamma < 0:
        raise ValueError(f"gamma_M = {dual.gamma} is negative")
    b = basis(n, r)
    s_m = basis(n, r_m).size
    G = np.zeros((b.size, b.size))
    G[:s_m, :s_m] = 0.5 * (dual.gram + dual.gram.T)
    G[0, 0] += dual.gamma
    _add_theta_diagonal(G, b, dual.lam, r_m + 1, r)
    _add_theta_diagonal(G, b, slack, 0, r)
    _add_theta_diagonal(G, b, shift / n, 1, r)
    return G


def make_certificate(f: Polynomial, eps: float, r_eps: int, G: np.ndarray,
                     provenance: dict | None = None) -> SosCertificate:
    b = basis(f.n, r_eps)
    squares = gram_to_squares(G, b)
    resid = l1_norm(build_f_eps(f, eps, r_eps) - _sum_squares(squares, f.n))
    return SosCertificate(
        n=f.n, f=f, epsilon=eps, r_eps=r_eps, basis=b, gram=G, squares=squares,
        identity_residual=resid, l1_gap=l1_gap(eps, f.n, r_eps),
        provenance=dict(provenance or {}),
    )


def default_schedule(f: Polynomial, radii: Sequence[float] = (1.0, 1.5, 2.0),
                     extra_orders: int = 4) -> list[tuple[float, int]]:
    r0 = min_order(f)
    return [(M, r) for M in radii for r in range(r0, r0 + extra_orders + 1)]


def _solve_cell(f_shift: Polynomial, M: float, r: int, tol: float):
    cfg = RelaxationConfig(r=r, M=M, tol=tol)
    prob = build_primal(f_shift, cfg)
    return solve(prob, feasible_start(cfg, f_shift.n), tol)


def _worker_count(workers: int | None) -> int:
    if workers is not None:
        return max(1, workers)
    env = os.environ.get("SOS_ALMOST_THREADS")
    return max(1, int(env)) if env else 1


def find_r_eps(f: Polynomial, eps: float, schedule: Sequence[tuple[float, int]] | None = None,
               tol: float = 1e-8, workers: int | None = None) -> SosCertificate:
    """Search the ``(M, r)`` schedule for a cell whose dual certifies ``f + eps Theta``.

    The relaxation is run on ``f + n eps/2`` (strictly positive minimum), so a
    cell succeeds once its multiplier is at most ``eps/2`` and its ``gamma`` is
    nonnegative.  Cells are tried in schedule order.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    n = f.n
    check_nonnegative(f)
    if schedule is None:
        schedule = default_schedule(f)
    schedule = list(schedule)
    if not schedule:
        raise ValueError("schedule is empty")
    shift = n * eps / 2.0
    f_shift = f + shift
    f0 = evaluate(f_shift, np.zeros(n))
    r_min = min_order(f)
    cells: list[dict] = []
    best_lam = None

    def attempt(cell):
        M, r = cell
        if r < r_min:
            return None, f"order {r} below minimum {r_min}"
        try:
            return _solve_cell(f_shift, M, r, tol), ""
        except (SdpError, RelaxationError) as exc:
            return None, str(exc)

    nworkers = _worker_count(workers)
    if nworkers > 1:
        with ThreadPoolExecutor(max_workers=nworkers) as pool:
            outcomes = list(pool.map(attempt, schedule))
    else:
        outcomes = None

    for idx, (M, r) in enumerate(schedule):
        sol, err = outcomes[idx] if outcomes is not None else attempt((M, r))
        bound = lambda_bound(M, f0, shift, n)
        record = {"M": M, "r": r, "lambda_bound": bound}
        if sol is None:
            record.update(status="error", message=err)
            cells.append(record)
            continue
        lam, gamma = sol.dual.lam, sol.dual.gamma
        record.update(status=sol.status, lambda_M=lam, gamma_M=gamma,
                      primal_value=sol.primal_value, gap=sol.gap)
        cells.append(record)
        if sol.status != "optimal":
            continue
        if best_lam is None or lam < best_lam:
            best_lam = lam
        lam_eff = max(lam, 0.0)
        if lam_eff > eps / 2.0 or gamma < 0:
            continue
        dual = DualShape(gamma=gamma, lam=lam_eff, gram=sol.dual.gram)
        G = assemble_gram(dual, r, shift, eps, r, n)
        prov = {
            "M": M, "r_M": r, "lambda_M": lam, "gamma_M": gamma, "shift": shift,
            "solver_gap": sol.gap, "solver_status": sol.status,
            "primal_value": sol.primal_value - shift, "lambda_bound": bound,
            "cells_tried": len(cells),
        }
        try:
            cert = make_certificate(f, eps, r, G, prov)
        except CertificateError as exc:
            record["message"] = str(exc)
            continue
        report = verify(f, cert)
        if report.passed:
            return cert
        record["message"] = f"assembled certificate failed verification: {report.reason}"
    raise ScheduleExhausted(
        f"no schedule cell reached lambda_M <= {eps / 2.0:g} with a verified certificate "
        f"(best lambda_M = {best_lam})", best_lam, cells)


# -- verification ------------------------------------------------------------------


@dataclass
class VerificationReport:
    passed: bool
    identity_residual: float
    gram_residual: float
    squares_residual: float
    threshold: float
    gram_min_eigenvalue: float
    eigenvalue_floor: float
    l1_gap: float
    l1_gap_matches: bool
    reason: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


def verify(f: Polynomial, cert: SosCertificate) -> VerificationReport:
    """Recheck a certificate with polynomial arithmetic and one eigendecomposition."""
    if cert.n != f.n or cert.basis.n != f.n:
        raise CertificateError("certificate dimension does not match f")
    G = np.asarray(cert.gram, dtype=float)
    if G.shape != (cert.basis.size, cert.basis.size):
        raise CertificateError(f"Gram shape {G.shape} does not match basis size {cert.basis.size}")
    if any(s.n != f.n for s in cert.squares):
        raise CertificateError("square with wrong dimension")
    f_eps = build_f_eps(f, cert.epsilon, cert.r_eps)
    threshold = VERIFY_RTOL * (1.0 + l1_norm(f_eps))
    gram_res = l1_norm(f_eps - Polynomial.from_gram(G, cert.basis))
    sq_res = l1_norm(f_eps - _sum_squares(cert.squares, f.n))
    lam_min = gram_min_eigenvalue(G)
    floor = -GRAM_FLOOR_RTOL * max(1.0, float(np.trace(G)))
    gap = l1_gap(cert.epsilon, f.n, cert.r_eps)
    reasons = []
    if gram_res > threshold:
        reasons.append(f"Gram identity residual {gram_res:.3e} > {threshold:.3e}")
    if sq_res > threshold:
        reasons.append(f"squares identity residual {sq_res:.3e} > {threshold:.3e}")
    if lam_min < floor:
        reasons.append(f"Gram eigenvalue {lam_min:.3e} below floor {floor:.3e}")
    if cert.epsilon < 0:
        reasons.append("negative epsilon")
    return VerificationReport(
        passed=not reasons,
        identity_residual=max(gram_res, sq_res),
        gram_residual=gram_res,
        squares_residual=sq_res,
        threshold=threshold,
        gram_min_eigenvalue=lam_min,
        eigenvalue_floor=floor,
        l1_gap=gap,
        l1_gap_matches=gap == cert.l1_gap,
        reason="; ".join(reasons),
    )


# -- file format ------------------------------------------------------------------


def lower_triangle(G: np.ndarray) -> list[float]:
    return [float(G[i, j]) for i in range(G.shape[0]) for j in range(i + 1)]


def from_lower_triangle(values: Sequence[float], size: int) -> np.ndarray:
    if len(values) != size * (size + 1) // 2:
        raise CertificateError(
            f"expected {size * (size + 1) // 2} lower-triangle entries, got {len(values)}")
    G = np.zeros((size, size))
    it = iter(values)
    for i in range(size):
        for j in range(i + 1):
            G[i, j] = G[j, i] = float(next(it))
    return G


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def certificate_to_dict(cert: SosCertificate) -> dict:
    return {
        "version": FORMAT_VERSION,
        "kind": "sos-certificate",
        "n": cert.n,
        "f": format_polynomial(cert.f),
        "epsilon": cert.epsilon,
        "r_eps": cert.r_eps,
        "basis_order": "graded, descending lex within degree",
        "basis": [list(a) for a in cert.basis.monomials],
        "gram": lower_triangle(cert.gram),
        "squares": [format_polynomial(s) for s in cert.squares],
        "residual": cert.identity_residual,
        "l1_gap": cert.l1_gap,
        "provenance": _jsonable(cert.provenance),
    }


def _basis_from_list(n: int, r: int, listed) -> MonomialBasis:
    if listed is None:
        return basis(n, r)
    mons = tuple(tuple(int(v) for v in a) for a in listed)
    if any(len(a) != n for a in mons):
        raise CertificateError("basis entry with wrong length")
    if len(set(mons)) != len(mons):
        raise CertificateError("basis lists a monomial twice")
    ours = basis(n, r)
    if mons == ours.monomials:
        return ours
    return _rebuild_basis(n, max((sum(a) for a in mons), default=0), mons)


def certificate_from_dict(data: dict) -> SosCertificate:
    try:
        n = int(data["n"])
        f = parse(data["f"], n)
        eps = float(data["epsilon"])
        r_eps = int(data["r_eps"])
        b = _basis_from_list(n, r_eps, data.get("basis"))
        G = from_lower_triangle(data["gram"], b.size)
        squares = [parse(s, n) for s in data["squares"]]
        return SosCertificate(
            n=n, f=f, epsilon=eps, r_eps=r_eps, basis=b, gram=G, squares=squares,
            identity_residual=float(data.get("residual", math.nan)),
            l1_gap=float(data.get("l1_gap", math.nan)),
            provenance=dict(data.get("provenance") or {}),
        )
    except CertificateError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CertificateError(f"malformed certificate: {exc}") from exc


def save_certificate(cert: SosCertificate, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(certificate_to_dict(cert), fh, indent=1)
        fh.write("\n")


def load_certificate(path) -> SosCertificate:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CertificateError(f"not a JSON document: {exc}") from exc
    if not isinstance(data, dict):
        raise CertificateError("certificate must be a JSON object")
    return certificate_from_dict(data)


def theta_certificate(n: int, r: int) -> SosCertificate:
    """Certificate for ``0 + 1 * Theta_r``: one square per term."""
    G = np.zeros((basis(n, r).size,) * 2)
    _add_theta_diagonal(G, basis(n, r), 1.0, 0, r)
    return make_certificate(Polynomial.zero(n), 1.0, r, G, {"construction": "diagonal"})
