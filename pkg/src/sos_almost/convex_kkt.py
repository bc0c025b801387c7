"""Scalar-multiplier representations for convex programs.

For convex ``f`` and concave ``g_j`` with a Slater point, the KKT multipliers
``lam`` make ``L = f - sum_j lam_j g_j`` globally nonnegative, so an SOS
approximation of ``L`` gives::

    f + eps * Theta_r = f_0 + sum_j lam_j g_j,   f_0 SOS.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import nnls

from .certificate import (
    FORMAT_VERSION,
    CertificateError,
    SosCertificate,
    _sum_squares,
    certificate_from_dict,
    certificate_to_dict,
    find_r_eps,
    gram_min_eigenvalue,
    GRAM_FLOOR_RTOL,
)
from .poly import Polynomial, evaluate, format_polynomial, gradient, hessian, l1_norm, parse, perturbation_series

IDENTITY_RTOL = 1e-6
KKT_RTOL = 1e-6


class ConvexityError(ValueError):
    """Sampled Hessian shows ``f`` is not convex or some ``g_j`` is not concave."""

    def __init__(self, message: str, witness: np.ndarray, which: str, eigenvalue: float):
        super().__init__(message)
        self.witness = witness
        self.which = which
        self.eigenvalue = eigenvalue


class KktError(RuntimeError):
    def __init__(self, message: str, residuals: dict | None = None):
        super().__init__(message)
        self.residuals = residuals or {}


class NegativeOnSetError(ValueError):
    pass


@dataclass(frozen=True)
class ConvexProgram:
    f: Polynomial
    constraints: tuple[Polynomial, ...]
    slater_point: np.ndarray

    def __init__(self, f: Polynomial, constraints: Sequence[Polynomial], slater_point):
        x0 = np.asarray(slater_point, dtype=float)
        if x0.shape != (f.n,):
            raise ValueError(f"Slater point has shape {x0.shape}, expected ({f.n},)")
        for j, g in enumerate(constraints, start=1):
            if g.n != f.n:
                raise ValueError(f"constraint g{j} has dimension {g.n}, expected {f.n}")
            gv = evaluate(g, x0)
            if not gv > 0:
                raise ValueError(f"Slater condition fails: g{j}(x0) = {gv!r} <= 0")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "constraints", tuple(constraints))
        object.__setattr__(self, "slater_point", x0)

    @property
    def n(self) -> int:
        return self.f.n

    @property
    def m(self) -> int:
        return len(self.constraints)

    def feasible(self, x, tol: float = 0.0) -> np.ndarray | bool:
        x = np.asarray(x, dtype=float)
        ok = np.ones(x.shape[:-1], dtype=bool)
        for g in self.constraints:
            ok &= np.asarray(evaluate(g, x)) >= -tol
        return ok


@dataclass
class KktPoint:
    x_star: np.ndarray
    multipliers: np.ndarray
    f_star: float
    stationarity: float
    complementarity: float
    iterations: int = 0


@dataclass
class KktRepresentation:
    program: ConvexProgram
    multipliers: np.ndarray
    x_star: np.ndarray
    f_star: float
    epsilon: float
    certificate: SosCertificate
    residual: float
    provenance: dict = field(default_factory=dict)

    @property
    def r_eps(self) -> int:
        return self.certificate.r_eps

    def f0(self) -> Polynomial:
        return _sum_squares(self.certificate.squares, self.program.n)


class _Compiled:
    """Gradient and Hessian polynomials, evaluated pointwise."""

    def __init__(self, p: Polynomial):
        self.p = p
        self.grad = [gradient(p, i) for i in range(1, p.n + 1)]
        self.hess = hessian(p)

    def value(self, x) -> float:
        return evaluate(self.p, x)

    def gradient(self, x) -> np.ndarray:
        return np.array([evaluate(g, x) for g in self.grad])

    def hessian(self, x) -> np.ndarray:
        H = np.array([[evaluate(h, x) for h in row] for row in self.hess])
        return 0.5 * (H + H.T)


def check_convexity(prog: ConvexProgram, samples: int = 100, radius: float | None = None,
                    seed: int = 0, tol: float = 1e-6) -> None:
    """Reject the program if a sampled Hessian of ``f`` or ``-g_j`` has an eigenvalue below ``-tol``."""
    if radius is None:
        radius = max(2.0, 2.0 * float(np.max(np.abs(prog.slater_point))))
    rng = np.random.default_rng(seed)
    pts = np.vstack([prog.slater_point,
                     prog.slater_point + rng.uniform(-radius, radius, size=(samples - 1, prog.n))])
    checks = [("f", _Compiled(prog.f), 1.0)]
    checks += [(f"g{j}", _Compiled(g), -1.0) for j, g in enumerate(prog.constraints, start=1)]
    for name, comp, sign in checks:
        for x in pts:
            lam = float(np.linalg.eigvalsh(sign * comp.hessian(x))[0])
            if lam < -tol:
                kind = "convex" if name == "f" else "concave"
                raise ConvexityError(
                    f"{name} is not {kind}: Hessian eigenvalue {lam:.6g} at x = {x.tolist()}",
                    x, name, lam)


def _newton_barrier(fc: _Compiled, gcs: list[_Compiled], x: np.ndarray, t: float,
                    max_steps: int = 100, tol: float = 1e-12) -> tuple[np.ndarray, int]:
    """Minimize ``t f - sum log g_j`` by damped Newton from a strictly feasible ``x``."""

    def phi(z):
        gv = np.array([g.value(z) for g in gcs])
        if np.any(gv <= 0):
            return math.inf
        return t * fc.value(z) - float(np.sum(np.log(gv)))

    steps = 0
    for steps in range(1, max_steps + 1):
        grad = t * fc.gradient(x)
        H = t * fc.hessian(x)
        for g in gcs:
            gv = g.value(x)
            gg = g.gradient(x)
            grad -= gg / gv
            H += np.outer(gg, gg) / gv ** 2 - g.hessian(x) / gv
        try:
            dx = -np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            dx = -np.linalg.lstsq(H, grad, rcond=None)[0]
        decrement = float(-grad @ dx)
        if decrement / 2.0 <= tol:
            break
        s = 1.0
        base = phi(x)
        while s > 1e-14:
            cand = x + s * dx
            val = phi(cand)
            if val <= base - 0.25 * s * decrement:
                break
            s *= 0.5
        else:
            break
        x = x + s * dx
    return x, steps


def kkt_residuals(prog: ConvexProgram, x: np.ndarray, lam: np.ndarray) -> tuple[float, float]:
    grad = _Compiled(prog.f).gradient(x)
    for lj, g in zip(lam, prog.constraints):
        grad = grad - lj * _Compiled(g).gradient(x)
    comp = max((abs(lj * evaluate(g, x)) for lj, g in zip(lam, prog.constraints)), default=0.0)
    return float(np.max(np.abs(grad))), float(comp)


def solve_convex_program(prog: ConvexProgram, tol: float = 1e-9,
                         check: bool = True) -> KktPoint:
    """Log-barrier path following from the Slater point; returns ``x*``, ``lam``, ``f*``."""
    if check:
        check_convexity(prog)
    fc = _Compiled(prog.f)
    gcs = [_Compiled(g) for g in prog.constraints]
    x = prog.slater_point.copy()
    m = prog.m
    iters = 0
    if m == 0:
        x, iters = _newton_barrier(fc, [], x, 1.0, max_steps=200, tol=1e-30)
        lam = np.zeros(0)
    else:
        t = 1.0
        while True:
            x, k = _newton_barrier(fc, gcs, x, t)
            iters += k
            if m / t < tol:
                break
            t *= 10.0
        gvals = np.array([g.value(x) for g in gcs])
        lam = 1.0 / (t * gvals)
        # Inactive constraints get exact zero multipliers; active ones are
        # refit by nonnegative least squares on stationarity.
        active = gvals <= math.sqrt(tol) * (1.0 + np.abs(gvals).max())
        lam = np.where(active, lam, 0.0)
        if np.any(active):
            J = np.column_stack([gcs[j].gradient(x) for j in np.flatnonzero(active)])
            sol, _ = nnls(J, fc.gradient(x))
            lam[active] = sol
    stat, comp = kkt_residuals(prog, x, lam)
    scale = 1.0 + l1_norm(prog.f)
    if not np.all(np.isfinite(x)) or stat > KKT_RTOL * scale or comp > KKT_RTOL * scale:
        raise KktError("barrier method did not reach a KKT point",
                       {"stationarity": stat, "complementarity": comp})
    return KktPoint(x, lam, float(fc.value(x)), stat, comp, iters)


def lagrangian(prog: ConvexProgram, lam: Sequence[float]) -> Polynomial:
    lam = list(lam)
    if len(lam) != prog.m:
        raise ValueError(f"expected {prog.m} multipliers, got {len(lam)}")
    if any(lj < 0 for lj in lam):
        raise ValueError("multipliers must be nonnegative")
    L = prog.f
    for lj, g in zip(lam, prog.constraints):
        if lj != 0:
            L = L - lj * g
    return L


def sample_feasible(prog: ConvexProgram, count: int = 1000, seed: int = 1,
                    radius: float | None = None) -> np.ndarray:
    """Rejection-sample points of K around the Slater point (always includes it)."""
    if radius is None:
        radius = max(2.0, 2.0 * float(np.max(np.abs(prog.slater_point))))
    rng = np.random.default_rng(seed)
    out = [prog.slater_point[None, :]]
    have = 1
    for _ in range(50):
        if have >= count:
            break
        cand = prog.slater_point + rng.uniform(-radius, radius, size=(4 * count, prog.n))
        ok = cand[prog.feasible(cand)]
        out.append(ok)
        have += len(ok)
    return np.concatenate(out)[:count]


def representation_residual(prog: ConvexProgram, lam, eps: float, r_eps: int,
                            f0: Polynomial) -> float:
    lhs = prog.f + eps * perturbation_series(prog.n, r_eps)
    rhs = f0
    for lj, g in zip(lam, prog.constraints):
        rhs = rhs + float(lj) * g
    return l1_norm(lhs - rhs)


def build_representation(prog: ConvexProgram, eps: float, schedule=None, tol: float = 1e-9,
                         sdp_tol: float = 1e-8) -> KktRepresentation:
    check_convexity(prog)
    pts = sample_feasible(prog)
    vals = evaluate(prog.f, pts)
    k = int(np.argmin(vals))
    if vals[k] < -1e-9:
        raise NegativeOnSetError(f"f({pts[k].tolist()}) = {vals[k]:.6g} < 0 on K")
    kkt = solve_convex_program(prog, tol=tol, check=False)
    L = lagrangian(prog, kkt.multipliers)
    cert = find_r_eps(L, eps, schedule, tol=sdp_tol)
    resid = representation_residual(prog, kkt.multipliers, eps, cert.r_eps, cert.sum_of_squares())
    return KktRepresentation(
        program=prog, multipliers=kkt.multipliers, x_star=kkt.x_star, f_star=kkt.f_star,
        epsilon=eps, certificate=cert, residual=resid,
        provenance={"stationarity": kkt.stationarity, "complementarity": kkt.complementarity,
                    "multiplier_source": "barrier limit, refit on active set",
                    **cert.provenance},
    )


@dataclass
class RepresentationReport:
    passed: bool
    multipliers_nonnegative: bool
    gram_min_eigenvalue: float
    eigenvalue_floor: float
    identity_residual: float
    threshold: float
    min_sampled_f_eps: float
    reason: str = ""


def verify_representation(rep: KktRepresentation, prog: ConvexProgram | None = None,
                          eps: float | None = None, samples: int = 1000) -> RepresentationReport:
    """Independent recheck of ``f + eps Theta = f_0 + sum lam_j g_j``."""
    prog = prog or rep.program
    eps = rep.epsilon if eps is None else eps
    cert = rep.certificate
    lam = np.asarray(rep.multipliers, dtype=float)
    if lam.shape != (prog.m,):
        raise CertificateError(f"expected {prog.m} multipliers, got shape {lam.shape}")
    if cert.n != prog.n:
        raise CertificateError("certificate dimension does not match the program")
    G = np.asarray(cert.gram, dtype=float)
    if G.shape != (cert.basis.size, cert.basis.size):
        raise CertificateError("Gram shape does not match basis")
    reasons = []
    nonneg = bool(np.all(lam >= 0))
    if not nonneg:
        reasons.append(f"negative multiplier {lam.min():.6g}")
    lam_min = gram_min_eigenvalue(G)
    floor = -GRAM_FLOOR_RTOL * max(1.0, float(np.trace(G)))
    if lam_min < floor:
        reasons.append(f"Gram eigenvalue {lam_min:.3e} below floor {floor:.3e}")
    threshold = IDENTITY_RTOL * (1.0 + l1_norm(prog.f))
    res_gram = representation_residual(prog, lam, eps, cert.r_eps, Polynomial.from_gram(G, cert.basis))
    res_sq = representation_residual(prog, lam, eps, cert.r_eps, _sum_squares(cert.squares, prog.n))
    resid = max(res_gram, res_sq)
    if resid > threshold:
        reasons.append(f"identity residual {resid:.3e} > {threshold:.3e}")
    pts = sample_feasible(prog, count=samples, seed=7)
    f_eps = prog.f + eps * perturbation_series(prog.n, cert.r_eps)
    min_val = float(np.min(evaluate(f_eps, pts)))
    if min_val < -1e-7:
        reasons.append(f"f_eps = {min_val:.3e} < 0 at a feasible sample")
    return RepresentationReport(
        passed=not reasons, multipliers_nonnegative=nonneg, gram_min_eigenvalue=lam_min,
        eigenvalue_floor=floor, identity_residual=resid, threshold=threshold,
        min_sampled_f_eps=min_val, reason="; ".join(reasons),
    )


# -- file format ---------------------------------------------------------------


def representation_to_dict(rep: KktRepresentation) -> dict:
    d = certificate_to_dict(rep.certificate)
    d.update(
        version=FORMAT_VERSION,
        kind="kkt-representation",
        f=format_polynomial(rep.program.f),
        epsilon=rep.epsilon,
        lagrangian=format_polynomial(rep.certificate.f),
        g=[format_polynomial(g) for g in rep.program.constraints],
        slater_point=[float(v) for v in rep.program.slater_point],
        **{"lambda": [float(v) for v in rep.multipliers]},
        x_star=[float(v) for v in rep.x_star],
        f_star=float(rep.f_star),
        residual=float(rep.residual),
    )
    d["provenance"] = json.loads(json.dumps(rep.provenance, default=float))
    return d


def representation_from_dict(data: dict) -> KktRepresentation:
    try:
        n = int(data["n"])
        f = parse(data["f"], n)
        gs = [parse(g, n) for g in data["g"]]
        lam = np.array([float(v) for v in data["lambda"]])
        x_star = np.array([float(v) for v in data.get("x_star", [0.0] * n)])
        cert_data = dict(data)
        cert_data["f"] = data.get("lagrangian", data["f"])
        cert = certificate_from_dict(cert_data)
        x0 = data.get("slater_point")
        prog = _unchecked_program(f, gs, x0)
        return KktRepresentation(
            program=prog, multipliers=lam, x_star=x_star,
            f_star=float(data.get("f_star", math.nan)), epsilon=float(data["epsilon"]),
            certificate=cert, residual=float(data.get("residual", math.nan)),
            provenance=dict(data.get("provenance") or {}),
        )
    except CertificateError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CertificateError(f"malformed representation: {exc}") from exc


def _unchecked_program(f: Polynomial, gs: list[Polynomial], x0) -> ConvexProgram:
    """Rebuild a program from a file; a missing or stale Slater point is tolerated."""
    if x0 is not None:
        try:
            return ConvexProgram(f, gs, x0)
        except ValueError:
            pass
    prog = object.__new__(ConvexProgram)
    object.__setattr__(prog, "f", f)
    object.__setattr__(prog, "constraints", tuple(gs))
    object.__setattr__(prog, "slater_point",
                       np.zeros(f.n) if x0 is None else np.asarray(x0, dtype=float))
    return prog
