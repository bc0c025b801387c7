"""Dense primal-dual interior-point solver for small block SDPs.

The generic core solves the standard pair::

    (P)  min <C, X>  s.t. <A_i, X> = b_i,  X >= 0
    (D)  max b^T y   s.t. S = C - sum_i y_i A_i >= 0

with block-diagonal ``X``, ``S`` and ``C``.  Search directions are HKM with a
Mehrotra predictor-corrector.  The moment relaxation is an instance of (D):
the moment matrix and the budget slack form ``S``; the Gram matrix and the
scaled budget multiplier form ``X``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .moment import MomentSequence
from .poly import l1_norm
from .relaxation import DualShape, SdpProblem, dual_residual, exp_budget

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
MAX_ITERATIONS = "max_iterations"
INFEASIBLE = "infeasible"
UNBOUNDED_GUARD = "unbounded-guard"

MAX_ITER = 200
STEP_FRACTION = 0.98


class SdpError(RuntimeError):
    pass


class SdpInfeasibleError(SdpError):
    """Infeasibility detected; for a valid relaxation this means an assembly bug."""


class SdpNumericalError(SdpError):
    """Factorization breakdown.  ``best`` holds the best iterate seen, if any."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


@dataclass
class BlockSdpResult:
    status: str
    X: list[np.ndarray]
    y: np.ndarray
    S: list[np.ndarray]
    pobj: float
    dobj: float
    pinf: float
    dinf: float
    iterations: int
    message: str = ""


def _inner(U: Sequence[np.ndarray], V: Sequence[np.ndarray]) -> float:
    return float(sum(np.vdot(u, v) for u, v in zip(U, V)))


def _sym(Z: np.ndarray) -> np.ndarray:
    return 0.5 * (Z + Z.T)


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest alpha with X + alpha dX PSD (X must be PD)."""
    if X.shape == (1, 1):
        d = dX[0, 0]
        return math.inf if d >= 0 else -X[0, 0] / d
    L = np.linalg.cholesky(X)
    W = sla.solve_triangular(L, dX, lower=True)
    W = sla.solve_triangular(L, W.T, lower=True)
    lam = np.linalg.eigvalsh(_sym(W))[0]
    return math.inf if lam >= 0 else -1.0 / lam


class BlockSdp:
    """Data for the standard pair; ``A[k]`` has shape ``(m, s_k, s_k)``."""

    def __init__(self, C: Sequence[np.ndarray], A: Sequence[np.ndarray], b: np.ndarray,
                 pinf_scale: float = 1.0):
        self.C = [np.asarray(c, dtype=float) for c in C]
        self.A = [np.asarray(a, dtype=float) for a in A]
        self.b = np.asarray(b, dtype=float)
        self.m = self.b.shape[0]
        self.Aflat = [a.reshape(self.m, -1) for a in self.A]
        self.pinf_scale = pinf_scale
        self.cnorm = math.sqrt(sum(float(np.sum(c * c)) for c in self.C))
        self.dim = sum(c.shape[0] for c in self.C)
        AAt = sum(af @ af.T for af in self.Aflat)
        self._proj = np.linalg.pinv(AAt, hermitian=True)

    def op(self, Z: Sequence[np.ndarray]) -> np.ndarray:
        return sum(af @ z.ravel() for af, z in zip(self.Aflat, Z))

    def adj(self, y: np.ndarray) -> list[np.ndarray]:
        return [np.tensordot(y, a, axes=1) for a in self.A]

    def slack(self, y: np.ndarray) -> list[np.ndarray]:
        return [c - a for c, a in zip(self.C, self.adj(y))]

    def project(self, X: Sequence[np.ndarray]) -> list[np.ndarray]:
        """Nearest point (Frobenius) to ``X`` on the affine set ``A(X) = b``."""
        w = self._proj @ (self.b - self.op(X))
        return [x + d for x, d in zip(X, self.adj(w))]

    def schur(self, X, Sinv) -> np.ndarray:
        H = np.zeros((self.m, self.m))
        for a, af, x, si in zip(self.A, self.Aflat, X, Sinv):
            T = np.matmul(np.matmul(x, a), si)
            H += af @ T.reshape(self.m, -1).T
        return _sym(H)

    def residuals(self, X, y, S):
        rp = self.b - self.op(X)
        Rd = [c - s - a for c, s, a in zip(self.C, S, self.adj(y))]
        pinf = float(np.sum(np.abs(rp))) / (1.0 + self.pinf_scale)
        dinf = math.sqrt(sum(float(np.sum(r * r)) for r in Rd)) / (1.0 + self.cnorm)
        return rp, Rd, pinf, dinf

    def _assess(self, X, y, S, tol, gap_offset):
        """Score the polished iterate: relative gap, infeasibilities, PSD floor."""
        Xp = self.project(X)
        floor = 0.0
        for x in Xp:
            scale = max(1.0, float(np.max(np.abs(np.diag(x)))))
            floor = max(floor, -float(np.linalg.eigvalsh(x)[0]) / scale)
        _, _, pinf, dinf = self.residuals(Xp, y, S)
        pobj = _inner(self.C, Xp)
        dobj = float(self.b @ y)
        gap = abs(pobj - dobj) / (1.0 + abs(gap_offset - dobj))
        score = max(gap, pinf, dinf, floor)
        return Xp, pobj, dobj, pinf, dinf, gap, score

    def solve(self, y0: np.ndarray, tol: float = 1e-8, max_iter: int = MAX_ITER,
              gap_offset: float = 0.0, X0: Sequence[np.ndarray] | None = None) -> BlockSdpResult:
        """Run the interior-point iteration from a strictly feasible ``y0``.

        The relative gap is ``|pobj - dobj| / (1 + |gap_offset - dobj|)``, so
        callers can measure it against their own objective value.  Returned
        ``X`` is projected onto ``A(X) = b``; it may then carry eigenvalues
        down to ``-tol`` (relative to its largest diagonal entry).
        """
        y = np.asarray(y0, dtype=float).copy()
        S = self.slack(y)
        for k, s in enumerate(S):
            if np.linalg.eigvalsh(s)[0] <= 0:
                raise SdpError(f"start point is not strictly feasible (block {k})")
        if X0 is None:
            bmax = float(np.max(np.abs(self.b))) if self.m else 0.0
            X = []
            for s in S:
                xi = max(1.0, math.sqrt(s.shape[0]), 1.0 + bmax)
                X.append(xi * np.eye(s.shape[0]))
        else:
            X = [np.array(x, dtype=float) for x in X0]

        best = None
        status = MAX_ITERATIONS
        message = "iteration cap reached"
        it = 0
        stalls = 0
        for it in range(max_iter + 1):
            if not all(np.all(np.isfinite(x)) for x in X) or not np.all(np.isfinite(y)):
                if best is None:
                    raise SdpNumericalError("non-finite iterate")
                message = f"non-finite iterate at iteration {it}"
                break
            assessed = self._assess(X, y, S, tol, gap_offset)
            Xp, pobj, dobj, pinf, dinf, gap, score = assessed
            if best is None or score < best[-1]:
                best = ([x.copy() for x in Xp], y.copy(), [s.copy() for s in S],
                        pobj, dobj, pinf, dinf, score)
            log.debug("it %3d pobj %.10e dobj %.10e gap %.2e pinf %.2e dinf %.2e score %.2e",
                      it, pobj, dobj, gap, pinf, dinf, score)
            if score <= tol:
                status, message = OPTIMAL, "converged"
                break
            if it == max_iter:
                break
            if float(np.max(np.abs(y), initial=0.0)) > 1e12:
                status, message = UNBOUNDED_GUARD, "moment variables exceeded 1e12"
                break
            if max(np.trace(x) for x in X) > 1e15 * (1.0 + self.pinf_scale):
                raise SdpInfeasibleError("Gram iterate diverged: relaxation appears infeasible")

            rp, Rd, _, _ = self.residuals(X, y, S)
            mu = _inner(X, S) / self.dim
            try:
                Sinv = [_spd_inverse(s) for s in S]
                H = self.schur(X, Sinv)
                factor = _factor(H)

                def direction(Rc):
                    rhs = rp.copy()
                    rhs -= self.op([rc @ si for rc, si in zip(Rc, Sinv)])
                    rhs += self.op([x @ rd @ si for x, rd, si in zip(X, Rd, Sinv)])
                    dy = factor(rhs)
                    dy += factor(rhs - H @ dy)
                    dS = [rd - a for rd, a in zip(Rd, self.adj(dy))]
                    dX = [_sym((rc - x @ ds) @ si) for rc, x, ds, si in zip(Rc, X, dS, Sinv)]
                    return dX, dy, dS

                XS = [x @ s for x, s in zip(X, S)]
                dXa, dya, dSa = direction([-xs for xs in XS])
                ap = min(1.0, min(_max_step(x, d) for x, d in zip(X, dXa)))
                ad = min(1.0, min(_max_step(s, d) for s, d in zip(S, dSa)))
                mu_aff = _inner([x + ap * d for x, d in zip(X, dXa)],
                                [s + ad * d for s, d in zip(S, dSa)]) / self.dim
                sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
                Rc = [sigma * mu * np.eye(xs.shape[0]) - xs - dxa @ dsa
                      for xs, dxa, dsa in zip(XS, dXa, dSa)]
                dX, dy, dS = direction(Rc)
                ap = min(1.0, STEP_FRACTION * min(_max_step(x, d) for x, d in zip(X, dX)))
                ad = min(1.0, STEP_FRACTION * min(_max_step(s, d) for s, d in zip(S, dS)))
            except np.linalg.LinAlgError as exc:
                if best is None or best[-1] > math.sqrt(tol):
                    raise SdpNumericalError(
                        f"factorization breakdown at iteration {it}: {exc}", best) from exc
                message = f"factorization breakdown at iteration {it}"
                break
            if not all(np.all(np.isfinite(d)) for d in dX) or not np.all(np.isfinite(dy)):
                message = f"non-finite search direction at iteration {it}"
                break
            X = [x + ap * d for x, d in zip(X, dX)]
            y = y + ad * dy
            S_exact = self.slack(y)
            if all(_is_pd(s) for s in S_exact):
                S = S_exact
            else:
                S = [s + ad * d for s, d in zip(S, dS)]
            if max(ap, ad) < 1e-8:
                stalls += 1
                if stalls >= 3:
                    message = f"stalled at iteration {it}"
                    break
            else:
                stalls = 0

        X, y, S, pobj, dobj, pinf, dinf, _ = best
        return BlockSdpResult(status, X, y, S, pobj, dobj, pinf, dinf, it, message)


def _is_pd(A: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(A)
        return True
    except np.linalg.LinAlgError:
        return False


def _spd_inverse(A: np.ndarray) -> np.ndarray:
    c = sla.cho_factor(A, lower=True)
    return _sym(sla.cho_solve(c, np.eye(A.shape[0])))


def _factor(H: np.ndarray):
    try:
        c = sla.cho_factor(H, lower=True, check_finite=True)
        return lambda rhs: sla.cho_solve(c, rhs)
    except np.linalg.LinAlgError:
        pass
    # Schur complement lost definiteness numerically: fall back to a
    # regularized symmetric eigen-solve.
    w, V = np.linalg.eigh(H)
    floor = max(w[-1], 1.0) * 1e-14
    w = np.maximum(w, floor)
    return lambda rhs: V @ ((V.T @ rhs) / w)


@dataclass
class SdpSolution:
    status: str
    primal: MomentSequence
    dual: DualShape
    primal_value: float
    dual_value: float
    gap: float
    iterations: int
    residual_l1: float = 0.0
    message: str = ""
    problem: SdpProblem | None = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def to_block_sdp(prob: SdpProblem) -> BlockSdp:
    """Map the moment relaxation onto the (D) form of :class:`BlockSdp`."""
    m = prob.num_variables
    C = [prob.base, np.array([[prob.budget_rhs]])]
    A = [-prob.coeff_mats, prob.budget_coeffs.reshape(m, 1, 1)]
    b = -prob.objective
    return BlockSdp(C, A, b, pinf_scale=l1_norm(prob.f))


def solve(prob: SdpProblem, start: MomentSequence, tol: float | None = None,
          max_iter: int = MAX_ITER) -> SdpSolution:
    """Solve one relaxation from a strictly feasible moment sequence."""
    if tol is None:
        tol = prob.config.tol
    if not 1e-10 <= tol <= 1e-4:
        raise SdpError(f"tolerance {tol} outside [1e-10, 1e-4]")
    core = to_block_sdp(prob)
    y0 = prob.reduced_vector(start)
    res = core.solve(y0, tol=tol, max_iter=max_iter, gap_offset=prob.objective_constant)
    if res.status == INFEASIBLE:
        raise SdpInfeasibleError(res.message)

    G = _sym(res.X[0])
    lam = float(res.X[1][0, 0]) * prob.budget_scale
    n = prob.n
    gamma = float(prob.objective_constant - G[0, 0] + lam * n)
    dual = DualShape(gamma=gamma, lam=lam, gram=G)
    primal_value = prob.objective_value(res.y)
    dual_value = gamma - exp_budget(n, prob.M) * lam
    gap = abs(primal_value - dual_value) / (1.0 + abs(primal_value))

    resid = l1_norm(dual_residual(prob.f, dual, prob.r, n))
    return SdpSolution(
        status=res.status,
        primal=prob.moments(res.y),
        dual=dual,
        primal_value=primal_value,
        dual_value=dual_value,
        gap=gap,
        iterations=res.iterations,
        residual_l1=resid,
        message=res.message,
        problem=prob,
    )
