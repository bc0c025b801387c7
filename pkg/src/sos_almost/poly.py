"""Sparse multivariate polynomials over the reals.

A polynomial in ``n`` variables is a map from exponent tuples to float
coefficients.  Exact zeros are never stored, so two polynomials compare
equal exactly when their term maps do.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

Exponent = tuple[int, ...]

#: Largest order accepted by :func:`perturbation_series`; keeps 1/k! far from underflow.
MAX_SERIES_ORDER = 20


class PolynomialError(ValueError):
    """Raised on dimension mismatches and malformed polynomial input."""


class ParseError(PolynomialError):
    def __init__(self, message: str, position: int, text: str):
        super().__init__(f"{message} at position {position}: {text!r}")
        self.position = position
        self.text = text


def monomial_degree(alpha: Exponent) -> int:
    return sum(alpha)


def graded_key(alpha: Exponent) -> tuple:
    """Sort key for the graded order: total degree first, then descending lex.

    For two variables this lists ``1, x1, x2, x1^2, x1*x2, x2^2, ...``.
    """
    return (sum(alpha), tuple(-a for a in alpha))


class Polynomial:
    """Immutable sparse polynomial in ``n`` variables."""

    __slots__ = ("_n", "_terms", "_hash")

    def __init__(self, n: int, terms: Mapping[Sequence[int], float] | None = None):
        if n < 1:
            raise PolynomialError(f"dimension must be positive, got {n}")
        clean: dict[Exponent, float] = {}
        for alpha, c in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != n:
                raise PolynomialError(f"exponent {alpha} has length {len(alpha)}, expected {n}")
            if any(a < 0 for a in alpha):
                raise PolynomialError(f"negative exponent in {alpha}")
            c = float(c)
            if not math.isfinite(c):
                raise PolynomialError(f"non-finite coefficient {c} for {alpha}")
            total = clean.get(alpha, 0.0) + c
            clean[alpha] = total
        self._n = n
        self._terms = {a: c for a, c in clean.items() if c != 0.0}
        self._hash = None

    # -- construction helpers ------------------------------------------------

    @classmethod
    def zero(cls, n: int) -> "Polynomial":
        return cls(n)

    @classmethod
    def constant(cls, n: int, c: float) -> "Polynomial":
        return cls(n, {(0,) * n: c})

    @classmethod
    def variable(cls, n: int, i: int) -> "Polynomial":
        """The coordinate ``x_i`` (1-based index)."""
        _check_index(n, i)
        alpha = [0] * n
        alpha[i - 1] = 1
        return cls(n, {tuple(alpha): 1.0})

    @classmethod
    def from_gram(cls, gram: np.ndarray, basis: "MonomialBasis") -> "Polynomial":
        """Expand ``v(x)^T G v(x)`` over the given basis."""
        gram = np.asarray(gram, dtype=float)
        if gram.shape != (basis.size, basis.size):
            raise PolynomialError(
                f"Gram shape {gram.shape} does not match basis size {basis.size}")
        terms: dict[Exponent, float] = {}
        mons = basis.monomials
        for i in range(basis.size):
            for j in range(basis.size):
                g = gram[i, j]
                if g == 0.0:
                    continue
                a = tuple(p + q for p, q in zip(mons[i], mons[j]))
                terms[a] = terms.get(a, 0.0) + g
        return cls(basis.n, terms)

    # -- properties ----------------------------------------------------------

    @property
    def n(self) -> int:
        return self._n

    @property
    def terms(self) -> Mapping[Exponent, float]:
        return MappingProxyType(self._terms)

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self._terms), default=0)

    def is_zero(self) -> bool:
        return not self._terms

    def coefficient(self, alpha: Sequence[int]) -> float:
        return self._terms.get(tuple(alpha), 0.0)

    def __len__(self) -> int:
        return len(self._terms)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._n == other._n and self._terms == other._terms

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self._n, frozenset(self._terms.items())))
        return self._hash

    def __reduce__(self):
        return (Polynomial, (self._n, dict(self._terms)))

    def __repr__(self) -> str:
        return f"Polynomial(n={self._n}, {format_polynomial(self)!r})"

    def __str__(self) -> str:
        return format_polynomial(self)

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self._n, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self._n, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return add(self, scale(other, -1.0))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        return mul(self, other)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            raise PolynomialError("negative powers are not polynomials")
        out = Polynomial.constant(self._n, 1.0)
        for _ in range(k):
            out = mul(out, self)
        return out

    def __call__(self, x):
        return evaluate(self, x)


def _check_same_dim(p: Polynomial, q: Polynomial) -> None:
    if p.n != q.n:
        raise PolynomialError(f"dimension mismatch: {p.n} vs {q.n}")


def _check_index(n: int, i: int) -> None:
    if not 1 <= i <= n:
        raise PolynomialError(f"variable index {i} out of range 1..{n}")


def add(p: Polynomial, q: Polynomial) -> Polynomial:
    _check_same_dim(p, q)
    terms = dict(p.terms)
    for a, c in q.terms.items():
        terms[a] = terms.get(a, 0.0) + c
    return Polynomial(p.n, terms)


def scale(p: Polynomial, c: float) -> Polynomial:
    return Polynomial(p.n, {a: c * v for a, v in p.terms.items()})


def mul(p: Polynomial, q: Polynomial) -> Polynomial:
    _check_same_dim(p, q)
    terms: dict[Exponent, float] = {}
    for a, c in p.terms.items():
        for b, d in q.terms.items():
            e = tuple(x + y for x, y in zip(a, b))
            terms[e] = terms.get(e, 0.0) + c * d
    return Polynomial(p.n, terms)


def square(p: Polynomial) -> Polynomial:
    return mul(p, p)


def gradient(p: Polynomial, i: int) -> Polynomial:
    """Formal partial derivative with respect to ``x_i`` (1-based)."""
    _check_index(p.n, i)
    k = i - 1
    terms = {}
    for a, c in p.terms.items():
        if a[k] == 0:
            continue
        b = list(a)
        b[k] -= 1
        terms[tuple(b)] = c * a[k]
    return Polynomial(p.n, terms)


def l1_norm(p: Polynomial) -> float:
    return math.fsum(abs(c) for c in p.terms.values())


def evaluate(p: Polynomial, x) -> float | np.ndarray:
    """Evaluate at one point (shape ``(n,)``) or a batch (shape ``(k, n)``)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (p.n,):
        raise PolynomialError(f"point has shape {x.shape}, expected last axis {p.n}")
    if not p.terms:
        return 0.0 if x.ndim == 1 else np.zeros(x.shape[:-1])
    alphas = np.array(list(p.terms.keys()), dtype=int)
    coeffs = np.array(list(p.terms.values()))
    # (..., terms, n) -> product over variables
    powers = np.prod(x[..., None, :] ** alphas, axis=-1)
    vals = powers @ coeffs
    return float(vals) if x.ndim == 1 else vals


def hessian(p: Polynomial) -> list[list[Polynomial]]:
    grads = [gradient(p, i) for i in range(1, p.n + 1)]
    return [[gradient(g, j) for j in range(1, p.n + 1)] for g in grads]


# -- monomial basis --------------------------------------------------------------


@dataclass(frozen=True)
class MonomialBasis:
    """All exponents of total degree at most ``r`` in graded order."""

    n: int
    r: int
    monomials: tuple[Exponent, ...]
    index: Mapping[Exponent, int] = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return len(self.monomials)

    def __len__(self) -> int:
        return len(self.monomials)

    def __reduce__(self):
        return (_rebuild_basis, (self.n, self.r, self.monomials))

    def __iter__(self):
        return iter(self.monomials)

    def __getitem__(self, i: int) -> Exponent:
        return self.monomials[i]

    def position(self, alpha: Sequence[int]) -> int:
        return self.index[tuple(alpha)]

    def coefficients(self, p: Polynomial) -> np.ndarray:
        """Coefficient vector of ``p`` in this basis."""
        if p.n != self.n:
            raise PolynomialError(f"dimension mismatch: {p.n} vs {self.n}")
        out = np.zeros(self.size)
        for a, c in p.terms.items():
            if a not in self.index:
                raise PolynomialError(f"monomial {a} has degree above basis order {self.r}")
            out[self.index[a]] = c
        return out

    def polynomial(self, coeffs: Iterable[float]) -> Polynomial:
        coeffs = list(coeffs)
        if len(coeffs) != self.size:
            raise PolynomialError(f"expected {self.size} coefficients, got {len(coeffs)}")
        return Polynomial(self.n, dict(zip(self.monomials, coeffs)))

    def labels(self) -> list[str]:
        return [format_monomial(a) or "1" for a in self.monomials]


def _rebuild_basis(n: int, r: int, monomials) -> MonomialBasis:
    return MonomialBasis(n, r, tuple(monomials), MappingProxyType({a: i for i, a in enumerate(monomials)}))


def _exponents_of_degree(n: int, d: int) -> list[Exponent]:
    out = []
    for combo in combinations_with_replacement(range(n), d):
        alpha = [0] * n
        for v in combo:
            alpha[v] += 1
        out.append(tuple(alpha))
    # combinations come out in ascending lex of variable choices, which is
    # descending lex on the exponent tuple; sort anyway to pin the order.
    out.sort(key=graded_key)
    return out


@lru_cache(maxsize=None)
def basis(n: int, r: int) -> MonomialBasis:
    if n < 1 or r < 0:
        raise PolynomialError(f"basis needs n >= 1 and r >= 0, got n={n}, r={r}")
    mons: list[Exponent] = []
    for d in range(r + 1):
        mons.extend(_exponents_of_degree(n, d))
    mons_t = tuple(mons)
    return MonomialBasis(n, r, mons_t, MappingProxyType({a: i for i, a in enumerate(mons_t)}))


def basis_size(n: int, r: int) -> int:
    return math.comb(n + r, n)


# -- perturbation series --------------------------------------------------------


def inverse_factorials(r: int) -> list[float]:
    return [1.0 / math.factorial(k) for k in range(r + 1)]


def perturbation_series(n: int, r: int) -> Polynomial:
    """``sum_{k=0}^{r} sum_j x_j^(2k) / k!``; the k=0 layer is the constant n."""
    if n < 1 or r < 0:
        raise PolynomialError(f"need n >= 1 and r >= 0, got n={n}, r={r}")
    if r > MAX_SERIES_ORDER:
        raise PolynomialError(f"series order {r} exceeds cap {MAX_SERIES_ORDER}")
    terms: dict[Exponent, float] = {(0,) * n: float(n)}
    for k, w in enumerate(inverse_factorials(r)):
        if k == 0:
            continue
        for j in range(n):
            alpha = [0] * n
            alpha[j] = 2 * k
            terms[tuple(alpha)] = w
    return Polynomial(n, terms)


# -- text format -----------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<var>x(?P<idx>\d+))
  | (?P<op>[-+*^])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup if m.lastgroup != "idx" else "var"
        if m.group("var"):
            kind = "var"
        if kind != "ws":
            toks.append((kind, m.group(0), pos))
        pos = m.end()
    return toks


def parse(text: str, n: int) -> Polynomial:
    """Parse a polynomial such as ``"x1^4*x2^2 - 3*x1^2*x2^2 + 1"``.

    Grammar: ``term ::= [sign] [coeff '*'] factor*`` with
    ``factor ::= 'x'INT['^'INT]``; factors may also be joined by ``*``.
    """
    if n < 1:
        raise PolynomialError(f"dimension must be positive, got {n}")
    toks = _tokenize(text)
    if not toks:
        raise ParseError("empty expression", 0, text)
    terms: dict[Exponent, float] = {}
    i = 0

    def peek(k=0):
        return toks[i + k] if i + k < len(toks) else None

    first = True
    while i < len(toks):
        sign = 1.0
        tok = peek()
        if tok[0] == "op" and tok[1] in "+-":
            sign = -1.0 if tok[1] == "-" else 1.0
            i += 1
        elif not first:
            raise ParseError("expected '+' or '-'", tok[2], text)
        first = False
        tok = peek()
        if tok is None:
            raise ParseError("dangling sign", len(text), text)
        coeff = 1.0
        alpha = [0] * n
        saw_factor = False
        if tok[0] == "num":
            coeff = float(tok[1])
            i += 1
            saw_factor = True
            nxt = peek()
            if nxt is not None and nxt[0] == "op" and nxt[1] == "*":
                i += 1
                if peek() is None or peek()[0] != "var":
                    where = peek()[2] if peek() else len(text)
                    raise ParseError("expected variable after '*'", where, text)
        while peek() is not None and peek()[0] == "var":
            _, lexeme, where = peek()
            idx = int(lexeme[1:])
            if not 1 <= idx <= n:
                raise ParseError(f"variable index {idx} out of range 1..{n}", where, text)
            i += 1
            power = 1
            if peek() is not None and peek()[1] == "^":
                i += 1
                ptok = peek()
                if ptok is None or ptok[0] != "num" or not ptok[1].isdigit():
                    where = ptok[2] if ptok else len(text)
                    raise ParseError("expected integer exponent", where, text)
                power = int(ptok[1])
                i += 1
            alpha[idx - 1] += power
            saw_factor = True
            if peek() is not None and peek()[1] == "*":
                i += 1
                if peek() is None or peek()[0] != "var":
                    where = peek()[2] if peek() else len(text)
                    raise ParseError("expected variable after '*'", where, text)
        if not saw_factor:
            raise ParseError(f"unexpected token {tok[1]!r}", tok[2], text)
        key = tuple(alpha)
        terms[key] = terms.get(key, 0.0) + sign * coeff
    return Polynomial(n, terms)


def format_monomial(alpha: Exponent) -> str:
    parts = []
    for i, a in enumerate(alpha, start=1):
        if a == 1:
            parts.append(f"x{i}")
        elif a > 1:
            parts.append(f"x{i}^{a}")
    return "*".join(parts)


def format_polynomial(p: Polynomial) -> str:
    """Render in the parse grammar; coefficients use ``repr`` so they round-trip."""
    if p.is_zero():
        return "0"
    out = []
    for alpha in sorted(p.terms, key=graded_key):
        c = p.terms[alpha]
        mono = format_monomial(alpha)
        mag = abs(c)
        if mono and mag == 1.0:
            body = mono
        elif mono:
            body = f"{mag!r}*{mono}"
        else:
            body = repr(mag)
        if not out:
            out.append(("-" if c < 0 else "") + body)
        else:
            out.append(("- " if c < 0 else "+ ") + body)
    return " ".join(out)
