"""Exact truncated series in ``eps = exp(-s)`` for the profile and its remainder.

Scalars live in the ring Q(p, delta)[kappa, 1/kappa] extended by the formal
power ``kappa^p``.  The only denominators that ever arise are powers of
``p - 1`` and of ``kappa``, so a scalar is stored as

    sum_n  num_n(t, delta, kappa) / (t^a_n kappa^b_n) * (kappa^p)^n,   t = p - 1,

with ``num_n`` a polynomial over Q (sympy ``PolyRing``) and the exponents
``a_n, b_n`` minimal.  This representation is canonical, so equality is a
structural comparison.  The relation ``kappa^(p-1) = 1/(p-1)`` is applied only
by :func:`reduce_kappa`.

Bivariate polynomials in ``(y1, y2)`` are sparse maps from exponent pairs to
scalars; an :class:`EpsSeries` holds one such polynomial per power of ``eps``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from sympy import QQ, Symbol, factor
from sympy.polys.rings import ring

from . import basis
from .errors import PreconditionError

ORDER_CAP = 3

_RING, _T, _DELTA, _KAPPA = ring("t,delta,kappa", QQ)
_ONE = _RING.one
_ZERO = _RING.zero
_P = _T + 1


class SeriesCapError(PreconditionError):
    """Truncation order or polynomial degree above the module caps."""


def degree_cap(order: int) -> int:
    return 4 + 6 * order


# ---------------------------------------------------------------------------
# scalars


def _shift(num, da: int, db: int):
    """Multiply ``num`` by ``t^da kappa^db`` (exponents may be negative if exact)."""
    if da == 0 and db == 0:
        return num
    return _RING.from_dict({(m[0] + da, m[1], m[2] + db): c for m, c in num.terms()})


def _canon(num, a: int, b: int):
    if not num:
        return (_ZERO, 0, 0)
    if a:
        ta = min(m[0] for m in num.monoms())
        k = min(a, ta)
        if k:
            num, a = _shift(num, -k, 0), a - k
    if b:
        kb = min(m[2] for m in num.monoms())
        k = min(b, kb)
        if k:
            num, b = _shift(num, 0, -k), b - k
    return (num, a, b)


def _add_part(x, y):
    (n1, a1, b1), (n2, a2, b2) = x, y
    a, b = max(a1, a2), max(b1, b2)
    return _canon(_shift(n1, a - a1, b - b1) + _shift(n2, a - a2, b - b2), a, b)


def _mul_part(x, y):
    return _canon(x[0] * y[0], x[1] + y[1], x[2] + y[2])


class Scalar:
    """Element of Q(p, delta) kappa^Z with a formal ``kappa^p`` power.

    ``terms[n] = (num, a, b)`` stands for ``num / ((p-1)^a kappa^b) * kappa^(n p)``.
    """

    __slots__ = ("terms",)

    def __init__(self, terms: Mapping[int, tuple] | None = None):
        clean = {}
        for n, part in (terms or {}).items():
            part = _canon(*part)
            if part[0]:
                clean[n] = part
        self.terms = clean

    # constructors
    @classmethod
    def const(cls, value) -> "Scalar":
        if isinstance(value, Scalar):
            return value
        q = QQ(Fraction(value).numerator, Fraction(value).denominator)
        return cls({0: (_RING(q), 0, 0)})

    @classmethod
    def p(cls) -> "Scalar":
        return cls({0: (_P, 0, 0)})

    @classmethod
    def delta(cls) -> "Scalar":
        return cls({0: (_DELTA, 0, 0)})

    @classmethod
    def kappa(cls, m: int = 1) -> "Scalar":
        return cls({0: (_KAPPA**m, 0, 0)} if m >= 0 else {0: (_ONE, 0, -m)})

    @classmethod
    def pm1(cls, k: int = 1) -> "Scalar":
        """``(p-1)^k`` for any integer ``k``."""
        return cls({0: (_T**k, 0, 0)} if k >= 0 else {0: (_ONE, -k, 0)})

    @classmethod
    def kappa_p(cls, n: int = 1) -> "Scalar":
        """The formal power ``kappa^(n p)``."""
        return cls({n: (_ONE, 0, 0)})

    # arithmetic
    def __add__(self, other):
        other = Scalar.const(other)
        out = dict(self.terms)
        for n, part in other.terms.items():
            out[n] = _add_part(out[n], part) if n in out else part
        return Scalar(out)

    __radd__ = __add__

    def __neg__(self):
        return Scalar({n: (-num, a, b) for n, (num, a, b) in self.terms.items()})

    def __sub__(self, other):
        return self + (-Scalar.const(other))

    def __rsub__(self, other):
        return Scalar.const(other) - self

    def __mul__(self, other):
        if not isinstance(other, Scalar):
            q = Fraction(other)
            return Scalar(
                {n: (num * QQ(q.numerator, q.denominator), a, b) for n, (num, a, b) in self.terms.items()}
            )
        out: dict[int, tuple] = {}
        for n1, x in self.terms.items():
            for n2, y in other.terms.items():
                prod = _mul_part(x, y)
                n = n1 + n2
                out[n] = _add_part(out[n], prod) if n in out else prod
        return Scalar(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        """Division by a rational number only."""
        q = Fraction(other)
        if q == 0:
            raise ZeroDivisionError("scalar division by zero")
        return self * (1 / q)

    def __pow__(self, k: int):
        if k < 0:
            raise PreconditionError("negative powers of a general scalar are not in the ring")
        out = Scalar.const(1)
        for _ in range(k):
            out = out * self
        return out

    # comparison
    def is_zero(self) -> bool:
        return not self.terms

    def __eq__(self, other):
        if not isinstance(other, Scalar):
            try:
                other = Scalar.const(other)
            except (TypeError, ValueError):
                return NotImplemented
        return self.terms == other.terms

    def __hash__(self):
        return hash(tuple(sorted((n, str(part)) for n, part in self.terms.items())))

    def has_kappa_p(self) -> bool:
        return any(n != 0 for n in self.terms)

    def is_kappa_free(self) -> bool:
        return all(n == 0 and b == 0 and all(m[2] == 0 for m in num.monoms())
                   for n, (num, a, b) in self.terms.items())

    # evaluation
    def evaluate(self, p: float, delta: float = 0.0) -> float:
        """Floating-point value with ``kappa = (p-1)^(-1/(p-1))``."""
        t = p - 1.0
        kap = t ** (-1.0 / t)
        total = 0.0
        for n, (num, a, b) in self.terms.items():
            v = sum(float(c) * t**m[0] * delta**m[1] * kap**m[2] for m, c in num.terms())
            total += v / (t**a * kap**b) * kap ** (n * p)
        return total

    def subs_p(self, value) -> "Scalar":
        """Specialize ``p`` to a rational value; ``kappa`` and ``delta`` stay formal."""
        q = Fraction(value)
        tq = q - 1
        if tq == 0:
            raise PreconditionError("p = 1 is outside the ring")
        tqq = QQ(tq.numerator, tq.denominator)
        out = {}
        for n, (num, a, b) in self.terms.items():
            spec = _ZERO
            for m, c in num.terms():
                spec += _RING.from_dict({(0, m[1], m[2]): c * tqq ** m[0]})
            out[n] = (spec * (1 / tqq) ** a, 0, b)
        return Scalar(out)

    def as_expr(self):
        """A sympy expression in ``p``, ``delta``, ``kappa``."""
        p, d, k = Symbol("p"), Symbol("delta"), Symbol("kappa")
        total = 0
        for n, (num, a, b) in self.terms.items():
            e = num.as_expr(p - 1, d, k) / ((p - 1) ** a * k**b)
            total += e * k ** (n * p)
        return total

    def __str__(self):
        return str(factor(self.as_expr())) if self.terms else "0"

    __repr__ = __str__


def reduce_kappa(x: Scalar) -> Scalar:
    """Rewrite ``kappa^(n p) -> kappa^n / (p-1)^n`` so only integer kappa powers remain."""
    out = Scalar()
    for n, part in x.terms.items():
        term = Scalar({0: part})
        if n:
            term = term * Scalar.kappa(n) * Scalar.pm1(-n)
        out = out + term
    return out


def _as_scalar(x) -> Scalar:
    return x if isinstance(x, Scalar) else Scalar.const(x)


# ---------------------------------------------------------------------------
# bivariate polynomials


class BiPoly:
    """Sparse polynomial in ``(y1, y2)`` with :class:`Scalar` coefficients."""

    __slots__ = ("terms",)

    def __init__(self, terms: Mapping[tuple[int, int], Scalar] | None = None):
        self.terms = {k: _as_scalar(v) for k, v in (terms or {}).items() if not _as_scalar(v).is_zero()}

    @classmethod
    def const(cls, c) -> "BiPoly":
        return cls({(0, 0): _as_scalar(c)})

    @classmethod
    def monomial(cls, i: int, j: int, c=1) -> "BiPoly":
        return cls({(i, j): _as_scalar(c)})

    @classmethod
    def hermite(cls, a: int, b: int) -> "BiPoly":
        """``h_a(y1) h_b(y2)`` in monomials."""
        ca, cb = basis.hermite_coeffs(a), basis.hermite_coeffs(b)
        return cls({(i, j): Scalar.const(x * y) for i, x in enumerate(ca) if x
                    for j, y in enumerate(cb) if y})

    @property
    def degree(self) -> int:
        return max((i + j for i, j in self.terms), default=-1)

    def __add__(self, other):
        other = other if isinstance(other, BiPoly) else BiPoly.const(other)
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out[k] + v if k in out else v
        return BiPoly(out)

    __radd__ = __add__

    def __neg__(self):
        return BiPoly({k: -v for k, v in self.terms.items()})

    def __sub__(self, other):
        other = other if isinstance(other, BiPoly) else BiPoly.const(other)
        return self + (-other)

    def __rsub__(self, other):
        return BiPoly.const(other) - self

    def __mul__(self, other):
        if not isinstance(other, BiPoly):
            c = _as_scalar(other)
            return BiPoly({k: v * c for k, v in self.terms.items()})
        out: dict[tuple[int, int], Scalar] = {}
        for (i1, j1), v1 in self.terms.items():
            for (i2, j2), v2 in other.terms.items():
                k = (i1 + i2, j1 + j2)
                prod = v1 * v2
                out[k] = out[k] + prod if k in out else prod
        return BiPoly(out)

    __rmul__ = __mul__

    def is_zero(self) -> bool:
        return not self.terms

    def __eq__(self, other):
        if not isinstance(other, BiPoly):
            return NotImplemented
        return self.terms == other.terms

    def map(self, fn) -> "BiPoly":
        return BiPoly({k: fn(v) for k, v in self.terms.items()})

    def laplacian(self) -> "BiPoly":
        out = BiPoly()
        for (i, j), v in self.terms.items():
            if i >= 2:
                out = out + BiPoly.monomial(i - 2, j, v * (i * (i - 1)))
            if j >= 2:
                out = out + BiPoly.monomial(i, j - 2, v * (j * (j - 1)))
        return out

    def euler(self) -> "BiPoly":
        """``y . grad``: multiplies each monomial by its total degree."""
        return BiPoly({(i, j): v * (i + j) for (i, j), v in self.terms.items()})

    def to_hermite(self) -> dict[tuple[int, int], Scalar]:
        """Coefficients on ``h_a(y1) h_b(y2)`` keyed by slot degrees ``(a, b)``."""
        out: dict[tuple[int, int], Scalar] = {}
        for (i, j), v in self.terms.items():
            for a, ca in basis.monomial_in_hermite(i):
                for b, cb in basis.monomial_in_hermite(j):
                    k = (a, b)
                    term = v * (ca * cb)
                    out[k] = out[k] + term if k in out else term
        return {k: v for k, v in out.items() if not v.is_zero()}

    def evaluate(self, y1: float, y2: float, p: float, delta: float) -> float:
        return sum(v.evaluate(p, delta) * y1**i * y2**j for (i, j), v in self.terms.items())


def apply_L(q: BiPoly) -> BiPoly:
    """``L q = Delta q - (1/2) y.grad q + q`` by exact coefficient manipulation."""
    return q.laplacian() - q.euler() * Fraction(1, 2) + q


def hermite_poly(coeffs: Mapping[tuple[int, int], object]) -> BiPoly:
    """Build ``sum c_ab h_a(y1) h_b(y2)`` as a monomial polynomial."""
    out = BiPoly()
    for (a, b), c in coeffs.items():
        out = out + BiPoly.hermite(a, b) * _as_scalar(c)
    return out


# ---------------------------------------------------------------------------
# eps-series


def _check_order(order: int):
    if order < 0 or order > ORDER_CAP:
        raise SeriesCapError(f"truncation order {order} outside [0, {ORDER_CAP}]")


@dataclass(frozen=True)
class EpsSeries:
    """``sum_k coeffs[k](y) eps^k + O(eps^(order+1))``."""

    order: int
    coeffs: tuple

    def __post_init__(self):
        _check_order(self.order)
        if len(self.coeffs) != self.order + 1:
            raise PreconditionError("need exactly order+1 coefficients")
        cap = degree_cap(self.order)
        for c in self.coeffs:
            if c.degree > cap:
                raise SeriesCapError(f"polynomial degree {c.degree} above cap {cap}")

    @classmethod
    def from_terms(cls, order: int, terms: Mapping[int, BiPoly]) -> "EpsSeries":
        _check_order(order)
        return cls(order, tuple(terms.get(k, BiPoly()) for k in range(order + 1)))

    @classmethod
    def const(cls, order: int, c) -> "EpsSeries":
        return cls.from_terms(order, {0: BiPoly.const(c)})

    def truncate(self, order: int) -> "EpsSeries":
        return EpsSeries(order, self.coeffs[: order + 1])

    def __add__(self, other):
        if not isinstance(other, EpsSeries):
            other = EpsSeries.const(self.order, other)
        k = min(self.order, other.order)
        return EpsSeries(k, tuple(a + b for a, b in zip(self.coeffs[: k + 1], other.coeffs[: k + 1])))

    __radd__ = __add__

    def __neg__(self):
        return EpsSeries(self.order, tuple(-c for c in self.coeffs))

    def __sub__(self, other):
        if not isinstance(other, EpsSeries):
            other = EpsSeries.const(self.order, other)
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, EpsSeries):
            return EpsSeries(self.order, tuple(c * other for c in self.coeffs))
        k = min(self.order, other.order)
        out = [BiPoly() for _ in range(k + 1)]
        for i in range(k + 1):
            if self.coeffs[i].is_zero():
                continue
            for j in range(k + 1 - i):
                if not other.coeffs[j].is_zero():
                    out[i + j] = out[i + j] + self.coeffs[i] * other.coeffs[j]
        return EpsSeries(k, tuple(out))

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, EpsSeries):
            return NotImplemented
        return self.order == other.order and all(a == b for a, b in zip(self.coeffs, other.coeffs))

    def map(self, fn) -> "EpsSeries":
        return EpsSeries(self.order, tuple(fn(c) for c in self.coeffs))

    def d_ds(self) -> "EpsSeries":
        """``d/ds`` acting as ``eps^k -> -k eps^k``."""
        return EpsSeries(self.order, tuple(c * (-k) for k, c in enumerate(self.coeffs)))

    def apply_L(self) -> "EpsSeries":
        return self.map(apply_L)

    def to_hermite(self) -> list[dict[tuple[int, int], Scalar]]:
        return [c.to_hermite() for c in self.coeffs]

    def subs_p(self, value) -> "EpsSeries":
        """Specialize ``p`` to a rational value in every coefficient."""
        return self.map(lambda c: c.map(lambda x: x.subs_p(value)))

    def evaluate(self, y1: float, y2: float, s: float, p: float, delta: float) -> float:
        eps = math.exp(-s)
        return sum(c.evaluate(y1, y2, p, delta) * eps**k for k, c in enumerate(self.coeffs))


def _binomial(alpha: Scalar, k: int) -> Scalar:
    out = Scalar.const(1)
    for j in range(k):
        out = out * (alpha - j)
    return out / math.factorial(k)


def series_pow(base: EpsSeries, alpha) -> EpsSeries:
    """``base^alpha`` by the binomial series; ``base`` must have constant term exactly 1.

    ``alpha`` is a kappa-free scalar (typically ``p``, ``1/(p-1)`` or ``-1/(p-1)``).
    """
    alpha = _as_scalar(alpha)
    if not alpha.is_kappa_free():
        raise PreconditionError("exponent must be a rational function of p and delta")
    if base.coeffs[0] != BiPoly.const(1):
        raise PreconditionError("series_pow needs a base with constant term exactly 1")
    u = base - 1
    out = EpsSeries.const(base.order, 1)
    power = EpsSeries.const(base.order, 1)
    for k in range(1, base.order + 1):
        power = power * u
        out = out + power * _binomial(alpha, k)
    return out


# ---------------------------------------------------------------------------
# profile and remainder


def _y2y2() -> BiPoly:
    return BiPoly.monomial(2, 2)


def profile_polynomials(gamma: Scalar | None = None) -> tuple[BiPoly, BiPoly]:
    """The numerator polynomials ``P`` and ``Q``; ``gamma`` defaults to ``(6p-2)/kappa``."""
    p, dlt = Scalar.p(), Scalar.delta()
    kinv = Scalar.kappa(-1)
    if gamma is None:
        gamma = (p * 6 - 2) * kinv
    c = Scalar.pm1(1) * kinv  # (p-1)/kappa
    h = BiPoly.hermite
    P = (_y2y2() - h(2, 2)) * c
    inner = (
        P * _y2y2() * Scalar.pm1(-1)
        + P * P * (Scalar.kappa(1) * (p - 2) * Scalar.pm1(-2) / 2)
        + (BiPoly.monomial(6, 0) - h(6, 0)) * dlt
        + (BiPoly.monomial(0, 6) - h(0, 6)) * dlt
        + (h(4, 4) - BiPoly.monomial(4, 4)) * (p * kinv / 2)
        + (h(4, 2) + h(2, 4)) * gamma
    )
    return P, inner * c


def profile_parts(order: int, gamma: Scalar | None = None) -> tuple[EpsSeries, EpsSeries]:
    """``E`` and ``D / (p-1)`` as eps-series."""
    _check_order(order)
    P, Q = profile_polynomials(gamma)
    E = EpsSeries.from_terms(order, {0: BiPoly.const(1), 1: P, 2: Q})
    c = Scalar.pm1(1) * Scalar.kappa(-1)
    Dn = EpsSeries.from_terms(
        order,
        {0: BiPoly.const(1), 1: _y2y2() * c,
         2: (BiPoly.monomial(6, 0) + BiPoly.monomial(0, 6)) * (c * Scalar.delta())},
    )
    return E, Dn


def expand_profile(order: int = 2, gamma: Scalar | None = None) -> EpsSeries:
    """``phi = kappa (E / D')^(1/(p-1))`` expanded to ``O(eps^(order+1))``."""
    if order > 3:
        raise SeriesCapError("profile expansion is capped at order 3")
    E, Dn = profile_parts(order, gamma)
    a = Scalar.pm1(-1)
    return (series_pow(E, a) * series_pow(Dn, -a)) * Scalar.kappa(1)


def expand_remainder(order: int = 2, gamma: Scalar | None = None) -> EpsSeries:
    """``R = -d_s phi + (L-1) phi - phi/(p-1) + phi^p`` with kappa powers reduced."""
    if order > 2:
        raise SeriesCapError("remainder expansion is capped at order 2")
    phi = expand_profile(order, gamma)
    scaled = phi * Scalar.kappa(-1)
    phi_p = series_pow(scaled, Scalar.p()) * Scalar.kappa_p(1)
    R = -phi.d_ds() + phi.apply_L() - phi - phi * Scalar.pm1(-1) + phi_p
    return R.map(lambda c: c.map(reduce_kappa))


# ---------------------------------------------------------------------------
# certificates


def remainder_target() -> dict[tuple[int, int], Scalar]:
    """Hermite coefficients of the order-two remainder predicted in closed form."""
    c = Scalar.p() * Scalar.kappa(-1)
    raw = {(0, 0): 32, (2, 0): 32, (0, 2): 32, (4, 0): 4, (0, 4): 4,
           (2, 2): 32, (4, 2): 4, (2, 4): 4}
    return {k: c * v for k, v in raw.items()}


def profile_target(order: int = 2) -> list[dict[tuple[int, int], Scalar]]:
    """Hermite coefficients of ``phi`` at orders 0, 1, 2."""
    kap = Scalar.kappa(1)
    gamma = (Scalar.p() * 6 - 2) * Scalar.kappa(-1)
    out = [{(0, 0): kap}, {(2, 2): Scalar.const(-1)},
           {(6, 0): -Scalar.delta(), (0, 6): -Scalar.delta(), (4, 2): gamma, (2, 4): gamma,
            (4, 4): Scalar.p() * Scalar.kappa(-1) / 2}]
    return out[: order + 1]


@dataclass
class CoefficientCheck:
    series: str
    order: int
    mode: tuple[int, int] | None
    label: str
    expected: str
    actual: str
    ok: bool
    headline: bool = False

    def to_json(self):
        return {"series": self.series, "order": self.order,
                "mode": list(self.mode) if self.mode else None, "label": self.label,
                "expected": self.expected, "actual": self.actual, "ok": self.ok,
                "headline": self.headline}


@dataclass
class Certificate:
    order: int
    checks: list[CoefficientCheck] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def failures(self) -> list[CoefficientCheck]:
        return [c for c in self.checks if not c.ok]

    def headline_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for c in self.checks:
            if c.headline and c.ok:
                out[c.series] = out.get(c.series, 0) + 1
        return out

    def to_json(self) -> str:
        return json.dumps({"order": self.order, "ok": self.ok,
                           "headline_verified": self.headline_counts(),
                           "checks": [c.to_json() for c in self.checks]}, indent=2)

    def to_text(self) -> str:
        lines = []
        for c in self.checks:
            mode = f"h{c.mode[0]}h{c.mode[1]}" if c.mode else "-"
            tag = "ok  " if c.ok else "FAIL"
            lines.append(f"[{tag}] {c.series} eps^{c.order} {mode:8s} {c.label}: "
                         f"expected {c.expected}, got {c.actual}")
        counts = self.headline_counts()
        summary = " + ".join(f"{v} {k}" for k, v in sorted(counts.items(), reverse=True))
        lines.append(f"{'PASS' if self.ok else 'FAIL'}: {summary or 'no'} headline coefficient "
                     f"identities verified; {len(self.checks)} checks in total")
        return "\n".join(lines)


def _compare(series_name, order, actual, expected, headline_modes, cert):
    if not expected:
        nonzero = sorted(actual)
        cert.checks.append(CoefficientCheck(
            series_name, order, None, "identically zero", "0",
            "0" if not nonzero else f"nonzero on {nonzero}", not nonzero))
        return
    for m in sorted(set(actual) | set(expected)):
        got = actual.get(m, Scalar())
        want = expected.get(m, Scalar())
        label = "target coefficient" if m in expected else "vanishes"
        cert.checks.append(CoefficientCheck(series_name, order, m, label, str(want), str(got),
                                            got == want, m in headline_modes))


def certify(order: int = 2, gamma: Scalar | None = None) -> Certificate:
    """Exact coefficient-by-coefficient comparison of both expansions with their targets."""
    if order < 0 or order > 2:
        raise SeriesCapError("certificates exist for orders 0, 1, 2")
    cert = Certificate(order)
    rem = expand_remainder(order, gamma).to_hermite()
    rem_target = [{}, {}, remainder_target()][: order + 1]
    for k in range(order + 1):
        # pair symmetric modes into one headline identity
        heads = {(0, 0), (2, 0), (4, 0), (2, 2), (4, 2)} if k == 2 else set()
        _compare("remainder", k, rem[k], rem_target[k], heads, cert)
    prof = expand_profile(order, gamma).to_hermite()
    targ = profile_target(order)
    for k in range(order + 1):
        heads = {(6, 0), (4, 2), (4, 4)} if k == 2 else set()
        _compare("profile", k, prof[k], targ[k], heads, cert)
    return cert
