"""Sparse algebra for monomials, posynomials, and signomials.

All expressions live over named, strictly positive real variables.  A monomial
is ``c * x1**a1 * ... * xk**ak`` with coefficient ``c > 0`` and arbitrary real
exponents; a posynomial is a sum of monomials; a signomial allows signed terms.
Exponent maps are stored sparsely (variables with exponent zero are dropped),
so expressions over thousands of variables stay cheap as long as each term
touches only a few of them.

Expressions and assignments are immutable after construction.  No implicit
simplification happens during arithmetic; like terms are merged only by an
explicit :func:`simplify` call, so term provenance survives program assembly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Tuple, Union

from .errors import DomainError, ExpressionError, UnboundVariableError

# Coefficients at least this large survive the log transform used by the GP
# solver; anything smaller would degenerate to -inf and is rejected up front.
MIN_COEFFICIENT = 1e-300


def _clean_exponents(exponents: Mapping[str, float]) -> Dict[str, float]:
    """Copy an exponent map, validating entries and dropping exact zeros."""
    out: Dict[str, float] = {}
    for name, raw in exponents.items():
        if not isinstance(name, str) or not name:
            raise ExpressionError(f"variable names must be nonempty strings, got {name!r}")
        e = float(raw)
        if not math.isfinite(e):
            raise ExpressionError(f"exponent of {name!r} is not finite: {raw!r}")
        if e != 0.0:
            out[name] = e
    return out


@dataclass(frozen=True)
class Assignment:
    """Strictly positive finite values for a set of named variables."""

    values: Dict[str, float]

    def __post_init__(self):
        clean: Dict[str, float] = {}
        for name, raw in self.values.items():
            v = float(raw)
            if not math.isfinite(v) or v <= 0.0:
                raise DomainError(f"assignment value for {name!r} must be finite and > 0, got {raw!r}")
            clean[name] = v
        object.__setattr__(self, "values", clean)

    def __getitem__(self, name: str) -> float:
        try:
            return self.values[name]
        except KeyError:
            raise UnboundVariableError(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __len__(self) -> int:
        return len(self.values)

    def names(self) -> Tuple[str, ...]:
        return tuple(self.values)

    def replaced(self, updates: Mapping[str, float]) -> "Assignment":
        """New assignment with some values overridden (validated again)."""
        merged = dict(self.values)
        merged.update(updates)
        return Assignment(merged)


@dataclass(frozen=True)
class Monomial:
    """``c * prod(x_i ** a_i)`` with coefficient c > 0."""

    coefficient: float
    exponents: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        c = float(self.coefficient)
        if not math.isfinite(c) or c < MIN_COEFFICIENT:
            raise ExpressionError(f"monomial coefficient must be finite and >= {MIN_COEFFICIENT:g}, got {self.coefficient!r}")
        object.__setattr__(self, "coefficient", c)
        object.__setattr__(self, "exponents", _clean_exponents(self.exponents))

    def variables(self) -> Tuple[str, ...]:
        return tuple(sorted(self.exponents))

    def value(self, point: Assignment) -> float:
        v = self.coefficient
        for name, e in self.exponents.items():
            v *= point[name] ** e
        return v

    def gradient(self, point: Assignment) -> Dict[str, float]:
        v = self.value(point)
        return {name: self.exponents[name] * v / point[name] for name in sorted(self.exponents)}

    def __mul__(self, other: "Monomial") -> "Monomial":
        if not isinstance(other, Monomial):
            return NotImplemented
        exps = dict(self.exponents)
        for name, e in other.exponents.items():
            exps[name] = exps.get(name, 0.0) + e
        return Monomial(self.coefficient * other.coefficient, exps)

    def power(self, exponent: float) -> "Monomial":
        e = float(exponent)
        if not math.isfinite(e):
            raise ExpressionError(f"monomial power must be finite, got {exponent!r}")
        return Monomial(self.coefficient ** e, {n: a * e for n, a in self.exponents.items()})

    def reciprocal(self) -> "Monomial":
        return self.power(-1.0)


@dataclass(frozen=True)
class SignedMonomial:
    """A monomial with an explicit +1/-1 sign, the building block of signomials."""

    sign: int
    magnitude: Monomial

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ExpressionError(f"sign must be +1 or -1, got {self.sign!r}")

    def value(self, point: Assignment) -> float:
        return self.sign * self.magnitude.value(point)


@dataclass(frozen=True)
class Posynomial:
    """A nonempty sum of monomials; positive everywhere on the positive orthant."""

    terms: Tuple[Monomial, ...]

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ExpressionError("a posynomial needs at least one term")
        for t in terms:
            if not isinstance(t, Monomial):
                raise ExpressionError(f"posynomial terms must be Monomial, got {type(t).__name__}")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def single(cls, term: Monomial) -> "Posynomial":
        return cls((term,))

    def variables(self) -> Tuple[str, ...]:
        seen = set()
        for t in self.terms:
            seen.update(t.exponents)
        return tuple(sorted(seen))

    def value(self, point: Assignment) -> float:
        return sum(t.value(point) for t in self.terms)

    def gradient(self, point: Assignment) -> Dict[str, float]:
        out: Dict[str, float] = {name: 0.0 for name in self.variables()}
        for t in self.terms:
            v = t.value(point)
            for name, e in t.exponents.items():
                out[name] += e * v / point[name]
        return out

    def __add__(self, other: Union["Posynomial", Monomial]) -> "Posynomial":
        if isinstance(other, Monomial):
            return Posynomial(self.terms + (other,))
        if isinstance(other, Posynomial):
            return Posynomial(self.terms + other.terms)
        return NotImplemented

    def __mul__(self, other: Monomial) -> "Posynomial":
        if not isinstance(other, Monomial):
            return NotImplemented
        return Posynomial(tuple(t * other for t in self.terms))

    def divided_by(self, mono: Monomial) -> "Posynomial":
        """Term-wise division by a monomial (still a posynomial)."""
        return self * mono.reciprocal()

    def as_signomial(self) -> "SignomialExpr":
        return SignomialExpr(tuple(SignedMonomial(1, t) for t in self.terms))


@dataclass(frozen=True)
class SignomialExpr:
    """A signed sum of monomials; the empty sum is the zero expression."""

    terms: Tuple[SignedMonomial, ...] = ()

    def __post_init__(self):
        terms = tuple(self.terms)
        for t in terms:
            if not isinstance(t, SignedMonomial):
                raise ExpressionError(f"signomial terms must be SignedMonomial, got {type(t).__name__}")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def difference(cls, lhs: Posynomial, rhs: Posynomial) -> "SignomialExpr":
        """lhs - rhs as a signomial; the standard form of an equality residual."""
        terms = [SignedMonomial(1, t) for t in lhs.terms]
        terms += [SignedMonomial(-1, t) for t in rhs.terms]
        return cls(tuple(terms))

    def is_zero(self) -> bool:
        return not self.terms

    def variables(self) -> Tuple[str, ...]:
        seen = set()
        for t in self.terms:
            seen.update(t.magnitude.exponents)
        return tuple(sorted(seen))

    def value(self, point: Assignment) -> float:
        return sum(t.value(point) for t in self.terms)

    def gradient(self, point: Assignment) -> Dict[str, float]:
        out: Dict[str, float] = {name: 0.0 for name in self.variables()}
        for t in self.terms:
            v = t.value(point)
            for name, e in t.magnitude.exponents.items():
                out[name] += e * v / point[name]
        return out


Expression = Union[Monomial, SignedMonomial, Posynomial, SignomialExpr]


def evaluate(expr: Expression, point: Assignment) -> float:
    """Evaluate any expression kind at a strictly positive point."""
    return expr.value(point)


def gradient(expr: Expression, point: Assignment) -> Dict[str, float]:
    """Partial derivatives with respect to every variable appearing in expr."""
    if isinstance(expr, Monomial):
        return expr.gradient(point)
    if isinstance(expr, SignedMonomial):
        g = expr.magnitude.gradient(point)
        return {k: expr.sign * v for k, v in g.items()}
    return expr.gradient(point)


def monomial_approximation(f: Union[Posynomial, Monomial], point: Assignment) -> Monomial:
    """Best local monomial fit of a posynomial at a point.

    Exponents are the logarithmic sensitivities a_i = x_i * (df/dx_i) / f at
    the point, and the coefficient is fixed so the approximation matches f
    there.  By the weighted AM-GM inequality the result underestimates f on
    the whole positive orthant, and a single monomial is returned unchanged.
    """
    if isinstance(f, Monomial):
        return f
    if len(f.terms) == 1:
        return f.terms[0]
    val = f.value(point)
    if not math.isfinite(val) or val <= 0.0:
        raise DomainError(f"posynomial value at the expansion point must be finite and > 0, got {val!r}")
    grad = f.gradient(point)
    exps = {name: point[name] * g / val for name, g in grad.items()}
    log_c = math.log(val) - sum(a * math.log(point[name]) for name, a in exps.items())
    return Monomial(math.exp(log_c), exps)


def _sig_terms(expr: Expression) -> Tuple[SignedMonomial, ...]:
    if isinstance(expr, Monomial):
        return (SignedMonomial(1, expr),)
    if isinstance(expr, SignedMonomial):
        return (expr,)
    if isinstance(expr, Posynomial):
        return expr.as_signomial().terms
    return expr.terms


def simplify(expr: Expression) -> SignomialExpr:
    """Merge like terms (identical exponent maps) and drop exact cancellations.

    Returns a signomial with deterministically ordered terms; this is the only
    place term merging happens.
    """
    buckets: Dict[Tuple[Tuple[str, float], ...], float] = {}
    for t in _sig_terms(expr):
        key = tuple(sorted(t.magnitude.exponents.items()))
        buckets[key] = buckets.get(key, 0.0) + t.sign * t.magnitude.coefficient
    out: List[SignedMonomial] = []
    for key in sorted(buckets):
        coeff = buckets[key]
        if abs(coeff) < MIN_COEFFICIENT:
            continue
        sign = 1 if coeff > 0 else -1
        out.append(SignedMonomial(sign, Monomial(abs(coeff), dict(key))))
    return SignomialExpr(tuple(out))


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def canonical_text(expr: Expression) -> str:
    """Deterministic plain-text form: ``±c * v1^a1 * v2^a2 ...`` per term.

    Terms are sorted by their variable/exponent structure, then coefficient;
    the zero signomial renders as "0".  The format round-trips through
    :func:`parse_text`.
    """
    terms = _sig_terms(expr)
    if not terms:
        return "0"
    keyed = []
    for t in terms:
        items = tuple(sorted(t.magnitude.exponents.items()))
        keyed.append((items, t.magnitude.coefficient, t.sign))
    keyed.sort()
    rendered = []
    for items, coeff, sign in keyed:
        head = ("+" if sign > 0 else "-") + _fmt(coeff)
        body = "".join(f" * {name}^{_fmt(e)}" for name, e in items)
        rendered.append(head + body)
    return " ".join(rendered)


def parse_text(text: str) -> SignomialExpr:
    """Inverse of :func:`canonical_text` (whitespace-tolerant)."""
    stripped = text.strip()
    if stripped == "0":
        return SignomialExpr(())
    # Split on signs that start a term: a leading +/- followed by a digit.
    terms: List[SignedMonomial] = []
    for chunk in stripped.replace(" -", " \x00-").replace(" +", " \x00+").split("\x00"):
        chunk = chunk.strip()
        if not chunk:
            continue
        if chunk[0] not in "+-":
            raise ExpressionError(f"term {chunk!r} must start with an explicit sign")
        sign = 1 if chunk[0] == "+" else -1
        factors = [f.strip() for f in chunk[1:].split("*")]
        try:
            coeff = float(factors[0])
        except ValueError:
            raise ExpressionError(f"bad coefficient in term {chunk!r}") from None
        exps: Dict[str, float] = {}
        for factor in factors[1:]:
            if "^" not in factor:
                raise ExpressionError(f"factor {factor!r} must look like name^exponent")
            name, _, e_text = factor.partition("^")
            name = name.strip()
            try:
                e = float(e_text)
            except ValueError:
                raise ExpressionError(f"bad exponent in factor {factor!r}") from None
            exps[name] = exps.get(name, 0.0) + e
        terms.append(SignedMonomial(sign, Monomial(coeff, exps)))
    return SignomialExpr(tuple(terms))
