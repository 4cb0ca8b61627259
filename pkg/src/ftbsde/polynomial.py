"""Sparse polynomials in independent standard Gaussian coordinates.

A monomial is a tuple of ``(variable, power)`` pairs sorted by variable id. Increment
coordinates use ids ``0, 1, ...``; the enlargement coordinate and the bridge coordinate
used for off-grid times have the reserved negative ids below.
"""

from __future__ import annotations

from collections import defaultdict
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np

XI = -1
BRIDGE = -2

Monomial = tuple[tuple[int, int], ...]


def _mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    powers = dict(a)
    for v, p in b:
        powers[v] = powers.get(v, 0) + p
    return tuple(sorted(powers.items()))


class GaussianPolynomial:
    """Finite linear combination of monomials; immutable by convention."""

    __slots__ = ("terms",)
    __array_ufunc__ = None  # make numpy scalars defer to the reflected operators

    def __init__(self, terms: Mapping[Monomial, float] | None = None):
        self.terms: dict[Monomial, float] = {m: float(c) for m, c in (terms or {}).items() if c != 0.0}

    @classmethod
    def constant(cls, c: float) -> "GaussianPolynomial":
        return cls({(): c})

    @classmethod
    def variable(cls, var: int, coef: float = 1.0) -> "GaussianPolynomial":
        return cls({((var, 1),): coef})

    @classmethod
    def linear(cls, coefs: Mapping[int, float], const: float = 0.0) -> "GaussianPolynomial":
        terms: dict[Monomial, float] = {((v, 1),): c for v, c in coefs.items()}
        if const:
            terms[()] = const
        return cls(terms)

    @classmethod
    def combine(cls, pairs: Iterable[tuple[float, "GaussianPolynomial"]]) -> "GaussianPolynomial":
        """``sum_j c_j p_j`` accumulated into a single term dictionary."""
        out: dict[Monomial, float] = defaultdict(float)
        for c, p in pairs:
            for m, v in p.terms.items():
                out[m] += c * v
        return cls(out)

    # -- algebra ---------------------------------------------------------------------------
    @staticmethod
    def _lift(other) -> "GaussianPolynomial":
        if isinstance(other, GaussianPolynomial):
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return GaussianPolynomial.constant(float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0.0) + c
        return GaussianPolynomial(out)

    __radd__ = __add__

    def __neg__(self):
        return GaussianPolynomial({m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return other + (-self)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            s = float(other)
            return GaussianPolynomial({m: c * s for m, c in self.terms.items()})
        if not isinstance(other, GaussianPolynomial):
            return NotImplemented
        out: dict[Monomial, float] = defaultdict(float)
        for ma, ca in self.terms.items():
            for mb, cb in other.terms.items():
                out[_mono_mul(ma, mb)] += ca * cb
        return GaussianPolynomial(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self * (1.0 / float(other))
        return NotImplemented

    def __pow__(self, n: int):
        if int(n) != n or n < 0:
            raise ValueError("only nonnegative integer powers of a polynomial are defined")
        out = GaussianPolynomial.constant(1.0)
        for _ in range(int(n)):
            out = out * self
        return out

    # -- inspection ------------------------------------------------------------------------
    def __len__(self) -> int:
        return len(self.terms)

    def __repr__(self) -> str:
        if not self.terms:
            return "GaussianPolynomial(0)"
        parts = []
        for m, c in sorted(self.terms.items()):
            mono = "*".join(f"x{v}^{p}" if p > 1 else f"x{v}" for v, p in m) or "1"
            parts.append(f"{c:+.6g}*{mono}")
        return "GaussianPolynomial(" + " ".join(parts) + ")"

    @property
    def degree(self) -> int:
        return max((sum(p for _, p in m) for m in self.terms), default=0)

    @property
    def variables(self) -> set[int]:
        return {v for m in self.terms for v, _ in m}

    def degree_in(self, var: int) -> int:
        return max((p for m in self.terms for v, p in m if v == var), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def evaluate(self, values: Mapping[int, float]) -> float:
        total = 0.0
        for m, c in self.terms.items():
            term = c
            for v, p in m:
                if v not in values:
                    raise ValueError(f"no value supplied for coordinate {v}")
                term *= values[v] ** p
            total += term
        return total

    def allclose(self, other: "GaussianPolynomial", atol: float = 1e-12) -> bool:
        diff = self - other
        return all(abs(c) <= atol for c in diff.terms.values())


@lru_cache(maxsize=None)
def hermite_coefficients(n: int) -> tuple[int, ...]:
    """Monomial coefficients of the probabilists' Hermite polynomial ``He_n``, lowest first."""
    if n < 0:
        raise ValueError("Hermite degree must be nonnegative")
    prev, cur = (), (1,)
    for k in range(n):
        # He_{k+1} = x He_k - k He_{k-1}
        nxt = [0] * (k + 2)
        for j, c in enumerate(cur):
            nxt[j + 1] += c
        for j, c in enumerate(prev):
            nxt[j] -= k * c
        prev, cur = cur, tuple(nxt)
    return cur


def hermite_poly(n: int, var: int) -> GaussianPolynomial:
    terms = {}
    for j, c in enumerate(hermite_coefficients(n)):
        if c:
            terms[((var, j),) if j else ()] = float(c)
    return GaussianPolynomial(terms)


def hermite_product_poly(degrees: Iterable[tuple[int, int]], scale: float = 1.0) -> GaussianPolynomial:
    """``scale * prod He_m(x_var)`` for ``(var, m)`` pairs."""
    out = GaussianPolynomial.constant(scale)
    for var, m in degrees:
        if m:
            out = out * hermite_poly(m, var)
    return out
