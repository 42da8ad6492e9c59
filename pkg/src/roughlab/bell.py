"""Ordinary complete Bell polynomials and their Hermite specialisations.

``P^{(k)}_n(a_1, ..., a_k)`` is the coefficient of ``x**n`` in
``exp(a_1 x + ... + a_k x**k)``.  Every level of a one-dimensional rough path
is one of these polynomials evaluated at the increments of the path and of its
renormalisation terms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class BellPolynomial:
    """Term list of ``P^{(k)}_n``.

    Each term is ``(exponents, coefficient)`` with ``exponents = (p_1, ..., p_k)``
    satisfying ``sum(m * p_m) == n`` and ``coefficient = 1 / prod(p_m!)``.
    """

    k: int
    n: int
    terms: tuple[tuple[tuple[int, ...], Fraction], ...]

    def __len__(self) -> int:
        return len(self.terms)

    def __call__(self, a):
        return bell_eval(self.k, self.n, a)


def _partitions(n: int, k: int) -> list[tuple[int, ...]]:
    # exponent vectors (p_1..p_k) with sum m*p_m == n, largest part first
    out: list[tuple[int, ...]] = []

    def rec(remaining: int, m: int, acc: list[int]) -> None:
        if m == 0:
            if remaining == 0:
                out.append(tuple(reversed(acc)))
            return
        for p in range(remaining // m, -1, -1):
            acc.append(p)
            rec(remaining - m * p, m - 1, acc)
            acc.pop()

    rec(n, k, [])
    return out


@lru_cache(maxsize=None)
def bell_terms(k: int, n: int) -> BellPolynomial:
    """Enumerate the terms of ``P^{(k)}_n`` with exact rational coefficients."""
    if k < 1 or n < 0:
        raise ValueError(f"need k >= 1 and n >= 0, got k={k}, n={n}")
    terms = []
    for exps in _partitions(n, k):
        denom = 1
        for p in exps:
            denom *= math.factorial(p)
        terms.append((exps, Fraction(1, denom)))
    return BellPolynomial(k, n, tuple(terms))


@lru_cache(maxsize=None)
def _ordered_terms(k: int, n: int):
    # smallest coefficients first, for a stable floating point sum
    poly = bell_terms(k, n)
    return tuple(sorted(poly.terms, key=lambda term: (term[1], term[0])))


def bell_eval(k: int, n: int, a):
    """Evaluate ``P^{(k)}_n(a_1, ..., a_k)``.

    ``a`` is a length-``k`` sequence of scalars or of mutually broadcastable
    arrays; the result has the broadcast shape.
    """
    if len(a) != k:
        raise ValueError(f"expected {k} arguments, got {len(a)}")
    args = [np.asarray(x, dtype=float) for x in a]
    shape = np.broadcast_shapes(*(x.shape for x in args)) if args else ()
    total = np.zeros(shape)
    for exps, coef in _ordered_terms(k, n):
        term = np.full(shape, float(coef))
        for x, p in zip(args, exps):
            if p:
                term = term * x**p
        total = total + term
    return total[()] if total.ndim == 0 else total


def bell_sequence(a, n_max: int) -> list:
    """All of ``P_0, ..., P_{n_max}`` at once via ``n P_n = sum_m m a_m P_{n-m}``.

    Much cheaper than :func:`bell_eval` for many levels over large arrays;
    used by the rough path level kernels.
    """
    args = [np.asarray(x, dtype=float) for x in a]
    shape = np.broadcast_shapes(*(x.shape for x in args)) if args else ()
    out = [np.ones(shape)]
    for n in range(1, n_max + 1):
        acc = np.zeros(shape)
        for m in range(1, min(n, len(args)) + 1):
            acc = acc + m * args[m - 1] * out[n - m]
        out.append(acc / n)
    return out


def hermite_eval(n: int, x, g):
    """``H_n(x, g) = sum_{p1 + 2 p2 = n} x**p1 g**p2 / (p1! p2!)``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    total = np.zeros(np.broadcast_shapes(x.shape, g.shape))
    for p2 in range(n // 2, -1, -1):
        p1 = n - 2 * p2
        total = total + x**p1 * g**p2 / (math.factorial(p1) * math.factorial(p2))
    return total[()] if total.ndim == 0 else total


def probabilists_hermite(n: int, u):
    """``He_n(u) = n! * P^{(2)}_n(u, -1/2)``."""
    return math.factorial(n) * hermite_eval(n, u, -0.5)
