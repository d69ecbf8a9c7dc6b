"""Exact calculus on polynomial symmetric-tensor fields.

Fields are finite sums ``sum_alpha x^alpha * T_alpha`` with rational
symmetric tensor coefficients.  Differential operators act term by term,
so every identity checked here is checked exactly.
"""

from __future__ import annotations

import math
from typing import Callable, Iterator

import numpy as np
from gmpy2 import mpq

from .symtensor import (
    BiSymTensor,
    SymTensor,
    assemble_saint_venant,
    exact_array,
    i_axis,
    i_delta,
    j_axis,
    j_delta,
    num_components,
    saint_venant_table,
    to_exact,
)

__all__ = [
    "PolyTensorField",
    "BiSymPolyField",
    "monomials",
    "d_inner",
    "divergence",
    "j_x_contract",
    "i_x_multiply",
    "i_field",
    "j_field",
    "saint_venant",
    "d_op_unnormalized",
    "d_op_terms",
    "double_factorial",
    "c_coefficient",
    "binom_ext",
    "c_combinatorial",
    "random_rational",
    "random_field",
]

Exponent = tuple[int, ...]


def monomials(n: int, degree: int, homogeneous: bool = False) -> list[Exponent]:
    """Exponent vectors of total degree ``degree`` (or ``<= degree``)."""
    degrees = [degree] if homogeneous else range(degree + 1)
    out = []
    for d in degrees:
        out.extend(_compositions(n, d))
    return out


def _compositions(n: int, d: int) -> Iterator[Exponent]:
    if n == 1:
        yield (d,)
        return
    for first in range(d, -1, -1):
        for rest in _compositions(n - 1, d - first):
            yield (first,) + rest


def _shift(alpha: Exponent, j: int, step: int) -> Exponent:
    return alpha[:j] + (alpha[j] + step,) + alpha[j + 1:]


class PolyTensorField:
    """Polynomial field with values in rank-``m`` symmetric tensors.

    ``terms`` maps exponent vectors to exact :class:`SymTensor` coefficients.
    Zero coefficients are dropped on construction.
    """

    __slots__ = ("n", "m", "terms")

    def __init__(self, n: int, m: int, terms: dict[Exponent, SymTensor] | None = None):
        self.n, self.m = n, m
        self.terms: dict[Exponent, SymTensor] = {}
        for alpha, T in (terms or {}).items():
            if len(alpha) != n:
                raise ValueError(f"exponent {alpha} has wrong length for n={n}")
            if (T.n, T.m) != (n, m):
                raise ValueError(f"coefficient shape (n={T.n}, m={T.m}) != (n={n}, m={m})")
            if not T.is_zero():
                self.terms[tuple(alpha)] = T

    @classmethod
    def constant(cls, T: SymTensor) -> "PolyTensorField":
        return cls(T.n, T.m, {(0,) * T.n: T})

    @classmethod
    def monomial(cls, alpha: Exponent, T: SymTensor) -> "PolyTensorField":
        return cls(T.n, T.m, {tuple(alpha): T})

    @property
    def degree(self) -> int:
        """Largest total degree; ``-1`` for the zero field."""
        return max((sum(a) for a in self.terms), default=-1)

    def is_zero(self) -> bool:
        return not self.terms

    def __call__(self, x) -> SymTensor:
        """Evaluate at a point (rational or float coordinates)."""
        exact = all(not isinstance(v, float) for v in x)
        xs = [to_exact(v) for v in x] if exact else [float(v) for v in x]
        out = SymTensor.zeros(self.n, self.m, exact)
        for alpha, T in self.terms.items():
            c = mpq(1) if exact else 1.0
            for xi, a in zip(xs, alpha):
                c = c * xi ** a
            out = out + (T if exact else T.to_float()) * c
        return out

    def __add__(self, other: "PolyTensorField") -> "PolyTensorField":
        self._check(other)
        terms = dict(self.terms)
        for alpha, T in other.terms.items():
            terms[alpha] = terms[alpha] + T if alpha in terms else T
        return PolyTensorField(self.n, self.m, terms)

    def __sub__(self, other: "PolyTensorField") -> "PolyTensorField":
        return self + other * -1

    def __mul__(self, c) -> "PolyTensorField":
        c = to_exact(c)
        return PolyTensorField(self.n, self.m, {a: T * c for a, T in self.terms.items()})

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolyTensorField):
            return NotImplemented
        return (self.n, self.m) == (other.n, other.m) and (self - other).is_zero()

    def _check(self, other: "PolyTensorField"):
        if (self.n, self.m) != (other.n, other.m):
            raise ValueError(
                f"shape mismatch: (n={self.n}, m={self.m}) vs (n={other.n}, m={other.m})")

    def partial(self, j: int) -> "PolyTensorField":
        """Derivative along the 0-based axis ``j``."""
        terms: dict[Exponent, SymTensor] = {}
        for alpha, T in self.terms.items():
            if alpha[j]:
                _accumulate(terms, _shift(alpha, j, -1), T * alpha[j])
        return PolyTensorField(self.n, self.m, terms)

    def partial_multi(self, D: tuple[int, ...]) -> "PolyTensorField":
        out = self
        for j in D:
            out = out.partial(j)
        return out

    def max_abs_numerator(self) -> int:
        return max((abs(int(c.numerator)) for T in self.terms.values() for c in T.comps.ravel()),
                   default=0)

    def __repr__(self) -> str:
        return f"PolyTensorField(n={self.n}, m={self.m}, terms={len(self.terms)}, degree={self.degree})"


class BiSymPolyField:
    """Polynomial field with values in ``S^p (x) S^q``."""

    __slots__ = ("n", "p", "q", "terms")

    def __init__(self, n: int, p: int, q: int, terms: dict[Exponent, BiSymTensor] | None = None):
        self.n, self.p, self.q = n, p, q
        self.terms = {tuple(a): T for a, T in (terms or {}).items() if not T.is_zero()}

    def is_zero(self) -> bool:
        return not self.terms

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self.terms), default=-1)

    def __call__(self, x) -> BiSymTensor:
        xs = [to_exact(v) for v in x]
        out = BiSymTensor.zeros(self.n, self.p, self.q)
        for alpha, T in self.terms.items():
            c = mpq(1)
            for xi, a in zip(xs, alpha):
                c = c * xi ** a
            out = out + T * c
        return out

    def max_abs_numerator(self) -> int:
        return max((abs(int(c.numerator)) for T in self.terms.values() for c in T.comps.ravel()),
                   default=0)

    def __repr__(self) -> str:
        return f"BiSymPolyField(n={self.n}, ranks=({self.p}, {self.q}), terms={len(self.terms)})"


def _accumulate(terms: dict, alpha: Exponent, T):
    if alpha in terms:
        terms[alpha] = terms[alpha] + T
    else:
        terms[alpha] = T


# ---------------------------------------------------------------------------
# First-order operators
# ---------------------------------------------------------------------------

def d_inner(f: PolyTensorField) -> PolyTensorField:
    """Inner derivative: symmetrized gradient, rank ``m -> m + 1``."""
    terms: dict[Exponent, SymTensor] = {}
    for j in range(f.n):
        for alpha, T in f.partial(j).terms.items():
            _accumulate(terms, alpha, i_axis(j, T))
    return PolyTensorField(f.n, f.m + 1, terms)


def divergence(f: PolyTensorField) -> PolyTensorField:
    """Divergence over the last index, rank ``m + 1 -> m``."""
    if f.m < 1:
        raise ValueError("divergence of a scalar field is undefined")
    terms: dict[Exponent, SymTensor] = {}
    for j in range(f.n):
        for alpha, T in f.partial(j).terms.items():
            _accumulate(terms, alpha, j_axis(j, T))
    return PolyTensorField(f.n, f.m - 1, terms)


def j_x_contract(f: PolyTensorField) -> PolyTensorField:
    """Contraction with the position vector ``x``."""
    if f.m < 1:
        raise ValueError("cannot contract a scalar field with x")
    terms: dict[Exponent, SymTensor] = {}
    for alpha, T in f.terms.items():
        for j in range(f.n):
            _accumulate(terms, _shift(alpha, j, 1), j_axis(j, T))
    return PolyTensorField(f.n, f.m - 1, terms)


def i_x_multiply(f: PolyTensorField) -> PolyTensorField:
    """Symmetric multiplication by the position vector ``x``."""
    terms: dict[Exponent, SymTensor] = {}
    for alpha, T in f.terms.items():
        for j in range(f.n):
            _accumulate(terms, _shift(alpha, j, 1), i_axis(j, T))
    return PolyTensorField(f.n, f.m + 1, terms)


def i_field(f: PolyTensorField) -> PolyTensorField:
    return PolyTensorField(f.n, f.m + 2, {a: i_delta(T) for a, T in f.terms.items()})


def j_field(f: PolyTensorField) -> PolyTensorField:
    if f.m < 2:
        raise ValueError(f"trace needs rank >= 2, got {f.m}")
    return PolyTensorField(f.n, f.m - 2, {a: j_delta(T) for a, T in f.terms.items()})


def _power(op: Callable, f, times: int):
    for _ in range(times):
        f = op(f)
    return f


# ---------------------------------------------------------------------------
# Saint Venant operator
# ---------------------------------------------------------------------------

def saint_venant(f: PolyTensorField, r: int) -> BiSymPolyField:
    """Saint Venant operator ``W^r_m`` applied exactly.

    Uses the same coordinate table as the Fourier symbol, with each
    derivative multiset ``D`` realised as an exact polynomial derivative.
    """
    n, m = f.n, f.m
    if not 0 <= r <= m:
        raise ValueError(f"need 0 <= r <= m, got r={r}, m={m}")
    derivs: dict[tuple, PolyTensorField] = {}
    support: set[Exponent] = set()
    for D in saint_venant_table(n, m, r):
        derivs[D] = f.partial_multi(D)
        support.update(derivs[D].terms)
    order = sorted(support)
    pos = {a: i for i, a in enumerate(order)}
    if not order:
        return BiSymPolyField(n, m - r, m)
    zero = exact_array(np.zeros(num_components(n, m), dtype=int))

    def stacked(D):
        arr = np.empty((num_components(n, m), len(order)), dtype=object)
        for i in range(len(order)):
            arr[:, i] = zero
        for alpha, T in derivs[D].terms.items():
            arr[:, pos[alpha]] = T.comps
        return arr

    comps = assemble_saint_venant(n, m, r, stacked, exact=True, batch=(len(order),))
    terms = {alpha: BiSymTensor(n, m - r, m, comps[:, :, i]) for alpha, i in pos.items()}
    return BiSymPolyField(n, m - r, m, terms)


# ---------------------------------------------------------------------------
# Inversion operator (without its irrational constant)
# ---------------------------------------------------------------------------

def double_factorial(k: int) -> int:
    """``k!!`` with ``(-1)!! = 0!! = 1``.

    Odd arguments give ``1 * 3 * ... * k``; even arguments ``2 * 4 * ... * k``.
    """
    if k < -1:
        raise ValueError(f"double factorial undefined for {k}")
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


def d_op_terms(m: int, n: int, k: int) -> list[tuple[int, int, mpq]]:
    """Admissible ``(p, q, weight)`` triples of the inversion operator.

    ``weight`` is the exact rational factor multiplying
    ``d^{p-q} i^q j^q j_x^{p-k-q} div^k``.
    """
    if not 0 <= k <= m:
        raise ValueError(f"need 0 <= k <= m, got k={k}, m={m}")
    out = []
    for p in range(k, m + 1):
        df = double_factorial(n + 2 * m - 2 * p - 3)
        for q in range(min(p, m - p, p - k) + 1):
            den = 2 ** q * math.factorial(q) * math.factorial(m - p - q) * math.factorial(p - k - q)
            out.append((p, q, mpq((-1) ** q * df, den)))
    return out


def d_op_unnormalized(g: PolyTensorField, k: int, n: int | None = None) -> PolyTensorField:
    """Inversion operator of order ``m + k`` applied exactly, without the
    constant ``c^k_{m,n}``.

    Composition is right to left: ``div^k``, then ``j_x``, then ``j``, then
    ``i``, then ``d``.  Shared prefixes are computed once.  ``n`` defaults to
    the dimension of ``g``; passing a different value only changes the
    double-factorial weights.
    """
    n = g.n if n is None else n
    m = g.m
    base = _power(divergence, g, k)
    jx = [base]
    out = PolyTensorField(g.n, m)
    for p, q, w in d_op_terms(m, n, k):
        while len(jx) <= p - k - q:
            jx.append(j_x_contract(jx[-1]))
        h = jx[p - k - q]
        h = _power(i_field, _power(j_field, h, q), q)
        h = _power(d_inner, h, p - q)
        out = out + h * w
    return out


def c_coefficient(m: int, n: int, k: int) -> float:
    """Constant ``c^k_{m,n}`` of the inversion operator, in floating point."""
    if m < 0 or n < 2 or not 0 <= k <= m:
        raise ValueError(f"invalid (m, n, k) = ({m}, {n}, {k})")
    sign = -1.0 if k % 2 else 1.0
    num = 2.0 ** (m - 2) * math.gamma((2 * m + n - 1) / 2)
    den = math.pi ** ((n + 1) / 2) * double_factorial(n + 2 * m - 3)
    return sign / math.factorial(k) ** 2 * num / den


# ---------------------------------------------------------------------------
# Combinatorial identity
# ---------------------------------------------------------------------------

def binom_ext(k: int, p: int) -> int:
    """Binomial coefficient that vanishes unless ``0 <= p <= k``."""
    if k < 0 or p < 0 or k < p:
        return 0
    return math.comb(k, p)


def c_combinatorial(m: int, r: int, p: int, q: int, flip: int | None = None) -> int:
    """Alternating triple-binomial sum ``C(m, r, p, q)``.

    ``flip`` negates the summand with that ``l`` (fault injection for
    exercising the checker).
    """
    if not 0 <= r <= m or not 0 <= p <= m - r or not 0 <= q <= m - p:
        raise ValueError(f"arguments out of range: (m, r, p, q) = ({m}, {r}, {p}, {q})")
    total = 0
    for l in range(max(0, q - r), m - r - p + 1):
        term = binom_ext(m - r, l) * binom_ext(m - r - l, p) * binom_ext(r + l, q)
        sign = -1 if l % 2 else 1
        if l == flip:
            sign = -sign
        total += sign * term
    return total


# ---------------------------------------------------------------------------
# Random exact inputs
# ---------------------------------------------------------------------------

def random_rational(rng: np.random.Generator) -> mpq:
    """Numerator in ``[-9, 9]``, denominator in ``{1, 2, 3}``."""
    return mpq(int(rng.integers(-9, 10)), int(rng.integers(1, 4)))


def random_tensor(rng: np.random.Generator, n: int, m: int) -> SymTensor:
    return SymTensor(n, m, exact_array([random_rational(rng) for _ in range(num_components(n, m))]))


def random_field(rng: np.random.Generator, n: int, m: int, degree: int,
                 homogeneous: bool = False) -> PolyTensorField:
    """Random polynomial field with every monomial up to ``degree`` present."""
    return PolyTensorField(n, m, {a: random_tensor(rng, n, m)
                                  for a in monomials(n, degree, homogeneous)})
