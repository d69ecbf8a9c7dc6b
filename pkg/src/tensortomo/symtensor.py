"""Compressed symmetric tensors over a generic scalar.

A rank-``m`` symmetric tensor in dimension ``n`` is stored as one scalar per
sorted multi-index.  Sorted multi-indices are enumerated in lexicographic
order; this order is part of the public contract (see
:func:`enumerate_indices`).  Full-index sums are recovered by weighting each
stored component with its :func:`multiplicity`.

Components live in a numpy array whose first axis runs over the sorted
multi-indices.  Trailing axes are treated as pointwise batch axes, which is
how grid fields reuse the same algebra.  Two scalar kinds are supported:

* ``float64`` arrays for numerics;
* ``object`` arrays of :class:`gmpy2.mpq` for exact rational arithmetic.

Every operator here preserves the scalar kind of its inputs.
"""

from __future__ import annotations

import math
from collections import Counter
from functools import lru_cache
from itertools import combinations_with_replacement, product
from typing import Sequence

import numpy as np
from gmpy2 import mpq

__all__ = [
    "SymTensor",
    "BiSymTensor",
    "enumerate_indices",
    "multiplicity",
    "num_components",
    "to_exact",
    "exact_array",
    "is_exact",
    "sym_product",
    "i_axis",
    "j_axis",
    "i_vec",
    "j_vec",
    "i_delta",
    "j_delta",
    "contract",
    "inner",
    "power",
    "delta",
    "pairing",
    "saint_venant_symbol",
    "saint_venant_table",
]


# ---------------------------------------------------------------------------
# Scalars
# ---------------------------------------------------------------------------

def to_exact(x) -> mpq:
    """Convert an int, Fraction, mpq, decimal string or float to ``mpq``.

    Floats are converted via their decimal ``repr`` so that ``0.3`` becomes
    ``3/10`` rather than the nearest binary fraction.
    """
    if isinstance(x, (float, np.floating)):
        return mpq(repr(float(x)))
    if isinstance(x, np.integer):
        return mpq(int(x))
    return mpq(x)


def exact_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=object)
    out = np.empty(arr.shape, dtype=object)
    flat_in, flat_out = arr.reshape(-1), out.reshape(-1)
    for i, v in enumerate(flat_in):
        flat_out[i] = to_exact(v)
    return out


def is_exact(arr: np.ndarray) -> bool:
    return arr.dtype == object


def _zeros(shape, exact: bool) -> np.ndarray:
    if exact:
        out = np.empty(shape, dtype=object)
        out.fill(mpq(0))
        return out
    return np.zeros(shape)


def _coef(table: np.ndarray, exact: bool) -> np.ndarray:
    # tables are built exactly; the float view is only taken for float inputs
    return table if exact else table.astype(float)


# ---------------------------------------------------------------------------
# Multi-index bookkeeping
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _indices(n: int, m: int) -> tuple[tuple[int, ...], ...]:
    return tuple(combinations_with_replacement(range(n), m))


@lru_cache(maxsize=None)
def _position(n: int, m: int) -> dict[tuple[int, ...], int]:
    return {idx: a for a, idx in enumerate(_indices(n, m))}


def enumerate_indices(n: int, m: int) -> list[tuple[int, ...]]:
    """All sorted multi-indices of rank ``m`` over ``1..n``, lexicographically.

    >>> enumerate_indices(2, 2)
    [(1, 1), (1, 2), (2, 2)]
    """
    if n < 1 or m < 0:
        raise ValueError(f"need n >= 1 and m >= 0, got n={n}, m={m}")
    return [tuple(i + 1 for i in idx) for idx in _indices(n, m)]


def num_components(n: int, m: int) -> int:
    return math.comb(n + m - 1, m)


def multiplicity(idx: Sequence[int]) -> int:
    """Number of distinct orderings of the multi-index ``idx``."""
    out = math.factorial(len(idx))
    for c in Counter(idx).values():
        out //= math.factorial(c)
    return out


@lru_cache(maxsize=None)
def _multiplicities(n: int, m: int) -> np.ndarray:
    return np.array([multiplicity(i) for i in _indices(n, m)], dtype=np.int64)


@lru_cache(maxsize=None)
def _raise_table(n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Positions of ``sorted(I + (j,))`` in rank m+1, and ``mult(I)/mult(I+j)``."""
    idx = _indices(n, m)
    pos = _position(n, m + 1)
    rpos = np.empty((len(idx), n), dtype=np.intp)
    coef = np.empty((len(idx), n), dtype=object)
    for a, I in enumerate(idx):
        for j in range(n):
            K = tuple(sorted(I + (j,)))
            rpos[a, j] = pos[K]
            coef[a, j] = mpq(multiplicity(I), multiplicity(K))
    return rpos, coef


@lru_cache(maxsize=None)
def _product_table(n: int, p: int, q: int):
    """Sparse table for the symmetric product S^p x S^q -> S^{p+q}."""
    pos_p, pos_q = _position(n, p), _position(n, q)
    K_, I_, J_, c_ = [], [], [], []
    for c, K in enumerate(_indices(n, p + q)):
        mK = multiplicity(K)
        seen = set()
        for sub in _sub_multisets(K, p):
            if sub in seen:
                continue
            seen.add(sub)
            rest = _multiset_minus(K, sub)
            K_.append(c)
            I_.append(pos_p[sub])
            J_.append(pos_q[rest])
            c_.append(mpq(multiplicity(sub) * multiplicity(rest), mK))
    return (np.array(K_, dtype=np.intp), np.array(I_, dtype=np.intp),
            np.array(J_, dtype=np.intp), np.array(c_, dtype=object))


@lru_cache(maxsize=None)
def _contract_table(n: int, p: int, m: int):
    """Table for ``(j_u w)[I] = sum_J mult(J) w[I+J] u[J]`` with u rank p."""
    pos = _position(n, m + p)
    I_, J_, W_, c_ = [], [], [], []
    for a, I in enumerate(_indices(n, m)):
        for b, J in enumerate(_indices(n, p)):
            I_.append(a)
            J_.append(b)
            W_.append(pos[tuple(sorted(I + J))])
            c_.append(mpq(multiplicity(J)))
    return (np.array(I_, dtype=np.intp), np.array(J_, dtype=np.intp),
            np.array(W_, dtype=np.intp), np.array(c_, dtype=object))


def _sub_multisets(idx: tuple[int, ...], size: int):
    """Distinct sorted sub-multisets of ``idx`` with ``size`` elements."""
    counts = sorted(Counter(idx).items())
    values = [v for v, _ in counts]

    def rec(i, remaining):
        if i == len(values):
            if remaining == 0:
                yield ()
            return
        for take in range(min(counts[i][1], remaining), -1, -1):
            for tail in rec(i + 1, remaining - take):
                yield (values[i],) * take + tail

    yield from rec(0, size)


def _multiset_minus(idx: tuple[int, ...], sub: tuple[int, ...]) -> tuple[int, ...]:
    c = Counter(idx)
    c.subtract(sub)
    return tuple(sorted(c.elements()))


def _sub_weight(idx: tuple[int, ...], sub: tuple[int, ...]) -> mpq:
    """Probability that a uniformly random ``len(sub)``-subset of the
    positions of ``idx`` carries the multiset ``sub``."""
    cI, cA = Counter(idx), Counter(sub)
    num = 1
    for v, c in cA.items():
        num *= math.comb(cI[v], c)
    return mpq(num, math.comb(len(idx), len(sub)))


# ---------------------------------------------------------------------------
# Tensor types
# ---------------------------------------------------------------------------

class SymTensor:
    """Symmetric tensor of rank ``m`` in dimension ``n``.

    ``comps`` has shape ``(num_components(n, m), *batch)``.
    """

    __slots__ = ("n", "m", "comps")

    def __init__(self, n: int, m: int, comps):
        comps = np.asarray(comps)
        if comps.dtype != object:
            comps = comps.astype(float, copy=False)
        if comps.ndim == 0 or comps.shape[0] != num_components(n, m):
            raise ValueError(
                f"rank-{m} tensor in dimension {n} needs {num_components(n, m)} "
                f"components, got array of shape {comps.shape}")
        self.n, self.m, self.comps = n, m, comps

    @classmethod
    def zeros(cls, n: int, m: int, exact: bool = True, batch: tuple = ()) -> "SymTensor":
        return cls(n, m, _zeros((num_components(n, m),) + tuple(batch), exact))

    @classmethod
    def scalar(cls, value, n: int) -> "SymTensor":
        arr = np.asarray(value)
        if arr.dtype == object or isinstance(value, (int, mpq)):
            return cls(n, 0, exact_array([value]))
        return cls(n, 0, arr.reshape((1,) + arr.shape))

    @classmethod
    def basis(cls, n: int, idx: Sequence[int], exact: bool = True) -> "SymTensor":
        """Tensor with a single stored component equal to 1 at the 1-based
        sorted multi-index ``idx``."""
        key = tuple(sorted(i - 1 for i in idx))
        t = cls.zeros(n, len(key), exact)
        t.comps[_position(n, len(key))[key]] = mpq(1) if exact else 1.0
        return t

    @classmethod
    def from_full(cls, full: np.ndarray) -> "SymTensor":
        """Compress a dense ``n^m`` array, averaging over index orderings."""
        full = np.asarray(full)
        m, n = full.ndim, (full.shape[0] if full.ndim else 1)
        exact = full.dtype == object
        out = cls.zeros(n, m, exact)
        for a, I in enumerate(_indices(n, m)):
            vals = [full[p] for p in set(_permutations(I))]
            total = vals[0]
            for v in vals[1:]:
                total = total + v
            out.comps[a] = total / (mpq(len(vals)) if exact else len(vals))
        return out

    @property
    def exact(self) -> bool:
        return self.comps.dtype == object

    @property
    def batch_shape(self) -> tuple:
        return self.comps.shape[1:]

    def __getitem__(self, idx: Sequence[int]):
        key = tuple(sorted(i - 1 for i in idx))
        return self.comps[_position(self.n, self.m)[key]]

    def to_full(self) -> np.ndarray:
        """Dense ``n^m`` array (batch axes not supported)."""
        pos = _position(self.n, self.m)
        out = np.empty((self.n,) * self.m, dtype=self.comps.dtype)
        for full in product(range(self.n), repeat=self.m):
            out[full] = self.comps[pos[tuple(sorted(full))]]
        return out

    def to_float(self) -> "SymTensor":
        return SymTensor(self.n, self.m, self.comps.astype(float))

    def is_zero(self) -> bool:
        return bool(np.all(self.comps == 0))

    def _check(self, other: "SymTensor"):
        if (self.n, self.m) != (other.n, other.m):
            raise ValueError(
                f"shape mismatch: (n={self.n}, m={self.m}) vs (n={other.n}, m={other.m})")

    def __add__(self, other: "SymTensor") -> "SymTensor":
        self._check(other)
        return SymTensor(self.n, self.m, self.comps + other.comps)

    def __sub__(self, other: "SymTensor") -> "SymTensor":
        self._check(other)
        return SymTensor(self.n, self.m, self.comps - other.comps)

    def __neg__(self) -> "SymTensor":
        return SymTensor(self.n, self.m, -self.comps)

    def __mul__(self, c) -> "SymTensor":
        if self.exact and not isinstance(c, np.ndarray):
            c = to_exact(c)
        return SymTensor(self.n, self.m, self.comps * c)

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        if not isinstance(other, SymTensor):
            return NotImplemented
        return (self.n, self.m) == (other.n, other.m) and bool(np.all(self.comps == other.comps))

    def __repr__(self) -> str:
        return f"SymTensor(n={self.n}, m={self.m}, comps={self.comps!r})"


def _permutations(I):
    from itertools import permutations
    return permutations(I)


class BiSymTensor:
    """Element of ``S^p (x) S^q``: symmetric in each of two index blocks.

    ``comps`` has shape ``(num_components(n, p), num_components(n, q), *batch)``.
    """

    __slots__ = ("n", "p", "q", "comps")

    def __init__(self, n: int, p: int, q: int, comps):
        comps = np.asarray(comps)
        if comps.dtype != object:
            comps = comps.astype(float, copy=False)
        want = (num_components(n, p), num_components(n, q))
        if comps.shape[:2] != want:
            raise ValueError(f"expected leading shape {want}, got {comps.shape}")
        self.n, self.p, self.q, self.comps = n, p, q, comps

    @classmethod
    def zeros(cls, n, p, q, exact=True, batch=()):
        return cls(n, p, q, _zeros((num_components(n, p), num_components(n, q)) + tuple(batch), exact))

    @property
    def exact(self) -> bool:
        return self.comps.dtype == object

    def __getitem__(self, key):
        I, J = key
        a = _position(self.n, self.p)[tuple(sorted(i - 1 for i in I))]
        b = _position(self.n, self.q)[tuple(sorted(j - 1 for j in J))]
        return self.comps[a, b]

    def is_zero(self) -> bool:
        return bool(np.all(self.comps == 0))

    def __add__(self, other):
        return BiSymTensor(self.n, self.p, self.q, self.comps + other.comps)

    def __sub__(self, other):
        return BiSymTensor(self.n, self.p, self.q, self.comps - other.comps)

    def __mul__(self, c):
        if self.exact and not isinstance(c, np.ndarray):
            c = to_exact(c)
        return BiSymTensor(self.n, self.p, self.q, self.comps * c)

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, BiSymTensor):
            return NotImplemented
        return ((self.n, self.p, self.q) == (other.n, other.p, other.q)
                and bool(np.all(self.comps == other.comps)))

    def __repr__(self):
        return f"BiSymTensor(n={self.n}, p={self.p}, q={self.q}, comps={self.comps!r})"


# ---------------------------------------------------------------------------
# Algebra
# ---------------------------------------------------------------------------

def _lift(v: np.ndarray, ndim: int) -> np.ndarray:
    """Reshape a coefficient vector over table entries to broadcast against
    a component array with ``ndim`` trailing batch axes."""
    return v.reshape(v.shape + (1,) * ndim)


def _expand(comps: np.ndarray, ndim: int) -> np.ndarray:
    """Insert unit axes after the first so ``comps`` has ``ndim`` batch axes."""
    extra = ndim - (comps.ndim - 1)
    return comps.reshape(comps.shape[:1] + (1,) * extra + comps.shape[1:])


def sym_product(u: SymTensor, v: SymTensor) -> SymTensor:
    """Symmetric product ``sigma(u (x) v)``."""
    if u.n != v.n:
        raise ValueError(f"dimension mismatch: {u.n} vs {v.n}")
    n, p, q = u.n, u.m, v.m
    K, I, J, c = _product_table(n, p, q)
    exact = u.exact and v.exact
    if u.exact != v.exact:
        u, v = u.to_float() if u.exact else u, v.to_float() if v.exact else v
    batch = np.broadcast_shapes(u.batch_shape, v.batch_shape)
    out = _zeros((num_components(n, p + q),) + batch, exact)
    uc, vc = _expand(u.comps, len(batch)), _expand(v.comps, len(batch))
    contrib = _lift(_coef(c, exact), len(batch)) * uc[I] * vc[J]
    np.add.at(out, K, contrib)
    return SymTensor(n, p + q, out)


def i_axis(j: int, u: SymTensor) -> SymTensor:
    """Symmetric multiplication by the basis vector ``e_j`` (0-based ``j``)."""
    rpos, coef = _raise_table(u.n, u.m)
    out = _zeros((num_components(u.n, u.m + 1),) + u.batch_shape, u.exact)
    out[rpos[:, j]] = _lift(_coef(coef[:, j], u.exact), len(u.batch_shape)) * u.comps
    return SymTensor(u.n, u.m + 1, out)


def j_axis(j: int, w: SymTensor) -> SymTensor:
    """Contraction with the basis vector ``e_j`` (0-based ``j``)."""
    if w.m < 1:
        raise ValueError("cannot contract a rank-0 tensor with a vector")
    rpos, _ = _raise_table(w.n, w.m - 1)
    return SymTensor(w.n, w.m - 1, w.comps[rpos[:, j]])


def _vector_parts(y, n: int):
    if isinstance(y, SymTensor):
        if y.m != 1:
            raise ValueError("expected a rank-1 tensor")
        y = y.comps
    if len(y) != n:
        raise ValueError(f"vector of length {len(y)} in dimension {n}")
    return y


def i_vec(y, u: SymTensor) -> SymTensor:
    """``i_y u``: symmetric product with the vector ``y``.

    Entries of ``y`` may be scalars or arrays broadcasting against the batch
    axes of ``u`` (e.g. grid coordinates).
    """
    y = _vector_parts(y, u.n)
    out = None
    for j in range(u.n):
        term = i_axis(j, u).comps * y[j]
        out = term if out is None else out + term
    return SymTensor(u.n, u.m + 1, out)


def j_vec(y, w: SymTensor) -> SymTensor:
    """``j_y w``: contraction of the last index of ``w`` with ``y``."""
    if w.m < 1:
        raise ValueError("cannot contract a rank-0 tensor with a vector")
    y = _vector_parts(y, w.n)
    out = None
    for j in range(w.n):
        term = j_axis(j, w).comps * y[j]
        out = term if out is None else out + term
    return SymTensor(w.n, w.m - 1, out)


def contract(u: SymTensor, w: SymTensor) -> SymTensor:
    """``j_u w`` for a symmetric tensor ``u`` of any rank <= rank of ``w``."""
    if u.m > w.m:
        raise ValueError(f"cannot contract rank {w.m} with rank {u.m}")
    n, p, m = w.n, u.m, w.m - u.m
    I, J, W, c = _contract_table(n, p, m)
    exact = u.exact and w.exact
    uc = u.comps if exact or not u.exact else u.comps.astype(float)
    wc = w.comps if exact or not w.exact else w.comps.astype(float)
    batch = np.broadcast_shapes(u.batch_shape, w.batch_shape)
    uc, wc = _expand(uc, len(batch)), _expand(wc, len(batch))
    out = _zeros((num_components(n, m),) + batch, exact)
    np.add.at(out, I, _lift(_coef(c, exact), len(batch)) * uc[J] * wc[W])
    return SymTensor(n, m, out)


@lru_cache(maxsize=None)
def _delta(n: int) -> SymTensor:
    t = SymTensor.zeros(n, 2, exact=True)
    pos = _position(n, 2)
    for j in range(n):
        t.comps[pos[(j, j)]] = mpq(1)
    return t


def delta(n: int, exact: bool = True) -> SymTensor:
    """Kronecker tensor as a rank-2 symmetric tensor."""
    d = _delta(n)
    return SymTensor(n, 2, d.comps.copy()) if exact else d.to_float()


def i_delta(u: SymTensor) -> SymTensor:
    return sym_product(delta(u.n, u.exact), u)


@lru_cache(maxsize=None)
def _trace_positions(n: int, m: int) -> np.ndarray:
    pos = _position(n, m + 2)
    return np.array([[pos[tuple(sorted(I + (j, j)))] for j in range(n)]
                     for I in _indices(n, m)], dtype=np.intp).reshape(-1, n)


def j_delta(w: SymTensor) -> SymTensor:
    """Trace over the last two indices."""
    if w.m < 2:
        raise ValueError(f"trace needs rank >= 2, got {w.m}")
    tpos = _trace_positions(w.n, w.m - 2)
    return SymTensor(w.n, w.m - 2, w.comps[tpos].sum(axis=1))


def inner(u: SymTensor, v: SymTensor):
    """Full-index dot product (real scalars, so no conjugation)."""
    u._check(v)
    mult = _multiplicities(u.n, u.m)
    w = exact_array(mult) if (u.exact and v.exact) else mult.astype(float)
    return (_lift(w, max(u.comps.ndim, v.comps.ndim) - 1) * u.comps * v.comps).sum(axis=0)


def power(y, m: int) -> SymTensor:
    """Symmetric power ``y^m`` of a vector."""
    y = np.asarray(y)
    exact = y.dtype == object
    n = len(y)
    comps = _zeros((num_components(n, m),) + y.shape[1:], exact)
    for a, I in enumerate(_indices(n, m)):
        val = mpq(1) if exact else 1.0
        for i in I:
            val = val * y[i]
        comps[a] = val
    return SymTensor(n, m, comps)


def pairing(T: BiSymTensor, u: SymTensor, v: SymTensor):
    """``<T, u (x) v>`` with multiplicity weights on both blocks."""
    mu = _multiplicities(T.n, T.p)
    mv = _multiplicities(T.n, T.q)
    if T.exact and u.exact and v.exact:
        wu, wv = exact_array(mu) * u.comps, exact_array(mv) * v.comps
    else:
        wu, wv = mu * u.comps.astype(float), mv * v.comps.astype(float)
    comps = T.comps if (T.exact and u.exact and v.exact) else T.comps.astype(float)
    return wu @ comps @ wv


# ---------------------------------------------------------------------------
# Saint Venant assembly
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def saint_venant_table(n: int, m: int, r: int) -> dict:
    """Coordinate table of the Saint Venant operator ``W^r_m``.

    Returns a mapping from a derivative multiset ``D`` (sorted 0-based tuple
    of length ``m - r``) to arrays ``(I, J, K, coef)`` such that

        W[I, J] = sum_D sum_entries coef * (d^D f)[K].

    The double symmetrization over the two index blocks becomes an average
    over which positions of ``I`` (resp. ``J``) carry the tensor indices and
    which carry derivatives.
    """
    if not 0 <= r <= m:
        raise ValueError(f"need 0 <= r <= m, got r={r}, m={m}")
    s = m - r
    posK = _position(n, m)
    acc: dict[tuple, mpq] = {}
    for a, I in enumerate(_indices(n, s)):
        for b, J in enumerate(_indices(n, m)):
            for l in range(s + 1):
                sign = mpq((-1) ** l * math.comb(s, l))
                for A in _sub_multisets(I, s - l):
                    wA = _sub_weight(I, A)
                    dI = _multiset_minus(I, A)
                    for B in _sub_multisets(J, r + l):
                        wB = _sub_weight(J, B)
                        K = posK[tuple(sorted(A + B))]
                        D = tuple(sorted(dI + _multiset_minus(J, B)))
                        key = (D, a, b, K)
                        acc[key] = acc.get(key, mpq(0)) + sign * wA * wB
    grouped: dict[tuple, list] = {}
    for (D, a, b, K), c in acc.items():
        if c != 0:
            grouped.setdefault(D, []).append((a, b, K, c))
    table = {}
    for D, rows in sorted(grouped.items()):
        a, b, K, c = zip(*rows)
        table[D] = (np.array(a, dtype=np.intp), np.array(b, dtype=np.intp),
                    np.array(K, dtype=np.intp), np.array(c, dtype=object))
    return table


def assemble_saint_venant(n: int, m: int, r: int, derivative, exact: bool,
                          batch: tuple = ()) -> np.ndarray:
    """Assemble ``W^r_m`` components from a derivative oracle.

    ``derivative(D)`` must return the component array (first axis over
    rank-``m`` multi-indices) of the field differentiated along the multiset
    ``D``.  The caller decides what "derivative" means: a polynomial
    derivative, a spectral multiplier or multiplication by ``y^D``.
    """
    out = _zeros((num_components(n, m - r), num_components(n, m)) + tuple(batch), exact)
    for D, (a, b, K, c) in saint_venant_table(n, m, r).items():
        comps = derivative(D)
        np.add.at(out, (a, b), _lift(_coef(c, exact), len(batch)) * comps[K])
    return out


def saint_venant_symbol(y, h: SymTensor, r: int) -> BiSymTensor:
    """Fourier symbol of the Saint Venant operator applied to ``h``.

    Each derivative ``d/dx_i`` of the spatial operator is replaced by a
    factor ``y_i``.
    """
    m, n = h.m, h.n
    if not 0 <= r <= m:
        raise ValueError(f"need 0 <= r <= m, got r={r}, m={m}")
    y = np.asarray(y, dtype=object if h.exact else float)
    if h.exact:
        y = exact_array(y)

    def derivative(D):
        mono = mpq(1) if h.exact else 1.0
        for d in D:
            mono = mono * y[d]
        return h.comps * mono

    comps = assemble_saint_venant(n, m, r, derivative, h.exact)
    return BiSymTensor(n, m - r, m, comps)
