"""Exact verification sweeps over the operator identities.

Each sweep yields one record per identity cell.  A record holds the cell
parameters, ``status`` (``"exact-zero"`` or ``"violated"``) and the largest
absolute numerator seen in the supposedly vanishing output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .polyfield import (
    c_combinatorial,
    d_inner,
    d_op_unnormalized,
    random_field,
    random_rational,
    random_tensor,
    saint_venant,
)
from .symtensor import exact_array, power, saint_venant_symbol, sym_product

__all__ = ["VerifyRanges", "SUITES", "binomial_cells", "symbol_cells", "operator_cells",
           "potential_cells", "run", "write_jsonl"]

SUITES = ("binomial", "symbol", "operator", "potential")


@dataclass
class VerifyRanges:
    m_max: int = 4
    n_set: tuple[int, ...] = (2, 3)
    degree: int = 3
    binomial_m_max: int = 25
    symbol_m_max: int = 5
    symbol_n_set: tuple[int, ...] = (2, 3, 4)
    symbol_trials: int = 20
    operator_trials: int = 5
    potential_m_max: int = 5
    homogeneous: bool = False
    seed: int = 0
    suites: tuple[str, ...] = field(default=SUITES)


def _record(suite: str, params: dict, worst: int) -> dict:
    return {"suite": suite, **params,
            "status": "exact-zero" if worst == 0 else "violated",
            "max_abs_numerator": int(worst)}


def _tensor_worst(comps: np.ndarray) -> int:
    return max((abs(int(c.numerator)) for c in comps.ravel()), default=0)


def binomial_cells(m_max: int = 25, fault: bool = False) -> Iterator[dict]:
    """``C(m, r, p, q) = 0`` whenever ``p + q <= m - r - 1``.

    One record per ``(m, r)`` covering all admissible ``(p, q)``.  With
    ``fault`` the first summand of every sum has its sign flipped.
    """
    for m in range(1, m_max + 1):
        for r in range(m):
            worst, count = 0, 0
            for p in range(m - r):
                for q in range(m - r - p):
                    flip = max(0, q - r) if fault else None
                    worst = max(worst, abs(c_combinatorial(m, r, p, q, flip=flip)))
                    count += 1
            yield _record("binomial", {"m": m, "r": r, "cells": count}, worst)


def symbol_cells(m_max: int = 5, n_set: Iterable[int] = (2, 3, 4), trials: int = 20,
                 seed: int = 0) -> Iterator[dict]:
    """The symbol of ``W^r`` annihilates ``y^{r+1} g``."""
    for n in n_set:
        for m in range(1, m_max + 1):
            for r in range(m):
                rng = np.random.default_rng([seed, 1, n, m, r])
                worst = 0
                for _ in range(trials):
                    y = exact_array([random_rational(rng) for _ in range(n)])
                    g = random_tensor(rng, n, m - r - 1)
                    W = saint_venant_symbol(y, sym_product(power(y, r + 1), g), r)
                    worst = max(worst, _tensor_worst(W.comps))
                yield _record("symbol", {"n": n, "m": m, "r": r, "trials": trials}, worst)


def operator_cells(m_max: int = 4, n_set: Iterable[int] = (2, 3), degree: int = 3,
                   trials: int = 5, seed: int = 0, homogeneous: bool = False) -> Iterator[dict]:
    """``W^r D^k g = 0`` for ``r < k``.

    With ``homogeneous`` the input has exact degree ``2k + m - r`` (the
    smallest degree for which the identity is not implied by degree
    counting) and ``degree`` is ignored.
    """
    for n in n_set:
        for m in range(1, m_max + 1):
            for k in range(1, m + 1):
                rng = np.random.default_rng([seed, 2, n, m, k, int(homogeneous)])
                outs = []
                for _ in range(trials):
                    deg = 2 * k + m if homogeneous else degree
                    g = random_field(rng, n, m, deg, homogeneous=homogeneous)
                    outs.append(d_op_unnormalized(g, k, n))
                for r in range(k):
                    worst = max(saint_venant(D, r).max_abs_numerator() for D in outs)
                    params = {"n": n, "m": m, "k": k, "r": r, "trials": trials,
                              "degree": 2 * k + m if homogeneous else degree}
                    yield _record("operator", params, worst)


def potential_cells(m_max: int = 5, n_set: Iterable[int] = (2, 3), degree: int = 3,
                    seed: int = 0) -> Iterator[dict]:
    """``W^r d^{r+1} v = 0`` for rank ``m - r - 1`` polynomial ``v``."""
    for n in n_set:
        for m in range(1, m_max + 1):
            for r in range(m):
                rng = np.random.default_rng([seed, 3, n, m, r])
                f = random_field(rng, n, m - r - 1, degree + r + 1)
                for _ in range(r + 1):
                    f = d_inner(f)
                worst = saint_venant(f, r).max_abs_numerator()
                yield _record("potential", {"n": n, "m": m, "r": r, "degree": degree + r + 1}, worst)


def run(ranges: VerifyRanges, fault: bool = False) -> Iterator[dict]:
    """All requested suites in a fixed order."""
    unknown = set(ranges.suites) - set(SUITES)
    if unknown:
        raise ValueError(f"unknown suites {sorted(unknown)}; choose from {SUITES}")
    if "binomial" in ranges.suites:
        yield from binomial_cells(ranges.binomial_m_max, fault=fault)
    if "symbol" in ranges.suites:
        yield from symbol_cells(ranges.symbol_m_max, ranges.symbol_n_set,
                                ranges.symbol_trials, ranges.seed)
    if "operator" in ranges.suites:
        yield from operator_cells(ranges.m_max, ranges.n_set, ranges.degree,
                                  ranges.operator_trials, ranges.seed, ranges.homogeneous)
    if "potential" in ranges.suites:
        yield from potential_cells(ranges.potential_m_max, ranges.n_set,
                                   ranges.degree, ranges.seed)


def write_jsonl(records: Iterable[dict], fh) -> tuple[int, dict | None]:
    """Write records, returning the count and the first violated record."""
    count, first_bad = 0, None
    for rec in records:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        count += 1
        if first_bad is None and rec["status"] != "exact-zero":
            first_bad = rec
    return count, first_bad
