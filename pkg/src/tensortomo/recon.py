"""Spectral reconstruction of tensor fields from normal-operator data.

Derivatives are DFT multipliers on the periodic box ``[-L, L)^n``.  The
Nyquist mode is zeroed in every frequency axis so that each odd multiplier
(``i y_j``) stays Hermitian; with that convention every composite operator
is exactly the product of its factors' multipliers, which is what makes the
Saint Venant operator annihilate the high-order inversion terms to rounding.

Normal-operator data do not decay at infinity, so the inversion tapers its
inputs and its assembled field with erfc windows before the final
half-Laplacian (see :class:`Taper`).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import erfc

from .polyfield import c_coefficient, d_op_terms
from .symtensor import (
    SymTensor,
    assemble_saint_venant,
    i_axis,
    i_delta,
    j_axis,
    j_delta,
    j_vec,
)
from .xray import BiSymGridField, GridField, GridSpec

__all__ = [
    "SpectralPlan",
    "Taper",
    "SV_TAPER",
    "spectral_d",
    "spectral_div",
    "j_x_grid",
    "fractional_laplacian_half",
    "d_operator",
    "saint_venant_grid",
    "invert_full",
    "invert_partial_sv",
    "relative_error",
    "component_errors",
]

IMAG_TOL = 1e-12


class SpectralPlan:
    """Frequency lattice and transforms for one grid.

    ``y[j]`` holds the angular frequencies of axis ``j`` shaped to broadcast
    over the grid, with the Nyquist entry set to zero.
    """

    def __init__(self, grid: GridSpec):
        self.grid = grid
        k = 2.0 * np.pi * np.fft.fftfreq(grid.N, d=grid.h)
        if grid.N % 2 == 0:
            k[grid.N // 2] = 0.0
        self.freqs = k
        n = grid.n
        self.y = [k.reshape((1,) * j + (-1,) + (1,) * (n - j - 1)) for j in range(n)]
        self.axes = tuple(range(-n, 0))

    @cached_property
    def abs_y(self) -> np.ndarray:
        return np.sqrt(sum(yj ** 2 for yj in self.y))

    def fft(self, a: np.ndarray) -> np.ndarray:
        return np.fft.fftn(a, axes=self.axes)

    def ifft(self, a: np.ndarray) -> np.ndarray:
        out = np.fft.ifftn(a, axes=self.axes)
        scale = np.abs(out.real).max(initial=0.0)
        resid = np.abs(out.imag).max(initial=0.0)
        if resid > IMAG_TOL * max(scale, 1e-300) and resid > 1e-300:
            raise AssertionError(f"imaginary residue {resid:.3e} exceeds tolerance "
                                 f"relative to {scale:.3e}")
        return out.real

    def multiplier(self, D: Sequence[int]) -> np.ndarray:
        """``(i y)^D`` for a multiset ``D`` of 0-based axes."""
        out = np.ones((1,) * self.grid.n, dtype=complex)
        for j in D:
            out = out * (1j * self.y[j])
        return out

    def derivative(self, a: np.ndarray, D: Sequence[int], spectrum: np.ndarray | None = None) -> np.ndarray:
        """Apply ``d^D`` to each leading slice of ``a`` (grid axes last)."""
        if not D:
            return a
        F = self.fft(a) if spectrum is None else spectrum
        return self.ifft(F * self.multiplier(D))


# ---------------------------------------------------------------------------
# First-order operators on grid fields
# ---------------------------------------------------------------------------

def _plan(grid: GridSpec, plan: SpectralPlan | None) -> SpectralPlan:
    return SpectralPlan(grid) if plan is None else plan


def spectral_d(f: GridField, plan: SpectralPlan | None = None) -> GridField:
    """Inner derivative with spectral partial derivatives."""
    plan = _plan(f.grid, plan)
    F = plan.fft(f.comps)
    out = None
    for j in range(f.n):
        dj = SymTensor(f.n, f.m, plan.ifft(F * plan.multiplier((j,))))
        term = i_axis(j, dj).comps
        out = term if out is None else out + term
    return GridField(f.grid, f.m + 1, out)


def spectral_div(f: GridField, plan: SpectralPlan | None = None) -> GridField:
    """Divergence with spectral partial derivatives."""
    if f.m < 1:
        raise ValueError("divergence of a scalar field is undefined")
    plan = _plan(f.grid, plan)
    out = None
    for j in range(f.n):
        # contract first, then differentiate only the components that survive
        term = plan.derivative(j_axis(j, f.tensor()).comps, (j,))
        out = term if out is None else out + term
    return GridField(f.grid, f.m - 1, out)


def j_x_grid(f: GridField) -> GridField:
    """Pointwise contraction with box-centered coordinates."""
    return GridField(f.grid, f.m - 1, j_vec(list(f.grid.points()), f.tensor()).comps)


def _i(f: GridField) -> GridField:
    return GridField(f.grid, f.m + 2, i_delta(f.tensor()).comps)


def _j(f: GridField) -> GridField:
    return GridField(f.grid, f.m - 2, j_delta(f.tensor()).comps)


def fractional_laplacian_half(f: GridField, plan: SpectralPlan | None = None) -> GridField:
    """Multiplier ``|y|``; the zero mode maps to zero."""
    plan = _plan(f.grid, plan)
    return GridField(f.grid, f.m, plan.ifft(plan.fft(f.comps) * plan.abs_y))


# ---------------------------------------------------------------------------
# Inversion operator and Saint Venant operator
# ---------------------------------------------------------------------------

def d_operator(g: GridField, k: int, plan: SpectralPlan | None = None) -> GridField:
    """Inversion operator of order ``m + k`` including its constant.

    Each term ``d^{p-q} i^q j^q j_x^{p-k-q} div^k`` is applied right to left;
    the ``div^k`` and ``j_x`` prefixes are shared between terms.
    """
    m, n = g.m, g.n
    plan = _plan(g.grid, plan)
    terms = d_op_terms(m, n, k)
    base = g
    for _ in range(k):
        base = spectral_div(base, plan)
    jx = [base]
    out = np.zeros_like(g.comps)
    for p, q, w in terms:
        while len(jx) <= p - k - q:
            jx.append(j_x_grid(jx[-1]))
        h = jx[p - k - q]
        for _ in range(q):
            h = _j(h)
        for _ in range(q):
            h = _i(h)
        for _ in range(p - q):
            h = spectral_d(h, plan)
        out += float(w) * h.comps
    return GridField(g.grid, m, c_coefficient(m, n, k) * out)


def saint_venant_grid(f: GridField, r: int, plan: SpectralPlan | None = None) -> BiSymGridField:
    """Saint Venant operator with spectral derivatives."""
    m, n = f.m, f.n
    if not 0 <= r <= m:
        raise ValueError(f"need 0 <= r <= m, got r={r}, m={m}")
    plan = _plan(f.grid, plan)
    F = plan.fft(f.comps) if r < m else None

    def derivative(D):
        return plan.derivative(f.comps, D, spectrum=F)

    comps = assemble_saint_venant(n, m, r, derivative, exact=False, batch=f.grid.shape)
    return BiSymGridField(f.grid, m - r, m, comps)


# ---------------------------------------------------------------------------
# Inversion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Taper:
    """Radial erfc windows ``0.5 * erfc((|x| - c) / w)``.

    The inner window multiplies each normal-operator input before any
    derivative is taken.  The outer window multiplies the assembled field
    before the half-Laplacian; ``outer_center=None`` disables it.  Centers
    and widths are in units of ``L``; widths are floored at
    ``min_width_cells`` grid spacings.
    """

    inner_center: float = 0.875
    inner_width: float = 0.0375
    outer_center: float | None = 0.75
    outer_width: float = 0.05
    min_width_cells: float = 2.5

    def window(self, grid: GridSpec, center: float, width: float) -> np.ndarray:
        w = max(width * grid.L, self.min_width_cells * grid.h)
        return 0.5 * erfc((grid.radius() - center * grid.L) / w)

    def inner(self, grid: GridSpec) -> np.ndarray:
        return self.window(grid, self.inner_center, self.inner_width)

    def outer(self, grid: GridSpec) -> np.ndarray | None:
        if self.outer_center is None:
            return None
        return self.window(grid, self.outer_center, self.outer_width)


# The Saint Venant image needs no outer window: W^r already annihilates the
# k > r terms, and an outer window would not commute with W^r.
SV_TAPER = Taper(outer_center=None)


def _check_normals(normals: Sequence[GridField], count: int | None = None):
    if not normals:
        raise ValueError("need at least one normal-operator field")
    g, m = normals[0].grid, normals[0].m
    for f in normals:
        if f.grid != g:
            raise ValueError("normal-operator fields live on different grids")
        if f.m != m:
            raise ValueError("normal-operator fields have different ranks")
    if count is not None and len(normals) != count:
        raise ValueError(f"expected {count} normal-operator fields (k = 0..{count - 1}), "
                         f"got {len(normals)}")


def _assemble(normals: Sequence[GridField], taper: Taper | None,
              plan: SpectralPlan) -> GridField:
    grid = normals[0].grid
    chi = taper.inner(grid) if taper else 1.0
    out = None
    for k, Nk in enumerate(normals):
        term = d_operator(GridField(grid, Nk.m, chi * Nk.comps), k, plan)
        out = term if out is None else out + term
    outer = taper.outer(grid) if taper else None
    if outer is not None:
        out = GridField(grid, out.m, outer * out.comps)
    return out


def invert_full(normals: Sequence[GridField], taper: Taper | None = Taper(),
                plan: SpectralPlan | None = None) -> GridField:
    """Recover ``f`` from ``N^0 f, ..., N^m f``.

    Sums the inversion operators first and applies the half-Laplacian last.
    Pass ``taper=None`` for the untapered formula.
    """
    _check_normals(normals)
    m = normals[0].m
    _check_normals(normals, m + 1)
    plan = _plan(normals[0].grid, plan)
    return fractional_laplacian_half(_assemble(normals, taper, plan), plan)


def invert_partial_sv(normals: Sequence[GridField], r: int, m: int | None = None,
                      taper: Taper | None = SV_TAPER,
                      plan: SpectralPlan | None = None) -> BiSymGridField:
    """Recover the Saint Venant image ``W^r f`` from ``N^0 f, ..., N^r f``."""
    _check_normals(normals)
    m = normals[0].m if m is None else m
    if m != normals[0].m:
        raise ValueError(f"declared rank {m} != data rank {normals[0].m}")
    if not 0 <= r <= m:
        raise ValueError(f"need 0 <= r <= m, got r={r}, m={m}")
    _check_normals(normals, r + 1)
    plan = _plan(normals[0].grid, plan)
    W = saint_venant_grid(_assemble(normals, taper, plan), r, plan)
    W.comps = plan.ifft(plan.fft(W.comps) * plan.abs_y)
    return W


def relative_error(approx, exact, mask: np.ndarray | None = None) -> float:
    """Relative L2 error restricted to ``mask``."""
    denom = exact.norm(mask)
    return (approx - exact).norm(mask) / denom if denom else float("inf")


def component_errors(approx: GridField, exact: GridField, mask: np.ndarray | None = None) -> list[float]:
    """Relative L2 error of each stored component."""
    out = []
    for a, e in zip(approx.comps, exact.comps):
        if mask is not None:
            a, e = a[mask], e[mask]
        denom = np.linalg.norm(e)
        out.append(float(np.linalg.norm(a - e) / denom) if denom else float("inf"))
    return out
