"""Momentum ray transforms, their backprojection adjoints and normal operators.

Lines are parameterized by a unit direction ``xi`` and a foot point ``x``
in the hyperplane orthogonal to ``xi``.  The order-``k`` transform of a
rank-``m`` field ``f`` is

    phi(x, xi) = int t^k <f(x + t xi), xi^m> dt,

and its adjoint spreads ``<x, xi>^k xi^m phi(x - <x, xi> xi, xi)`` back over
the sphere of directions.

Phantoms are sums of Gaussians with polynomial tensor envelopes (plus
optional smooth bumps) and are evaluated analytically along each ray.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import ndimage
from scipy.special import gamma

from .polyfield import PolyTensorField, d_inner, i_x_multiply
from .symtensor import (
    SymTensor,
    _multiplicities,
    i_delta,
    num_components,
    power,
    to_exact,
)

__all__ = [
    "GaussianTerm",
    "BumpTerm",
    "Phantom",
    "DirectionSet",
    "GridSpec",
    "GridField",
    "BiSymGridField",
    "Sinogram",
    "Geometry",
    "ray_transform",
    "backproject",
    "normal_operator",
    "GL_ORDER",
]

GL_ORDER = 16  # nodes per Gauss-Legendre panel
INTERP_ORDERS = {"linear": 1, "cubic": 3, "quintic": 5}


# ---------------------------------------------------------------------------
# Phantoms
# ---------------------------------------------------------------------------

@dataclass
class GaussianTerm:
    """``P(x - c) * exp(-a |x - c|^2)`` with a polynomial tensor envelope ``P``.

    ``exponents`` has shape ``(T, n)`` and ``coeffs`` shape ``(T, nc)``; row
    ``t`` contributes ``coeffs[t] * (x - c)^exponents[t]``.
    """

    center: np.ndarray
    a: float
    exponents: np.ndarray
    coeffs: np.ndarray

    @classmethod
    def from_poly(cls, center, a: float, poly: PolyTensorField) -> "GaussianTerm":
        items = sorted(poly.terms.items())
        n, nc = poly.n, num_components(poly.n, poly.m)
        exps = np.array([alpha for alpha, _ in items], dtype=np.int64).reshape(-1, n)
        coeffs = np.array([T.comps.astype(float) for _, T in items]).reshape(-1, nc)
        return cls(np.asarray(center, dtype=float), float(a), exps, coeffs)

    @property
    def degree(self) -> int:
        return int(self.exponents.sum(axis=1).max()) if len(self.exponents) else 0

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Components at points ``x`` of shape ``(n, ...)``."""
        u = x - self.center.reshape((-1,) + (1,) * (x.ndim - 1))
        env = np.exp(-self.a * np.sum(u * u, axis=0))
        out = np.zeros((self.coeffs.shape[1],) + x.shape[1:])
        for alpha, c in zip(self.exponents, self.coeffs):
            mono = env
            for j, e in enumerate(alpha):
                if e:
                    mono = mono * u[j] ** e
            out += c.reshape((-1,) + (1,) * (x.ndim - 1)) * mono
        return out

    def to_dict(self) -> dict:
        return {"kind": "gaussian", "center": self.center.tolist(), "a": self.a,
                "exponents": self.exponents.tolist(), "coeffs": self.coeffs.tolist()}


@dataclass
class BumpTerm:
    """Smooth compactly supported bump ``T * exp(1 - 1 / (1 - |x - c|^2 / R^2))``."""

    center: np.ndarray
    radius: float
    tensor: np.ndarray

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        u = x - self.center.reshape((-1,) + (1,) * (x.ndim - 1))
        z = np.sum(u * u, axis=0) / self.radius ** 2
        inside = z < 1
        val = np.zeros_like(z)
        val[inside] = np.exp(1.0 - 1.0 / (1.0 - z[inside]))
        return self.tensor.reshape((-1,) + (1,) * (x.ndim - 1)) * val

    def to_dict(self) -> dict:
        return {"kind": "bump", "center": self.center.tolist(), "radius": self.radius,
                "tensor": self.tensor.tolist()}


@dataclass
class Phantom:
    """Rank-``m`` symmetric tensor field on ``R^n`` given analytically."""

    n: int
    m: int
    terms: list = field(default_factory=list)

    # -- construction ------------------------------------------------------

    @classmethod
    def gaussian(cls, n: int, m: int, centers, widths, amplitudes,
                 directions=None) -> "Phantom":
        """Sum of ``amp * dir^m * exp(-|x - c|^2 / (2 width^2))``."""
        terms = []
        for i, (c, w, amp) in enumerate(zip(centers, widths, amplitudes)):
            T = _direction_tensor(n, m, amp, None if directions is None else directions[i])
            poly = PolyTensorField.constant(T)
            terms.append(GaussianTerm.from_poly(c, 1.0 / (2.0 * w * w), poly))
        return cls(n, m, terms)

    @classmethod
    def potential(cls, n: int, m: int, order: int, centers, widths, amplitudes,
                  directions=None) -> "Phantom":
        """Sum of ``d^order v`` with ``v = amp * dir^(m - order) * Gaussian``.

        The envelope is differentiated exactly: with ``E = exp(-a |u|^2)``,
        ``d(P E) = (dP - 2a i_u P) E``.
        """
        if not 1 <= order <= m:
            raise ValueError(f"need 1 <= order <= m, got order={order}, m={m}")
        terms = []
        for i, (c, w, amp) in enumerate(zip(centers, widths, amplitudes)):
            a = to_exact(1.0 / (2.0 * w * w))
            T = _direction_tensor(n, m - order, amp, None if directions is None else directions[i])
            poly = PolyTensorField.constant(T)
            for _ in range(order):
                poly = d_inner(poly) - i_x_multiply(poly) * (2 * a)
            terms.append(GaussianTerm.from_poly(c, float(a), poly))
        return cls(n, m, terms)

    # -- evaluation --------------------------------------------------------

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Components at points of shape ``(n, ...)``; returns ``(nc, ...)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.n:
            raise ValueError(f"points have dimension {x.shape[0]}, phantom has n={self.n}")
        out = np.zeros((num_components(self.n, self.m),) + x.shape[1:])
        for term in self.terms:
            out += term.evaluate(x)
        return out

    def project(self, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """``<f(x), xi^m>`` at points ``x`` for one direction ``xi``."""
        w = _direction_weights(xi, self.m)
        return np.tensordot(w, self.evaluate(x), axes=(0, 0))

    def sample(self, grid: "GridSpec") -> "GridField":
        return GridField(grid, self.m, self.evaluate(grid.points()))

    @property
    def has_closed_form(self) -> bool:
        return all(isinstance(t, GaussianTerm) and t.degree == 0 for t in self.terms)

    def closed_form_ray(self, k: int, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Exact order-``k`` line integrals for constant-envelope Gaussian terms.

        With ``d = x - c`` and ``b = <d, xi>``, the substitution ``u = t + b``
        turns the integral into Gaussian moments of ``(u - b)^k``.
        """
        if not self.has_closed_form:
            raise ValueError("closed form needs Gaussian terms with constant envelopes")
        x = np.asarray(x, dtype=float)
        w = _direction_weights(xi, self.m)
        out = np.zeros(x.shape[1:])
        for term in self.terms:
            d = x - term.center.reshape((-1,) + (1,) * (x.ndim - 1))
            b = np.tensordot(xi, d, axes=(0, 0))
            base = np.exp(-term.a * (np.sum(d * d, axis=0) - b * b))
            moment = np.zeros_like(b)
            for j in range(0, k + 1, 2):
                mj = gamma((j + 1) / 2) / term.a ** ((j + 1) / 2)
                moment += math.comb(k, j) * mj * (-b) ** (k - j)
            out += float(w @ term.coeffs[0]) * base * moment
        return out

    def scaled(self, factor: float) -> "Phantom":
        terms = []
        for t in self.terms:
            if isinstance(t, GaussianTerm):
                terms.append(GaussianTerm(t.center, t.a, t.exponents, t.coeffs * factor))
            else:
                terms.append(BumpTerm(t.center, t.radius, t.tensor * factor))
        return Phantom(self.n, self.m, terms)

    def to_dict(self) -> dict:
        return {"n": self.n, "m": self.m, "terms": [t.to_dict() for t in self.terms]}

    @classmethod
    def from_dict(cls, d: dict) -> "Phantom":
        terms = []
        for t in d["terms"]:
            if t["kind"] == "gaussian":
                terms.append(GaussianTerm(np.array(t["center"], float), float(t["a"]),
                                          np.array(t["exponents"], np.int64).reshape(-1, d["n"]),
                                          np.array(t["coeffs"], float).reshape(len(t["exponents"]), -1)))
            elif t["kind"] == "bump":
                terms.append(BumpTerm(np.array(t["center"], float), float(t["radius"]),
                                      np.array(t["tensor"], float)))
            else:
                raise ValueError(f"unknown phantom term kind {t['kind']!r}")
        return cls(int(d["n"]), int(d["m"]), terms)


def _direction_tensor(n: int, m: int, amp: float, direction) -> SymTensor:
    if m == 0 or direction is None:
        if m % 2:
            raise ValueError("odd-rank phantom terms need a direction")
        # amp * delta^(m/2), which is amp for scalars
        T = SymTensor.scalar(to_exact(amp), n)
        for _ in range(m // 2):
            T = i_delta(T)
        return T
    vec = np.array([to_exact(float(v)) for v in direction], dtype=object)
    if len(vec) != n:
        raise ValueError(f"direction {direction} has wrong length for n={n}")
    return power(vec, m) * to_exact(amp)


def _direction_weights(xi: np.ndarray, m: int) -> np.ndarray:
    """Multiplicity-weighted components of ``xi^m``.

    Contracting these against stored components gives the full-index sum
    ``f_{i_1..i_m} xi^{i_1} ... xi^{i_m}``.
    """
    xi = np.asarray(xi, dtype=float)
    return power(xi, m).comps * _multiplicities(len(xi), m)


# ---------------------------------------------------------------------------
# Directions and grids
# ---------------------------------------------------------------------------

@dataclass
class DirectionSet:
    """Unit directions with quadrature weights on the sphere."""

    n: int
    directions: np.ndarray
    weights: np.ndarray

    @classmethod
    def circle(cls, count: int) -> "DirectionSet":
        """Uniform angles on the unit circle."""
        if count < 1:
            raise ValueError("need at least one direction")
        theta = 2.0 * np.pi * np.arange(count) / count
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        return cls(2, dirs, np.full(count, 2.0 * np.pi / count))

    @classmethod
    def sphere(cls, n_polar: int, n_azimuth: int | None = None) -> "DirectionSet":
        """Gauss-Legendre in ``cos(theta)`` times uniform azimuth on ``S^2``."""
        n_azimuth = 2 * n_polar if n_azimuth is None else n_azimuth
        z, wz = leggauss(n_polar)
        phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
        Z, P = np.meshgrid(z, phi, indexing="ij")
        rho = np.sqrt(1.0 - Z * Z)
        dirs = np.stack([rho * np.cos(P), rho * np.sin(P), Z], axis=-1).reshape(-1, 3)
        w = np.repeat(wz, n_azimuth) * (2.0 * np.pi / n_azimuth)
        return cls(3, dirs, w)

    @classmethod
    def for_dimension(cls, n: int, count: int) -> "DirectionSet":
        if n == 2:
            return cls.circle(count)
        if n == 3:
            return cls.sphere(count)
        raise ValueError(f"quadrature only implemented for n in (2, 3), got {n}")

    def __len__(self) -> int:
        return len(self.weights)

    def frame(self, i: int) -> np.ndarray:
        """Orthonormal basis of the hyperplane orthogonal to direction ``i``.

        For ``n = 3`` the first vector comes from Gram-Schmidt against the
        coordinate axis where ``|xi|`` is smallest.
        """
        xi = self.directions[i]
        if self.n == 2:
            return np.array([[-xi[1], xi[0]]])
        axis = np.zeros(3)
        axis[int(np.argmin(np.abs(xi)))] = 1.0
        e1 = axis - (axis @ xi) * xi
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(xi, e1)
        return np.array([e1, e2])


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on ``[-L, L)^n`` with ``N`` points per axis."""

    n: int
    N: int
    L: float

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.n

    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.N)

    def points(self) -> np.ndarray:
        """Coordinates of shape ``(n, N, ..., N)``."""
        return np.stack(np.meshgrid(*([self.axis()] * self.n), indexing="ij"))

    def radius(self) -> np.ndarray:
        return np.sqrt(np.sum(self.points() ** 2, axis=0))

    def interior(self, fraction: float = 0.5) -> np.ndarray:
        """Mask of points with ``|x| <= fraction * L``."""
        return self.radius() <= fraction * self.L


@dataclass
class GridField:
    """Rank-``m`` symmetric tensor field sampled on a :class:`GridSpec`."""

    grid: GridSpec
    m: int
    comps: np.ndarray

    def __post_init__(self):
        want = (num_components(self.grid.n, self.m),) + self.grid.shape
        if self.comps.shape != want:
            raise ValueError(f"expected components of shape {want}, got {self.comps.shape}")

    @property
    def n(self) -> int:
        return self.grid.n

    def tensor(self) -> SymTensor:
        return SymTensor(self.n, self.m, self.comps)

    def inner(self, other: "GridField", mask: np.ndarray | None = None) -> float:
        """Multiplicity-weighted L2 pairing, ``h^n`` times the grid sum."""
        w = _multiplicities(self.n, self.m).reshape((-1,) + (1,) * self.n)
        prod = (w * self.comps * other.comps).sum(axis=0)
        if mask is not None:
            prod = prod[mask]
        return float(prod.sum() * self.grid.h ** self.n)

    def norm(self, mask: np.ndarray | None = None) -> float:
        return math.sqrt(max(self.inner(self, mask), 0.0))

    def __add__(self, other: "GridField") -> "GridField":
        return GridField(self.grid, self.m, self.comps + other.comps)

    def __sub__(self, other: "GridField") -> "GridField":
        return GridField(self.grid, self.m, self.comps - other.comps)

    def __mul__(self, c) -> "GridField":
        return GridField(self.grid, self.m, self.comps * c)

    __rmul__ = __mul__


@dataclass
class BiSymGridField:
    """Field with values in ``S^p (x) S^q`` sampled on a grid."""

    grid: GridSpec
    p: int
    q: int
    comps: np.ndarray

    def norm(self, mask: np.ndarray | None = None) -> float:
        n = self.grid.n
        w = np.outer(_multiplicities(n, self.p), _multiplicities(n, self.q))
        sq = (w.reshape(w.shape + (1,) * n) * self.comps ** 2).sum(axis=(0, 1))
        if mask is not None:
            sq = sq[mask]
        return math.sqrt(float(sq.sum()) * self.grid.h ** n)

    def __sub__(self, other: "BiSymGridField") -> "BiSymGridField":
        return BiSymGridField(self.grid, self.p, self.q, self.comps - other.comps)


# ---------------------------------------------------------------------------
# Sinograms and geometry
# ---------------------------------------------------------------------------

@dataclass
class Sinogram:
    """Order-``k`` transform data of a rank-``m`` field.

    ``values`` has shape ``(n_dirs, N_s)`` for ``n = 2`` and
    ``(n_dirs, N_s, N_s)`` for ``n = 3``; offsets run over
    ``linspace(-S, S, N_s)`` along each hyperplane frame vector.
    """

    k: int
    m: int
    dirs: DirectionSet
    S: float
    n_s: int
    values: np.ndarray

    @property
    def n(self) -> int:
        return self.dirs.n

    def offsets(self) -> np.ndarray:
        return np.linspace(-self.S, self.S, self.n_s)

    @property
    def ds(self) -> float:
        return 2.0 * self.S / (self.n_s - 1)

    def foot_points(self, i: int) -> np.ndarray:
        """Points in the hyperplane of direction ``i``, shape ``(n, N_s, ...)``."""
        s = self.offsets()
        E = self.dirs.frame(i)
        if self.n == 2:
            return E[0][:, None] * s[None, :]
        S1, S2 = np.meshgrid(s, s, indexing="ij")
        return E[0][:, None, None] * S1 + E[1][:, None, None] * S2

    def inner(self, other: "Sinogram") -> float:
        """Pairing over lines: direction weights times hyperplane sums."""
        w = self.dirs.weights.reshape((-1,) + (1,) * (self.values.ndim - 1))
        return float((w * self.values * other.values).sum() * self.ds ** (self.n - 1))

    def boundary_ratio(self) -> float:
        """Largest magnitude on the offset boundary over the overall maximum."""
        v = np.abs(self.values)
        peak = v.max()
        if peak == 0:
            return 0.0
        edge = [v[:, 0], v[:, -1]]
        if self.n == 3:
            edge += [v[:, :, 0], v[:, :, -1]]
        return float(max(e.max() for e in edge) / peak)


@dataclass(frozen=True)
class Geometry:
    """Acquisition and reconstruction geometry.

    ``n_dirs`` is the number of angles on the circle for ``n = 2`` and the
    number of polar nodes on the sphere for ``n = 3`` (with twice as many
    azimuths).
    """

    n: int
    L: float
    N: int
    n_dirs: int
    n_s: int
    S: float
    t_max: float
    n_t: int
    interp: str = "quintic"

    @classmethod
    def default(cls, n: int = 2, L: float = 4.0, N: int = 128, **overrides) -> "Geometry":
        S = 1.5 * math.sqrt(2.0) * L
        base = dict(n=n, L=L, N=N, n_dirs=360 if n == 2 else 48, n_s=2 * N, S=S,
                    t_max=2.0 * S, n_t=4 * N)
        base.update(overrides)
        return cls(**base)

    def grid(self) -> GridSpec:
        return GridSpec(self.n, self.N, self.L)

    def directions(self) -> DirectionSet:
        return DirectionSet.for_dimension(self.n, self.n_dirs)

    def validate(self):
        for name in ("L", "N", "n_dirs", "n_s", "S", "t_max", "n_t"):
            if not getattr(self, name) > 0:
                raise ValueError(f"geometry field {name} must be positive, got {getattr(self, name)}")
        if self.interp not in INTERP_ORDERS:
            raise ValueError(f"interp must be one of {sorted(INTERP_ORDERS)}, got {self.interp!r}")


# ---------------------------------------------------------------------------
# Forward transform
# ---------------------------------------------------------------------------

def line_quadrature(t_max: float, n_t: int, order: int = GL_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on ``[-t_max, t_max]``.

    ``n_t`` is rounded up to a whole number of panels.
    """
    if n_t <= 0:
        raise ValueError(f"number of line nodes must be positive, got {n_t}")
    panels = max(1, -(-n_t // order))
    x, w = leggauss(order)
    edges = np.linspace(-t_max, t_max, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    t = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    return t, wt


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def ray_transform(phantom: Phantom, k: int, dirs: DirectionSet, S: float, n_s: int,
                  t_max: float, n_t: int, threads: int = 1,
                  chunk: int = 1 << 18) -> Sinogram:
    """Order-``k`` momentum ray transform by composite Gauss-Legendre quadrature.

    Each direction is an independent unit of work writing its own row, so
    results do not depend on ``threads``.
    """
    if phantom.n != dirs.n:
        raise ValueError(f"phantom dimension {phantom.n} != direction dimension {dirs.n}")
    if k < 0:
        raise ValueError(f"moment order must be non-negative, got {k}")
    t, wt = line_quadrature(t_max, n_t)
    wk = wt * t ** k
    shape = (n_s,) * (dirs.n - 1)
    proto = Sinogram(k, phantom.m, dirs, S, n_s, np.zeros((len(dirs),) + shape))

    def one(i: int) -> np.ndarray:
        xi = dirs.directions[i]
        feet = proto.foot_points(i).reshape(dirs.n, -1)
        out = np.empty(feet.shape[1])
        step = max(1, chunk // len(t))
        for a in range(0, feet.shape[1], step):
            pts = feet[:, a:a + step, None] + xi[:, None, None] * t[None, None, :]
            out[a:a + step] = phantom.project(pts, xi) @ wk
        return out.reshape(shape)

    rows = _map(one, range(len(dirs)), threads)
    proto.values = np.stack(rows)
    return proto


# ---------------------------------------------------------------------------
# Backprojection
# ---------------------------------------------------------------------------

def backproject(sino: Sinogram, grid: GridSpec, interp: str = "quintic", threads: int = 1,
                chunk: int = 1 << 16) -> GridField:
    """Adjoint of the order-``k`` transform evaluated on grid points.

    Hyperplane values are interpolated with B-splines of degree 5, 3 or 1
    (``interp`` of ``"quintic"``, ``"cubic"`` or ``"linear"``).  The
    inversion differentiates normal-operator data up to ``2m`` times, so
    low-degree interpolation error is strongly amplified.  Grid points are split into chunks processed
    independently; within a chunk directions are summed in a fixed order.
    """
    n, m, k = sino.n, sino.m, sino.k
    if grid.n != n:
        raise ValueError(f"grid dimension {grid.n} != sinogram dimension {n}")
    order = INTERP_ORDERS.get(interp)
    if order is None:
        raise ValueError(f"interp must be one of {sorted(INTERP_ORDERS)}, got {interp!r}")
    need = math.sqrt(n) * grid.L
    if sino.S < need:
        raise ValueError(f"offset window S={sino.S:g} too small; grid needs S >= {need:g}")

    if order > 1:
        coef = [ndimage.spline_filter(v, order=order, mode="mirror") for v in sino.values]
    else:
        coef = list(sino.values)
    frames = [sino.dirs.frame(i) for i in range(len(sino.dirs))]
    monos = [power(xi, m).comps for xi in sino.dirs.directions]
    pts = grid.points().reshape(n, -1)
    nc = num_components(n, m)
    out = np.empty((nc, pts.shape[1]))

    def one(a: int):
        x = pts[:, a:a + chunk]
        acc = np.zeros((nc, x.shape[1]))
        for i, xi in enumerate(sino.dirs.directions):
            # fractional sample index of the projected foot point
            idx = (frames[i] @ x + sino.S) / sino.ds
            val = ndimage.map_coordinates(coef[i], idx, order=order, mode="mirror",
                                          prefilter=False)
            val *= sino.dirs.weights[i]
            if k:
                val *= (xi @ x) ** k
            acc += monos[i][:, None] * val[None, :]
        out[:, a:a + chunk] = acc

    _map(one, range(0, pts.shape[1], chunk), threads)
    return GridField(grid, m, out.reshape((nc,) + grid.shape))


def normal_operator(phantom: Phantom, ks: Sequence[int] | int, geometry: Geometry,
                    threads: int = 1) -> list[GridField] | GridField:
    """``N^k f`` for each requested ``k`` as forward transform then adjoint."""
    single = isinstance(ks, int)
    geometry.validate()
    dirs, grid = geometry.directions(), geometry.grid()
    out = []
    for k in ([ks] if single else ks):
        sino = ray_transform(phantom, k, dirs, geometry.S, geometry.n_s,
                             geometry.t_max, geometry.n_t, threads)
        out.append(backproject(sino, grid, geometry.interp, threads))
    return out[0] if single else out
