"""Experiment configuration: a TOML file with one section per layer.

Geometry fields set to ``0`` are resolved from ``n``, ``L`` and ``N`` by
:meth:`GeometryConfig.resolve`; keeping them symbolic means overriding
``geometry.N`` rescales the derived sampling too.
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .recon import Taper
from .verify import SUITES, VerifyRanges
from .xray import INTERP_ORDERS, Geometry, Phantom

__all__ = [
    "PhantomConfig",
    "GeometryConfig",
    "TaperConfig",
    "VerifyConfig",
    "ExperimentConfig",
    "ConfigError",
    "loads",
    "dumps",
    "load",
    "dump",
    "bundled_names",
    "load_bundled",
    "resolve_config",
    "apply_override",
]

PHANTOM_KINDS = ("gaussian", "potential", "random")


class ConfigError(ValueError):
    pass


@dataclass
class PhantomConfig:
    """Gaussian-enveloped phantom terms.

    ``kind = "potential"`` builds ``d^order v`` with rank ``m - order``
    terms ``v``; ``kind = "random"`` draws ``count`` terms from the seed.
    Empty ``directions`` gives isotropic terms (even ``m`` only).
    """

    kind: str = "gaussian"
    centers: list[list[float]] = field(default_factory=lambda: [[0.3, -0.2]])
    widths: list[float] = field(default_factory=lambda: [0.4])
    amplitudes: list[float] = field(default_factory=lambda: [1.0])
    directions: list[list[float]] = field(default_factory=list)
    order: int = 1
    count: int = 3


@dataclass
class GeometryConfig:
    L: float = 4.0
    N: int = 128
    n_dirs: int = 0
    n_s: int = 0
    S: float = 0.0
    t_max: float = 0.0
    n_t: int = 0
    interp: str = "quintic"

    def resolve(self, n: int) -> Geometry:
        base = Geometry.default(n, float(self.L), int(self.N), interp=self.interp)
        chosen = {k: getattr(self, k) for k in ("n_dirs", "n_s", "S", "t_max", "n_t")
                  if getattr(self, k)}
        if "S" in chosen and not self.t_max:
            chosen["t_max"] = 2.0 * chosen["S"]
        return dataclasses.replace(base, **chosen)


@dataclass
class TaperConfig:
    inner_center: float = 0.875
    inner_width: float = 0.0375
    outer: bool = True
    outer_center: float = 0.75
    outer_width: float = 0.05

    def taper(self, outer: bool | None = None) -> Taper:
        use_outer = self.outer if outer is None else outer
        return Taper(self.inner_center, self.inner_width,
                     self.outer_center if use_outer else None, self.outer_width)


@dataclass
class VerifyConfig:
    m_max: int = 4
    n_set: list[int] = field(default_factory=lambda: [2, 3])
    degree: int = 3
    binomial_m_max: int = 25
    symbol_m_max: int = 5
    symbol_n_set: list[int] = field(default_factory=lambda: [2, 3, 4])
    symbol_trials: int = 20
    operator_trials: int = 5
    potential_m_max: int = 5
    homogeneous: bool = False
    suites: list[str] = field(default_factory=lambda: list(SUITES))
    allow_large: bool = False

    def ranges(self, seed: int) -> VerifyRanges:
        return VerifyRanges(self.m_max, tuple(self.n_set), self.degree, self.binomial_m_max,
                            self.symbol_m_max, tuple(self.symbol_n_set), self.symbol_trials,
                            self.operator_trials, self.potential_m_max, self.homogeneous,
                            seed, tuple(self.suites))


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    n: int = 2
    m: int = 0
    r: int = 0
    moments: list[int] = field(default_factory=lambda: [0])
    seed: int = 0
    interior: float = 0.5
    out: str = "out"
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    taper: TaperConfig = field(default_factory=TaperConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)

    # -- derived objects ---------------------------------------------------

    def geometry_spec(self) -> Geometry:
        return self.geometry.resolve(self.n)

    def build_phantom(self) -> Phantom:
        p, n, m = self.phantom, self.n, self.m
        if p.kind == "random":
            rng = np.random.default_rng([self.seed, 7])
            centers = rng.uniform(-0.25, 0.25, (p.count, n)) * self.geometry.L
            widths = rng.uniform(0.3, 0.6, p.count)
            amps = rng.uniform(0.5, 1.5, p.count) * rng.choice([-1.0, 1.0], p.count)
            dirs = rng.normal(size=(p.count, n))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            return Phantom.gaussian(n, m, centers, widths, amps, dirs)
        dirs = p.directions or None
        if p.kind == "potential":
            return Phantom.potential(n, m, p.order, p.centers, p.widths, p.amplitudes, dirs)
        return Phantom.gaussian(n, m, p.centers, p.widths, p.amplitudes, dirs)

    # -- validation --------------------------------------------------------

    def validate(self) -> "ExperimentConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.n in (2, 3), f"experiment.n must be 2 or 3, got {self.n}")
        need(self.m >= 0, f"experiment.m must be >= 0, got {self.m}")
        need(0 <= self.r <= self.m, f"experiment.r must satisfy 0 <= r <= m={self.m}, got {self.r}")
        need(len(self.moments) > 0, "experiment.moments must not be empty")
        bad = [k for k in self.moments if not 0 <= k <= self.m]
        need(not bad, f"experiment.moments {bad} outside 0..m={self.m}")
        need(len(set(self.moments)) == len(self.moments), "experiment.moments has duplicates")
        need(0 < self.interior <= 1, f"experiment.interior must be in (0, 1], got {self.interior}")

        g = self.geometry
        need(g.L > 0 and g.N > 0, "geometry.L and geometry.N must be positive")
        for name in ("n_dirs", "n_s", "S", "t_max", "n_t"):
            need(getattr(g, name) >= 0, f"geometry.{name} must be positive (0 selects the default)")
        need(g.interp in INTERP_ORDERS, f"geometry.interp must be one of {sorted(INTERP_ORDERS)}")
        geo = self.geometry_spec()
        need(geo.S >= np.sqrt(self.n) * g.L,
             f"geometry.S={geo.S:g} is too small; lines through the grid need S >= {np.sqrt(self.n) * g.L:g}")

        p = self.phantom
        need(p.kind in PHANTOM_KINDS, f"phantom.kind must be one of {PHANTOM_KINDS}, got {p.kind!r}")
        if p.kind == "random":
            need(p.count > 0, "phantom.count must be positive")
        else:
            t = len(p.centers)
            need(t > 0, "phantom.centers must not be empty")
            need(len(p.widths) == t and len(p.amplitudes) == t,
                 "phantom.centers, widths and amplitudes must have equal lengths")
            need(all(len(c) == self.n for c in p.centers), f"phantom.centers must have {self.n} coordinates")
            need(all(w > 0 for w in p.widths), "phantom.widths must be positive")
            if p.directions:
                need(len(p.directions) == t, "phantom.directions must have one entry per term")
                need(all(len(d) == self.n for d in p.directions),
                     f"phantom.directions must have {self.n} coordinates")
            rank = self.m - p.order if p.kind == "potential" else self.m
            if p.kind == "potential":
                need(1 <= p.order <= self.m, f"phantom.order must be in 1..m={self.m}")
            need(p.directions or rank % 2 == 0,
                 f"odd tensor rank {rank} needs phantom.directions")

        t = self.taper
        need(t.inner_width > 0 and t.outer_width > 0, "taper widths must be positive")
        need(0 < t.inner_center <= 1 and 0 < t.outer_center <= 1, "taper centers must be in (0, 1]")

        v = self.verify
        need(v.m_max >= 1 and v.degree >= 0, "verify.m_max >= 1 and verify.degree >= 0 required")
        need(v.m_max <= 6 or v.allow_large,
             f"verify.m_max={v.m_max} exceeds 6; set verify.allow_large = true to run it anyway")
        need(set(v.suites) <= set(SUITES), f"verify.suites must be drawn from {SUITES}")
        return self


SECTIONS = {"phantom": PhantomConfig, "geometry": GeometryConfig, "taper": TaperConfig,
            "verify": VerifyConfig}
TOP = [f.name for f in dataclasses.fields(ExperimentConfig) if f.name not in SECTIONS]


def _coerce(cls, name: str, value, where: str):
    ftype = {f.name: f.type for f in dataclasses.fields(cls)}.get(name)
    if ftype is None:
        raise ConfigError(f"unknown key {where}.{name}")
    if ftype == "float" and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if ftype == "int" and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{where}.{name} must be an integer, got {value!r}")
    if ftype == "list[list[float]]":
        return [[float(x) for x in row] for row in value]
    if ftype == "list[float]":
        return [float(x) for x in value]
    return value


def from_dict(d: dict) -> ExperimentConfig:
    top = dict(d.get("experiment", {}))
    unknown = set(d) - {"experiment", *SECTIONS}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    kwargs = {k: _coerce(ExperimentConfig, k, v, "experiment") for k, v in top.items()}
    for k in kwargs:
        if k in SECTIONS:
            raise ConfigError(f"{k} is a section, not an experiment key")
    for sec, cls in SECTIONS.items():
        body = d.get(sec, {})
        kwargs[sec] = cls(**{k: _coerce(cls, k, v, sec) for k, v in body.items()})
    return ExperimentConfig(**kwargs)


def to_dict(cfg: ExperimentConfig) -> dict:
    out = {"experiment": {k: getattr(cfg, k) for k in TOP}}
    for sec in SECTIONS:
        out[sec] = dataclasses.asdict(getattr(cfg, sec))
    return out


def loads(text: str) -> ExperimentConfig:
    try:
        return from_dict(tomllib.loads(text))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def dumps(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def load(path) -> ExperimentConfig:
    return loads(Path(path).read_text())


def dump(cfg: ExperimentConfig, path):
    Path(path).write_text(dumps(cfg))


def bundled_names() -> list[str]:
    root = resources.files("tensortomo") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def load_bundled(name: str) -> ExperimentConfig:
    path = resources.files("tensortomo") / "configs" / f"{name}.toml"
    if not path.is_file():
        raise FileNotFoundError(f"no bundled config {name!r}; available: {', '.join(bundled_names())}")
    return loads(path.read_text())


def resolve_config(spec: str | None) -> ExperimentConfig:
    """Load a config from a path or a bundled name; ``None`` gives defaults."""
    if spec is None:
        return ExperimentConfig()
    p = Path(spec)
    if p.suffix == ".toml" or p.exists():
        return load(p)
    return load_bundled(spec)


def apply_override(cfg: ExperimentConfig, item: str) -> ExperimentConfig:
    """Apply ``section.key=value`` (TOML literal, bare strings allowed).

    Keys without a section refer to ``[experiment]``.
    """
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not KEY=VALUE")
    key, raw = (s.strip() for s in item.split("=", 1))
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    sec, _, name = key.rpartition(".")
    if sec in ("", "experiment"):
        if name in SECTIONS:
            raise ConfigError(f"cannot override whole section {name!r}")
        target, cls, where = cfg, ExperimentConfig, "experiment"
    elif sec in SECTIONS:
        target, cls, where = getattr(cfg, sec), SECTIONS[sec], sec
    else:
        raise ConfigError(f"unknown section in override {key!r}")
    setattr(target, name, _coerce(cls, name, value, where))
    return cfg
