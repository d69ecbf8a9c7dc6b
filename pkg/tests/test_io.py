from __future__ import annotations

import dataclasses
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tensortomo import config as cfgmod
from tensortomo.config import ConfigError, ExperimentConfig, apply_override, bundled_names, load_bundled
from tensortomo.container import (
    MAGIC,
    payload_digest,
    read_container,
    read_pgm,
    write_container,
    write_csv,
    write_pgm,
)
from tensortomo.xray import BiSymGridField, DirectionSet, GridField, GridSpec, Sinogram


# -- container ---------------------------------------------------------------

def test_grid_field_roundtrip(tmp_path):
    grid = GridSpec(2, 8, 1.5)
    f = GridField(grid, 2, np.random.default_rng(0).normal(size=(3, 8, 8)))
    digest = write_container(tmp_path / "f.tt", f, {"note": "x"})
    g, head = read_container(tmp_path / "f.tt")
    assert np.array_equal(g.comps, f.comps) and g.grid == grid and g.m == 2
    assert head["index_order"] == [[1, 1], [1, 2], [2, 2]]
    assert head["endianness"] == "little" and head["meta"] == {"note": "x"}
    assert payload_digest(tmp_path / "f.tt") == digest


def test_container_layout_is_documented(tmp_path):
    grid = GridSpec(2, 4, 1.0)
    f = GridField(grid, 0, np.arange(16.0).reshape(1, 4, 4))
    write_container(tmp_path / "f.tt", f)
    raw = (tmp_path / "f.tt").read_bytes()
    assert raw[:8] == MAGIC
    (hlen,) = struct.unpack("<Q", raw[8:16])
    head = json.loads(raw[16:16 + hlen])
    assert head["shape"] == [1, 4, 4] and head["order"] == "C"
    payload = np.frombuffer(raw[16 + hlen:], dtype="<f8")
    assert np.array_equal(payload, np.arange(16.0))


def test_sinogram_and_bisym_roundtrip(tmp_path):
    dirs = DirectionSet.circle(5)
    s = Sinogram(2, 1, dirs, 3.0, 7, np.random.default_rng(1).normal(size=(5, 7)))
    write_container(tmp_path / "s.tt", s)
    t, head = read_container(tmp_path / "s.tt")
    assert (t.k, t.m, t.S, t.n_s) == (2, 1, 3.0, 7)
    assert np.array_equal(t.values, s.values) and np.array_equal(t.dirs.weights, dirs.weights)
    grid = GridSpec(2, 4, 1.0)
    W = BiSymGridField(grid, 1, 2, np.ones((2, 3, 4, 4)))
    write_container(tmp_path / "w.tt", W)
    V, head = read_container(tmp_path / "w.tt")
    assert (V.p, V.q) == (1, 2) and head["index_order"][0] == [[1], [2]]


def test_container_rejects_bad_files(tmp_path):
    (tmp_path / "junk").write_bytes(b"not a container")
    with pytest.raises(ValueError):
        read_container(tmp_path / "junk")
    f = GridField(GridSpec(2, 4, 1.0), 0, np.zeros((1, 4, 4)))
    write_container(tmp_path / "f.tt", f)
    raw = (tmp_path / "f.tt").read_bytes()
    (tmp_path / "cut.tt").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="payload"):
        read_container(tmp_path / "cut.tt")
    with pytest.raises(TypeError):
        write_container(tmp_path / "x.tt", object())


def test_csv_and_pgm(tmp_path):
    a = np.arange(12.0).reshape(3, 4)
    write_csv(tmp_path / "a.csv", a)
    assert np.array_equal(np.loadtxt(tmp_path / "a.csv", delimiter=","), a)
    write_csv(tmp_path / "b.csv", np.ones((4, 4)), axis=np.arange(4.0))
    rows = (tmp_path / "b.csv").read_text().splitlines()
    assert rows[0].startswith(",0.0") and len(rows) == 5
    write_pgm(tmp_path / "a.pgm", a)
    img = read_pgm(tmp_path / "a.pgm")
    assert img.shape == (4, 3) and img.max() == 255 and img.min() == 0
    # second grid axis points up: last column of a is the top row
    assert img[0, -1] == 255
    write_pgm(tmp_path / "c.pgm", np.zeros((2, 2, 3)))
    assert read_pgm(tmp_path / "c.pgm").shape == (2, 2)


# -- config ------------------------------------------------------------------

def test_bundled_configs_validate_and_roundtrip():
    names = bundled_names()
    for want in ("verify_default", "verify_binomial25", "forward_gaussian_m0", "adjoint_m2",
                 "invert_m0", "invert_m1", "sv_m2_r0", "sv_m2_r1", "potential_m2_r0",
                 "potential_m2_r1", "forward_parity_m2"):
        assert want in names
    for name in names:
        cfg = load_bundled(name).validate()
        assert cfgmod.loads(cfgmod.dumps(cfg)) == cfg


def test_geometry_resolution():
    cfg = ExperimentConfig()
    geo = cfg.geometry_spec()
    assert (geo.N, geo.n_s, geo.n_t, geo.n_dirs) == (128, 256, 512, 360)
    apply_override(cfg, "geometry.N=64")
    apply_override(cfg, "geometry.S=9")
    geo = cfg.geometry_spec()
    assert (geo.N, geo.n_s, geo.S, geo.t_max) == (64, 128, 9.0, 18.0)


def test_overrides():
    cfg = ExperimentConfig()
    apply_override(cfg, "m=2")
    apply_override(cfg, "experiment.moments=[0, 1, 2]")
    apply_override(cfg, "phantom.kind=potential")
    apply_override(cfg, "taper.outer=false")
    assert cfg.m == 2 and cfg.moments == [0, 1, 2] and cfg.phantom.kind == "potential"
    assert cfg.taper.taper().outer_center is None
    for bad in ("m", "nosuch.key=1", "geometry.bogus=1", "geometry.N=1.5", "phantom=1"):
        with pytest.raises(ConfigError):
            apply_override(cfg, bad)


@pytest.mark.parametrize("override,match", [
    ("r=3", "r must"),
    ("moments=[0, 5]", "moments"),
    ("geometry.L=-1", "positive"),
    ("geometry.S=1.0", "too small"),
    ("geometry.interp='sinc'", "interp"),
    ("phantom.kind='blob'", "kind"),
    ("phantom.widths=[0.4, 0.5]", "equal lengths"),
    ("verify.m_max=7", "allow_large"),
    ("m=1", "odd tensor rank"),
])
def test_validation_messages(override, match):
    cfg = ExperimentConfig()
    apply_override(cfg, override)
    with pytest.raises(ConfigError, match=match):
        cfg.validate()


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        cfgmod.loads("[experiment]\nbogus = 1\n")
    with pytest.raises(ConfigError):
        cfgmod.loads("[extra]\nx = 1\n")
    with pytest.raises(ConfigError):
        cfgmod.loads("not toml [")


finite = st.floats(min_value=0.01, max_value=100, allow_nan=False)


@st.composite
def configs(draw):
    m = draw(st.integers(0, 4))
    n = draw(st.sampled_from([2, 3]))
    terms = draw(st.integers(1, 3))
    moments = draw(st.lists(st.integers(0, m), min_size=1, max_size=m + 1, unique=True))
    phantom = cfgmod.PhantomConfig(
        kind=draw(st.sampled_from(["gaussian", "random"])),
        centers=[[draw(st.floats(-2, 2)) for _ in range(n)] for _ in range(terms)],
        widths=[draw(finite) for _ in range(terms)],
        amplitudes=[draw(st.floats(-5, 5)) for _ in range(terms)],
        directions=[[draw(st.floats(-1, 1)) for _ in range(n)] for _ in range(terms)],
        count=draw(st.integers(1, 5)))
    geometry = cfgmod.GeometryConfig(L=draw(finite), N=draw(st.integers(8, 512)),
                                     n_dirs=draw(st.integers(0, 720)),
                                     interp=draw(st.sampled_from(["linear", "cubic", "quintic"])))
    taper = cfgmod.TaperConfig(outer=draw(st.booleans()), inner_center=draw(st.floats(0.5, 1.0)))
    verify = cfgmod.VerifyConfig(m_max=draw(st.integers(1, 6)), n_set=draw(st.lists(st.integers(2, 4), min_size=1)),
                                 homogeneous=draw(st.booleans()))
    return ExperimentConfig(name=draw(st.text(min_size=1, max_size=12)), n=n, m=m,
                            r=draw(st.integers(0, m)), moments=moments,
                            seed=draw(st.integers(0, 2 ** 31)), interior=draw(st.floats(0.1, 1.0)),
                            out=draw(st.text(min_size=1, max_size=12)), phantom=phantom,
                            geometry=geometry, taper=taper, verify=verify)


@settings(max_examples=60, deadline=None)
@given(configs())
def test_config_roundtrip_property(cfg):
    cfg.validate()
    back = cfgmod.loads(cfgmod.dumps(cfg))
    assert back == cfg
    assert dataclasses.asdict(back) == dataclasses.asdict(cfg)


def test_dump_and_load_file(tmp_path):
    cfg = load_bundled("sv_m2_r1")
    cfgmod.dump(cfg, tmp_path / "c.toml")
    assert cfgmod.load(tmp_path / "c.toml") == cfg
    assert cfgmod.resolve_config(str(tmp_path / "c.toml")) == cfg
    assert cfgmod.resolve_config("sv_m2_r1") == cfg
    with pytest.raises(FileNotFoundError):
        cfgmod.resolve_config("no_such_config")
