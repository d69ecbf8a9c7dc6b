"""Acceptance criteria, each run at its stated tolerance on the bundled configs.

Every test prints one ``criterion N PASS/FAIL`` line; the lines are repeated
in the terminal summary.  Criteria 5 to 8 record payload digests of a first run
that criterion 10 compares against a second run.
"""

from __future__ import annotations

import json
import time

import pytest

from tensortomo import verify
from tensortomo.cli import main
from tensortomo.config import load_bundled
from tensortomo.container import payload_digest, write_container
from tensortomo.verify import VerifyRanges
from tensortomo.xray import Sinogram, backproject, ray_transform

import oracles

THREADS = 4
_DIGESTS: dict[str, dict[str, str]] = {}


def run_cli(command, config, out, *extra):
    """Run one CLI command; return its report and the payload digests it wrote."""
    args = [command, "--config", config, "--out", str(out), "--threads", str(THREADS), *extra]
    code = main(args)
    assert code == 0, f"{' '.join(args)} exited {code}"
    rep = json.loads((out / f"report_{command}.json").read_text())
    digests = {p.name: payload_digest(p) for p in sorted(out.glob("*.tt"))}
    return rep, digests


def sweep(suite, **kw):
    started = time.perf_counter()
    recs = list(verify.run(VerifyRanges(suites=(suite,), **kw)))
    bad = [r for r in recs if r["status"] != "exact-zero"]
    return recs, bad, time.perf_counter() - started


# -- exact identities --------------------------------------------------------

def test_criterion_1_binomial_identity(acceptance):
    recs, bad, dt = sweep("binomial", binomial_m_max=25)
    cells = sum(r["cells"] for r in recs)
    ok = not bad and len(recs) == 325 and dt <= 5.0
    acceptance(1, "combinatorial identity m <= 25", ok,
               f"{cells} (m, r, p, q) cells in {len(recs)} records, {len(bad)} nonzero, {dt:.2f} s")
    assert ok


def test_criterion_2_symbol(acceptance):
    recs, bad, dt = sweep("symbol", symbol_m_max=5, symbol_n_set=(2, 3, 4), symbol_trials=20)
    ok = not bad and len(recs) == 3 * 15 and dt <= 30.0
    acceptance(2, "symbol factorization", ok,
               f"{len(recs)} cells x 20 trials, {len(bad)} nonzero, {dt:.2f} s")
    assert ok


def test_criterion_3_operator(acceptance):
    recs, bad, dt = sweep("operator", m_max=4, n_set=(2, 3), degree=3, operator_trials=5)
    ok = not bad and len(recs) == 2 * 20 and dt <= 60.0
    acceptance(3, "operator annihilation", ok,
               f"{len(recs)} (n, m, k, r) cells x 5 trials, {len(bad)} nonzero, {dt:.2f} s")
    assert ok


def test_criterion_4_potential(acceptance):
    recs, bad, dt = sweep("potential", potential_m_max=5, n_set=(2, 3), degree=3)
    ok = not bad and len(recs) == 2 * 15 and dt <= 10.0
    acceptance(4, "potential annihilation", ok,
               f"{len(recs)} (n, m, r) cells, {len(bad)} nonzero, {dt:.2f} s")
    assert ok


# -- numerical pipeline ------------------------------------------------------

def forward_oracle(out):
    cfg = load_bundled("forward_gaussian_m0")
    assert cfg.geometry.t_max == 8.0 and cfg.geometry.n_t >= 200
    started = time.perf_counter()
    rep, digests = run_cli("forward", "forward_gaussian_m0", out)
    return rep["moments"]["0"]["closed_form_rel_error"], time.perf_counter() - started, digests


def test_criterion_5_forward_oracle(acceptance, tmp_path):
    err, dt, digests = forward_oracle(tmp_path)
    _DIGESTS["5"] = digests
    ok = err <= 1e-10 and dt <= 5.0
    acceptance(5, "Gaussian sinogram oracle", ok, f"relative error {err:.2e}, {dt:.2f} s")
    assert ok


def adjointness(out):
    """<I^k f, g> against <f, (I^k)^* g> for the bundled random rank-2 phantom."""
    cfg = load_bundled("adjoint_m2").validate()
    geo = cfg.geometry_spec()
    grid, dirs = geo.grid(), geo.directions()
    ph = cfg.build_phantom()
    f = ph.sample(grid)
    errs, digests = [], {}
    for k in (0, 1, 2):
        If = ray_transform(ph, k, dirs, geo.S, geo.n_s, geo.t_max, geo.n_t, THREADS)
        g = Sinogram(k, cfg.m, dirs, geo.S, geo.n_s,
                     oracles.smooth_sinogram_values(dirs, If.offsets(), cfg.seed + k))
        Bg = backproject(g, grid, geo.interp, THREADS)
        lhs, rhs = If.inner(g), f.inner(Bg)
        errs.append(abs(lhs - rhs) / abs(lhs))
        digests[f"sino_k{k}"] = write_container(out / f"sino_k{k}.tt", If)
        digests[f"adjoint_k{k}"] = write_container(out / f"adjoint_k{k}.tt", Bg)
    return errs, digests, (geo.N, dirs.directions.shape[0])


def test_criterion_6_adjointness(acceptance, tmp_path):
    started = time.perf_counter()
    errs, digests, (N, n_dirs) = adjointness(tmp_path)
    dt = time.perf_counter() - started
    _DIGESTS["6"] = digests
    ok = max(errs) <= 1e-3 and dt <= 120.0 and (N, n_dirs) == (128, 256)
    acceptance(6, "transform adjointness k = 0, 1, 2", ok,
               f"discrepancies {', '.join(f'{e:.1e}' for e in errs)} at N={N}, "
               f"{n_dirs} directions, {dt:.1f} s")
    assert ok


def round_trip(out):
    results, digests = {}, {}
    for name in ("invert_m0", "invert_m1"):
        rep, d = run_cli("invert", name, out / name)
        results[name] = (rep["interior_relative_l2"], list(rep["component_relative_l2"].values()))
        digests.update({f"{name}/{k}": v for k, v in d.items()})
    return results, digests


def test_criterion_7_round_trip(acceptance, tmp_path):
    started = time.perf_counter()
    results, digests = round_trip(tmp_path)
    dt = time.perf_counter() - started
    _DIGESTS["7"] = digests
    m0 = results["invert_m0"][0]
    m1 = results["invert_m1"][1]
    ok = m0 <= 0.10 and max(m1) <= 0.15 and dt <= 600.0
    acceptance(7, "full inversion round trip", ok,
               f"m=0 error {m0:.4f}, m=1 component errors "
               f"{', '.join(f'{e:.4f}' for e in m1)}, {dt:.1f} s")
    assert ok


def saint_venant(out):
    rows, digests = {}, {}
    for name in ("sv_m2_r0", "sv_m2_r1", "potential_m2_r0", "potential_m2_r1"):
        rep, d = run_cli("sv", name, out / name)
        rows[name] = rep
        digests.update({f"{name}/{k}": v for k, v in d.items()})
    return rows, digests


def test_criterion_8_saint_venant(acceptance, tmp_path):
    started = time.perf_counter()
    rows, digests = saint_venant(tmp_path)
    dt = time.perf_counter() - started
    _DIGESTS["8"] = digests
    full = [rows[f"sv_m2_r{r}"]["relative_to_full_inversion"] for r in (0, 1)]
    pot = [rows[f"potential_m2_r{r}"]["relative_output_norm"] for r in (0, 1)]
    ok = max(full) <= 0.02 and max(pot) <= 1e-2 and dt <= 900.0
    acceptance(8, "partial-data Saint Venant recovery", ok,
               f"vs full inversion r=0 {full[0]:.1e}, r=1 {full[1]:.1e}; "
               f"potential / generic r=0 {pot[0]:.1e}, r=1 {pot[1]:.1e}; {dt:.1f} s")
    assert ok


def test_criterion_9_convergence(acceptance, tmp_path):
    started = time.perf_counter()
    series = {}
    for name in ("invert_m0", "invert_m1"):
        errs = []
        for N in (64, 128, 256):
            rep, _ = run_cli("invert", name, tmp_path / f"{name}_N{N}", "--override", f"geometry.N={N}")
            errs.append(rep["interior_relative_l2"])
        series[name] = errs
    dt = time.perf_counter() - started
    ok = all(b <= 1.1 * a for errs in series.values() for a, b in zip(errs, errs[1:])) and dt <= 1800.0
    acceptance(9, "grid refinement N = 64, 128, 256", ok,
               "; ".join(f"{name} {' > '.join(f'{e:.4f}' for e in errs)}"
                         for name, errs in series.items()) + f"; {dt:.1f} s")
    assert ok


def test_criterion_10_determinism(acceptance, tmp_path):
    missing = [c for c in ("5", "6", "7", "8") if c not in _DIGESTS]
    if missing:
        pytest.skip(f"first runs of criteria {missing} not in this session")
    again = {"5": forward_oracle(tmp_path / "c5")[2],
             "6": adjointness(tmp_path)[1],
             "7": round_trip(tmp_path / "c7")[1],
             "8": saint_venant(tmp_path / "c8")[1]}
    diff = [f"{c}:{k}" for c in again for k in _DIGESTS[c]
            if again[c].get(k) != _DIGESTS[c][k]] + [f"{c}:{k}" for c in again
                                                      for k in again[c] if k not in _DIGESTS[c]]
    count = sum(len(d) for d in again.values())
    ok = not diff and count > 0
    acceptance(10, "bit-identical payloads over two runs", ok,
               f"{count} payload digests compared, {len(diff)} differ"
               + (f" ({', '.join(diff[:4])})" if diff else ""))
    assert ok
