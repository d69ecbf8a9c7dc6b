"""``tensortomo`` command line.

Every command reads an experiment config (a path or a bundled name), writes
its artifacts into the output directory and a ``report_<command>.json``
summary.  Exit codes: 0 success, 1 verification failure, 2 usage or config
error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__, verify
from .config import ConfigError, ExperimentConfig, apply_override, bundled_names, dump, resolve_config
from .container import read_container, write_container, write_csv, write_pgm
from .recon import (
    SpectralPlan,
    component_errors,
    invert_full,
    invert_partial_sv,
    relative_error,
    saint_venant_grid,
)
from .symtensor import enumerate_indices
from .xray import GridField, Phantom, backproject, ray_transform

log = logging.getLogger("tensortomo")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
LOCK_NAME = ".tensortomo.lock"


class InputError(OSError):
    """Missing or unreadable input artifact."""


@contextmanager
def output_lock(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OSError(f"output directory {out} is locked by another run "
                      f"(delete {lock} if that run is gone)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out
    finally:
        lock.unlink(missing_ok=True)


def _index_label(idx) -> str:
    return "".join(str(i) for i in idx) or "scalar"


def _write_report(out: Path, command: str, cfg: ExperimentConfig, body: dict, started: float) -> dict:
    geo = cfg.geometry_spec()
    report = {"command": command, "experiment": cfg.name, "version": __version__,
              "n": cfg.n, "m": cfg.m, "r": cfg.r, "seed": cfg.seed,
              "geometry": {k: getattr(geo, k) for k in
                           ("L", "N", "n_dirs", "n_s", "S", "t_max", "n_t", "interp")},
              "runtime_s": round(time.perf_counter() - started, 3), **body}
    (out / f"report_{command}.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def _images(out: Path, stem: str, field: GridField):
    for idx, comp in zip(enumerate_indices(field.n, field.m), field.comps):
        write_pgm(out / f"{stem}_{_index_label(idx)}.pgm", comp)


def _interior(cfg: ExperimentConfig):
    return cfg.geometry_spec().grid().interior(cfg.interior)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_verify(cfg: ExperimentConfig, out: Path, fault: bool = False) -> tuple[int, dict]:
    started = time.perf_counter()
    ranges = cfg.verify.ranges(cfg.seed)
    path = out / "verify.jsonl"
    with open(path, "w") as fh:
        count, bad = verify.write_jsonl(verify.run(ranges, fault=fault), fh)
    body = {"cells": count, "passed": bad is None, "first_violation": bad,
            "fault_injected": fault, "records": path.name}
    report = _write_report(out, "verify", cfg, body, started)
    if bad is None:
        print(f"verify: {count} cells, all exact-zero ({report['runtime_s']:.1f} s)")
        return EXIT_OK, report
    print(f"verify: VIOLATED {json.dumps(bad, sort_keys=True)}")
    return EXIT_VERIFY, report


def cmd_phantom(cfg: ExperimentConfig, out: Path) -> tuple[int, dict]:
    started = time.perf_counter()
    ph = cfg.build_phantom()
    grid = cfg.geometry_spec().grid()
    field = ph.sample(grid)
    (out / "phantom.json").write_text(json.dumps(ph.to_dict(), indent=2) + "\n")
    digest = write_container(out / "phantom.tt", field, {"experiment": cfg.name})
    _images(out, "phantom", field)
    write_csv(out / "phantom_slice.csv", field.comps[0], grid.axis())
    body = {"artifacts": {"phantom.tt": digest},
            "max_abs": float(np.abs(field.comps).max()),
            "interior_norm": field.norm(_interior(cfg))}
    return EXIT_OK, _write_report(out, "phantom", cfg, body, started)


def _sinograms(cfg: ExperimentConfig, threads: int):
    ph, geo = cfg.build_phantom(), cfg.geometry_spec()
    dirs = geo.directions()
    for k in cfg.moments:
        yield k, ph, ray_transform(ph, k, dirs, geo.S, geo.n_s, geo.t_max, geo.n_t, threads)


def cmd_forward(cfg: ExperimentConfig, out: Path, threads: int = 1) -> tuple[int, dict]:
    started = time.perf_counter()
    moments, digests = {}, {}
    for k, ph, sino in _sinograms(cfg, threads):
        name = f"sino_k{k}.tt"
        digests[name] = write_container(out / name, sino, {"experiment": cfg.name})
        entry = {"max_abs": float(np.abs(sino.values).max()),
                 "boundary_ratio": sino.boundary_ratio()}
        if ph.has_closed_form:
            exact = np.stack([ph.closed_form_ray(k, sino.foot_points(i), d)
                              for i, d in enumerate(sino.dirs.directions)])
            scale = np.abs(exact).max()
            entry["closed_form_abs_error"] = float(np.abs(sino.values - exact).max())
            # odd moments of even phantoms vanish; no relative error then
            entry["closed_form_rel_error"] = (entry["closed_form_abs_error"] / scale
                                              if scale > 1e-10 else None)
        moments[str(k)] = entry
        print(f"forward k={k}: max |I f| = {entry['max_abs']:.3e}"
              + (f", closed-form error {entry['closed_form_abs_error']:.3e}"
                 if "closed_form_abs_error" in entry else ""))
    body = {"moments": moments, "artifacts": digests}
    return EXIT_OK, _write_report(out, "forward", cfg, body, started)


def _compute_normals(cfg: ExperimentConfig, ks, threads: int) -> list[GridField]:
    ph, geo = cfg.build_phantom(), cfg.geometry_spec()
    dirs, grid = geo.directions(), geo.grid()
    out = []
    for k in ks:
        sino = ray_transform(ph, k, dirs, geo.S, geo.n_s, geo.t_max, geo.n_t, threads)
        out.append(backproject(sino, grid, geo.interp, threads))
    return out


def cmd_normal(cfg: ExperimentConfig, out: Path, threads: int = 1) -> tuple[int, dict]:
    started = time.perf_counter()
    digests = {}
    for k, Nk in zip(cfg.moments, _compute_normals(cfg, cfg.moments, threads)):
        name = f"normal_k{k}.tt"
        digests[name] = write_container(out / name, Nk, {"experiment": cfg.name, "k": k})
    return EXIT_OK, _write_report(out, "normal", cfg, {"artifacts": digests}, started)


def _load_normals(cfg: ExperimentConfig, ks, source: Path | None, threads: int) -> list[GridField]:
    if source is None:
        return _compute_normals(cfg, ks, threads)
    grid = cfg.geometry_spec().grid()
    fields = []
    for k in ks:
        path = source / f"normal_k{k}.tt"
        if not path.is_file():
            raise InputError(f"missing input {path}; run 'tensortomo normal' with moments "
                             f"covering k = {k} first")
        f, head = read_container(path)
        if not isinstance(f, GridField) or f.grid != grid or f.m != cfg.m:
            raise ConfigError(f"{path} holds rank {head.get('m')} data on N={head.get('N')}, "
                              f"L={head.get('L')}; config expects rank {cfg.m} on N={grid.N}, L={grid.L}")
        fields.append(f)
    return fields


def cmd_invert(cfg: ExperimentConfig, out: Path, threads: int = 1,
               source: Path | None = None) -> tuple[int, dict]:
    started = time.perf_counter()
    ks = list(range(cfg.m + 1))
    if not set(ks) <= set(cfg.moments):
        raise ConfigError(f"full inversion needs moments 0..{cfg.m}; config has {cfg.moments}")
    normals = _load_normals(cfg, ks, source, threads)
    rec = invert_full(normals, cfg.taper.taper())
    digest = write_container(out / "recon.tt", rec, {"experiment": cfg.name})
    _images(out, "recon", rec)
    truth = cfg.build_phantom().sample(rec.grid)
    mask = _interior(cfg)
    errs = component_errors(rec, truth, mask)
    body = {"interior_fraction": cfg.interior,
            "interior_relative_l2": relative_error(rec, truth, mask),
            "component_relative_l2": {_index_label(i): e
                                      for i, e in zip(enumerate_indices(cfg.n, cfg.m), errs)},
            "artifacts": {"recon.tt": digest}}
    with open(out / "errors_invert.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "interior_relative_l2"])
        for label, e in body["component_relative_l2"].items():
            w.writerow([label, repr(float(e))])
    print(f"invert: interior relative L2 error {body['interior_relative_l2']:.4f} "
          f"(components {', '.join(f'{e:.4f}' for e in errs)})")
    return EXIT_OK, _write_report(out, "invert", cfg, body, started)


def _generic_reference(cfg: ExperimentConfig, phantom: GridField) -> GridField:
    """Non-potential rank-``m`` Gaussian field with the phantom's peak magnitude."""
    p, n, m = cfg.phantom, cfg.n, cfg.m
    centers = p.centers if p.kind != "random" else [[0.0] * n]
    widths = p.widths if p.kind != "random" else [0.5]
    dirs = [[1.0] + [0.5] * (n - 1)] * len(centers)
    ref = Phantom.gaussian(n, m, centers, widths, [1.0] * len(centers), dirs).sample(phantom.grid)
    return ref * (np.abs(phantom.comps).max() / np.abs(ref.comps).max())


def cmd_sv(cfg: ExperimentConfig, out: Path, threads: int = 1,
           source: Path | None = None) -> tuple[int, dict]:
    started = time.perf_counter()
    r = cfg.r
    ks = list(range(r + 1))
    if not set(ks) <= set(cfg.moments):
        raise ConfigError(f"Saint Venant recovery with r={r} needs moments 0..{r}; config has {cfg.moments}")
    full = set(range(cfg.m + 1)) <= set(cfg.moments)
    normals = _load_normals(cfg, list(range(cfg.m + 1)) if full else ks, source, threads)
    grid = normals[0].grid
    plan = SpectralPlan(grid)
    taper = cfg.taper.taper()
    W = invert_partial_sv(normals[:r + 1], r, cfg.m, taper, plan)
    digest = write_container(out / "sv.tt", W, {"experiment": cfg.name, "r": r})
    mask = _interior(cfg)
    phantom = cfg.build_phantom().sample(grid)
    truth = saint_venant_grid(phantom, r, plan)
    generic = saint_venant_grid(_generic_reference(cfg, phantom), r, plan)
    body = {"interior_fraction": cfg.interior, "output_norm": W.norm(mask),
            "phantom_sv_norm": truth.norm(mask), "generic_reference_norm": generic.norm(mask),
            "artifacts": {"sv.tt": digest}}
    body["relative_output_norm"] = body["output_norm"] / body["generic_reference_norm"]
    # a potential phantom has a vanishing Saint Venant image; no relative error then
    significant = body["phantom_sv_norm"] > 1e-6 * body["generic_reference_norm"]
    body["relative_to_phantom_sv"] = relative_error(W, truth, mask) if significant else None
    if full:
        ref = saint_venant_grid(invert_full(normals, taper, plan), r, plan)
        body["full_inversion_norm"] = ref.norm(mask)
        body["relative_to_full_inversion"] = (relative_error(W, ref, mask)
                                              if body["full_inversion_norm"] > 0 else None)
    with open(out / "errors_sv.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for key in ("output_norm", "phantom_sv_norm", "generic_reference_norm",
                    "relative_output_norm", "relative_to_phantom_sv",
                    "full_inversion_norm", "relative_to_full_inversion"):
            if key in body:
                w.writerow([key, "" if body[key] is None else repr(float(body[key]))])
    print(f"sv r={r}: interior output norm {body['output_norm']:.4e} "
          f"({body['relative_output_norm']:.2e} of a generic field of equal magnitude), "
          f"phantom Saint Venant norm {body['phantom_sv_norm']:.4e}"
          + (f", vs full inversion {body['relative_to_full_inversion']:.2e}"
             if body.get("relative_to_full_inversion") is not None else ""))
    return EXIT_OK, _write_report(out, "sv", cfg, body, started)


def cmd_report(cfg: ExperimentConfig, out: Path) -> tuple[int, dict]:
    """Collect every ``report_*.json`` under the output directory."""
    started = time.perf_counter()
    rows = []
    for path in sorted(out.rglob("report_*.json")):
        if path.name == "report_report.json":
            continue
        rep = json.loads(path.read_text())
        for key in ("interior_relative_l2", "output_norm", "relative_output_norm",
                    "relative_to_phantom_sv",
                    "relative_to_full_inversion", "cells", "runtime_s"):
            if rep.get(key) is not None:
                rows.append([rep.get("experiment"), rep.get("command"), key, rep[key]])
        for label, e in sorted(rep.get("component_relative_l2", {}).items()):
            rows.append([rep.get("experiment"), rep.get("command"), f"component_{label}", e])
    if not rows:
        raise InputError(f"no report_*.json files under {out}; run an experiment command first")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["experiment", "command", "metric", "value"])
        w.writerows(rows)
    for row in rows:
        print(",".join(str(v) for v in row))
    return EXIT_OK, _write_report(out, "report", cfg, {"rows": len(rows)}, started)


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------

COMMANDS = {"verify": cmd_verify, "phantom": cmd_phantom, "forward": cmd_forward,
            "normal": cmd_normal, "invert": cmd_invert, "sv": cmd_sv, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file or bundled name (see --list-configs)")
    common.add_argument("--out", help="output directory (default: experiment.out)")
    common.add_argument("--seed", type=int, help="override experiment.seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for transforms")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a config value, e.g. geometry.N=256 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tensortomo", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--list-configs", action="store_true", help="print bundled config names")
    sub = parser.add_subparsers(dest="command")
    p = sub.add_parser("verify", parents=[common], help="exact identity sweeps")
    p.add_argument("--m-max", type=int, help="operator-sweep rank bound")
    p.add_argument("--n-set", type=int, nargs="+", help="dimensions for operator/potential sweeps")
    p.add_argument("--degree", type=int, help="polynomial degree for operator sweeps")
    p.add_argument("--suite", action="append", choices=verify.SUITES, help="restrict to suites")
    p.add_argument("--fault", action="store_true", help="flip one binomial sign (checker self-test)")
    sub.add_parser("phantom", parents=[common], help="phantom description and sampled grid")
    sub.add_parser("forward", parents=[common], help="sinograms for each moment")
    sub.add_parser("normal", parents=[common], help="normal-operator grids for each moment")
    for name, text in (("invert", "full inversion"), ("sv", "Saint Venant recovery")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--from", dest="source", help="read normal_k*.tt from this directory")
    sub.add_parser("report", parents=[common], help="summary table over report_*.json")
    return parser


def _prepare(args) -> ExperimentConfig:
    cfg = resolve_config(args.config)
    for item in args.override:
        apply_override(cfg, item)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.command == "verify":
        if args.m_max is not None:
            cfg.verify.m_max = args.m_max
        if args.n_set:
            cfg.verify.n_set = args.n_set
        if args.degree is not None:
            cfg.verify.degree = args.degree
        if args.suite:
            cfg.verify.suites = args.suite
    return cfg.validate()


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.list_configs:
        print("\n".join(bundled_names()))
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _prepare(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out = Path(args.out or cfg.out)
    kwargs = {}
    if args.command in ("forward", "normal", "invert", "sv"):
        kwargs["threads"] = args.threads
    if args.command in ("invert", "sv") and args.source:
        kwargs["source"] = Path(args.source)
    if args.command == "verify":
        kwargs["fault"] = args.fault
    try:
        with output_lock(out):
            if args.command != "report":
                dump(cfg, out / f"config_{args.command}.toml")
            code, _ = COMMANDS[args.command](cfg, out, **kwargs)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return code


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
