"""File formats: a binary field container, CSV slices and PGM images.

Container layout::

    8 bytes   magic  b"TTOMO\\x00\\x01\\x00"
    8 bytes   header length H, unsigned little-endian
    H bytes   UTF-8 JSON header (sorted keys)
    rest      float64 little-endian payload, C order, shape from the header

The header records the object kind, dimensions, ranks, the enumeration of
sorted multi-indices for each tensor axis, geometry and free-form metadata.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .symtensor import enumerate_indices
from .xray import BiSymGridField, DirectionSet, GridField, GridSpec, Sinogram

__all__ = [
    "MAGIC",
    "write_container",
    "read_container",
    "payload_digest",
    "write_csv",
    "write_pgm",
    "read_pgm",
]

MAGIC = b"TTOMO\x00\x01\x00"


def _header_for(obj) -> tuple[dict, np.ndarray]:
    if isinstance(obj, GridField):
        g = obj.grid
        head = {"kind": "grid_field", "n": g.n, "m": obj.m, "L": g.L, "N": g.N,
                "index_order": [list(i) for i in enumerate_indices(g.n, obj.m)],
                "axes": ["component"] + [f"x{j + 1}" for j in range(g.n)]}
        return head, obj.comps
    if isinstance(obj, BiSymGridField):
        g = obj.grid
        head = {"kind": "bisym_grid_field", "n": g.n, "ranks": [obj.p, obj.q], "L": g.L, "N": g.N,
                "index_order": [[list(i) for i in enumerate_indices(g.n, obj.p)],
                                [list(i) for i in enumerate_indices(g.n, obj.q)]],
                "axes": ["component_a", "component_b"] + [f"x{j + 1}" for j in range(g.n)]}
        return head, obj.comps
    if isinstance(obj, Sinogram):
        head = {"kind": "sinogram", "n": obj.n, "m": obj.m, "k": obj.k, "S": obj.S,
                "n_s": obj.n_s, "directions": obj.dirs.directions.tolist(),
                "weights": obj.dirs.weights.tolist(),
                "axes": ["direction"] + [f"s{j + 1}" for j in range(obj.n - 1)]}
        return head, obj.values
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_container(path, obj, meta: dict | None = None) -> str:
    """Write ``obj`` and return the SHA-256 digest of its payload."""
    head, data = _header_for(obj)
    data = np.ascontiguousarray(data, dtype="<f8")
    head.update({"dtype": "float64", "endianness": "little", "order": "C",
                 "shape": list(data.shape), "meta": meta or {}})
    blob = json.dumps(head, sort_keys=True).encode("utf-8")
    payload = data.tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)
    return hashlib.sha256(payload).hexdigest()


def _read_raw(path) -> tuple[dict, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a tensortomo container")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    head = json.loads(raw[16:16 + hlen].decode("utf-8"))
    data = np.frombuffer(raw[16 + hlen:], dtype="<f8")
    expected = int(np.prod(head["shape"])) if head["shape"] else 1
    if data.size != expected:
        raise ValueError(f"{path}: payload has {data.size} values, header expects {expected}")
    return head, data.reshape(head["shape"]).astype(float)


def read_container(path):
    """Read a container; returns ``(object, header)``."""
    head, data = _read_raw(path)
    kind = head["kind"]
    if kind == "grid_field":
        return GridField(GridSpec(head["n"], head["N"], head["L"]), head["m"], data), head
    if kind == "bisym_grid_field":
        p, q = head["ranks"]
        return BiSymGridField(GridSpec(head["n"], head["N"], head["L"]), p, q, data), head
    if kind == "sinogram":
        dirs = DirectionSet(head["n"], np.array(head["directions"]), np.array(head["weights"]))
        return Sinogram(head["k"], head["m"], dirs, head["S"], head["n_s"], data), head
    raise ValueError(f"{path}: unknown container kind {kind!r}")


def payload_digest(path) -> str:
    _, data = _read_raw(path)
    return hashlib.sha256(np.ascontiguousarray(data, dtype="<f8").tobytes()).hexdigest()


def _plane(values: np.ndarray) -> np.ndarray:
    """2-D view of a 1-, 2- or 3-D array; 3-D arrays give the middle slice."""
    if values.ndim == 3:
        return values[:, :, values.shape[2] // 2]
    if values.ndim == 1:
        return values[None, :]
    return values


def write_csv(path, values: np.ndarray, axis: np.ndarray | None = None):
    """Write a 1-D or 2-D slice as CSV (3-D input: middle slice in x3).

    With ``axis`` given, the first row and column hold the coordinates.
    """
    plane = _plane(np.asarray(values, dtype=float))
    with open(path, "w") as fh:
        if axis is not None and plane.shape[0] > 1:
            fh.write("," + ",".join(repr(float(v)) for v in axis[:plane.shape[1]]) + "\n")
            for x, row in zip(axis, plane):
                fh.write(repr(float(x)) + "," + ",".join(repr(float(v)) for v in row) + "\n")
        else:
            for row in plane:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_pgm(path, values: np.ndarray):
    """8-bit binary PGM of a 2-D slice scaled linearly from min to max.

    Rows are written with the second grid axis pointing up.
    """
    plane = _plane(np.asarray(values, dtype=float))
    lo, hi = float(plane.min()), float(plane.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = np.rint((plane - lo) * scale).astype(np.uint8).T[::-1]
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
