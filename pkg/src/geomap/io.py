"""GFD1 field files and GMP1 map files.

Both formats are a single UTF-8 JSON header line, a newline, then raw
little-endian float64 payload in C (row-major) order:

GFD1: {"magic":"GFD1","dim":d,"res":[...],"channels":m,"kind":...,
       "seed":...,"spec":{...}} + values [m, *res]
GMP1: {"magic":"GMP1","dim":d,"res":[...],"boundary_kind":...,
       "provenance":..., ...extras} + positions [#V, dim]

Write->read round trips are bit-exact on the payload.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .fields import ParamField, grid_coords
from .geometry import MapField, build_grid


class FormatError(ValueError):
    pass


def _write(path: Path, header: dict, payload: np.ndarray) -> Path:
    path = Path(path)
    blob = np.ascontiguousarray(payload, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(blob)
    return path


def _read(path: Path, magic: str) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad header: {exc}") from exc
    if header.get("magic") != magic:
        raise FormatError(f"{path}: expected magic {magic!r}, got {header.get('magic')!r}")
    return header, np.frombuffer(blob, dtype="<f8")


def save_field(field: ParamField, path) -> Path:
    header = {
        "magic": "GFD1",
        "dim": field.dim,
        "res": list(field.res),
        "channels": field.channels,
        "kind": field.kind,
        "seed": field.seed,
        "spec": _jsonable(field.meta),
    }
    return _write(Path(path), header, field.values)


def load_field(path) -> ParamField:
    header, flat = _read(Path(path), "GFD1")
    res = tuple(header["res"])
    m = header["channels"]
    expected = m * int(np.prod(res))
    if flat.size != expected:
        raise FormatError(f"{path}: payload has {flat.size} values, expected {expected}")
    values = flat.reshape(m, *res).copy()
    coords = grid_coords(res[0], header["dim"])
    return ParamField(
        dim=header["dim"],
        res=res,
        channels=m,
        values=values,
        coords=coords,
        kind=header["kind"],
        seed=header.get("seed"),
        meta=header.get("spec") or {},
    )


def save_map(mapped: MapField, path) -> Path:
    res = mapped.grid.res
    header = {
        "magic": "GMP1",
        "dim": mapped.grid.dim,
        "res": list(res),
        "boundary_kind": mapped.boundary_kind,
        "provenance": mapped.provenance,
    }
    header.update(_jsonable(mapped.meta))
    return _write(Path(path), header, mapped.positions)


def load_map(path) -> MapField:
    header, flat = _read(Path(path), "GMP1")
    res = tuple(header["res"])
    dim = header["dim"]
    grid = build_grid(res[0], dim)
    expected = grid.n_vertices * dim
    if flat.size != expected:
        raise FormatError(f"{path}: payload has {flat.size} values, expected {expected}")
    positions = flat.reshape(grid.n_vertices, dim).copy()
    extras = {
        k: v
        for k, v in header.items()
        if k not in ("magic", "dim", "res", "boundary_kind", "provenance")
    }
    return MapField(grid, positions, header["boundary_kind"], header["provenance"], extras)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return repr(obj)
