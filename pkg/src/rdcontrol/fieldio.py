"""RDF1 binary field files, CSV export and trajectory archives.

RDF1 layout (little-endian)::

    b"RDF1"
    u32 nx, u32 ny, u32 n_species, u32 dtype (0 = f64, 1 = f32)
    f64 dx, f64 dy, f64 time
    n_species x (u32 byte length, UTF-8 name)
    n_species x (nx * ny values, row-major: i along x is the slow index)
"""
from __future__ import annotations

import csv
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .grid import Grid2D, SpeciesState

MAGIC = b"RDF1"
_HEADER = struct.Struct("<4sIIII ddd")
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


class FieldFormatError(ValueError):
    pass


def encode_rdf(state: SpeciesState, dtype: str = "f64") -> bytes:
    code = {"f64": 0, "f32": 1}[dtype]
    g = state.grid
    parts = [_HEADER.pack(MAGIC, g.nx, g.ny, state.n, code, g.dx, g.dy, float(state.time))]
    for name in state.names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
    parts.append(np.ascontiguousarray(state.values, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def decode_rdf(buf: bytes) -> SpeciesState:
    if len(buf) < _HEADER.size or buf[:4] != MAGIC:
        raise FieldFormatError("not an RDF1 file (bad magic)")
    _, nx, ny, n, code, dx, dy, t = _HEADER.unpack_from(buf, 0)
    if code not in _DTYPES:
        raise FieldFormatError(f"unknown dtype code {code}")
    off = _HEADER.size
    names = []
    for _ in range(n):
        (ln,) = struct.unpack_from("<I", buf, off)
        off += 4
        names.append(buf[off:off + ln].decode("utf-8"))
        off += ln
    dt = _DTYPES[code]
    count = n * nx * ny
    if len(buf) - off != count * dt.itemsize:
        raise FieldFormatError(f"expected {count * dt.itemsize} data bytes, found {len(buf) - off}")
    values = np.frombuffer(buf, dtype=dt, count=count, offset=off).astype(np.float64).reshape(n, nx, ny)
    return SpeciesState(Grid2D(nx, ny, dx, dy), values, tuple(names), t)


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temp file in the same directory and rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_rdf(path, state: SpeciesState, dtype: str = "f64") -> None:
    atomic_write(path, encode_rdf(state, dtype))


def read_rdf(path) -> SpeciesState:
    return decode_rdf(Path(path).read_bytes())


def write_csv(path, state: SpeciesState) -> None:
    """One row per cell and species: ``i,j,x,y,species,value``."""
    xs, ys = state.grid.centers()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "x", "y", "species", "value"])
        for s, name in enumerate(state.names):
            for i in range(state.grid.nx):
                for j in range(state.grid.ny):
                    w.writerow([i, j, repr(float(xs[i, j])), repr(float(ys[i, j])), name,
                                repr(float(state.values[s, i, j]))])


def write_json(path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def write_trajectory_archive(directory, traj, seed=None, steps=None, dtype: str = "f64") -> dict:
    """Store checkpoint states as ``state_{step:08}.rdf`` plus ``manifest.json``.

    ``steps`` restricts which stored steps are written (default: all checkpoints).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = traj.names or traj.model.names
    steps = sorted(traj.checkpoints) if steps is None else sorted(steps)
    files = []
    for k in steps:
        st = SpeciesState(traj.grid, traj.state_at(k), names, k * traj.time_grid.dt)
        fname = f"state_{k:08d}.rdf"
        write_rdf(directory / fname, st, dtype)
        files.append(fname)
    manifest = {
        "model_hash": traj.model.fingerprint(),
        "seed": seed,
        "dt": traj.time_grid.dt,
        "T": traj.time_grid.T,
        "checkpoint_stride": traj.stride,
        "dtype": dtype,
        "files": files,
        "clamp": {"count": int(traj.clamp_count.sum()), "mass": float(traj.clamp_mass.sum()),
                  "max_step_fraction": float(np.max(traj.clamp_mass / np.maximum(traj.total_mass, 1e-300)))
                  if traj.time_grid.N else 0.0},
        "monitor": {"bound": traj.monitor_bound.tolist(), "violations": traj.violations},
    }
    write_json(directory / "manifest.json", manifest)
    return manifest
