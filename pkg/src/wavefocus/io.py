"""Text file formats for fields, far-field patterns, clouds and reports.

Field file::

    wavefield v1 <nx> <ny> <nz> <xmin> <ymin> <zmin> <dx> <dy> <dz>
    ix,iy,iz,re,im
    ...

one row per masked voxel, ``ix`` fastest.  Far-field file: CSV rows
``theta,phi,weight,re,im``.  Cloud file: ``# particles M=<m> a=<a> seed=<s>``
followed by ``x,y,z`` rows.  Floats are written with ``repr`` so every
file reads back bit-for-bit.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .grid import ComplexField, DomainGrid, FarField, RealField, SphereGrid
from .particles import ParticleCloud

FIELD_MAGIC = ("wavefield", "v1")


class FormatError(ValueError):
    """A file does not follow the expected layout."""


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_float(tok: str, where: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise FormatError(f"{where}: cannot parse number {tok!r}") from None


# ---------------------------------------------------------------------------
# Voxel fields
# ---------------------------------------------------------------------------
def field_header(grid: DomainGrid) -> str:
    nx, ny, nz = grid.shape
    nums = [*grid.lower, *grid.spacing]
    return " ".join([*FIELD_MAGIC, str(nx), str(ny), str(nz), *(_fmt(v) for v in nums)])


def write_field(path, fld) -> None:
    """Write a :class:`ComplexField` or :class:`RealField`."""
    grid = fld.grid
    values = np.asarray(fld.values)
    re = values.real
    im = values.imag if np.iscomplexobj(values) else np.zeros(len(values))
    lines = [field_header(grid)]
    for (ix, iy, iz), r, i in zip(grid.indices.tolist(), re.tolist(), im.tolist()):
        lines.append(f"{ix},{iy},{iz},{_fmt(r)},{_fmt(i)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path, real: bool = False):
    """Read a field file; returns a ComplexField (or RealField if ``real``)."""
    text = Path(path).read_text().splitlines()
    if not text:
        raise FormatError(f"{path}: empty field file")
    head = text[0].split()
    if len(head) != 11 or tuple(head[:2]) != FIELD_MAGIC:
        raise FormatError(f"{path}: bad header {text[0]!r}")
    try:
        shape = tuple(int(t) for t in head[2:5])
    except ValueError:
        raise FormatError(f"{path}: bad grid shape in header") from None
    nums = [_parse_float(t, f"{path}:1") for t in head[5:]]
    lower, spacing = np.array(nums[:3]), np.array(nums[3:])
    if min(shape) < 1 or np.any(spacing <= 0):
        raise FormatError(f"{path}: invalid grid in header")

    rows = [ln for ln in text[1:] if ln.strip()]
    idx = np.empty((len(rows), 3), dtype=int)
    vals = np.empty(len(rows), dtype=complex)
    for n, ln in enumerate(rows):
        parts = ln.split(",")
        if len(parts) != 5:
            raise FormatError(f"{path}:{n + 2}: expected 5 columns")
        try:
            idx[n] = [int(p) for p in parts[:3]]
        except ValueError:
            raise FormatError(f"{path}:{n + 2}: bad voxel index") from None
        vals[n] = complex(_parse_float(parts[3], f"{path}:{n + 2}"), _parse_float(parts[4], f"{path}:{n + 2}"))
    if len(rows) and (np.any(idx < 0) or np.any(idx >= np.array(shape))):
        raise FormatError(f"{path}: voxel index outside the grid")
    mask = np.zeros(shape, dtype=bool)
    mask[tuple(idx.T)] = True
    grid = DomainGrid(lower, spacing, shape, mask)
    if grid.n_masked != len(rows):
        raise FormatError(f"{path}: duplicate voxel rows")
    # reorder rows to the canonical ix-fastest order
    order = np.ravel_multi_index(tuple(idx.T), shape, order="F").argsort()
    vals = vals[order]
    if real:
        return RealField(grid, vals.real)
    return ComplexField(grid, vals)


# ---------------------------------------------------------------------------
# Far-field patterns
# ---------------------------------------------------------------------------
def write_far_field(path, ff: FarField) -> None:
    s = ff.sphere
    lines = [
        f"{_fmt(t)},{_fmt(p)},{_fmt(w)},{_fmt(v.real)},{_fmt(v.imag)}"
        for t, p, w, v in zip(s.theta.tolist(), s.phi.tolist(), s.weights.tolist(), ff.values.tolist())
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_far_field(path) -> FarField:
    rows = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not rows:
        raise FormatError(f"{path}: empty far-field file")
    data = np.empty((len(rows), 5))
    for n, ln in enumerate(rows):
        parts = ln.split(",")
        if len(parts) != 5:
            raise FormatError(f"{path}:{n + 1}: expected theta,phi,weight,re,im")
        data[n] = [_parse_float(p, f"{path}:{n + 1}") for p in parts]
    if np.any(data[:, 2] <= 0):
        raise FormatError(f"{path}: quadrature weights must be positive")
    sphere = SphereGrid(data[:, 0], data[:, 1], data[:, 2])
    return FarField(sphere, data[:, 3] + 1j * data[:, 4])


# ---------------------------------------------------------------------------
# Particle clouds
# ---------------------------------------------------------------------------
def write_cloud(path, cloud: ParticleCloud) -> None:
    lines = [f"# particles M={cloud.count} a={_fmt(cloud.radius)} seed={cloud.seed}"]
    lines += [",".join(_fmt(c) for c in p) for p in cloud.positions.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_cloud(path) -> ParticleCloud:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# particles"):
        raise FormatError(f"{path}: missing '# particles' header")
    meta = dict(tok.split("=", 1) for tok in text[0].split()[2:])
    try:
        m = int(meta["M"])
        a = float(meta["a"])
        seed = None if meta.get("seed", "None") == "None" else int(meta["seed"])
    except (KeyError, ValueError):
        raise FormatError(f"{path}: bad header {text[0]!r}") from None
    rows = [ln for ln in text[1:] if ln.strip()]
    if len(rows) != m:
        raise FormatError(f"{path}: header says M={m} but found {len(rows)} rows")
    pos = np.array([[_parse_float(p, str(path)) for p in ln.split(",")] for ln in rows]).reshape(-1, 3)
    return ParticleCloud(pos, a, seed)


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------
def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no inf/nan
        return x if math.isfinite(x) else str(x)
    return obj


def write_json(path, data: dict) -> None:
    """Deterministic JSON (sorted keys, fixed indentation)."""
    Path(path).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_singular_values(path, values) -> None:
    lines = ["index,singular_value"] + [f"{i},{_fmt(v)}" for i, v in enumerate(np.asarray(values).tolist())]
    Path(path).write_text("\n".join(lines) + "\n")
