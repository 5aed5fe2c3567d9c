"""Snapshots, diagnostics tables and long-format plot data.

Every CSV starts with a header row whose column names carry their units in
brackets, e.g. ``x_0[length]``.  Floats are written with 17 significant
digits so a read-back is exact and repeated runs produce identical bytes.
Snapshot CSVs put the lattice description in a leading ``#`` comment line.

The binary snapshot layout is a 16-byte header (8-byte magic, little-endian
``uint32`` format version, ``uint32`` JSON length), the JSON metadata, then
the arrays as raw little-endian float64 in the order listed in the metadata.
"""
from __future__ import annotations

import csv
import json
import re
import struct
from pathlib import Path

import numpy as np

from .c2 import ClebschDoublet
from .errors import ConfigError, ConstructionError
from .grid import Grid
from .lattice import FlowMap, LabelLattice

MAGIC = b"LAGMEDIA"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sII")
_UNIT = re.compile(r"^(?P<name>[^\[\]]+)(\[(?P<unit>[^\]]*)\])?$")


def fmt(x):
    return format(float(x), ".17g")


def _lattice_meta(lat):
    return {"dim": lat.dim, "bounds": [list(map(float, b)) for b in lat.bounds],
            "shape": list(lat.shape), "boundary": lat.boundary}


def _flowmap_meta(fmap):
    meta = _lattice_meta(fmap.lattice)
    meta.update(kind="flowmap", mass=float(fmap.mass), time=float(fmap.time))
    return meta


def _grid_meta(grid):
    return {"dim": grid.dim, "bounds": [list(map(float, b)) for b in grid.bounds],
            "shape": list(grid.shape), "boundary": grid.boundary}


def _dumps(meta):
    return json.dumps(meta, sort_keys=True, separators=(",", ":"))


def _write_rows(path, header, rows, comment=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if comment is not None:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _read_rows(path):
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    comments = [ln[1:].strip() for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    rows = list(csv.reader(body))
    if not rows:
        raise ConfigError(f"{path}: empty table")
    return comments, rows[0], rows[1:]


def split_unit(column):
    """``"x_0[length]"`` -> ``("x_0", "length")``; a missing unit gives ``""``."""
    m = _UNIT.match(column.strip())
    if m is None:
        raise ConfigError(f"malformed column name {column!r}")
    return m.group("name"), m.group("unit") or ""


# -- flow map snapshots ---------------------------------------------------

def write_snapshot_csv(fmap, path):
    """One row per label: lattice index, ``xi``, ``x``, ``p`` and ``rho0``."""
    lat = fmap.lattice
    d = lat.dim
    header = ([f"i_{a}[index]" for a in range(d)] + [f"xi_{a}[length]" for a in range(d)]
              + [f"x_{a}[length]" for a in range(d)]
              + [f"p_{a}[mass*length/(time*volume)]" for a in range(d)]
              + ["rho0[number/volume]"])
    idx = np.indices(lat.shape).reshape(d, -1).T
    xi = lat.nodes().reshape(-1, d)
    x = fmap.positions.reshape(-1, d)
    p = fmap.momenta.reshape(-1, d)
    r0 = fmap.rho0.ravel()
    rows = ([str(int(v)) for v in idx[i]] + [fmt(v) for v in xi[i]] + [fmt(v) for v in x[i]]
            + [fmt(v) for v in p[i]] + [fmt(r0[i])] for i in range(len(r0)))
    return _write_rows(path, header, rows, _dumps(_flowmap_meta(fmap)))


def _lattice_from_meta(meta):
    return LabelLattice(meta["dim"], [tuple(b) for b in meta["bounds"]], tuple(meta["shape"]),
                        meta["boundary"])


def read_snapshot_csv(path):
    comments, header, rows = _read_rows(path)
    if not comments:
        raise ConfigError(f"{path}: missing lattice metadata line")
    meta = json.loads(comments[0])
    lat = _lattice_from_meta(meta)
    d = lat.dim
    data = np.array(rows, dtype=float)
    if data.shape != (lat.size, 4 * d + 1):
        raise ConfigError(f"{path}: expected {lat.size} rows of {4 * d + 1} columns")
    order = np.ravel_multi_index(tuple(data[:, a].astype(int) for a in range(d)), lat.shape)
    data = data[np.argsort(order)]
    x = data[:, 2 * d:3 * d].reshape(lat.shape + (d,))
    p = data[:, 3 * d:4 * d].reshape(lat.shape + (d,))
    return FlowMap(lat, x, p, data[:, 4 * d].reshape(lat.shape), meta["mass"], meta["time"])


def _write_binary(path, meta, arrays):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = _dumps(meta).encode()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return path


def _read_binary(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ConfigError(f"{path}: truncated header")
    magic, version, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ConfigError(f"{path}: not a lagmedia binary snapshot")
    if version != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported format version {version}")
    meta = json.loads(raw[_HEADER.size:_HEADER.size + n].decode())
    payload = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size + n)
    return meta, payload


def write_snapshot_binary(fmap, path):
    meta = _flowmap_meta(fmap)
    meta["arrays"] = ["positions", "momenta", "rho0"]
    return _write_binary(path, meta, [fmap.positions, fmap.momenta, fmap.rho0])


def read_snapshot_binary(path):
    meta, payload = _read_binary(path)
    if meta.get("kind") != "flowmap":
        raise ConfigError(f"{path}: does not hold a flow map")
    lat = _lattice_from_meta(meta)
    nv = lat.size * lat.dim
    if payload.size != 2 * nv + lat.size:
        raise ConfigError(f"{path}: payload size does not match the lattice")
    vshape = lat.shape + (lat.dim,)
    return FlowMap(lat, payload[:nv].reshape(vshape).copy(),
                   payload[nv:2 * nv].reshape(vshape).copy(),
                   payload[2 * nv:].reshape(lat.shape).copy(), meta["mass"], meta["time"])


def read_snapshot(path):
    """Dispatch on content: binary magic or CSV text."""
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
    return read_snapshot_binary(path) if head == MAGIC else read_snapshot_csv(path)


# -- doublet snapshots ----------------------------------------------------

def write_doublet_csv(doublet, path):
    """Node index, position and interleaved ``re/im`` of ``u1`` and ``u2``."""
    g = doublet.grid
    d = g.dim
    header = ([f"i_{a}[index]" for a in range(d)] + [f"x_{a}[length]" for a in range(d)]
              + ["re_u1[sqrt(number/volume)]", "im_u1[sqrt(number/volume)]",
                 "re_u2[sqrt(number/volume)]", "im_u2[sqrt(number/volume)]"])
    idx = np.indices(g.shape).reshape(d, -1).T
    x = g.nodes().reshape(-1, d)
    u = doublet.u.reshape(-1, 2)
    rows = ([str(int(v)) for v in idx[i]] + [fmt(v) for v in x[i]]
            + [fmt(u[i, 0].real), fmt(u[i, 0].imag), fmt(u[i, 1].real), fmt(u[i, 1].imag)]
            for i in range(len(u)))
    meta = _grid_meta(g)
    meta.update(kind="doublet", mass=float(doublet.mass))
    return _write_rows(path, header, rows, _dumps(meta))


def read_doublet_csv(path):
    comments, header, rows = _read_rows(path)
    meta = json.loads(comments[0])
    grid = Grid(meta["dim"], [tuple(b) for b in meta["bounds"]], tuple(meta["shape"]),
                meta["boundary"])
    d = grid.dim
    data = np.array(rows, dtype=float)
    order = np.ravel_multi_index(tuple(data[:, a].astype(int) for a in range(d)), grid.shape)
    data = data[np.argsort(order)]
    re_im = data[:, 2 * d:2 * d + 4]
    u = (re_im[:, 0::2] + 1j * re_im[:, 1::2]).reshape(grid.shape + (2,))
    return ClebschDoublet(grid, u, meta["mass"])


def write_doublet_binary(doublet, path):
    meta = _grid_meta(doublet.grid)
    meta.update(kind="doublet", mass=float(doublet.mass), arrays=["u_interleaved"])
    inter = np.stack([doublet.u.real, doublet.u.imag], axis=-1)
    return _write_binary(path, meta, [inter])


def read_doublet_binary(path):
    meta, payload = _read_binary(path)
    if meta.get("kind") != "doublet":
        raise ConfigError(f"{path}: does not hold a doublet")
    grid = Grid(meta["dim"], [tuple(b) for b in meta["bounds"]], tuple(meta["shape"]),
                meta["boundary"])
    inter = payload.reshape(grid.shape + (2, 2))
    return ClebschDoublet(grid, inter[..., 0] + 1j * inter[..., 1], meta["mass"])


# -- tables ---------------------------------------------------------------

def write_table(path, columns, comment=None):
    """Write ``{"name[unit]": values}`` as a CSV with one column per entry."""
    names = list(columns)
    cols = [np.asarray(columns[n]).ravel() for n in names]
    n = {len(c) for c in cols}
    if len(n) > 1:
        raise ConstructionError(f"columns have different lengths: {sorted(n)}")
    rows = ([fmt(c[i]) for c in cols] for i in range(len(cols[0]) if cols else 0))
    return _write_rows(path, names, rows, comment)


def read_table(path):
    """Returns ``(columns, units, comments)`` with ``columns[name] -> float array``."""
    comments, header, rows = _read_rows(path)
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    columns, units = {}, {}
    for j, col in enumerate(header):
        name, unit = split_unit(col)
        columns[name] = data[:, j]
        units[name] = unit
    return columns, units, comments


def read_radial_profile(path, column="rho"):
    """Read a radial profile CSV with columns ``r`` and ``column``."""
    from .gravity import RadialProfile

    cols, _, _ = read_table(path)
    if "r" not in cols or column not in cols:
        raise ConfigError(f"{path}: need columns 'r' and {column!r}, found {sorted(cols)}")
    return RadialProfile(cols["r"], cols[column])


def emit_plotdata(diagnostics_path, out_path, columns=None, scale=1.0, time_column="time"):
    """Reshape a diagnostics table to long format: one ``(time, name, unit, value)`` row per sample.

    ``scale`` multiplies the values and is recorded in a ``#`` header line.
    Unknown column names raise :class:`ConfigError`.
    """
    data, units, _ = read_table(diagnostics_path)
    if time_column not in data:
        raise ConfigError(f"{diagnostics_path}: no {time_column!r} column")
    names = [n for n in data if n != time_column] if columns is None else list(columns)
    unknown = [n for n in names if n not in data]
    if unknown:
        raise ConfigError(f"unknown diagnostics column(s): {', '.join(unknown)}")
    t = data[time_column]
    rows = []
    for i in range(len(t)):
        for n in names:
            rows.append([fmt(t[i]), n, units[n], fmt(data[n][i] * scale)])
    header = [f"{time_column}[{units[time_column]}]", "name", "unit", "value"]
    return _write_rows(out_path, header, rows, f"scale={fmt(scale)}")
