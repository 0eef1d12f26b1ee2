"""File formats: binary grid dumps, CSV series and key = value reports.

Binary dump layout: one ASCII header line ``dims,resolutions,periods,components``
where resolutions and periods are ``x``-joined lists, followed by
little-endian float64 values, row-major over the grid axes with the
components of each point contiguous.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .grid import PeriodicGrid


def _header(grid: PeriodicGrid, components: int) -> str:
    res = "x".join(str(r) for r in grid.resolution)
    per = "x".join(repr(float(p)) for p in grid.period)
    return f"{grid.dims},{res},{per},{components}\n"


def write_grid(path, grid: PeriodicGrid, values: np.ndarray) -> None:
    """Dump a field with any leading component axes (component-first in memory)."""
    values = np.asarray(values, dtype=float)
    if values.shape[-grid.dims:] != grid.shape:
        raise ValueError(f"field shape {values.shape} does not match grid {grid.shape}")
    comp = values.shape[:-grid.dims]
    ncomp = int(np.prod(comp)) if comp else 1
    data = values.reshape((ncomp,) + grid.shape)
    data = np.moveaxis(data, 0, -1).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_header(grid, ncomp).encode("ascii"))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_grid(path) -> tuple[PeriodicGrid, np.ndarray]:
    """Inverse of :func:`write_grid`; returns values shaped ``(components, *grid)``
    (or ``grid`` for a single component)."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        payload = fh.read()
    try:
        dims_s, res_s, per_s, comp_s = header.split(",")
        dims = int(dims_s)
        res = tuple(int(r) for r in res_s.split("x"))
        per = tuple(float(p) for p in per_s.split("x"))
        ncomp = int(comp_s)
    except ValueError as exc:
        raise ValueError(f"malformed grid header {header!r}") from exc
    if len(res) != dims or len(per) != dims:
        raise ValueError(f"header dims mismatch: {header!r}")
    grid = PeriodicGrid(res, per)
    data = np.frombuffer(payload, dtype="<f8")
    if data.size != grid.size * ncomp:
        raise ValueError(f"payload holds {data.size} values, expected {grid.size * ncomp}")
    data = np.moveaxis(data.reshape(grid.shape + (ncomp,)), -1, 0).astype(float)
    return grid, (data[0] if ncomp == 1 else data)


def hermitian_to_real(g: np.ndarray) -> np.ndarray:
    """Upper triangle (with diagonal) of ``g``, interleaved (re, im): shape ``(n(n+1), *grid)``."""
    n = g.shape[0]
    iu = np.triu_indices(n)
    up = g[iu]
    out = np.empty((2 * up.shape[0],) + up.shape[1:])
    out[0::2] = up.real
    out[1::2] = up.imag
    return out


def real_to_hermitian(data: np.ndarray, n: int) -> np.ndarray:
    iu = np.triu_indices(n)
    up = data[0::2] + 1j * data[1::2]
    g = np.empty((n, n) + data.shape[1:], dtype=complex)
    g[iu] = up
    g[(iu[1], iu[0])] = np.conj(up)
    return g


def write_hermitian(path, grid: PeriodicGrid, g: np.ndarray) -> None:
    write_grid(path, grid, hermitian_to_real(g))


def read_hermitian(path) -> tuple[PeriodicGrid, np.ndarray]:
    grid, data = read_grid(path)
    m = data.shape[0] // 2
    n = int(round((math.sqrt(8 * m + 1) - 1) / 2))
    if n * (n + 1) // 2 != m:
        raise ValueError(f"{data.shape[0]} components do not form a Hermitian triangle")
    return grid, real_to_hermitian(data, n)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


def format_report(data: Mapping, prefix: str = "") -> str:
    """Flatten a nested mapping into sorted-by-insertion ``key = value`` lines."""
    lines = []
    for k, v in data.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            lines.append(format_report(v, key + "."))
        elif isinstance(v, (list, tuple)):
            lines.append(f"{key} = {', '.join(_fmt(x) for x in v)}")
        else:
            lines.append(f"{key} = {_fmt(v)}")
    return "\n".join(x for x in lines if x)


def write_report(path, data: Mapping) -> None:
    Path(path).write_text(format_report(data) + "\n")


def read_report(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out
