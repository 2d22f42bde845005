"""Self-describing columnar text tables with a hash-bearing header.

Layout::

    # entwp-table v1
    # kind: <what the table holds>
    # config_sha256: <hex>
    # <key>: <value>          (any number of metadata lines)
    # columns: a b c
    <rows, whitespace separated, %.17g>
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TABLE_MAGIC = "# entwp-table v1"


class TableError(ValueError):
    pass


@dataclass
class Table:
    kind: str
    columns: list[str]
    data: np.ndarray
    config_hash: str = ""
    meta: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.data[:, self.columns.index(name)]
        except ValueError:
            raise KeyError(f"table {self.kind!r} has no column {name!r}") from None


def write_table(path, kind: str, columns, data, config_hash: str = "", **meta) -> Path:
    path = Path(path)
    data = np.atleast_2d(np.asarray(data, dtype=float))
    columns = list(columns)
    if data.size and data.shape[1] != len(columns):
        raise ValueError("column count does not match data")
    lines = [TABLE_MAGIC, f"# kind: {kind}", f"# config_sha256: {config_hash}"]
    for k, v in meta.items():
        lines.append(f"# {k}: {v}")
    lines.append("# columns: " + " ".join(columns))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
        if data.size:
            np.savetxt(fh, data, fmt="%.17g")
    return path


def read_table(path) -> Table:
    path = Path(path)
    meta: dict[str, str] = {}
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first != TABLE_MAGIC:
            raise TableError(f"{path}: not an entwp table")
        columns = None
        nhead = 1
        for line in fh:
            if not line.startswith("#"):
                break
            nhead += 1
            key, _, val = line[1:].strip().partition(":")
            meta[key.strip()] = val.strip()
            if key.strip() == "columns":
                columns = val.split()
                break
    if columns is None or "kind" not in meta:
        raise TableError(f"{path}: header lacks kind or columns")
    try:
        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", "loadtxt: input contained no data")
            data = np.loadtxt(path, comments="#", ndmin=2)
    except ValueError as exc:
        raise TableError(f"{path}: {exc}") from None
    if data.size == 0:
        data = np.empty((0, len(columns)))
    if data.shape[1] != len(columns):
        raise TableError(f"{path}: rows have {data.shape[1]} fields, header names {len(columns)}")
    kind = meta.pop("kind")
    h = meta.pop("config_sha256", "")
    meta.pop("columns", None)
    return Table(kind, columns, data, h, meta)


def long_to_grid(x: np.ndarray, y: np.ndarray, z: np.ndarray):
    """Reshape long-format (x, y, z) rows into axes and ``Z[iy, ix]``."""
    xs = np.unique(x)
    ys = np.unique(y)
    if xs.size * ys.size != z.size:
        raise TableError("long-format table is not a full grid")
    Z = np.full((ys.size, xs.size), np.nan)
    Z[np.searchsorted(ys, y), np.searchsorted(xs, x)] = z
    return xs, ys, Z


def grid_to_long(xs: np.ndarray, ys: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Inverse of :func:`long_to_grid`; rows ordered x-major."""
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.T.ravel(), Y.T.ravel(), Z.T.ravel()])
