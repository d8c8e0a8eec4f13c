"""Multi-band grids stored as one ESRI ASCII grid per band plus a JSON manifest.

Inside Python, nodata cells are NaN. Rows run north to south; the origin
``(xll, yll)`` is the lower-left corner of the lower-left cell.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .geom import PointSet

logger = logging.getLogger(__name__)

HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value")
DEFAULT_NODATA = -9999.0
MANIFEST_VERSION = 1


@dataclass
class RasterStack:
    """Named, aligned 2-D grids sharing one georeference."""

    nrows: int
    ncols: int
    xll: float = 0.0
    yll: float = 0.0
    cellsize: float = 1.0
    nodata: float = DEFAULT_NODATA
    bands: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.cellsize <= 0:
            raise ValueError("cellsize must be positive")
        bands = {}
        for name, values in self.bands.items():
            values = np.asarray(values, dtype=np.float64)
            if values.shape != (self.nrows, self.ncols):
                raise ValueError(
                    f"band {name!r} has shape {values.shape}, expected {(self.nrows, self.ncols)}")
            bands[str(name)] = values
        self.bands = bands

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    @property
    def names(self):
        return list(self.bands)

    def like(self, bands: Dict[str, np.ndarray]) -> "RasterStack":
        """New stack with this georeference and the given bands."""
        return RasterStack(self.nrows, self.ncols, self.xll, self.yll, self.cellsize, self.nodata, bands)

    def band(self, name: str) -> np.ndarray:
        if name not in self.bands:
            raise KeyError(f"raster has no band {name!r} (available: {self.names})")
        return self.bands[name]

    def same_grid(self, other: "RasterStack") -> bool:
        return (self.nrows, self.ncols, self.xll, self.yll, self.cellsize) == (
            other.nrows, other.ncols, other.xll, other.yll, other.cellsize)

    def cell_centers(self):
        """Arrays ``(x, y)`` of cell-centre coordinates, shape ``(nrows, ncols)``."""
        cols = np.arange(self.ncols)
        rows = np.arange(self.nrows)
        x = self.xll + (cols + 0.5) * self.cellsize
        y = self.yll + (self.nrows - rows - 0.5) * self.cellsize
        return np.meshgrid(x, y)

    def to_rows(self, names=None):
        """Cell values as a ``(nrows*ncols, p)`` matrix plus a validity mask.

        A cell is valid when every requested band has data there.
        """
        names = list(names) if names is not None else self.names
        missing = [n for n in names if n not in self.bands]
        if missing:
            raise KeyError(f"raster is missing band(s): {missing}")
        X = np.column_stack([self.bands[n].ravel() for n in names]) if names else np.empty((self.nrows * self.ncols, 0))
        valid = np.all(np.isfinite(X), axis=1)
        return X, valid

    def from_rows(self, values, valid, name: str) -> "RasterStack":
        out = np.full(self.nrows * self.ncols, np.nan)
        out[valid] = values
        return self.like({name: out.reshape(self.shape)})

    def cell_index(self, x, y):
        """Row/column of the cell containing each coordinate."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        col = np.floor((x - self.xll) / self.cellsize).astype(np.intp)
        row = self.nrows - 1 - np.floor((y - self.yll) / self.cellsize).astype(np.intp)
        return row, col


# ---------------------------------------------------------------------------
# ASCII grid files


def _fmt(value: float) -> str:
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def write_ascii_grid(path, values: np.ndarray, stack: RasterStack) -> None:
    values = np.asarray(values, dtype=np.float64)
    nodata_token = _fmt(stack.nodata)
    lines = [
        f"ncols {stack.ncols}",
        f"nrows {stack.nrows}",
        f"xllcorner {_fmt(stack.xll)}",
        f"yllcorner {_fmt(stack.yll)}",
        f"cellsize {_fmt(stack.cellsize)}",
        f"NODATA_value {nodata_token}",
    ]
    for row in values:
        lines.append(" ".join(nodata_token if not np.isfinite(v) else repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_ascii_grid(path):
    """Read one ASCII grid; returns ``(header dict, values with NaN nodata)``."""
    with open(path, encoding="utf-8") as fh:
        header = {}
        for _ in range(6):
            key, value = fh.readline().split()[:2]
            header[key.lower()] = value
        body = fh.read().split()
    try:
        ncols, nrows = int(header["ncols"]), int(header["nrows"])
        meta = {
            "ncols": ncols,
            "nrows": nrows,
            "xll": float(header.get("xllcorner", header.get("xllcenter"))),
            "yll": float(header.get("yllcorner", header.get("yllcenter"))),
            "cellsize": float(header["cellsize"]),
            "nodata": float(header["nodata_value"]),
        }
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: incomplete ASCII grid header") from exc
    if len(body) != ncols * nrows:
        raise ValueError(f"{path}: expected {ncols * nrows} values, found {len(body)}")
    values = np.array([float(v) for v in body]).reshape(nrows, ncols)
    values[values == meta["nodata"]] = np.nan
    return meta, values


def write_stack(stack: RasterStack, directory, manifest_name="manifest.json") -> str:
    """Write every band as ``<name>.asc`` and a manifest; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for name, values in stack.bands.items():
        fname = f"{name}.asc"
        write_ascii_grid(os.path.join(directory, fname), values, stack)
        entries.append({"name": name, "file": fname})
    manifest = {
        "schema_version": MANIFEST_VERSION,
        "ncols": stack.ncols,
        "nrows": stack.nrows,
        "xllcorner": stack.xll,
        "yllcorner": stack.yll,
        "cellsize": stack.cellsize,
        "NODATA_value": stack.nodata,
        "bands": entries,
    }
    path = os.path.join(directory, manifest_name)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def read_stack(manifest_path) -> RasterStack:
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(manifest_path))
    ref = (int(manifest["nrows"]), int(manifest["ncols"]), float(manifest["xllcorner"]),
           float(manifest["yllcorner"]), float(manifest["cellsize"]))
    bands = {}
    for entry in manifest["bands"]:
        path = os.path.join(base, entry["file"])
        if not os.path.exists(path):
            raise FileNotFoundError(f"band {entry['name']!r}: file {path} does not exist")
        meta, values = read_ascii_grid(path)
        got = (meta["nrows"], meta["ncols"], meta["xll"], meta["yll"], meta["cellsize"])
        if got != ref:
            raise ValueError(f"band {entry['name']!r} does not match the manifest georeference: {got} vs {ref}")
        bands[entry["name"]] = values
    return RasterStack(ref[0], ref[1], ref[2], ref[3], ref[4],
                       float(manifest.get("NODATA_value", DEFAULT_NODATA)), bands)


def read_grid(path) -> RasterStack:
    """Single ASCII grid as a one-band stack named after the file stem."""
    meta, values = read_ascii_grid(path)
    name = os.path.splitext(os.path.basename(path))[0]
    return RasterStack(meta["nrows"], meta["ncols"], meta["xll"], meta["yll"], meta["cellsize"],
                       meta["nodata"], {name: values})


# ---------------------------------------------------------------------------
# point lookups


def extract_at_points(stack: RasterStack, points: PointSet, names=None):
    """Band values at the cell containing each point.

    Returns ``(X, keep)`` where ``keep`` flags rows without nodata; rows
    hitting nodata are reported with a warning.
    """
    names = list(names) if names is not None else stack.names
    x, y = points.coords[:, 0], points.coords[:, 1]
    row, col = stack.cell_index(x, y)
    outside = (row < 0) | (row >= stack.nrows) | (col < 0) | (col >= stack.ncols)
    if np.any(outside):
        i = int(np.argmax(outside))
        raise ValueError(f"point ({x[i]}, {y[i]}) lies outside the raster extent")
    X = np.column_stack([stack.band(n)[row, col] for n in names])
    keep = np.all(np.isfinite(X), axis=1)
    if not np.all(keep):
        logger.warning("%d point(s) fall on nodata cells and were dropped: rows %s",
                       int((~keep).sum()), np.where(~keep)[0][:10].tolist())
    return X, keep


def valid_cell_centers(stack: RasterStack, names=None) -> np.ndarray:
    """Coordinates of all cells with data in every (requested) band."""
    _, valid = stack.to_rows(names)
    xs, ys = stack.cell_centers()
    return np.column_stack([xs.ravel()[valid], ys.ravel()[valid]])
