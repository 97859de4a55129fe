"""ESRI ASCII grid rasters.

Values are held as ``(nrows, ncols)`` arrays in file order: row 0 is the
northernmost row. Missing cells are NaN in memory and ``NODATA_value`` on
disk.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


@dataclass(frozen=True)
class RasterMeta:
    ncols: int
    nrows: int
    xllcorner: float
    yllcorner: float
    cellsize: float
    nodata: float = -9999.0

    def __post_init__(self):
        if self.ncols <= 0 or self.nrows <= 0:
            raise ValidationError("raster must have positive ncols and nrows")
        if not self.cellsize > 0:
            raise ValidationError("raster cellsize must be positive")

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    def cell_centers(self) -> np.ndarray:
        """Centres of all cells in row-major file order, shape ``(nrows*ncols, 2)``."""
        cs = self.cellsize
        xs = self.xllcorner + (np.arange(self.ncols) + 0.5) * cs
        ys = self.yllcorner + (self.nrows - 1 - np.arange(self.nrows) + 0.5) * cs
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    def diameter(self) -> float:
        return float(np.hypot(self.ncols * self.cellsize, self.nrows * self.cellsize))


@dataclass
class Raster:
    meta: RasterMeta
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.meta.shape)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.values)


def read_ascii_grid(path) -> Raster:
    text = Path(path).read_text().split("\n")
    header = {}
    i = 0
    while i < len(text) and len(header) < 6:
        parts = text[i].split()
        if not parts:
            i += 1
            continue
        key = parts[0].lower()
        if key not in _HEADER_KEYS and key not in ("xllcenter", "yllcenter"):
            break
        header[key] = float(parts[1])
        i += 1
    try:
        ncols, nrows = int(header["ncols"]), int(header["nrows"])
        cs = header["cellsize"]
        if "xllcorner" in header:
            xll, yll = header["xllcorner"], header["yllcorner"]
        else:
            xll, yll = header["xllcenter"] - cs / 2, header["yllcenter"] - cs / 2
    except KeyError as exc:
        raise ValidationError(f"{path}: missing raster header key {exc}") from None
    nodata = header.get("nodata_value", -9999.0)
    meta = RasterMeta(ncols, nrows, xll, yll, cs, nodata)
    vals = np.array(" ".join(text[i:]).split(), dtype=float)
    if vals.size != ncols * nrows:
        raise ValidationError(f"{path}: expected {ncols * nrows} values, found {vals.size}")
    vals[vals == nodata] = np.nan
    return Raster(meta, vals.reshape(nrows, ncols))


def write_ascii_grid(raster: Raster, path, fmt: str = "%.10g") -> None:
    m = raster.meta
    vals = np.where(np.isfinite(raster.values), raster.values, m.nodata)
    with open(path, "w") as fh:
        fh.write(f"ncols        {m.ncols}\n")
        fh.write(f"nrows        {m.nrows}\n")
        fh.write(f"xllcorner    {m.xllcorner!r}\n")
        fh.write(f"yllcorner    {m.yllcorner!r}\n")
        fh.write(f"cellsize     {m.cellsize!r}\n")
        fh.write(f"NODATA_value {m.nodata:g}\n")
        np.savetxt(fh, vals, fmt=fmt)


def read_header(path) -> RasterMeta:
    return read_ascii_grid(path).meta
