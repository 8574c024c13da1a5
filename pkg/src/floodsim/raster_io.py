"""Rectangular float32 rasters: ESRI ASCII grids and raw little-endian payloads.

Rows run north to south. The origin is the lower-left corner of the grid,
as in the ASCII grid header, so padding added on the south edge moves
``origin_y`` down.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

ASCII_GRID = "ascii_grid"
RAW_F32 = "raw_f32"
FORMATS = (ASCII_GRID, RAW_F32)

DEFAULT_NODATA = -9999.0

_ASCII_KEYS = {
    "ncols": "cols",
    "nrows": "rows",
    "xllcorner": "origin_x",
    "xllcenter": "origin_x",
    "yllcorner": "origin_y",
    "yllcenter": "origin_y",
    "cellsize": "cell_size",
    "nodata_value": "nodata",
}
_RAW_KEYS = ("rows", "cols", "cell_size", "nodata", "origin_x", "origin_y")


class RasterError(ValueError):
    """Malformed raster file or invalid raster contents."""


@dataclass
class Raster:
    values: np.ndarray
    cell_size: float
    origin_x: float = 0.0
    origin_y: float = 0.0
    nodata: float = DEFAULT_NODATA

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise RasterError(f"raster values must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise RasterError(f"raster must have at least one cell, got {values.shape}")
        if not self.cell_size > 0:
            raise RasterError(f"cell size must be positive, got {self.cell_size}")
        self.values = values
        self.nodata = float(np.float32(self.nodata))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def nodata_mask(self) -> np.ndarray:
        return (self.values == np.float32(self.nodata)) | ~np.isfinite(self.values)


@dataclass(frozen=True)
class PadRecord:
    """Original extent of a raster before :func:`pad_to_divisible`."""

    orig_rows: int
    orig_cols: int
    pad_rows: int = 0
    pad_cols: int = 0

    def crop(self, values: np.ndarray) -> np.ndarray:
        return values[: self.orig_rows, : self.orig_cols]


def infer_format(path) -> str:
    suffix = Path(path).suffix.lower()
    return ASCII_GRID if suffix in (".asc", ".txt", ".grd") else RAW_F32


def raw_header_path(path) -> Path:
    return Path(str(path) + ".hdr")


def load_raster(path, fmt: str | None = None) -> Raster:
    fmt = fmt or infer_format(path)
    if fmt == ASCII_GRID:
        return _load_ascii(Path(path))
    if fmt == RAW_F32:
        return _load_raw(Path(path))
    raise RasterError(f"unknown raster format {fmt!r}; expected one of {FORMATS}")


def _parse_header_value(key: str, token: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise RasterError(f"header value for {key!r} is not numeric: {token!r}") from None


def _build_raster(header: dict, values: np.ndarray, source) -> Raster:
    missing = {"rows", "cols", "cell_size"} - header.keys()
    if missing:
        raise RasterError(f"{source}: header missing {sorted(missing)}")
    rows, cols = header["rows"], header["cols"]
    if rows != int(rows) or cols != int(cols) or rows < 1 or cols < 1:
        raise RasterError(f"{source}: invalid dimensions {rows} x {cols}")
    rows, cols = int(rows), int(cols)
    if header["cell_size"] <= 0:
        raise RasterError(f"{source}: nonpositive cell size {header['cell_size']}")
    if values.size != rows * cols:
        raise RasterError(
            f"{source}: header declares {rows}x{cols}={rows * cols} values, payload has {values.size}"
        )
    return Raster(
        values=values.reshape(rows, cols),
        cell_size=header["cell_size"],
        origin_x=header.get("origin_x", 0.0),
        origin_y=header.get("origin_y", 0.0),
        nodata=header.get("nodata", DEFAULT_NODATA),
    )


def _load_ascii(path: Path) -> Raster:
    tokens = path.read_text().split()
    header = {}
    i = 0
    while i + 1 < len(tokens) and tokens[i].lower() in _ASCII_KEYS:
        key = _ASCII_KEYS[tokens[i].lower()]
        header[key] = _parse_header_value(tokens[i], tokens[i + 1])
        i += 2
    try:
        values = np.array(tokens[i:], dtype=np.float64).astype(np.float32)
    except ValueError as exc:
        raise RasterError(f"{path}: non-numeric grid value ({exc})") from None
    return _build_raster(header, values, path)


def _load_raw(path: Path) -> Raster:
    hdr = raw_header_path(path)
    if not hdr.exists():
        raise RasterError(f"{path}: missing header file {hdr}")
    header = {}
    for line in hdr.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] not in _RAW_KEYS:
            raise RasterError(f"{hdr}: cannot parse header line {line!r}")
        header[parts[0]] = _parse_header_value(parts[0], parts[1])
    values = np.fromfile(path, dtype="<f4")
    return _build_raster(header, values.astype(np.float32), path)


def _format_number(value: float) -> str:
    return f"{value:.9g}"


def write_raster(r: Raster, path, fmt: str | None = None) -> None:
    fmt = fmt or infer_format(path)
    path = Path(path)
    if fmt == ASCII_GRID:
        lines = [
            f"ncols {r.cols}",
            f"nrows {r.rows}",
            f"xllcorner {_format_number(r.origin_x)}",
            f"yllcorner {_format_number(r.origin_y)}",
            f"cellsize {_format_number(r.cell_size)}",
            f"NODATA_value {_format_number(r.nodata)}",
        ]
        body = [" ".join(_format_number(v) for v in row) for row in r.values.tolist()]
        path.write_text("\n".join(lines + body) + "\n")
    elif fmt == RAW_F32:
        header = {
            "rows": r.rows,
            "cols": r.cols,
            "cell_size": _format_number(r.cell_size),
            "nodata": _format_number(r.nodata),
            "origin_x": _format_number(r.origin_x),
            "origin_y": _format_number(r.origin_y),
        }
        raw_header_path(path).write_text("".join(f"{k} {v}\n" for k, v in header.items()))
        np.ascontiguousarray(r.values, dtype="<f4").tofile(path)
    else:
        raise RasterError(f"unknown raster format {fmt!r}; expected one of {FORMATS}")


def validate_dem(r: Raster) -> Raster:
    """Reject DEMs with nodata or non-finite cells; the simulation needs every elevation."""
    bad = r.nodata_mask()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise RasterError(f"DEM has {int(bad.sum())} nodata cells, first at row {row}, col {col}")
    return r


def padded_shape(rows: int, cols: int, row_multiple: int, col_multiple: int) -> tuple[int, int]:
    return (-(-rows // row_multiple) * row_multiple, -(-cols // col_multiple) * col_multiple)


def _pad_edge(r: Raster, rows: int, cols: int) -> Raster:
    pad_rows, pad_cols = rows - r.rows, cols - r.cols
    if pad_rows == 0 and pad_cols == 0:
        return r
    values = np.pad(r.values, ((0, pad_rows), (0, pad_cols)), mode="edge")
    return replace(r, values=values, origin_y=r.origin_y - pad_rows * r.cell_size)


def pad_to_divisible(r: Raster, cx: int, cy: int) -> tuple[Raster, PadRecord]:
    """Pad by edge replication so ``cy`` divides the rows and ``cx`` the columns."""
    if cx < 1 or cy < 1:
        raise ValueError(f"partition counts must be >= 1, got cx={cx}, cy={cy}")
    rows, cols = padded_shape(r.rows, r.cols, cy, cx)
    record = PadRecord(r.rows, r.cols, rows - r.rows, cols - r.cols)
    return _pad_edge(r, rows, cols), record


def downsampled_shape(rows: int, cols: int, factor: int) -> tuple[int, int]:
    """Grid shape after averaging ``factor`` x ``factor`` blocks (edge-padded if needed)."""
    if factor < 1:
        raise ValueError(f"downsample factor must be >= 1, got {factor}")
    return -(-rows // factor), -(-cols // factor)


def grid_points(extent_x: float, extent_y: float, resolution: float) -> int:
    """Cell count covering an ``extent_x`` by ``extent_y`` metre area."""
    return math.ceil(extent_x / resolution) * math.ceil(extent_y / resolution)


def downsample_mean(r: Raster, factor: int) -> Raster:
    if factor < 1:
        raise ValueError(f"downsample factor must be >= 1, got {factor}")
    if factor == 1:
        return replace(r, values=r.values.copy())
    rows, cols = downsampled_shape(r.rows, r.cols, factor)
    padded = _pad_edge(r, rows * factor, cols * factor)
    blocks = padded.values.astype(np.float64).reshape(rows, factor, cols, factor)
    means = blocks.sum(axis=(1, 3)) / (factor * factor)
    return replace(
        padded,
        values=means.astype(np.float32),
        cell_size=r.cell_size * factor,
    )


def uniform_like(r: Raster, value: float) -> Raster:
    return replace(r, values=np.full(r.shape, value, dtype=np.float32))


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
