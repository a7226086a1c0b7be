"""File formats: binary PGM/PPM for masks, labels, and heatmaps; FGRID for float
tensors; CSV for points and reports.

FGRID is a single ASCII header line `FGRID v1 <ndim> <d0> <d1> ...` followed by
row-major little-endian float32 payload (last dimension fastest).
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .masks import BinaryMask, LabelMap
from .prompts import PointPrompts


def _read_pnm_header(data: bytes, magic: bytes) -> tuple[int, int, int, int]:
    """Parse a binary netpbm header, returning (width, height, maxval, payload offset)."""
    if not data.startswith(magic):
        raise ValueError(f"not a {magic.decode()} file")
    fields: list[int] = []
    pos = len(magic)
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated netpbm header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    return width, height, maxval, pos


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary (P5) PGM with maxval <= 255 into a (h, w) uint8 array."""
    data = Path(path).read_bytes()
    width, height, maxval, pos = _read_pnm_header(data, b"P5")
    if maxval > 255:
        raise ValueError(f"PGM maxval {maxval} > 255 is out of scope")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    if pixels.size != width * height:
        raise ValueError("PGM payload shorter than width*height")
    return pixels.reshape(height, width).copy()


def write_pgm(path: str | Path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValueError("PGM payload must be 2-D")
    if pixels.min(initial=0) < 0 or pixels.max(initial=0) > 255:
        raise ValueError("PGM pixel values must be within 0..255")
    h, w = pixels.shape
    header = f"P5\n{w} {h}\n255\n".encode()
    Path(path).write_bytes(header + pixels.astype(np.uint8).tobytes())


def read_mask_pgm(path: str | Path) -> BinaryMask:
    """Pixels >= 128 count as set."""
    return BinaryMask(read_pgm(path) >= 128)


def write_mask_pgm(path: str | Path, mask: BinaryMask) -> None:
    write_pgm(path, np.where(mask.bits, 255, 0).astype(np.uint8))


def read_labelmap_pgm(path: str | Path) -> LabelMap:
    """Pixel values are label ids directly (0 = background)."""
    return LabelMap(read_pgm(path).astype(np.int64))


def write_labelmap_pgm(path: str | Path, lm: LabelMap) -> None:
    if lm.labels.max(initial=0) > 255:
        raise ValueError("label ids above 255 cannot be stored in PGM")
    write_pgm(path, lm.labels.astype(np.uint8))


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("PPM payload must be (h, w, 3)")
    h, w, _ = rgb.shape
    header = f"P6\n{w} {h}\n255\n".encode()
    Path(path).write_bytes(header + rgb.astype(np.uint8).tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    width, height, maxval, pos = _read_pnm_header(data, b"P6")
    if maxval > 255:
        raise ValueError("16-bit PPM is out of scope")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=pos)
    return pixels.reshape(height, width, 3).copy()


def write_fgrid(path: str | Path, tensor: np.ndarray) -> None:
    tensor = np.asarray(tensor, dtype=np.float32)
    dims = " ".join(str(d) for d in tensor.shape)
    header = f"FGRID v1 {tensor.ndim} {dims}\n".encode("ascii")
    Path(path).write_bytes(header + tensor.astype("<f4").tobytes(order="C"))


def read_fgrid(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    newline = data.find(b"\n")
    if newline < 0:
        raise ValueError("missing FGRID header line")
    parts = data[:newline].decode("ascii").split()
    if len(parts) < 3 or parts[0] != "FGRID" or parts[1] != "v1":
        raise ValueError("not an FGRID v1 file")
    ndim = int(parts[2])
    shape = tuple(int(p) for p in parts[3 : 3 + ndim])
    if len(shape) != ndim:
        raise ValueError("FGRID header dimension list is incomplete")
    count = int(np.prod(shape)) if shape else 1
    payload = np.frombuffer(data, dtype="<f4", count=count, offset=newline + 1)
    if payload.size != count:
        raise ValueError("FGRID payload shorter than the header promises")
    return payload.reshape(shape).astype(np.float64)


def write_points_csv(path: str | Path, points: PointPrompts) -> None:
    """Rows are x,y,prob with point coordinates in image pixels."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "prob"])
        for (x, y), p in zip(points.points, points.cell_probs):
            writer.writerow([f"{x:.6g}", f"{y:.6g}", f"{p:.12g}"])


def read_points_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    points = np.array([[float(r[0]), float(r[1])] for r in body], dtype=np.float64)
    probs = np.array([float(r[2]) for r in body], dtype=np.float64)
    return points.reshape(-1, 2), probs


def heatmap_rgb(values: np.ndarray) -> np.ndarray:
    """Min-max normalize a finite 2-D grid and map v to (round(255 v), 0, round(255 (1 - v))).

    A constant grid renders solid: pure red if the constant is nonzero, pure
    blue for an all-zero grid.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("heatmap input must be 2-D")
    if not np.isfinite(values).all():
        raise ValueError("heatmap input must be finite")
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        v = (values - lo) / (hi - lo)
    else:
        v = np.full_like(values, 1.0 if hi != 0.0 else 0.0)
    rgb = np.zeros(values.shape + (3,), dtype=np.uint8)
    rgb[:, :, 0] = np.round(255.0 * v)
    rgb[:, :, 2] = np.round(255.0 * (1.0 - v))
    return rgb


def render_heatmap(values: np.ndarray, path: str | Path) -> None:
    """Write the grid as a PPM heatmap (red = high, blue = low)."""
    write_ppm(path, heatmap_rgb(values))
