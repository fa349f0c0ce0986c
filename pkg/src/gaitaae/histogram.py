"""Cylindrical histograms of walking-posture point clouds.

A vertical cylinder is fitted to each cloud (axis through the xy centroid,
bases through the lowest and highest points, radius reaching the farthest
point). The cylinder is cut into ``rows`` equal height bands and ``sectors``
equal angular wedges, points are counted per cell, and the count grid is
scaled to [0, 1] and quantized to 256 levels.

Angular convention: column 0 starts at ``atan2 = -pi`` (the -x direction)
and columns increase counter-clockwise seen from above. Row 0 is the lowest
height band.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _accel
from .errors import DataError, DegenerateCloud, EmptyHistogram, ShapeMismatch, VersionMismatch

DEFAULT_ROWS = 16
DEFAULT_SECTORS = 16
LEVELS = 255

GHIST_MAGIC = b"GHIST1"
_GHIST_HEADER = struct.Struct("<6sHH")


@dataclass
class PointCloud:
    """One frame of 3D body points in meters, z pointing up."""

    points: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ShapeMismatch(f"points must have shape (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DegenerateCloud(f"frame {self.frame_index}: non-finite coordinates")
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")
        self.points = pts

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class CylinderFrame:
    centroid_xy: tuple[float, float]
    z_min: float
    z_max: float
    radius: float


@dataclass
class RawHistogram:
    counts: np.ndarray  # (rows, sectors) int64

    @property
    def shape(self):
        return self.counts.shape


@dataclass
class Histogram:
    """Normalized histogram stored as 8-bit levels; ``values`` = levels / 255."""

    levels: np.ndarray  # (rows, sectors) uint8

    @property
    def values(self) -> np.ndarray:
        return self.levels.astype(np.float64) / LEVELS

    @property
    def shape(self):
        return self.levels.shape

    @property
    def size(self) -> int:
        return int(self.levels.size)


def fit_cylinder(cloud: PointCloud) -> CylinderFrame:
    """Fit the bounding vertical cylinder of a cloud.

    Raises:
        DegenerateCloud: fewer than two points, zero height, or every point
            on the axis (zero radius).
    """
    pts = cloud.points
    if len(pts) < 2:
        raise DegenerateCloud(f"frame {cloud.frame_index}: need at least 2 points, got {len(pts)}")
    z_min = float(pts[:, 2].min())
    z_max = float(pts[:, 2].max())
    if not z_max > z_min:
        raise DegenerateCloud(f"frame {cloud.frame_index}: all points share the same height")
    cx = float(pts[:, 0].mean())
    cy = float(pts[:, 1].mean())
    radius = float(np.sqrt((pts[:, 0] - cx) ** 2 + (pts[:, 1] - cy) ** 2).max())
    if not radius > 0.0:
        raise DegenerateCloud(f"frame {cloud.frame_index}: all points lie on the cylinder axis")
    return CylinderFrame((cx, cy), z_min, z_max, radius)


@_accel.njit
def _bin_points_loop(pts, cx, cy, z_min, z_max, rows, sectors):
    counts = np.zeros((rows, sectors), dtype=np.int64)
    height = z_max - z_min
    two_pi = 2.0 * math.pi
    for i in range(pts.shape[0]):
        r = int(math.floor((pts[i, 2] - z_min) / height * rows))
        if r < 0:
            r = 0
        elif r > rows - 1:
            r = rows - 1
        a = math.atan2(pts[i, 1] - cy, pts[i, 0] - cx)
        c = int(math.floor((a + math.pi) / two_pi * sectors))
        if c < 0:
            c = 0
        elif c > sectors - 1:
            c = sectors - 1
        counts[r, c] += 1
    return counts


def _bin_points_numpy(pts, cx, cy, z_min, z_max, rows, sectors):
    r = np.floor((pts[:, 2] - z_min) / (z_max - z_min) * rows).astype(np.int64)
    np.clip(r, 0, rows - 1, out=r)
    a = np.arctan2(pts[:, 1] - cy, pts[:, 0] - cx)
    c = np.floor((a + np.pi) / (2.0 * np.pi) * sectors).astype(np.int64)
    np.clip(c, 0, sectors - 1, out=c)
    flat = np.bincount(r * sectors + c, minlength=rows * sectors)
    return flat.reshape(rows, sectors).astype(np.int64)


def bin_points(pts, cyl: CylinderFrame, rows: int, sectors: int, use_numba: bool | None = None) -> np.ndarray:
    """Count points per (height band, angular sector) cell."""
    if use_numba is None:
        use_numba = _accel.USE_NUMBA
    kernel = _bin_points_loop if use_numba else _bin_points_numpy
    cx, cy = cyl.centroid_xy
    return kernel(np.ascontiguousarray(pts, dtype=np.float64), cx, cy, cyl.z_min, cyl.z_max, int(rows), int(sectors))


def compute_raw_histogram(
    cloud: PointCloud,
    cyl: CylinderFrame | None = None,
    rows: int = DEFAULT_ROWS,
    sectors: int = DEFAULT_SECTORS,
) -> RawHistogram:
    if rows < 1 or sectors < 1:
        raise ValueError("rows and sectors must be positive")
    if cyl is None:
        cyl = fit_cylinder(cloud)
    if not (cyl.z_max > cyl.z_min and cyl.radius > 0):
        raise DegenerateCloud(f"frame {cloud.frame_index}: invalid cylinder {cyl}")
    return RawHistogram(bin_points(cloud.points, cyl, rows, sectors))


def normalize_histogram(raw: RawHistogram) -> Histogram:
    """Scale by the per-frame max count and round to 256 levels (half away from zero)."""
    counts = np.asarray(raw.counts)
    peak = counts.max() if counts.size else 0
    if peak <= 0:
        raise EmptyHistogram("histogram has no points")
    levels = np.floor(counts / peak * LEVELS + 0.5)
    return Histogram(levels.astype(np.uint8))


def cloud_to_histogram(cloud: PointCloud, rows: int = DEFAULT_ROWS, sectors: int = DEFAULT_SECTORS) -> Histogram:
    return normalize_histogram(compute_raw_histogram(cloud, None, rows, sectors))


def flatten(hist: Histogram) -> np.ndarray:
    """Row-major vector of the [0, 1] values, lowest band first."""
    return hist.values.reshape(-1)


def unflatten(vec, rows: int = DEFAULT_ROWS, sectors: int = DEFAULT_SECTORS) -> Histogram:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.size != rows * sectors:
        raise ShapeMismatch(f"expected {rows * sectors} values, got {vec.size}")
    levels = np.floor(vec.reshape(rows, sectors) * LEVELS + 0.5)
    return Histogram(levels.astype(np.uint8))


def stack_histograms(hists) -> np.ndarray:
    """Flatten a sequence of histograms into an (n, rows*sectors) float64 matrix."""
    hists = list(hists)
    if not hists:
        return np.zeros((0, DEFAULT_ROWS * DEFAULT_SECTORS))
    return np.stack([h.levels.reshape(-1) for h in hists]).astype(np.float64) / LEVELS


# -- file formats -----------------------------------------------------------


def write_point_cloud(path, cloud: PointCloud) -> None:
    """Write one ``x y z`` line per point."""
    pts = np.asarray(cloud.points, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write(("%.6f %.6f %.6f\n" * len(pts)) % tuple(pts.ravel()))


def read_point_cloud(path, frame_index: int = 0) -> PointCloud:
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) % 3:
        raise DataError(f"{path}: expected three coordinates per line")
    return PointCloud(np.array(tokens, dtype=np.float64).reshape(-1, 3), frame_index)


def write_sequence_manifest(path, frame_files) -> None:
    """List frame files, one per line, in temporal order."""
    Path(path).write_text("".join(f"{name}\n" for name in frame_files))


def read_sequence_manifest(path) -> list[Path]:
    path = Path(path)
    names = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    return [path.parent / n for n in names]


def encode_ghist(hist: Histogram) -> bytes:
    rows, cols = hist.shape
    return _GHIST_HEADER.pack(GHIST_MAGIC, rows, cols) + hist.levels.astype(np.uint8).tobytes(order="C")


def decode_ghist(blob: bytes) -> Histogram:
    if len(blob) < _GHIST_HEADER.size:
        raise VersionMismatch("truncated histogram file")
    magic, rows, cols = _GHIST_HEADER.unpack_from(blob)
    if magic != GHIST_MAGIC:
        raise VersionMismatch(f"bad histogram magic {magic!r}")
    body = blob[_GHIST_HEADER.size:]
    if len(body) != rows * cols:
        raise VersionMismatch(f"histogram body has {len(body)} bytes, expected {rows * cols}")
    return Histogram(np.frombuffer(body, dtype=np.uint8).reshape(rows, cols).copy())


def write_ghist(path, hist: Histogram) -> None:
    Path(path).write_bytes(encode_ghist(hist))


def read_ghist(path) -> Histogram:
    return decode_ghist(Path(path).read_bytes())


def write_histogram_csv(path, hist: Histogram) -> None:
    """Inspection export: one CSV row per height band, values as 0..255 levels."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerows(hist.levels.tolist())
