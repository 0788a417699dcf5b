"""3D voxel assembly and geometric analyses of a tracked stack.

LVOL binary layout (little-endian)::

    offset  size  field
    0       4     magic b"LVOL"
    4       4     format version (uint32, currently 1)
    8       12    nx, ny, nz (uint32 each)
    20      16    pixel_size_um, depth_step_um (float64 each)
    36      ...   nx*ny*nz uint16 labels, z-major then row-major
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DataError

LVOL_MAGIC = b"LVOL"
LVOL_VERSION = 1
_HEADER = struct.Struct("<4sIIIIdd")


@dataclass(frozen=True, eq=False)
class VoxelVolume:
    """Labels indexed ``[z, row, col]``; dims reported as ``(nx, ny, nz)``."""

    labels: np.ndarray
    pixel_size_um: float
    depth_step_um: float

    def __post_init__(self):
        if self.labels.ndim != 3 or 0 in self.labels.shape:
            raise DataError(f"volume must be a nonempty 3D grid, got shape {self.labels.shape}")
        if self.labels.dtype != np.uint16:
            raise DataError("volume labels must be uint16")
        if not (self.pixel_size_um > 0 and self.depth_step_um > 0):
            raise DataError("physical voxel sizes must be positive")

    @property
    def dims(self):
        nz, ny, nx = self.labels.shape
        return nx, ny, nz

    def slice(self, z):
        return self.labels[z]

    def __eq__(self, other):
        if not isinstance(other, VoxelVolume):
            return NotImplemented
        return (self.pixel_size_um == other.pixel_size_um and self.depth_step_um == other.depth_step_um
                and np.array_equal(self.labels, other.labels))

    __hash__ = None


@dataclass(frozen=True)
class YarnPath:
    yarn: int
    frames: tuple
    points: np.ndarray    # (n, 3) x_um, y_um, z_um
    tangents: np.ndarray  # (n, 3) unit vectors


@dataclass(frozen=True)
class AreaRecord:
    yarn: int
    frame_index: int
    pixels: int
    area_um2: float


@dataclass(frozen=True)
class AreaDistribution:
    records: tuple
    bin_edges: np.ndarray
    counts: np.ndarray
    mean: float
    std: float
    min: float
    max: float


def assemble_volume(tracked, manifest=None, pixel_size_um=None, depth_step_um=None):
    frames = getattr(tracked, "frames", tracked)
    if not len(frames):
        raise DataError("cannot assemble an empty stack")
    shape = frames[0].labels.shape
    for f in frames:
        if f.labels.shape != shape:
            raise DataError(f"dimension mismatch at frame {f.frame_index}")
    if manifest is not None:
        pixel_size_um = manifest.pixel_size_um
        depth_step_um = manifest.depth_step_um
    if pixel_size_um is None or depth_step_um is None:
        raise DataError("physical voxel sizes are required")
    return VoxelVolume(np.stack([f.labels for f in frames]), float(pixel_size_um), float(depth_step_um))


def _slice_stats(labels):
    """Per-label pixel counts and coordinate sums of one slice."""
    flat = labels.ravel()
    n = int(flat.max()) + 1
    rows, cols = np.indices(labels.shape)
    counts = np.bincount(flat, minlength=n)
    rsum = np.bincount(flat, weights=rows.ravel(), minlength=n)
    csum = np.bincount(flat, weights=cols.ravel(), minlength=n)
    return counts, rsum, csum


def _tangents(points):
    n = len(points)
    if n == 1:
        return np.array([[0.0, 0.0, 1.0]])
    d = np.empty_like(points)
    d[1:-1] = points[2:] - points[:-2]
    d[0] = points[1] - points[0]
    d[-1] = points[-1] - points[-2]
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def extract_paths(volume):
    """Per-yarn centroid polylines with central-difference unit tangents."""
    px, dz = volume.pixel_size_um, volume.depth_step_um
    acc: dict[int, list] = {}
    for z in range(volume.labels.shape[0]):
        counts, rsum, csum = _slice_stats(volume.labels[z])
        for yid in np.flatnonzero(counts[1:]) + 1:
            c = counts[yid]
            acc.setdefault(int(yid), []).append((z, csum[yid] / c * px, rsum[yid] / c * px, z * dz))
    paths = []
    for yid in sorted(acc):
        rows = acc[yid]
        pts = np.array([r[1:] for r in rows], dtype=np.float64)
        paths.append(YarnPath(yid, tuple(r[0] for r in rows), pts, _tangents(pts)))
    return paths


def contact_regions(volume):
    """Shared face area (um^2) between every pair of touching yarns."""
    low, high, axis, counts = kernels.decode_contact_codes(kernels.face_contact_codes(volume.labels))
    px, dz = volume.pixel_size_um, volume.depth_step_um
    face_area = np.where(axis == 0, px * px, px * dz)
    out: dict[frozenset, float] = {}
    for a, b, area in zip(low.tolist(), high.tolist(), (counts * face_area).tolist()):
        key = frozenset((a, b))
        out[key] = out.get(key, 0.0) + area
    return out


def sturges_bins(n):
    return max(1, math.ceil(math.log2(n)) + 1) if n > 0 else 1


def area_distribution(volume, bins=None):
    px2 = volume.pixel_size_um ** 2
    records = []
    for z in range(volume.labels.shape[0]):
        counts = np.bincount(volume.labels[z].ravel())
        for yid in np.flatnonzero(counts[1:]) + 1:
            records.append(AreaRecord(int(yid), z, int(counts[yid]), counts[yid] * px2))
    records.sort(key=lambda r: (r.yarn, r.frame_index))
    areas = np.array([r.area_um2 for r in records], dtype=np.float64)
    if areas.size == 0:
        return AreaDistribution((), np.zeros(0), np.zeros(0, dtype=np.int64), 0.0, 0.0, 0.0, 0.0)
    counts, edges = np.histogram(areas, bins=bins or sturges_bins(areas.size))
    return AreaDistribution(tuple(records), edges, counts, float(areas.mean()), float(areas.std()),
                            float(areas.min()), float(areas.max()))


# --- file formats ---------------------------------------------------------------

def export_volume(volume, path):
    path = Path(path)
    nx, ny, nz = volume.dims
    for d in (nx, ny, nz):
        if d >= 2 ** 32:
            raise DataError("volume dimension exceeds 32-bit header field")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(LVOL_MAGIC, LVOL_VERSION, nx, ny, nz,
                              volume.pixel_size_um, volume.depth_step_um))
        np.ascontiguousarray(volume.labels, dtype="<u2").tofile(fh)
    return path


def read_lvol_header(path):
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated LVOL header")
    magic, version, nx, ny, nz, px, dz = _HEADER.unpack(raw)
    if magic != LVOL_MAGIC:
        raise DataError(f"{path}: not an LVOL file")
    if version != LVOL_VERSION:
        raise DataError(f"{path}: unsupported LVOL version {version}")
    return {"nx": nx, "ny": ny, "nz": nz, "pixel_size_um": px, "depth_step_um": dz}


def import_volume(path):
    hdr = read_lvol_header(path)
    count = hdr["nx"] * hdr["ny"] * hdr["nz"]
    data = np.fromfile(path, dtype="<u2", count=count, offset=_HEADER.size)
    if data.size != count:
        raise DataError(f"{path}: expected {count} voxels, found {data.size}")
    labels = data.reshape(hdr["nz"], hdr["ny"], hdr["nx"]).astype(np.uint16, copy=False)
    return VoxelVolume(labels, hdr["pixel_size_um"], hdr["depth_step_um"])


def export_vtk(volume, path, binary=True):
    """Legacy VTK structured-points file for viewers such as ParaView."""
    nx, ny, nz = volume.dims
    px, dz = volume.pixel_size_um, volume.depth_step_um
    header = (
        "# vtk DataFile Version 3.0\n"
        "yarn labels\n"
        f"{'BINARY' if binary else 'ASCII'}\n"
        "DATASET STRUCTURED_POINTS\n"
        f"DIMENSIONS {nx} {ny} {nz}\n"
        "ORIGIN 0 0 0\n"
        f"SPACING {px!r} {px!r} {dz!r}\n"
        f"POINT_DATA {nx * ny * nz}\n"
        "SCALARS yarn unsigned_short 1\n"
        "LOOKUP_TABLE default\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            np.ascontiguousarray(volume.labels, dtype=">u2").tofile(fh)
        else:
            for z in range(nz):
                np.savetxt(fh, volume.labels[z], fmt="%d")
        fh.write(b"\n")
    return Path(path)


def write_paths_csv(paths, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["yarn", "frame", "x_um", "y_um", "z_um", "tx", "ty", "tz"])
        for p in paths:
            for z, pt, tg in zip(p.frames, p.points, p.tangents):
                w.writerow([p.yarn, z, *(f"{v:.10g}" for v in pt), *(f"{v:.10g}" for v in tg)])
    return path


def write_contacts_csv(contacts, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["yarn_a", "yarn_b", "area_um2"])
        for key in sorted(contacts, key=lambda k: tuple(sorted(k))):
            a, b = sorted(key)
            w.writerow([a, b, f"{contacts[key]:.10g}"])
    return path


def write_areas_csv(dist, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["yarn", "frame", "area_um2"])
        for r in dist.records:
            w.writerow([r.yarn, r.frame_index, f"{r.area_um2:.10g}"])
    return path


def write_histogram_csv(dist, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_low_um2", "bin_high_um2", "count"])
        for lo, hi, c in zip(dist.bin_edges[:-1], dist.bin_edges[1:], dist.counts):
            w.writerow([f"{lo:.10g}", f"{hi:.10g}", int(c)])
    return path
