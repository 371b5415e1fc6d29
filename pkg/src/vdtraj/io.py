"""Trajectory and density file formats.

SPKT v1 (trajectory): magic ``SPKT``, u32 LE version=1, u8 dims, u32 N_c,
u32 N_s, f64 k_max[dims] (1/m), f64 raster_dt (s), then N_c*N_s*dims f32 LE
normalized coordinates, shot-major, sample-minor, axis-innermost.

SPKD v1 (density grid): magic ``SPKD``, u32 LE version=1, u8 dims, u32 grid
side (2N+1), then f64 LE grid values, row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import SamplingPattern

SPKT_MAGIC = b"SPKT"
SPKD_MAGIC = b"SPKD"
FORMAT_VERSION = 1


class FileFormatError(ValueError):
    """Malformed trajectory/density file; carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class TrajectoryHeader:
    dims: int
    n_c: int
    n_s: int
    k_max: tuple
    raster_dt: float


def write_spkt(
    path,
    pattern: SamplingPattern,
    k_max,
    raster_dt: float,
) -> None:
    """Write a pattern to an SPKT v1 file."""
    k_max = tuple(float(v) for v in np.broadcast_to(k_max, (pattern.dims,)))
    header = struct.pack(
        "<4sIBII", SPKT_MAGIC, FORMAT_VERSION, pattern.dims, pattern.shots,
        pattern.samples_per_shot,
    )
    header += struct.pack(f"<{pattern.dims}d", *k_max)
    header += struct.pack("<d", raster_dt)
    coords = np.ascontiguousarray(pattern.coords, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(coords.tobytes())


def read_spkt(path) -> tuple[SamplingPattern, TrajectoryHeader]:
    """Read an SPKT v1 file; raises FileFormatError with the byte offset."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 17:
        raise FileFormatError("file too short for SPKT header", len(data))
    magic, version, dims, n_c, n_s = struct.unpack_from("<4sIBII", data, 0)
    if magic != SPKT_MAGIC:
        raise FileFormatError(f"bad magic {magic!r}, expected {SPKT_MAGIC!r}", 0)
    if version != FORMAT_VERSION:
        raise FileFormatError(f"unsupported version {version}", 4)
    if dims not in (2, 3):
        raise FileFormatError(f"dims must be 2 or 3, got {dims}", 8)
    offset = struct.calcsize("<4sIBII")
    need = dims * 8 + 8
    if len(data) < offset + need:
        raise FileFormatError("truncated SPKT header", len(data))
    k_max = struct.unpack_from(f"<{dims}d", data, offset)
    offset += dims * 8
    (raster_dt,) = struct.unpack_from("<d", data, offset)
    offset += 8
    n_vals = n_c * n_s * dims
    if len(data) != offset + 4 * n_vals:
        raise FileFormatError(
            f"expected {4 * n_vals} coordinate bytes, found {len(data) - offset}",
            offset,
        )
    coords = np.frombuffer(data, dtype="<f4", count=n_vals, offset=offset)
    coords = coords.astype(np.float64).reshape(n_c, n_s, dims)
    header = TrajectoryHeader(dims=dims, n_c=n_c, n_s=n_s, k_max=k_max,
                              raster_dt=raster_dt)
    return SamplingPattern(coords), header


def write_trajectory_csv(path, pattern: SamplingPattern) -> None:
    """Write normalized coordinates as CSV with 9 significant digits."""
    axes = ["kx", "ky", "kz"][: pattern.dims]
    with open(path, "w") as fh:
        fh.write("shot,sample," + ",".join(axes) + "\n")
        for s in range(pattern.shots):
            for n in range(pattern.samples_per_shot):
                vals = ",".join(f"{v:.9g}" for v in pattern.coords[s, n])
                fh.write(f"{s},{n},{vals}\n")


def read_trajectory_csv(path) -> SamplingPattern:
    """Read a trajectory CSV written by :func:`write_trajectory_csv`."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    if data.size == 0:
        raise FileFormatError("empty trajectory CSV", 0)
    names = data.dtype.names
    dims = len(names) - 2
    if dims not in (2, 3):
        raise FileFormatError(f"expected 4 or 5 CSV columns, got {len(names)}", 0)
    shots = int(data["shot"].max()) + 1
    n_s = int(data["sample"].max()) + 1
    if shots * n_s != data.size:
        raise FileFormatError(
            f"expected {shots * n_s} rows for {shots} shots x {n_s} samples, "
            f"got {data.size}", 0)
    coords = np.empty((shots, n_s, dims))
    rows = (data["shot"].astype(int), data["sample"].astype(int))
    for ax, name in enumerate(names[2:]):
        coords[rows[0], rows[1], ax] = data[name]
    return SamplingPattern(coords)


def write_spkd(path, grid: np.ndarray) -> None:
    """Write a density grid ((2N+1)^d values) to an SPKD v1 file."""
    grid = np.asarray(grid, dtype=np.float64)
    dims = grid.ndim
    side = grid.shape[0]
    if any(s != side for s in grid.shape):
        raise ValueError("density grid must be cubic")
    header = struct.pack("<4sIBI", SPKD_MAGIC, FORMAT_VERSION, dims, side)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(grid, dtype="<f8").tobytes())


def read_spkd(path) -> np.ndarray:
    """Read an SPKD v1 density grid."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 13:
        raise FileFormatError("file too short for SPKD header", len(data))
    magic, version, dims, side = struct.unpack_from("<4sIBI", data, 0)
    if magic != SPKD_MAGIC:
        raise FileFormatError(f"bad magic {magic!r}, expected {SPKD_MAGIC!r}", 0)
    if version != FORMAT_VERSION:
        raise FileFormatError(f"unsupported version {version}", 4)
    n_vals = side**dims
    offset = 13
    if len(data) != offset + 8 * n_vals:
        raise FileFormatError(
            f"expected {8 * n_vals} grid bytes, found {len(data) - offset}", offset)
    grid = np.frombuffer(data, dtype="<f8", count=n_vals, offset=offset)
    return grid.astype(np.float64).reshape((side,) * dims)


def load_trajectory(path) -> SamplingPattern:
    """Load a trajectory from SPKT or CSV, dispatching on the magic bytes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == SPKT_MAGIC:
        pattern, _ = read_spkt(path)
        return pattern
    return read_trajectory_csv(path)
