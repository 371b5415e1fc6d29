"""Pattern analysis: density compensation, point spread function, metrics.

The nonuniform DFT between trajectory samples and the image grid is exact
direct summation, organized as per-axis phase tables and matrix products so
it stays fast at desk scale without approximate gridding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import HardwareSpec, SamplingPattern, resample_to_dwell
from .density import TargetDensity

DB_CAP = 300.0
# p * grid-voxel budget for the direct DFT before requiring allow_slow.
DFT_BUDGET = 1 << 31


def _grid_axes(grid_shape) -> list[np.ndarray]:
    return [np.arange(n) - n // 2 for n in grid_shape]


def _phase_tables(points: np.ndarray, grid_shape) -> list[np.ndarray]:
    """Per-axis tables exp(i*pi*k*r) for normalized k and integer voxels r."""
    axes = _grid_axes(grid_shape)
    return [np.exp(1j * np.pi * np.outer(points[:, ax], axes[ax]))
            for ax in range(points.shape[1])]


def _check_budget(p: int, grid_shape, allow_slow: bool):
    voxels = int(np.prod(grid_shape))
    if p * voxels > DFT_BUDGET and not allow_slow:
        raise ValueError(
            f"direct DFT of {p} samples on a {tuple(grid_shape)} grid "
            f"({p * voxels:.2e} sample-voxel products) exceeds the budget; "
            f"pass allow_slow=True (CLI: --allow-slow) to run anyway")


def nudft_adjoint(
    points: np.ndarray, weights: np.ndarray, grid_shape, allow_slow: bool = False
) -> np.ndarray:
    """Grid weighted samples onto the image grid (adjoint nonuniform DFT)."""
    p, dims = points.shape
    _check_budget(p, grid_shape, allow_slow)
    tables = _phase_tables(points, grid_shape)
    w = np.asarray(weights, dtype=np.complex128)
    if dims == 2:
        return tables[0].T @ (w[:, None] * tables[1])
    nx, ny, nz = grid_shape
    exy = np.einsum("ia,ib->iab", tables[0], tables[1]).reshape(p, nx * ny)
    out = exy.T @ (w[:, None] * tables[2])
    return out.reshape(nx, ny, nz)


def nudft_forward(
    points: np.ndarray, image: np.ndarray, allow_slow: bool = False
) -> np.ndarray:
    """Sample an image-grid function at the trajectory points."""
    p, dims = points.shape
    _check_budget(p, image.shape, allow_slow)
    tables = _phase_tables(points, image.shape)
    if dims == 2:
        return np.einsum("ia,ab,ib->i", tables[0].conj(), image, tables[1].conj())
    nx, ny, nz = image.shape
    exy = np.einsum("ia,ib->iab", tables[0], tables[1]).reshape(p, nx * ny)
    m = exy.conj() @ image.reshape(nx * ny, nz)
    return np.einsum("ic,ic->i", m, tables[2].conj())


def density_compensation(
    k: SamplingPattern, grid_shape, iters: int = 10, allow_slow: bool = False
) -> np.ndarray:
    """Iterative density-compensation weights for adjoint reconstruction.

    Starts from unit weights and repeatedly divides by the re-sampled
    gridded weights; the denominator magnitude is floored at 1e-12.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    pts = k.points()
    if pts.shape[0] == 0:
        raise ValueError("empty sampling pattern")
    w = np.ones(pts.shape[0])
    for _ in range(iters):
        gridded = nudft_adjoint(pts, w, grid_shape, allow_slow)
        back = nudft_forward(pts, gridded, allow_slow)
        w = w / np.maximum(np.abs(back), 1e-12)
    return w


@dataclass
class PsfVolume:
    """Point spread function magnitudes on the image grid."""

    values: np.ndarray
    peak_index: tuple
    peak_value: float

    @property
    def dims(self) -> int:
        return self.values.ndim


def compute_psf(
    k: SamplingPattern,
    grid_shape,
    weights: np.ndarray | None = None,
    hw: HardwareSpec | None = None,
    allow_slow: bool = False,
) -> PsfVolume:
    """Density-compensated adjoint response to unit measurements.

    When hardware timing is provided, the pattern is first resampled from
    the raster to the ADC dwell grid so the PSF reflects the measured
    sample positions.
    """
    if hw is not None:
        k = resample_to_dwell(k, hw)
    pts = k.points()
    if weights is None:
        weights = np.ones(pts.shape[0])
    if len(weights) != pts.shape[0]:
        raise ValueError(
            f"weights length {len(weights)} != sample count {pts.shape[0]}")
    vol = nudft_adjoint(pts, weights, grid_shape, allow_slow)
    vol /= np.sum(weights)
    mag = np.abs(vol)
    peak_index = tuple(
        int(i) for i in np.unravel_index(int(np.argmax(mag)), mag.shape))
    return PsfVolume(values=mag, peak_index=peak_index,
                     peak_value=float(mag[peak_index]))


@dataclass
class PsfMetrics:
    fwhm: tuple
    psl_db: float
    pnl_db: float
    fwhm_bounded: bool

    def as_dict(self) -> dict:
        return {
            "fwhm_voxels": list(self.fwhm),
            "psl_db": self.psl_db,
            "pnl_db": self.pnl_db,
            "fwhm_bounded": self.fwhm_bounded,
        }


def _axis_profile(values: np.ndarray, peak_index, axis: int) -> np.ndarray:
    sl = list(peak_index)
    sl[axis] = slice(None)
    return values[tuple(sl)]


def _crossing_offset(v_hi: float, v_lo: float, v_next: float, half: float) -> float:
    """Sub-voxel crossing position within [0, 1] between v_hi and v_lo.

    A parabola through the bracketing samples and the one beyond removes
    most of the bias a straight linear interpolation has on convex decaying
    profiles (a sigma = 1 voxel Gaussian comes out at 2.35 instead of 2.45);
    degenerate fits fall back to the linear crossing.
    """
    lin = (v_hi - half) / (v_hi - v_lo)
    # parabola through u = 0, 1, 2 with values v_hi, v_lo, v_next
    a = 0.5 * (v_next - 2.0 * v_lo + v_hi)
    b = v_lo - v_hi - a
    c = v_hi - half
    if abs(a) < 1e-14 * max(abs(v_hi), 1e-300):
        return lin
    disc = b * b - 4.0 * a * c
    if disc < 0:
        return lin
    sq = np.sqrt(disc)
    for root in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
        if 0.0 <= root <= 1.0:
            return root
    return lin


def _half_max_width(profile: np.ndarray, peak_pos: int) -> float:
    """Width at half maximum around peak_pos, sub-voxel crossings."""
    half = profile[peak_pos] / 2.0
    right = np.inf
    for j in range(peak_pos + 1, len(profile)):
        if profile[j] < half:
            v_next = profile[j + 1] if j + 1 < len(profile) else profile[j]
            frac = _crossing_offset(profile[j - 1], profile[j], v_next, half)
            right = (j - 1 + frac) - peak_pos
            break
    left = np.inf
    for j in range(peak_pos - 1, -1, -1):
        if profile[j] < half:
            v_next = profile[j - 1] if j - 1 >= 0 else profile[j]
            frac = _crossing_offset(profile[j + 1], profile[j], v_next, half)
            left = peak_pos - (j + 1 - frac)
            break
    return left + right


def _main_lobe_bounds(profile: np.ndarray, peak_pos: int) -> tuple[int, int]:
    """Extent of the main lobe: first local minimum on each side."""
    hi = len(profile) - 1
    j = peak_pos
    while j < hi and profile[j + 1] <= profile[j]:
        j += 1
    lo_j = peak_pos
    while lo_j > 0 and profile[lo_j - 1] <= profile[lo_j]:
        lo_j -= 1
    return lo_j, j


def psf_metrics(psf: PsfVolume, noise_shell: float = 0.75) -> PsfMetrics:
    """Width, sidelobe and noise-floor metrics of a PSF.

    FWHM is measured along each axis line through the peak.  The peak-to-
    sidelobe level compares the peak against the largest local maximum
    outside the main lobe (delimited by the first local minimum along each
    axis); the peak-to-noise level uses the RMS over the outer shell beyond
    ``noise_shell`` of the per-axis half-width.  Both ratios are reported
    in dB (20 log10) and capped at 300 dB.
    """
    vals = psf.values
    peak = psf.peak_value
    if peak <= 0:
        raise ValueError("PSF peak must be strictly positive")
    dims = vals.ndim

    fwhm = []
    bounded = True
    lobe_lo = []
    lobe_hi = []
    for ax in range(dims):
        profile = _axis_profile(vals, psf.peak_index, ax)
        width = _half_max_width(profile, psf.peak_index[ax])
        if not np.isfinite(width):
            bounded = False
        fwhm.append(float(width))
        lo, hi = _main_lobe_bounds(profile, psf.peak_index[ax])
        lobe_lo.append(lo)
        lobe_hi.append(hi)

    # Sidelobe search outside the main-lobe box.
    inside = np.zeros(vals.shape, dtype=bool)
    box = tuple(slice(lo, hi + 1) for lo, hi in zip(lobe_lo, lobe_hi))
    inside[box] = True
    local_max = np.ones(vals.shape, dtype=bool)
    for ax in range(dims):
        fwd = np.roll(vals, -1, axis=ax)
        bwd = np.roll(vals, 1, axis=ax)
        local_max &= (vals >= fwd) & (vals >= bwd)
    candidates = vals[local_max & ~inside]
    if candidates.size and candidates.max() > 0:
        psl = 20.0 * np.log10(peak / candidates.max())
    else:
        psl = DB_CAP
    psl = float(min(psl, DB_CAP))

    # Noise level over the outer radial shell, radius normalized per axis.
    axes = [(np.arange(n) - c) / (n / 2.0) for n, c in zip(vals.shape, psf.peak_index)]
    grids = np.meshgrid(*axes, indexing="ij")
    r = np.sqrt(sum(g * g for g in grids))
    shell = vals[r > noise_shell]
    if shell.size and np.any(shell > 0):
        pnl = 20.0 * np.log10(peak / np.sqrt(np.mean(shell**2)))
    else:
        pnl = DB_CAP
    pnl = float(min(pnl, DB_CAP))

    return PsfMetrics(fwhm=tuple(fwhm), psl_db=psl, pnl_db=pnl,
                      fwhm_bounded=bounded)


def bin_samples(points: np.ndarray, bins: int) -> np.ndarray:
    """Normalized histogram of samples on a uniform grid over the cube."""
    dims = points.shape[1]
    idx = np.clip(((points + 1.0) * 0.5 * bins).astype(np.int64), 0, bins - 1)
    flat = np.zeros(bins**dims)
    lin = np.zeros(len(points), dtype=np.int64)
    for ax in range(dims):
        lin = lin * bins + idx[:, ax]
    np.add.at(flat, lin, 1.0)
    return (flat / len(points)).reshape((bins,) * dims)


def bin_density(rho: TargetDensity, bins: int) -> np.ndarray:
    """Aggregate the density grid into the same histogram bins."""
    n = rho.grid_n
    dims = rho.dims
    pos = np.arange(-n, n + 1) / n
    idx = np.clip(((pos + 1.0) * 0.5 * bins).astype(np.int64), 0, bins - 1)
    flat = np.zeros(bins**dims)
    mesh = np.meshgrid(*([idx] * dims), indexing="ij")
    lin = np.zeros(mesh[0].shape, dtype=np.int64)
    for ax in range(dims):
        lin = lin * bins + mesh[ax]
    np.add.at(flat, lin.ravel(), rho.grid.ravel())
    return flat.reshape((bins,) * dims)


def density_compliance(
    k: SamplingPattern, rho: TargetDensity, bins: int = 8
) -> tuple[float, np.ndarray, np.ndarray]:
    """L1 distance between the binned sample distribution and the target.

    Returns (l1_distance, sample_histogram, density_histogram).
    """
    if bins < 4:
        raise ValueError("bins must be >= 4 per axis")
    if k.dims != rho.dims:
        raise ValueError(f"pattern dims {k.dims} != density dims {rho.dims}")
    h_samples = bin_samples(k.points(), bins)
    h_rho = bin_density(rho, bins)
    l1 = float(np.abs(h_samples - h_rho).sum())
    return l1, h_samples, h_rho
