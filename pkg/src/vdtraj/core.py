"""Domain types and unit conversions for k-space trajectory design.

Coordinates are kept in the normalized cube Omega = [-1, 1]^d; physical
units enter only through :class:`HardwareSpec` (gradient export, dwell-time
resampling) and the derived :class:`NormalizedLimits`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Feasibility tolerance for constraint reports, in normalized units.
# Matches the double-precision projection accuracy target.
FEAS_TOL = 1e-6

# Relative slack allowed on physical limits in waveform feasibility reports.
WAVEFORM_SLACK = 0.01


def _as_axis_tuple(value, dims: int, name: str) -> tuple:
    """Broadcast a scalar or length-``dims`` sequence to a tuple."""
    if np.isscalar(value):
        return (float(value),) * dims
    vals = tuple(float(v) for v in value)
    if len(vals) == 1:
        return vals * dims
    if len(vals) != dims:
        raise ValueError(f"{name} must be scalar or length {dims}, got {len(vals)}")
    return vals


@dataclass(frozen=True)
class HardwareSpec:
    """Physical scanner limits and timing.

    Attributes:
        g_max: gradient amplitude limit (T/m).
        s_max: slew-rate limit (T/m/s).
        gamma: gyromagnetic ratio over 2*pi (Hz/T), e.g. 42.57e6 for proton.
        raster_dt: gradient raster time (s).
        dwell_dt: ADC dwell time (s); must divide raster_dt.
        fov: field of view per axis (m); scalar or per-axis sequence.
        matrix: image matrix size per axis; scalar or per-axis sequence.
    """

    g_max: float
    s_max: float
    gamma: float
    raster_dt: float
    dwell_dt: float
    fov: Sequence[float] | float
    matrix: Sequence[int] | int
    dims: int = 3

    def __post_init__(self):
        if self.dims not in (2, 3):
            raise ValueError(f"dims must be 2 or 3, got {self.dims}")
        fov = _as_axis_tuple(self.fov, self.dims, "fov")
        if np.isscalar(self.matrix):
            matrix = (int(self.matrix),) * self.dims
        else:
            matrix = tuple(int(m) for m in self.matrix)
            if len(matrix) == 1:
                matrix = matrix * self.dims
            if len(matrix) != self.dims:
                raise ValueError(f"matrix must be scalar or length {self.dims}")
        object.__setattr__(self, "fov", fov)
        object.__setattr__(self, "matrix", matrix)

        if self.g_max < 0 or self.s_max < 0:
            raise ValueError("g_max and s_max must be non-negative")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.raster_dt <= 0:
            raise ValueError("raster_dt must be positive")
        if not (0 < self.dwell_dt <= self.raster_dt):
            raise ValueError("dwell_dt must satisfy 0 < dwell_dt <= raster_dt")
        if any(f <= 0 for f in fov):
            raise ValueError("fov must be positive")
        if any(m < 2 for m in matrix):
            raise ValueError("matrix must be >= 2 per axis")
        ratio = self.raster_dt / self.dwell_dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ValueError(
                f"raster_dt must be an integer multiple of dwell_dt "
                f"(ratio {ratio:.6g})"
            )

    @property
    def dwell_ratio(self) -> int:
        """Integer raster-to-dwell ratio floor(raster_dt / dwell_dt)."""
        return int(round(self.raster_dt / self.dwell_dt))

    @property
    def k_max(self) -> tuple:
        """Per-axis maximum spatial frequency matrix/(2*fov), in 1/m."""
        return tuple(m / (2.0 * f) for m, f in zip(self.matrix, self.fov))


@dataclass(frozen=True)
class NormalizedLimits:
    """Speed/acceleration bounds on the normalized trajectory.

    alpha bounds the first discrete derivative (1/s), beta the second
    (1/s^2), both for coordinates normalized to [-1, 1].
    """

    alpha: float
    beta: float
    k_max: tuple

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")

    def scaled(self, factor: float) -> "NormalizedLimits":
        """Return limits relaxed by ``factor`` (used at coarse levels)."""
        return NormalizedLimits(self.alpha * factor, self.beta * factor, self.k_max)


def normalized_limits(hw: HardwareSpec) -> NormalizedLimits:
    """Convert hardware limits to normalized speed/acceleration bounds.

    The speed bound combines the gradient amplitude limit with the Nyquist
    bound on inter-sample spacing at the ADC dwell time.  For anisotropic
    matrices the most restrictive (max) per-axis k_max and fov are used so a
    single scalar pair (alpha, beta) is conservative on every axis.
    """
    k_max = hw.k_max
    k_ref = max(k_max)
    fov_ref = max(hw.fov)
    speed_phys = min(hw.gamma * hw.g_max, 1.0 / (fov_ref * hw.dwell_dt))
    alpha = speed_phys / k_ref
    beta = hw.gamma * hw.s_max / k_ref
    return NormalizedLimits(alpha=alpha, beta=beta, k_max=k_max)


@dataclass
class SamplingPattern:
    """A k-space sampling pattern of ``shots`` x ``samples_per_shot`` points.

    ``coords`` has shape (shots, samples_per_shot, dims) with values in the
    normalized cube Omega = [-1, 1]^d, shot-major ordering.
    """

    coords: np.ndarray

    def __post_init__(self):
        coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        if coords.ndim != 3:
            raise ValueError("coords must have shape (shots, samples, dims)")
        if coords.shape[2] not in (2, 3):
            raise ValueError(f"dims must be 2 or 3, got {coords.shape[2]}")
        if not np.all(np.isfinite(coords)):
            raise ValueError("coords must be finite")
        self.coords = coords

    @property
    def shots(self) -> int:
        return self.coords.shape[0]

    @property
    def samples_per_shot(self) -> int:
        return self.coords.shape[1]

    @property
    def dims(self) -> int:
        return self.coords.shape[2]

    @property
    def n_samples(self) -> int:
        """Total number of samples p = shots * samples_per_shot."""
        return self.coords.shape[0] * self.coords.shape[1]

    def points(self) -> np.ndarray:
        """All samples as a (p, dims) array, shot-major."""
        return self.coords.reshape(-1, self.dims)

    def copy(self) -> "SamplingPattern":
        return SamplingPattern(self.coords.copy())

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coords)))


@dataclass(frozen=True)
class LinearConstraint:
    """Pin one sample of every shot to a fixed location (echo-time pin)."""

    pinned_index: int
    pinned_value: np.ndarray

    def __post_init__(self):
        value = np.asarray(self.pinned_value, dtype=np.float64)
        object.__setattr__(self, "pinned_value", value)
        if self.pinned_index < 0:
            raise ValueError("pinned_index must be non-negative")
        if np.max(np.abs(value)) > 1.0:
            raise ValueError("pinned_value must lie inside Omega = [-1, 1]^d")


@dataclass
class WaveformReport:
    """Feasibility summary of exported gradient/slew waveforms."""

    max_grad: float
    max_slew: float
    grad_saturation_fraction: float
    slew_saturation_fraction: float
    g_max: float
    s_max: float
    feasible: bool

    def as_dict(self) -> dict:
        return {
            "max_grad_T_per_m": self.max_grad,
            "max_slew_T_per_m_per_s": self.max_slew,
            "grad_saturation_fraction": self.grad_saturation_fraction,
            "slew_saturation_fraction": self.slew_saturation_fraction,
            "g_max_T_per_m": self.g_max,
            "s_max_T_per_m_per_s": self.s_max,
            "feasible": self.feasible,
        }


def kspace_to_waveforms(
    k: SamplingPattern, hw: HardwareSpec
) -> tuple[np.ndarray, np.ndarray, WaveformReport]:
    """Convert a normalized pattern to physical gradient and slew waveforms.

    Gradients are first differences of the un-normalized trajectory divided
    by gamma and the raster time; slew rates are first differences of the
    gradients.  Returns ``(gradients, slews, report)`` with shapes
    (shots, N_s-1, d) and (shots, N_s-2, d).
    """
    if k.samples_per_shot < 3:
        raise ValueError("waveform export needs at least 3 samples per shot")
    if k.dims != hw.dims:
        raise ValueError(f"pattern dims {k.dims} != hardware dims {hw.dims}")
    k_max = np.array(hw.k_max)
    k_phys = k.coords * k_max  # (N_c, N_s, d), 1/m
    grads = np.diff(k_phys, axis=1) / (hw.gamma * hw.raster_dt)
    slews = np.diff(grads, axis=1) / hw.raster_dt

    grad_mag = np.linalg.norm(grads, axis=2)
    slew_mag = np.linalg.norm(slews, axis=2)
    max_grad = float(grad_mag.max())
    max_slew = float(slew_mag.max())
    grad_frac = float(np.mean(grad_mag >= (1.0 - WAVEFORM_SLACK) * hw.g_max)) if hw.g_max > 0 else 0.0
    slew_frac = float(np.mean(slew_mag >= (1.0 - WAVEFORM_SLACK) * hw.s_max)) if hw.s_max > 0 else 0.0
    feasible = (
        max_grad <= hw.g_max * (1.0 + WAVEFORM_SLACK)
        and max_slew <= hw.s_max * (1.0 + WAVEFORM_SLACK)
    )
    report = WaveformReport(
        max_grad=max_grad,
        max_slew=max_slew,
        grad_saturation_fraction=grad_frac,
        slew_saturation_fraction=slew_frac,
        g_max=hw.g_max,
        s_max=hw.s_max,
        feasible=feasible,
    )
    return grads, slews, report


def integrate_waveforms(
    start: np.ndarray, grads: np.ndarray, hw: HardwareSpec
) -> np.ndarray:
    """Re-integrate gradient waveforms back to normalized coordinates.

    Inverse of :func:`kspace_to_waveforms`: ``start`` is the (shots, d)
    first sample of each shot in normalized units.
    """
    k_max = np.array(hw.k_max)
    steps = grads * (hw.gamma * hw.raster_dt) / k_max
    coords = np.concatenate(
        [start[:, None, :], start[:, None, :] + np.cumsum(steps, axis=1)], axis=1
    )
    return coords


def resample_to_dwell(k: SamplingPattern, hw: HardwareSpec) -> SamplingPattern:
    """Resample each shot from the raster period to the ADC dwell period.

    Each shot is treated as a piecewise-linear curve through its samples and
    re-sampled at m = N_s * (raster_dt / dwell_dt) uniformly spaced parameter
    values covering the full curve; endpoints are preserved bitwise and the
    identity ratio returns the input samples unchanged.
    """
    ratio = hw.dwell_ratio
    n_s = k.samples_per_shot
    m = n_s * ratio
    if ratio == 1:
        return k.copy()
    # Parameter positions in index space [0, n_s - 1]; the spacing factor is
    # exactly 1.0 when ratio == 1 so knot values are returned bitwise.
    u = np.arange(m, dtype=np.float64) * ((n_s - 1) / (m - 1))
    i0 = np.minimum(u.astype(np.int64), n_s - 2)
    frac = u - i0
    coords = k.coords
    out = (1.0 - frac)[None, :, None] * coords[:, i0, :] + frac[None, :, None] * coords[
        :, i0 + 1, :
    ]
    # Endpoints exact regardless of rounding in u.
    out[:, 0, :] = coords[:, 0, :]
    out[:, -1, :] = coords[:, -1, :]
    return SamplingPattern(out)


def acceleration_factor(n_c: int, matrix: Sequence[int]) -> float:
    """Under-sampling factor relative to a fully sampled Cartesian grid.

    For 3D this is (N_y * N_z) / N_c; for 2D, N_y / N_c.
    """
    if n_c < 1:
        raise ValueError("n_c must be >= 1")
    matrix = tuple(int(m) for m in matrix)
    full = 1
    for m in matrix[1:]:
        full *= m
    return full / n_c
