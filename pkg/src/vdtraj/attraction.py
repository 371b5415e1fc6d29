"""Attraction field: FFT-precomputed kernel convolutions and interpolation.

The attraction cost pulls samples toward the target density.  Its potential
(distance kernel convolved with the density) and force (kernel gradient
convolved with the density) are precomputed once on the density grid with
zero-padded FFTs, then evaluated off-grid with multilinear interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit
from scipy import fft as sp_fft

from .core import SamplingPattern
from .density import TargetDensity

# Workspace cap for the padded FFT; precompute_field raises with sizing
# guidance instead of letting the allocator die on 3D grids that are too big.
DEFAULT_MEM_CAP_BYTES = 6 * 1024**3


@dataclass
class KernelField:
    """Precomputed attraction potential and force grids.

    ``potential`` holds the kernel-density convolution on the (2N+1)^d
    density grid; ``force`` holds the d partial-derivative convolutions,
    stacked on the first axis.  Individual grids can be dumped for
    inspection with :func:`vdtraj.io.write_spkd`.
    """

    potential: np.ndarray
    force: np.ndarray
    grid_n: int
    kernel_eps: float

    @property
    def dims(self) -> int:
        return self.potential.ndim


class AttractionResult(NamedTuple):
    cost: float
    grad: np.ndarray
    n_clamped: int


def field_workspace_bytes(grid_n: int, dims: int) -> int:
    """Estimated peak workspace of :func:`precompute_field`."""
    pad = sp_fft.next_fast_len(6 * grid_n + 1, real=True)
    # real pad buffer + its rfft + the retained density rfft
    per_axis_c = pad // 2 + 1
    real_bytes = 8 * pad**dims
    cplx_bytes = 16 * per_axis_c * pad ** (dims - 1)
    return real_bytes + 2 * cplx_bytes


def precompute_field(
    rho: TargetDensity,
    kernel_eps: float | None = None,
    mem_cap_bytes: int = DEFAULT_MEM_CAP_BYTES,
) -> KernelField:
    """Convolve the regularized distance kernel (and its gradient) with rho.

    The kernel sqrt(|x|^2 + eps^2) is sampled on [-2, 2]^d at the density
    grid spacing so the linear (non-circular) convolution fully covers the
    sampling domain; convolutions use zero-padded FFTs.  ``kernel_eps``
    defaults to half a grid cell, 1/(2N).

    Memory scales as O((4N)^d); for 3D grids beyond the cap this raises
    MemoryError with sizing guidance rather than thrashing.
    """
    n = rho.grid_n
    dims = rho.dims
    if kernel_eps is None:
        kernel_eps = 1.0 / (2.0 * n)
    if kernel_eps <= 0:
        raise ValueError("kernel_eps must be positive")

    need = field_workspace_bytes(n, dims)
    if need > mem_cap_bytes:
        raise MemoryError(
            f"attraction field for grid_n={n}, dims={dims} needs ~{need / 1e9:.1f} GB "
            f"of FFT workspace (O((4N)^d)); reduce the density grid size or raise "
            f"mem_cap_bytes"
        )

    pad = sp_fft.next_fast_len(6 * n + 1, real=True)
    shape = (pad,) * dims
    rho_fft = sp_fft.rfftn(rho.grid, shape)

    axis = np.arange(-2 * n, 2 * n + 1, dtype=np.float64) / n
    grids = np.meshgrid(*([axis] * dims), indexing="ij")
    r2 = sum(g * g for g in grids) + kernel_eps**2
    h = np.sqrt(r2)

    # Central (2N+1)^d block of the full linear convolution.
    sl = (slice(2 * n, 4 * n + 1),) * dims

    def conv(kernel_grid):
        out = sp_fft.irfftn(sp_fft.rfftn(kernel_grid, shape) * rho_fft, shape)
        return np.ascontiguousarray(out[sl])

    potential = conv(h)
    force = np.empty((dims,) + potential.shape)
    for ax in range(dims):
        force[ax] = conv(grids[ax] / h)
    return KernelField(potential=potential, force=force, grid_n=n,
                       kernel_eps=float(kernel_eps))


@njit(cache=True)
def _clamp_points(pts, n):
    """Map points from [-1, 1]^d to grid units [0, 2N], clamping outliers."""
    p, d = pts.shape
    out = np.empty((p, d))
    clamped = 0
    hi = 2.0 * n
    for i in range(p):
        bad = False
        for l in range(d):
            u = (pts[i, l] + 1.0) * n
            if u < 0.0:
                u = 0.0
                bad = True
            elif u > hi:
                u = hi
                bad = True
            out[i, l] = u
        if bad:
            clamped += 1
    return out, clamped


@njit(cache=True)
def _interp2(grid, u):
    p = u.shape[0]
    side = grid.shape[0]
    vals = np.empty(p)
    for i in range(p):
        i0 = min(int(u[i, 0]), side - 2)
        j0 = min(int(u[i, 1]), side - 2)
        fx = u[i, 0] - i0
        fy = u[i, 1] - j0
        v00 = grid[i0, j0]
        v10 = grid[i0 + 1, j0]
        v01 = grid[i0, j0 + 1]
        v11 = grid[i0 + 1, j0 + 1]
        vals[i] = (
            (1 - fx) * (1 - fy) * v00
            + fx * (1 - fy) * v10
            + (1 - fx) * fy * v01
            + fx * fy * v11
        )
    return vals


@njit(cache=True)
def _interp3(grid, u):
    p = u.shape[0]
    side = grid.shape[0]
    vals = np.empty(p)
    for i in range(p):
        i0 = min(int(u[i, 0]), side - 2)
        j0 = min(int(u[i, 1]), side - 2)
        k0 = min(int(u[i, 2]), side - 2)
        fx = u[i, 0] - i0
        fy = u[i, 1] - j0
        fz = u[i, 2] - k0
        v = 0.0
        for ii in range(2):
            wx = fx if ii == 1 else 1 - fx
            for jj in range(2):
                wy = fy if jj == 1 else 1 - fy
                for kk in range(2):
                    wz = fz if kk == 1 else 1 - fz
                    v += wx * wy * wz * grid[i0 + ii, j0 + jj, k0 + kk]
        vals[i] = v
    return vals


@njit(cache=True)
def _cell_grad2(grid, u, n):
    """Exact gradient of the bilinear interpolant, cell by cell.

    On a cell face the two adjacent cell slopes are averaged (central
    difference), which keeps node evaluations symmetric.
    """
    p = u.shape[0]
    side = grid.shape[0]
    grad = np.empty((p, 2))
    scale = float(n)
    for i in range(p):
        i0 = min(int(u[i, 0]), side - 2)
        j0 = min(int(u[i, 1]), side - 2)
        fx = u[i, 0] - i0
        fy = u[i, 1] - j0
        # d/dx: slope across x, interpolated in y
        gx0 = grid[i0 + 1, j0] - grid[i0, j0]
        gx1 = grid[i0 + 1, j0 + 1] - grid[i0, j0 + 1]
        if fx == 0.0 and i0 > 0:
            gx0 = 0.5 * (grid[i0 + 1, j0] - grid[i0 - 1, j0])
            gx1 = 0.5 * (grid[i0 + 1, j0 + 1] - grid[i0 - 1, j0 + 1])
        grad[i, 0] = scale * ((1 - fy) * gx0 + fy * gx1)
        gy0 = grid[i0, j0 + 1] - grid[i0, j0]
        gy1 = grid[i0 + 1, j0 + 1] - grid[i0 + 1, j0]
        if fy == 0.0 and j0 > 0:
            gy0 = 0.5 * (grid[i0, j0 + 1] - grid[i0, j0 - 1])
            gy1 = 0.5 * (grid[i0 + 1, j0 + 1] - grid[i0 + 1, j0 - 1])
        grad[i, 1] = scale * ((1 - fx) * gy0 + fx * gy1)
    return grad


@njit(cache=True)
def _cell_grad3(grid, u, n):
    """3D counterpart of :func:`_cell_grad2`."""
    p = u.shape[0]
    side = grid.shape[0]
    grad = np.empty((p, 3))
    scale = float(n)
    for i in range(p):
        i0 = min(int(u[i, 0]), side - 2)
        j0 = min(int(u[i, 1]), side - 2)
        k0 = min(int(u[i, 2]), side - 2)
        fx = u[i, 0] - i0
        fy = u[i, 1] - j0
        fz = u[i, 2] - k0
        for ax in range(3):
            f_ax = fx if ax == 0 else (fy if ax == 1 else fz)
            a0 = i0 if ax == 0 else (j0 if ax == 1 else k0)
            central = f_ax == 0.0 and a0 > 0
            g = 0.0
            for jj in range(2):
                for kk in range(2):
                    if ax == 0:
                        w = (fy if jj == 1 else 1 - fy) * (fz if kk == 1 else 1 - fz)
                        hi = grid[i0 + 1, j0 + jj, k0 + kk]
                        lo = grid[i0 - 1, j0 + jj, k0 + kk] if central else grid[i0, j0 + jj, k0 + kk]
                    elif ax == 1:
                        w = (fx if jj == 1 else 1 - fx) * (fz if kk == 1 else 1 - fz)
                        hi = grid[i0 + jj, j0 + 1, k0 + kk]
                        lo = grid[i0 + jj, j0 - 1, k0 + kk] if central else grid[i0 + jj, j0, k0 + kk]
                    else:
                        w = (fx if jj == 1 else 1 - fx) * (fy if kk == 1 else 1 - fy)
                        hi = grid[i0 + jj, j0 + kk, k0 + 1]
                        lo = grid[i0 + jj, j0 + kk, k0 - 1] if central else grid[i0 + jj, j0 + kk, k0]
                    g += w * (hi - lo)
            if central:
                g *= 0.5
            grad[i, ax] = scale * g
    return grad


def interpolate(grid: np.ndarray, points: np.ndarray, grid_n: int) -> np.ndarray:
    """Multilinear interpolation of a (2N+1)^d grid at points in [-1, 1]^d."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    u, _ = _clamp_points(pts, grid_n)
    if grid.ndim == 2:
        return _interp2(grid, u)
    return _interp3(grid, u)


def eval_attraction(
    k: SamplingPattern, field: KernelField, grad_mode: str = "consistent"
) -> AttractionResult:
    """Attraction cost and gradient at the pattern's sample locations.

    cost is the mean interpolated potential.  ``grad_mode="consistent"``
    differentiates the interpolated potential itself (cell-wise closed form,
    so finite differences of the cost reproduce it exactly at interior
    points); ``grad_mode="smooth"`` interpolates the precomputed force grids
    instead, which is smoother across cells but only consistent with the
    cost up to the grid discretization error.

    Points outside the sampling cube are clamped and counted; projection
    normally keeps iterates inside, clamping only guards intermediates.
    """
    if k.dims != field.dims:
        raise ValueError(f"pattern dims {k.dims} != field dims {field.dims}")
    pts = k.points()
    p = pts.shape[0]
    u, n_clamped = _clamp_points(pts, field.grid_n)
    if field.dims == 2:
        vals = _interp2(field.potential, u)
    else:
        vals = _interp3(field.potential, u)
    cost = float(vals.sum() / p)

    if grad_mode == "consistent":
        if field.dims == 2:
            grad = _cell_grad2(field.potential, u, field.grid_n)
        else:
            grad = _cell_grad3(field.potential, u, field.grid_n)
    elif grad_mode == "smooth":
        grad = np.empty((p, field.dims))
        for ax in range(field.dims):
            if field.dims == 2:
                grad[:, ax] = _interp2(field.force[ax], u)
            else:
                grad[:, ax] = _interp3(field.force[ax], u)
    else:
        raise ValueError(f"unknown grad_mode {grad_mode!r}")
    grad /= p
    return AttractionResult(cost=cost, grad=grad, n_clamped=n_clamped)
