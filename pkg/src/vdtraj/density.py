"""Parametric radial target sampling density and its discretization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import io

SUM_TOL = 1e-12


@dataclass(frozen=True)
class DensityParams:
    """Radial density with a flat plateau and inverse-polynomial decay.

    ``cutoff`` is the plateau radius as a fraction of the normalized k-space
    half-width (0 < cutoff < 1); ``decay`` is the polynomial decay exponent
    outside the plateau (>= 0).
    """

    cutoff: float
    decay: float

    def __post_init__(self):
        if not (0.0 < self.cutoff < 1.0):
            raise ValueError(f"cutoff must be in (0, 1), got {self.cutoff}")
        if self.decay < 0:
            raise ValueError(f"decay must be >= 0, got {self.decay}")


def kappa_1d(params: DensityParams) -> float:
    """Closed-form plateau height normalizing the 1D density on [-1, 1]."""
    c, d = params.cutoff, params.decay
    if d == 1.0:
        # Limit of (1-D)/(2C(C^(D-1) - D)) as D -> 1.
        return 1.0 / (2.0 * c * (1.0 - np.log(c)))
    return (1.0 - d) / (2.0 * c * (c ** (d - 1.0) - d))


def radial_value(x, params: DensityParams, kappa: float) -> np.ndarray:
    """Evaluate the un-normalized radial density at points ``x``.

    ``x`` is (..., d); returns kappa on the plateau (Euclidean radius <=
    cutoff) and kappa * (cutoff/r)^decay outside.
    """
    x = np.asarray(x, dtype=np.float64)
    r = np.sqrt(np.sum(x * x, axis=-1))
    out = np.full(r.shape, float(kappa))
    outside = r > params.cutoff
    out[outside] = kappa * (params.cutoff / r[outside]) ** params.decay
    if out.ndim == 0:
        return float(out)
    return out


@dataclass
class TargetDensity:
    """Discretized density on a (2N+1)^d grid spanning [-1, 1]^d.

    Grid node (i, j, k) sits at (i/N, j/N, k/N) for indices in [-N, N];
    entries are non-negative and sum to 1.
    """

    grid: np.ndarray
    grid_n: int
    params: DensityParams | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        side = 2 * self.grid_n + 1
        if grid.shape != (side,) * grid.ndim:
            raise ValueError(
                f"grid shape {grid.shape} inconsistent with grid_n={self.grid_n}")
        if np.any(grid < 0):
            raise ValueError("density grid must be non-negative")
        total = grid.sum()
        if total <= 0:
            raise ValueError("density grid must have positive mass")
        self.grid = grid / total

    @property
    def dims(self) -> int:
        return self.grid.ndim

    def save(self, path) -> None:
        io.write_spkd(path, self.grid)

    @classmethod
    def load(cls, path) -> "TargetDensity":
        """Load a custom density grid, validating and re-normalizing it."""
        grid = io.read_spkd(path)
        if grid.shape[0] % 2 != 1:
            raise ValueError("density grid side must be odd (2N+1)")
        return cls(grid=grid, grid_n=grid.shape[0] // 2, params=None)


def discretize(params: DensityParams, grid_n: int, dims: int) -> TargetDensity:
    """Sample the radial density on the (2N+1)^d grid and normalize.

    The numeric normalization supersedes the 1D closed form in two or three
    dimensions; the plateau branch applies at exactly the cutoff radius.
    """
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    if dims not in (2, 3):
        raise ValueError("dims must be 2 or 3")
    axis = np.arange(-grid_n, grid_n + 1, dtype=np.float64) / grid_n
    grids = np.meshgrid(*([axis] * dims), indexing="ij")
    pts = np.stack(grids, axis=-1)
    vals = radial_value(pts, params, kappa=1.0)
    return TargetDensity(grid=vals, grid_n=grid_n, params=params)


def default_grid_n(matrix) -> int:
    """Density grid half-width: twice the largest matrix dimension."""
    if np.isscalar(matrix):
        return 2 * int(matrix)
    return 2 * int(max(matrix))
