"""Projected gradient descent over shots with a multi-resolution schedule.

The optimization starts from a perturbed radial initialization decimated to
the coarsest level, alternates gradient steps on the attraction-repulsion
energy with projections onto the (level-scaled) constraint set, and doubles
the samples per shot by linear interpolation between levels while halving
the constraint scale, so the final level runs at the unscaled hardware
limits.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .attraction import KernelField, eval_attraction, precompute_field
from .core import HardwareSpec, LinearConstraint, SamplingPattern, normalized_limits
from .density import DensityParams, TargetDensity, default_grid_n, discretize
from .projection import ProjectionConfig, feasibility_residuals, project_pattern
from .repulsion import RepulsionConfig, eval_repulsion

# Fixed-phase step coefficient: eta0 = 6.25^-2 * ETA0_COEFF * kernel_eps * p.
# The 6.25^-2 factor and the proportionality to the kernel regularization
# follow the fixed-step heuristic (step inversely proportional to the kernel
# gradient's Lipschitz constant); the particle count compensates the 1/p
# gradient normalization, and the remaining constant was tuned on desk-scale
# runs (10x larger diverges, 10x smaller stalls).
ETA0_COEFF = 4.0e4


class DivergenceError(RuntimeError):
    """Cost blew up past the divergence guard; carries the diagnostic."""


@dataclass
class OptimizerConfig:
    """Settings for a full trajectory optimization run."""

    n_c: int
    n_s: int
    dims: int
    density: DensityParams = dc_field(default_factory=lambda: DensityParams(0.25, 2.0))
    n_decim: int = 0
    n_git: int = 50
    n_pit: int = 100
    fixed_step_iters: int = 20
    eta0: Optional[float] = None
    perturbation: float = 0.25
    seed: int = 0
    grid_n: Optional[int] = None
    attraction_eps: Optional[float] = None
    grad_mode: str = "consistent"
    repulsion: RepulsionConfig = dc_field(default_factory=RepulsionConfig)
    pin_index: Optional[int] = None
    pin_enabled: bool = True
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.dims not in (2, 3):
            raise ValueError("dims must be 2 or 3")
        if self.n_c < 1 or self.n_s < 1:
            raise ValueError("n_c and n_s must be positive")
        if self.n_decim < 0:
            raise ValueError("n_decim must be >= 0")
        if self.n_s % (2**self.n_decim) != 0:
            raise ValueError(
                f"n_s={self.n_s} must be divisible by 2^n_decim={2**self.n_decim}")
        if self.n_git < 0:
            raise ValueError("n_git must be >= 0")
        if not (0 <= self.perturbation < 1):
            raise ValueError("perturbation must be in [0, 1)")
        if self.dims == 3 and math.isqrt(self.n_c) ** 2 != self.n_c:
            raise ValueError(
                f"3D initialization needs a square shot count; n_c={self.n_c} is not "
                f"a perfect square")
        if self.pin_enabled:
            pin = self.n_s // 2 if self.pin_index is None else self.pin_index
            if not (0 <= pin < self.n_s):
                raise ValueError(f"pin_index {pin} out of range")
            if pin % (2**self.n_decim) != 0:
                raise ValueError(
                    f"pin_index {pin} must be divisible by 2^n_decim="
                    f"{2**self.n_decim} so it survives decimation")

    def resolved_pin(self) -> Optional[int]:
        if not self.pin_enabled:
            return None
        return self.n_s // 2 if self.pin_index is None else self.pin_index


@dataclass
class TraceRecord:
    level: int
    iteration: int
    samples_per_shot: int
    cost: float
    attraction: float
    repulsion: float
    step: float
    feas_residual: float
    wall_time: float


@dataclass
class RunTrace:
    """Per-iteration log of the optimization."""

    records: list = dc_field(default_factory=list)

    def append(self, rec: TraceRecord):
        self.records.append(rec)

    def costs(self, level: Optional[int] = None) -> np.ndarray:
        recs = self.records if level is None else [
            r for r in self.records if r.level == level]
        return np.array([r.cost for r in recs])

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("level,iteration,samples_per_shot,cost,attraction,"
                     "repulsion,step,feas_residual,wall_time\n")
            for r in self.records:
                fh.write(
                    f"{r.level},{r.iteration},{r.samples_per_shot},{r.cost:.12g},"
                    f"{r.attraction:.12g},{r.repulsion:.12g},{r.step:.6g},"
                    f"{r.feas_residual:.6g},{r.wall_time:.6g}\n")


def init_radial(n_c: int, n_s: int, dims: int) -> SamplingPattern:
    """Radial initialization: full-diameter spokes through the origin.

    2D places n_c spokes at uniform angles over half a turn.  3D places
    sqrt(n_c) spokes in the x-y plane and rotates each sqrt(n_c) times
    about its in-plane orthogonal axis, covering the sphere of directions.
    Samples are uniformly spaced with endpoints at radius 1, so the sample
    set is symmetric under point reflection; for odd n_s the center sample
    sits exactly at the origin.
    """
    if dims not in (2, 3):
        raise ValueError("dims must be 2 or 3")
    if n_s < 2:
        raise ValueError("n_s must be >= 2")
    t = (2.0 * np.arange(n_s) - (n_s - 1)) / (n_s - 1)
    if dims == 2:
        angles = np.pi * np.arange(n_c) / n_c
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    else:
        m = math.isqrt(n_c)
        if m * m != n_c:
            raise ValueError(
                f"3D radial initialization needs a perfect-square shot count "
                f"(got n_c={n_c}); pick e.g. {m**2} or {(m + 1)**2}")
        theta = np.pi * np.arange(m) / m
        phi = np.pi * np.arange(m) / m
        th, ph = np.meshgrid(theta, phi, indexing="ij")
        dirs = np.stack(
            [np.cos(th) * np.cos(ph), np.sin(th) * np.cos(ph), -np.sin(ph)],
            axis=-1,
        ).reshape(n_c, 3)
    coords = t[None, :, None] * dirs[:, None, :]
    return SamplingPattern(coords)


def perturb(k: SamplingPattern, amplitude: float, seed: int) -> SamplingPattern:
    """Add i.i.d. uniform noise in [-amplitude, amplitude] per coordinate.

    Deterministic for a given seed; results are clamped to the sampling
    cube.  amplitude == 0 returns the input unchanged.
    """
    if not (0 <= amplitude < 1):
        raise ValueError("amplitude must be in [0, 1)")
    if amplitude == 0:
        return k.copy()
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-amplitude, amplitude, k.coords.shape)
    return SamplingPattern(np.clip(k.coords + noise, -1.0, 1.0))


def upsample_shots(k: SamplingPattern) -> SamplingPattern:
    """Double the samples per shot by linear interpolation.

    Even output samples reproduce the inputs exactly; odd samples are
    midpoints, with the trailing sample continuing the last segment half a
    step (the time grid of the doubled curve extends half a coarse step
    past the last coarse sample).
    """
    coords = k.coords
    n_c, n_s, d = coords.shape
    if n_s < 2:
        raise ValueError("need at least 2 samples to upsample")
    out = np.empty((n_c, 2 * n_s, d))
    out[:, 0::2] = coords
    out[:, 1:-1:2] = 0.5 * (coords[:, :-1] + coords[:, 1:])
    out[:, -1] = coords[:, -1] + 0.5 * (coords[:, -1] - coords[:, -2])
    return SamplingPattern(np.clip(out, -1.0, 1.0))


def step_size(
    iteration: int,
    eta_prev: float,
    delta_k: Optional[np.ndarray],
    delta_g: Optional[np.ndarray],
    eta0: float,
    fixed_step_iters: int,
) -> float:
    """Two-phase step schedule: fixed, then safeguarded Barzilai-Borwein.

    The BB step <dk, dg>/<dg, dg> is clamped to [1e-3, 1e3] * eta0 and
    falls back to the previous step when the curvature denominator
    vanishes.
    """
    if iteration <= fixed_step_iters or delta_k is None or delta_g is None:
        return eta0
    denom = float(np.vdot(delta_g, delta_g))
    if denom <= 1e-30:
        return eta_prev
    eta = float(np.vdot(delta_k, delta_g)) / denom
    return float(np.clip(eta, 1e-3 * eta0, 1e3 * eta0))


def default_eta0(p: int, kernel_eps: float) -> float:
    """Fixed-phase step for a level with p particles."""
    return 6.25**-2 * ETA0_COEFF * kernel_eps * p


@dataclass
class OptimizeResult:
    pattern: SamplingPattern
    trace: RunTrace
    density: TargetDensity
    field: KernelField
    initial: SamplingPattern


def optimize(
    cfg: OptimizerConfig,
    hw: HardwareSpec,
    rho: Optional[TargetDensity] = None,
    fld: Optional[KernelField] = None,
) -> OptimizeResult:
    """Run the full multi-resolution projected gradient descent.

    Follows the multi-resolution schedule: the perturbed radial
    initialization is decimated by 2^n_decim, each level runs n_git
    projected gradient iterations, then shots are linearly upsampled and
    the constraint scale halves; the final level uses the unscaled limits.
    Every level starts with a projection so the returned pattern is
    feasible even for n_git = 0.

    A precomputed density/kernel field pair may be passed in to amortize
    the FFT precomputation over repeated runs (seed sweeps).
    """
    if cfg.dims != hw.dims:
        raise ValueError(f"config dims {cfg.dims} != hardware dims {hw.dims}")
    limits = normalized_limits(hw)
    if rho is None:
        grid_n = cfg.grid_n if cfg.grid_n is not None else default_grid_n(hw.matrix)
        rho = discretize(cfg.density, grid_n, cfg.dims)
    if fld is None:
        fld = precompute_field(rho, cfg.attraction_eps)
    if fld.dims != cfg.dims or fld.grid_n != rho.grid_n:
        raise ValueError("kernel field does not match the density grid")

    full = perturb(init_radial(cfg.n_c, cfg.n_s, cfg.dims), cfg.perturbation, cfg.seed)
    stride = 2**cfg.n_decim
    pattern = SamplingPattern(np.ascontiguousarray(full.coords[:, ::stride, :]))
    pin_full = cfg.resolved_pin()

    trace = RunTrace()
    t_start = time.perf_counter()

    for level in range(cfg.n_decim + 1):
        scale = 2.0 ** (cfg.n_decim - level)
        pin = None
        if pin_full is not None:
            pin = LinearConstraint(
                pinned_index=pin_full // (2 ** (cfg.n_decim - level)),
                pinned_value=np.zeros(cfg.dims),
            )
        proj_cfg = ProjectionConfig(
            alpha=limits.alpha * scale,
            beta=limits.beta * scale,
            raster_dt=hw.raster_dt,
            n_pit=cfg.n_pit,
            pin=pin,
        )
        pattern = project_pattern(pattern, proj_cfg)

        p_level = pattern.n_samples
        eta0 = cfg.eta0 if cfg.eta0 is not None else default_eta0(
            p_level, cfg.repulsion.kernel_eps)
        eta = eta0
        prev_coords = None
        prev_grad = None
        level_min = np.inf

        for it in range(1, cfg.n_git + 1):
            att = eval_attraction(pattern, fld, cfg.grad_mode)
            rep_cost, rep_grad = eval_repulsion(pattern, cfg.repulsion)
            cost = att.cost - rep_cost
            grad = (att.grad - rep_grad).reshape(pattern.coords.shape)

            if not np.isfinite(cost) or not np.all(np.isfinite(grad)):
                raise DivergenceError(
                    f"non-finite cost or gradient at level {level} iteration {it}; "
                    f"reduce eta0 (current {eta:.3g})")
            if cost < level_min:
                level_min = cost
            guard = level_min + cfg.divergence_factor * max(abs(level_min), 1e-6)
            if cost > guard:
                raise DivergenceError(
                    f"cost {cost:.6g} exceeded divergence guard {guard:.6g} at "
                    f"level {level} iteration {it}; reduce eta0 (current {eta:.3g})")

            delta_k = None if prev_coords is None else pattern.coords - prev_coords
            delta_g = None if prev_grad is None else grad - prev_grad
            eta = step_size(it, eta, delta_k, delta_g, eta0, cfg.fixed_step_iters)

            prev_coords = pattern.coords.copy()
            prev_grad = grad
            try:
                stepped = SamplingPattern(pattern.coords - eta * grad)
            except ValueError as exc:
                raise DivergenceError(
                    f"gradient step overflowed at level {level} iteration {it} "
                    f"(eta {eta:.3g}): {exc}") from exc
            pattern = project_pattern(stepped, proj_cfg)

            res = feasibility_residuals(pattern, proj_cfg)
            trace.append(TraceRecord(
                level=level,
                iteration=it,
                samples_per_shot=pattern.samples_per_shot,
                cost=cost,
                attraction=att.cost,
                repulsion=rep_cost,
                step=eta,
                feas_residual=res["max"],
                wall_time=time.perf_counter() - t_start,
            ))

        if level < cfg.n_decim:
            pattern = upsample_shots(pattern)

    return OptimizeResult(pattern=pattern, trace=trace, density=rho, field=fld,
                          initial=full)
