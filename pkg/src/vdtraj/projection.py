"""Projection of shots onto the amplitude/speed/acceleration constraint set.

Each shot is projected independently onto

    { s : |s[n,l]| <= 1,  ||s[n+1]-s[n]||_2 <= alpha*dt,
          ||s[n+2]-2s[n+1]+s[n]||_2 <= beta*dt^2,  s[pin] = v }

by accelerated proximal gradient descent on the dual of the projection
problem: the stacked operator (identity, first difference, second
difference) has its squared norm estimated once by power iteration, the
dual prox splits into per-entry clamps and per-sample Euclidean ball
projections, and the optional pinned sample is eliminated from the primal
variable before the solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .core import FEAS_TOL, LinearConstraint, NormalizedLimits, SamplingPattern

_OPNORM_CACHE: dict[tuple[int, int], float] = {}


@dataclass
class ProjectionConfig:
    """Settings for the constrained projection.

    ``alpha`` and ``beta`` are the normalized speed/acceleration rates (per
    second); ``raster_dt`` converts them to per-sample bounds.  ``pin``
    optionally fixes one sample per shot.  ``monotone`` enables the
    objective-monotone FISTA variant (slower, used for diagnostics).
    """

    alpha: float
    beta: float
    raster_dt: float
    n_pit: int = 100
    feas_tol: float = FEAS_TOL
    pin: LinearConstraint | None = None
    monotone: bool = False

    def __post_init__(self):
        if self.n_pit < 1:
            raise ValueError("n_pit must be >= 1")
        if self.feas_tol <= 0:
            raise ValueError("feas_tol must be positive")
        if self.raster_dt <= 0:
            raise ValueError("raster_dt must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")

    @classmethod
    def from_limits(cls, limits: NormalizedLimits, raster_dt: float, **kw):
        return cls(alpha=limits.alpha, beta=limits.beta, raster_dt=raster_dt, **kw)

    @property
    def speed_bound(self) -> float:
        """Per-sample bound on first differences."""
        return self.alpha * self.raster_dt

    @property
    def accel_bound(self) -> float:
        """Per-sample bound on second differences."""
        return self.beta * self.raster_dt**2


def _stacked_operator_norm(n_s: int, pin_idx: int) -> float:
    """lambda_max of the stacked operator gram matrix, by power iteration.

    The pinned coordinate is eliminated (zeroed) from the domain.  Cached
    per (n_s, pin_idx); the result does not depend on d because the
    operators act axis-wise.
    """
    key = (n_s, pin_idx)
    if key in _OPNORM_CACHE:
        return _OPNORM_CACHE[key]
    rng = np.random.default_rng(12345)
    x = rng.standard_normal(n_s)
    if pin_idx >= 0:
        x[pin_idx] = 0.0
    for _ in range(50):
        x /= np.linalg.norm(x)
        d1 = np.diff(x)
        d2 = np.diff(x, 2)
        y = x.copy()
        y[:-1] -= d1
        y[1:] += d1
        y[: n_s - 2] += d2
        y[1 : n_s - 1] -= 2 * d2
        y[2:] += d2
        if pin_idx >= 0:
            y[pin_idx] = 0.0
        x = y
    lam = float(np.linalg.norm(x))
    _OPNORM_CACHE[key] = lam
    return lam


@njit(cache=True, inline="always")
def _dual_to_primal(k, q0, q1, q2, pin_idx, pin_val, s):
    """s = k - P_free(A0^T q0 + A1^T q1 + A2^T q2), pinned row forced."""
    ns, d = k.shape
    for n in range(ns):
        for l in range(d):
            r = q0[n, l]
            if n <= ns - 2:
                r -= q1[n, l]
            if n >= 1:
                r += q1[n - 1, l]
            if n <= ns - 3:
                r += q2[n, l]
            if 1 <= n <= ns - 2:
                r -= 2.0 * q2[n - 1, l]
            if n >= 2:
                r += q2[n - 2, l]
            s[n, l] = k[n, l] - r
    if pin_idx >= 0:
        for l in range(d):
            s[pin_idx, l] = pin_val[l]


@njit(cache=True)
def _dual_objective(k, q0, q1, q2, pin_idx, pin_val, a, b, s):
    """Dual objective up to a constant, for the monotone variant."""
    ns, d = k.shape
    _dual_to_primal(k, q0, q1, q2, pin_idx, pin_val, s)
    # 0.5*||k_f - B^T q||^2 + sigma_C(q) - <c, q>, up to a constant; the
    # smooth part is 0.5*||s_f||^2 with s = k - B^T q on free rows.
    obj = 0.0
    for n in range(ns):
        if n == pin_idx:
            continue
        for l in range(d):
            obj += 0.5 * s[n, l] * s[n, l]
    for n in range(ns):
        for l in range(d):
            obj += abs(q0[n, l])
    for n in range(ns - 1):
        nrm = 0.0
        for l in range(d):
            nrm += q1[n, l] * q1[n, l]
        obj += a * np.sqrt(nrm)
    for n in range(ns - 2):
        nrm = 0.0
        for l in range(d):
            nrm += q2[n, l] * q2[n, l]
        obj += b * np.sqrt(nrm)
    if pin_idx >= 0:
        # -<c, q> with c = A e_pin v; only rows touching the pin contribute.
        for l in range(d):
            obj -= q0[pin_idx, l] * pin_val[l]
            if pin_idx <= ns - 2:
                obj -= q1[pin_idx, l] * pin_val[l]
            if pin_idx >= 1:
                obj += q1[pin_idx - 1, l] * pin_val[l]
            if pin_idx <= ns - 3:
                obj += q2[pin_idx, l] * pin_val[l]
            if 1 <= pin_idx <= ns - 2:
                obj -= 2.0 * q2[pin_idx - 1, l] * pin_val[l]
            if pin_idx >= 2:
                obj += q2[pin_idx - 2, l] * pin_val[l]
    return obj


@njit(cache=True)
def _project_shot(k, a, b, pin_idx, pin_val, n_iter, tau, monotone, out, trace):
    """Dual FISTA with gradient-based adaptive restart for one shot.

    When ``trace`` is non-empty it receives the dual objective of the
    accepted iterate after every inner iteration.
    """
    ns, d = k.shape
    q0 = np.zeros((ns, d))
    q1 = np.zeros((ns - 1, d))
    q2 = np.zeros((ns - 2, d))
    y0 = np.zeros((ns, d))
    y1 = np.zeros((ns - 1, d))
    y2 = np.zeros((ns - 2, d))
    z0 = np.empty((ns, d))
    z1 = np.empty((ns - 1, d))
    z2 = np.empty((ns - 2, d))
    s = np.empty((ns, d))
    t = 1.0
    best = np.inf
    inv_tau = 1.0 / tau

    for it in range(n_iter):
        _dual_to_primal(k, y0, y1, y2, pin_idx, pin_val, s)

        # Dual prox: q+ = tau * (z - proj_C(z)), z = y/tau + A s(y).
        for n in range(ns):
            for l in range(d):
                z = y0[n, l] * inv_tau + s[n, l]
                pz = min(max(z, -1.0), 1.0)
                z0[n, l] = tau * (z - pz)
        for n in range(ns - 1):
            nrm = 0.0
            for l in range(d):
                z = y1[n, l] * inv_tau + (s[n + 1, l] - s[n, l])
                z1[n, l] = z
                nrm += z * z
            nrm = np.sqrt(nrm)
            scale = 0.0 if nrm <= a else 1.0 - a / nrm
            for l in range(d):
                z1[n, l] = tau * z1[n, l] * scale
        for n in range(ns - 2):
            nrm = 0.0
            for l in range(d):
                z = y2[n, l] * inv_tau + (s[n + 2, l] - 2.0 * s[n + 1, l] + s[n, l])
                z2[n, l] = z
                nrm += z * z
            nrm = np.sqrt(nrm)
            scale = 0.0 if nrm <= b else 1.0 - b / nrm
            for l in range(d):
                z2[n, l] = tau * z2[n, l] * scale

        accept = True
        if monotone:
            obj = _dual_objective(k, z0, z1, z2, pin_idx, pin_val, a, b, s)
            if obj > best:
                accept = False
            else:
                best = obj

        # Gradient-based adaptive restart: kill the momentum whenever it
        # points against the latest progress direction.
        g_dot = 0.0
        for n in range(ns):
            for l in range(d):
                g_dot += (y0[n, l] - z0[n, l]) * (z0[n, l] - q0[n, l])
        for n in range(ns - 1):
            for l in range(d):
                g_dot += (y1[n, l] - z1[n, l]) * (z1[n, l] - q1[n, l])
        for n in range(ns - 2):
            for l in range(d):
                g_dot += (y2[n, l] - z2[n, l]) * (z2[n, l] - q2[n, l])
        if g_dot > 0.0:
            t = 1.0
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))

        if monotone:
            # MFISTA: momentum extrapolates through the candidate point,
            # the iterate keeps the best objective seen.
            mom_z = t / t_next
            mom_q = (t - 1.0) / t_next
            for n in range(ns):
                for l in range(d):
                    new_q = z0[n, l] if accept else q0[n, l]
                    y0[n, l] = new_q + mom_z * (z0[n, l] - new_q) + mom_q * (new_q - q0[n, l])
                    q0[n, l] = new_q
            for n in range(ns - 1):
                for l in range(d):
                    new_q = z1[n, l] if accept else q1[n, l]
                    y1[n, l] = new_q + mom_z * (z1[n, l] - new_q) + mom_q * (new_q - q1[n, l])
                    q1[n, l] = new_q
            for n in range(ns - 2):
                for l in range(d):
                    new_q = z2[n, l] if accept else q2[n, l]
                    y2[n, l] = new_q + mom_z * (z2[n, l] - new_q) + mom_q * (new_q - q2[n, l])
                    q2[n, l] = new_q
        else:
            mom = (t - 1.0) / t_next
            for n in range(ns):
                for l in range(d):
                    y0[n, l] = z0[n, l] + mom * (z0[n, l] - q0[n, l])
                    q0[n, l] = z0[n, l]
            for n in range(ns - 1):
                for l in range(d):
                    y1[n, l] = z1[n, l] + mom * (z1[n, l] - q1[n, l])
                    q1[n, l] = z1[n, l]
            for n in range(ns - 2):
                for l in range(d):
                    y2[n, l] = z2[n, l] + mom * (z2[n, l] - q2[n, l])
                    q2[n, l] = z2[n, l]
        t = t_next

        if trace.shape[0] > 0:
            trace[it] = _dual_objective(k, q0, q1, q2, pin_idx, pin_val, a, b, s)

    _dual_to_primal(k, q0, q1, q2, pin_idx, pin_val, out)


@njit(cache=True)
def _feasibility_polish(s, a, b, pin_idx, pin_val, tol, max_sweeps):
    """Relaxed cyclic projections onto the individual row constraints.

    The dual solve leaves a residual violation proportional to its
    suboptimality; over-relaxed (factor 1.8) sweeps of per-constraint
    projections push the iterate into the feasible set while moving it only
    O(violation).  Box and pin rows are handled exactly.
    """
    omega = 1.8
    ns, d = s.shape
    for _ in range(max_sweeps):
        worst = 0.0
        if pin_idx >= 0:
            for l in range(d):
                s[pin_idx, l] = pin_val[l]
        for n in range(ns):
            for l in range(d):
                v = s[n, l]
                if v > 1.0:
                    if v - 1.0 > worst:
                        worst = v - 1.0
                    s[n, l] = 1.0
                elif v < -1.0:
                    if -1.0 - v > worst:
                        worst = -1.0 - v
                    s[n, l] = -1.0
        for n in range(ns - 1):
            if n == pin_idx or n + 1 == pin_idx:
                # Move only the free endpoint of a pinned pair.
                free = n + 1 if n == pin_idx else n
                sign = 1.0 if free == n + 1 else -1.0
                nrm = 0.0
                for l in range(d):
                    diff = s[n + 1, l] - s[n, l]
                    nrm += diff * diff
                nrm = np.sqrt(nrm)
                if nrm > a:
                    if nrm - a > worst:
                        worst = nrm - a
                    shrink = omega * (nrm - a) / nrm
                    for l in range(d):
                        diff = s[n + 1, l] - s[n, l]
                        s[free, l] -= sign * shrink * diff
                continue
            nrm = 0.0
            for l in range(d):
                diff = s[n + 1, l] - s[n, l]
                nrm += diff * diff
            nrm = np.sqrt(nrm)
            if nrm > a:
                if nrm - a > worst:
                    worst = nrm - a
                shrink = omega * 0.5 * (nrm - a) / nrm
                for l in range(d):
                    diff = s[n + 1, l] - s[n, l]
                    s[n, l] += shrink * diff
                    s[n + 1, l] -= shrink * diff
        for n in range(ns - 2):
            nrm = 0.0
            for l in range(d):
                w = s[n, l] - 2.0 * s[n + 1, l] + s[n + 2, l]
                nrm += w * w
            nrm = np.sqrt(nrm)
            if nrm > b:
                if nrm - b > worst:
                    worst = nrm - b
                # Exact projection onto one row set {||M x|| <= b}: the row
                # operator M = [1, -2, 1] has M M^T = 6 I; rows holding the
                # pin keep it fixed by rescaling the free coefficients.
                c0, c1, c2 = 1.0, -2.0, 1.0
                if pin_idx == n:
                    c0 = 0.0
                elif pin_idx == n + 1:
                    c1 = 0.0
                elif pin_idx == n + 2:
                    c2 = 0.0
                denom = c0 * c0 + c1 * c1 + c2 * c2
                if denom > 0.0:
                    step = omega * (nrm - b) / (denom * nrm)
                    for l in range(d):
                        w = s[n, l] - 2.0 * s[n + 1, l] + s[n + 2, l]
                        s[n, l] -= step * c0 * w
                        s[n + 1, l] -= step * c1 * w
                        s[n + 2, l] -= step * c2 * w
        if worst <= tol:
            break


@njit(cache=True, parallel=True)
def _project_all(shots, a, b, pin_idx, pin_val, n_iter, tau, monotone, tol, out):
    trace = np.empty(0)
    for c in prange(shots.shape[0]):
        _project_shot(shots[c], a, b, pin_idx, pin_val, n_iter, tau, monotone,
                      out[c], trace)
        _feasibility_polish(out[c], a, b, pin_idx, pin_val, tol, 50000)


def _pin_arrays(cfg: ProjectionConfig, dims: int):
    if cfg.pin is None:
        return -1, np.zeros(dims)
    value = np.asarray(cfg.pin.pinned_value, dtype=np.float64)
    if value.shape != (dims,):
        raise ValueError(f"pinned_value must have {dims} components")
    return int(cfg.pin.pinned_index), value


def project_shot(
    shot: np.ndarray, cfg: ProjectionConfig, return_trace: bool = False
):
    """Project a single (N_s, d) shot onto the constraint set.

    With ``return_trace`` the per-iteration dual objective is returned
    alongside the projected shot.
    """
    shot = np.ascontiguousarray(shot, dtype=np.float64)
    if shot.ndim != 2:
        raise ValueError("shot must be (N_s, d)")
    n_s, dims = shot.shape
    pin_idx, pin_val = _pin_arrays(cfg, dims)
    if pin_idx >= n_s:
        raise ValueError(f"pinned_index {pin_idx} out of range for N_s={n_s}")
    lam = _stacked_operator_norm(n_s, pin_idx)
    out = np.empty_like(shot)
    trace = np.empty(cfg.n_pit if return_trace else 0)
    _project_shot(shot, cfg.speed_bound, cfg.accel_bound, pin_idx, pin_val,
                  cfg.n_pit, 1.0 / lam, cfg.monotone, out, trace)
    _feasibility_polish(out, cfg.speed_bound, cfg.accel_bound, pin_idx, pin_val,
                        0.1 * cfg.feas_tol, 50000)
    if return_trace:
        return out, trace
    return out


def project_pattern(k: SamplingPattern, cfg: ProjectionConfig) -> SamplingPattern:
    """Project every shot independently (bit-exact shot independence)."""
    coords = np.ascontiguousarray(k.coords)
    n_s, dims = coords.shape[1], coords.shape[2]
    pin_idx, pin_val = _pin_arrays(cfg, dims)
    if pin_idx >= n_s:
        raise ValueError(f"pinned_index {pin_idx} out of range for N_s={n_s}")
    lam = _stacked_operator_norm(n_s, pin_idx)
    out = np.empty_like(coords)
    _project_all(coords, cfg.speed_bound, cfg.accel_bound, pin_idx, pin_val,
                 cfg.n_pit, 1.0 / lam, cfg.monotone, 0.1 * cfg.feas_tol, out)
    return SamplingPattern(out)


def feasibility_residuals(k: SamplingPattern, cfg: ProjectionConfig) -> dict:
    """Max violation of each constraint over the pattern, in normalized units."""
    coords = k.coords
    amp = float(np.max(np.abs(coords)) - 1.0)
    d1 = np.linalg.norm(np.diff(coords, axis=1), axis=2)
    d2 = np.linalg.norm(np.diff(coords, 2, axis=1), axis=2)
    speed = float(d1.max() - cfg.speed_bound) if d1.size else -np.inf
    accel = float(d2.max() - cfg.accel_bound) if d2.size else -np.inf
    res = {
        "amplitude": max(amp, 0.0),
        "speed": max(speed, 0.0),
        "acceleration": max(accel, 0.0),
    }
    if cfg.pin is not None:
        pin_err = np.abs(coords[:, cfg.pin.pinned_index, :] - cfg.pin.pinned_value)
        res["pin"] = float(pin_err.max())
    res["max"] = max(res.values())
    return res


