import numpy as np
import pytest

from vdtraj.attraction import (
    eval_attraction,
    field_workspace_bytes,
    interpolate,
    precompute_field,
)
from vdtraj.core import SamplingPattern
from vdtraj.density import DensityParams, TargetDensity, discretize


def delta_density(grid_n, dims):
    grid = np.zeros((2 * grid_n + 1,) * dims)
    grid[(grid_n,) * dims] = 1.0
    return TargetDensity(grid=grid, grid_n=grid_n)


def kernel_grid(grid_n, dims, eps):
    axis = np.arange(-grid_n, grid_n + 1) / grid_n
    grids = np.meshgrid(*([axis] * dims), indexing="ij")
    return np.sqrt(sum(g * g for g in grids) + eps**2)


class TestPrecomputeField:
    def test_delta_density_reproduces_kernel(self):
        # Convolving with a point mass must return the kernel samples.
        eps = 0.05
        fld = precompute_field(delta_density(8, 2), kernel_eps=eps)
        href = kernel_grid(8, 2, eps)
        assert np.abs(fld.potential - href).max() <= 1e-12 * href.max()

    def test_force_odd_symmetry(self):
        rho = discretize(DensityParams(0.25, 2.0), grid_n=12, dims=2)
        fld = precompute_field(rho, kernel_eps=0.02)
        fx = fld.force[0]
        assert np.abs(fx + fx[::-1, :]).max() <= 1e-12

    def test_matches_direct_spatial_convolution(self, rng):
        # Brute-force O(N^4) linear convolution oracle on a small 2D grid.
        n = 8
        grid = rng.uniform(0, 1, (2 * n + 1, 2 * n + 1))
        rho = TargetDensity(grid=grid, grid_n=n)
        eps = 0.1
        fld = precompute_field(rho, kernel_eps=eps)
        side = 2 * n + 1
        ref = np.zeros((side, side))
        for i in range(-n, n + 1):
            for j in range(-n, n + 1):
                acc = 0.0
                for a in range(-n, n + 1):
                    for b in range(-n, n + 1):
                        h = np.sqrt(((i - a) / n) ** 2 + ((j - b) / n) ** 2 + eps**2)
                        acc += h * rho.grid[a + n, b + n]
                ref[i + n, j + n] = acc
        rel = np.abs(fld.potential - ref).max() / np.abs(ref).max()
        assert rel <= 1e-10

    def test_linearity_in_density(self, rng):
        # TargetDensity normalizes grids, so combine already-normalized grids
        # with convex weights to stay in the class.
        g1 = TargetDensity(rng.uniform(0, 1, (17, 17)), 8).grid
        g2 = TargetDensity(rng.uniform(0, 1, (17, 17)), 8).grid
        f1 = precompute_field(TargetDensity(g1, 8), kernel_eps=0.05)
        f2 = precompute_field(TargetDensity(g2, 8), kernel_eps=0.05)
        mix = 0.25 * f1.potential + 0.75 * f2.potential
        fmix = precompute_field(TargetDensity(0.25 * g1 + 0.75 * g2, 8),
                                kernel_eps=0.05)
        assert np.abs(fmix.potential - mix).max() <= 1e-12 * np.abs(mix).max()

    def test_default_eps_is_half_cell(self):
        fld = precompute_field(delta_density(10, 2))
        assert fld.kernel_eps == pytest.approx(1.0 / 20.0)

    def test_memory_guidance(self):
        rho = delta_density(4, 3)
        with pytest.raises(MemoryError, match="grid"):
            precompute_field(rho, kernel_eps=0.1, mem_cap_bytes=1024)
        assert field_workspace_bytes(768, 3) > 1e10


class TestEvalAttraction:
    def test_interpolation_exact_at_nodes(self, rng):
        rho = discretize(DensityParams(0.25, 2.0), grid_n=8, dims=2)
        fld = precompute_field(rho, kernel_eps=0.05)
        n = fld.grid_n
        nodes = np.array([[i / n, j / n] for i in (-8, -3, 0, 5) for j in (-8, 2, 8)])
        vals = interpolate(fld.potential, nodes, n)
        idx = np.round((nodes + 1) * n).astype(int)
        expect = fld.potential[idx[:, 0], idx[:, 1]]
        assert np.array_equal(vals, expect)

    def test_origin_gradient_vanishes_for_symmetric_density(self):
        rho = discretize(DensityParams(0.25, 2.0), grid_n=16, dims=2)
        fld = precompute_field(rho, kernel_eps=0.05)
        pat = SamplingPattern(np.zeros((1, 1, 2)))
        for mode in ("consistent", "smooth"):
            res = eval_attraction(pat, fld, grad_mode=mode)
            assert np.abs(res.grad).max() <= 1e-10

    def test_gradient_matches_fd_of_cost(self, rng):
        # Central finite differences of the interpolated cost, probes kept
        # inside grid cells.
        rho = discretize(DensityParams(0.25, 2.0), grid_n=32, dims=2)
        fld = precompute_field(rho, kernel_eps=1e-3)
        n = fld.grid_n
        p = 40
        pts = rng.uniform(-0.9, 0.9, (p, 2))
        u = (pts + 1.0) * n
        frac = u - np.floor(u)
        u += np.where(frac < 0.2, 0.2 - frac, 0.0)
        u -= np.where(frac > 0.8, frac - 0.8, 0.0)
        pts = u / n - 1.0
        pat = SamplingPattern(pts[None])
        res = eval_attraction(pat, fld, "consistent")
        h = 1e-6
        fd = np.zeros_like(res.grad)
        for i in range(p):
            for ax in range(2):
                for sgn in (1, -1):
                    q = pts.copy()
                    q[i, ax] += sgn * h
                    fd[i, ax] += sgn * eval_attraction(
                        SamplingPattern(q[None]), fld, "consistent").cost
                fd[i, ax] /= 2 * h
        rel = np.abs(res.grad - fd).max() / np.abs(fd).max()
        assert rel <= 1e-5

    def test_cost_invariant_under_ordering(self, rng):
        rho = discretize(DensityParams(0.25, 2.0), grid_n=16, dims=3)
        fld = precompute_field(rho)
        pts = rng.uniform(-1, 1, (50, 3))
        pat1 = SamplingPattern(pts[None])
        perm = rng.permutation(50)
        pat2 = SamplingPattern(pts[perm][None])
        r1 = eval_attraction(pat1, fld)
        r2 = eval_attraction(pat2, fld)
        assert r1.cost == pytest.approx(r2.cost, rel=1e-14)
        assert np.allclose(r1.grad[perm], r2.grad, atol=1e-15)

    def test_out_of_domain_clamped_and_counted(self):
        rho = discretize(DensityParams(0.25, 2.0), grid_n=8, dims=2)
        fld = precompute_field(rho)
        pts = np.array([[1.5, 0.0], [0.0, 0.0], [-1.0, -2.0]])
        res = eval_attraction(SamplingPattern(pts[None]), fld)
        assert res.n_clamped == 2
        assert np.isfinite(res.cost)

    def test_dims_mismatch(self):
        rho = discretize(DensityParams(0.25, 2.0), grid_n=8, dims=2)
        fld = precompute_field(rho)
        with pytest.raises(ValueError, match="dims"):
            eval_attraction(SamplingPattern(np.zeros((1, 2, 3))), fld)
