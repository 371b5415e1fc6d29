import numpy as np
import pytest

from vdtraj.density import (
    DensityParams,
    TargetDensity,
    discretize,
    default_grid_n,
    kappa_1d,
    radial_value,
)


class TestRadialValue:
    def test_closed_form_kappa(self):
        # kappa = (1-D)/(2C(C^(D-1)-D)) at C=0.25, D=2 is exactly 8/7.
        params = DensityParams(0.25, 2.0)
        assert abs(kappa_1d(params) - 8.0 / 7.0) < 1e-9

    def test_value_at_half_radius(self):
        params = DensityParams(0.25, 2.0)
        kappa = kappa_1d(params)
        val = radial_value(np.array([0.5, 0.0]), params, kappa)
        assert abs(val - kappa / 4.0) < 1e-9 * kappa

    def test_uniform_when_decay_zero(self):
        params = DensityParams(0.3, 0.0)
        assert abs(kappa_1d(params) - 0.5) < 1e-12
        vals = radial_value(np.linspace(-1, 1, 9)[:, None], params, 0.5)
        assert np.all(vals == 0.5)

    def test_plateau_branch_at_cutoff(self):
        params = DensityParams(0.25, 2.0)
        assert radial_value(np.array([0.25, 0.0]), params, 1.0) == 1.0

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            DensityParams(0.0, 2.0)
        with pytest.raises(ValueError):
            DensityParams(1.0, 2.0)
        with pytest.raises(ValueError):
            DensityParams(0.25, -1.0)


class TestDiscretize:
    def test_flat_grid_for_zero_decay(self):
        rho = discretize(DensityParams(0.3, 0.0), grid_n=8, dims=2)
        assert np.allclose(rho.grid, 1.0 / 17**2, rtol=0, atol=1e-15)

    def test_sums_to_one(self):
        rho = discretize(DensityParams(0.25, 2.0), grid_n=32, dims=3)
        assert abs(rho.grid.sum() - 1.0) <= 1e-12
        assert np.all(rho.grid >= 0)

    def test_center_to_half_radius_ratio(self):
        # Ratio of plateau to value at Euclidean radius 0.5 is (0.5/0.25)^2,
        # independent of the normalization.
        rho = discretize(DensityParams(0.25, 2.0), grid_n=32, dims=3)
        n = rho.grid_n
        center = rho.grid[n, n, n]
        at_half = rho.grid[n + 16, n, n]
        assert at_half > 0
        assert center / at_half == pytest.approx(4.0, rel=1e-12)

    def test_radial_symmetry(self):
        rho = discretize(DensityParams(0.25, 2.0), grid_n=16, dims=2)
        assert np.allclose(rho.grid, rho.grid[::-1, :], atol=1e-15)
        assert np.allclose(rho.grid, rho.grid.T, atol=1e-15)

    def test_monotone_in_radius(self):
        rho = discretize(DensityParams(0.25, 2.0), grid_n=24, dims=2)
        n = rho.grid_n
        line = rho.grid[n, n:]
        assert np.all(np.diff(line) <= 1e-18)

    def test_default_grid_n(self):
        assert default_grid_n((384, 384, 208)) == 768
        assert default_grid_n(64) == 128


class TestTargetDensity:
    def test_rejects_negative(self):
        grid = np.ones((9, 9))
        grid[0, 0] = -1e-3
        with pytest.raises(ValueError, match="non-negative"):
            TargetDensity(grid=grid, grid_n=4)

    def test_normalizes_on_load(self, tmp_path, rng):
        grid = rng.uniform(0.0, 3.0, (9, 9))
        path = tmp_path / "d.spkd"
        TargetDensity(grid=grid, grid_n=4).save(path)
        loaded = TargetDensity.load(path)
        assert abs(loaded.grid.sum() - 1.0) <= 1e-12
        assert loaded.params is None

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="inconsistent"):
            TargetDensity(grid=np.ones((9, 9)), grid_n=3)
