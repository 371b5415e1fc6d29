import warnings

import numpy as np
import pytest

from vdtraj.repulsion import (
    RepulsionConfig,
    eval_repulsion,
    eval_repulsion_direct,
    eval_repulsion_tree,
    _tree_sums,
)


def radial_cloud(rng, p, d):
    r = rng.uniform(0, 1, p) ** 2
    v = rng.normal(size=(p, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return np.ascontiguousarray(r[:, None] * v)


class TestDirect:
    def test_two_particle_hand_values(self):
        # 1/(2p^2) * (H(0)+H(1)+H(1)+H(0)) with H(r)=r gives 1/8 * 2 = 0.25;
        # gradients are the unit direction scaled by 1/p^2.
        pts = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        cost, grad = eval_repulsion_direct(pts, eps=0.0)
        assert abs(cost - 0.25) < 1e-9
        assert np.abs(grad - np.array([[-0.25, 0, 0], [0.25, 0, 0]])).max() < 1e-9

    def test_regularized_self_term(self):
        pts = np.zeros((3, 2))
        cost, grad = eval_repulsion_direct(pts, eps=0.1)
        # all pairs coincident: every kernel value is eps
        assert cost == pytest.approx(0.1 / 2.0)
        assert np.all(grad == 0.0)

    def test_gradient_matches_finite_differences(self, rng):
        pts = rng.uniform(-1, 1, (50, 3))
        eps = 1e-3
        cost, grad = eval_repulsion_direct(pts, eps)
        h = 1e-5
        fd = np.zeros_like(grad)
        for i in range(50):
            for ax in range(3):
                for sgn in (1, -1):
                    q = pts.copy()
                    q[i, ax] += sgn * h
                    fd[i, ax] += sgn * eval_repulsion_direct(q, eps)[0]
                fd[i, ax] /= 2 * h
        assert np.abs(grad - fd).max() / np.abs(fd).max() <= 1e-6

    def test_translation_invariance(self, rng):
        pts = rng.uniform(-0.5, 0.5, (64, 3))
        c1, g1 = eval_repulsion_direct(pts, 1e-3)
        c2, g2 = eval_repulsion_direct(pts + np.array([0.3, -0.2, 0.1]), 1e-3)
        assert abs(c1 - c2) <= 1e-12 * abs(c1)
        assert np.abs(g1 - g2).max() <= 1e-12

    def test_rotation_invariance_3d(self, rng):
        pts = rng.uniform(-0.6, 0.6, (48, 3))
        theta = 0.7
        rot = np.array([[np.cos(theta), -np.sin(theta), 0],
                        [np.sin(theta), np.cos(theta), 0],
                        [0, 0, 1.0]])
        c1, g1 = eval_repulsion_direct(pts, 1e-3)
        c2, g2 = eval_repulsion_direct(pts @ rot.T, 1e-3)
        assert abs(c1 - c2) <= 1e-10 * abs(c1)
        assert np.abs(g2 - g1 @ rot.T).max() <= 1e-10

    def test_forces_sum_to_zero(self, rng):
        pts = rng.uniform(-1, 1, (200, 2))
        _, grad = eval_repulsion_direct(pts, 1e-3)
        assert np.linalg.norm(grad.sum(axis=0)) <= 1e-10 * 200


class TestTree:
    def test_matches_direct_at_default_precision(self, rng):
        for d in (2, 3):
            pts = radial_cloud(rng, 4000, d)
            c0, g0 = eval_repulsion_direct(pts, 1e-3)
            cfg = RepulsionConfig(backend="tree", kernel_eps=1e-3)
            c1, g1 = eval_repulsion_tree(pts, cfg)
            assert abs(c1 - c0) / abs(c0) <= cfg.tree_precision
            assert np.linalg.norm(g1 - g0) / np.linalg.norm(g0) <= cfg.tree_precision

    def test_small_pattern_bitwise_identical_to_direct(self, rng):
        pts = rng.uniform(-1, 1, (2, 3))
        cfg = RepulsionConfig(backend="tree")
        c_tree, g_tree = eval_repulsion_tree(pts, cfg)
        c_dir, g_dir = eval_repulsion_direct(pts, cfg.kernel_eps)
        assert c_tree == c_dir
        assert np.array_equal(g_tree, g_dir)

    def test_error_decreases_with_order(self, rng):
        pts = radial_cloud(rng, 3000, 2)
        c0, g0 = eval_repulsion_direct(pts, 1e-3)
        p2 = pts.shape[0] ** 2
        errs = []
        for order in range(2, 7):
            val, grad = _tree_sums(pts, 1e-3, order, 0.55, 64)
            g = grad / p2
            errs.append(np.linalg.norm(g - g0) / np.linalg.norm(g0))
        for lo, hi in zip(errs[1:], errs[:-1]):
            assert lo <= hi + 1e-12

    def test_explicit_order_escalates_or_falls_back(self, rng):
        pts = rng.uniform(-1, 1, (1500, 2))
        cfg = RepulsionConfig(backend="tree", tree_precision=1e-9, interp_order=2,
                              leaf_size=32)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            c_tree, g_tree = eval_repulsion_tree(pts, cfg)
        assert any("escalat" in str(w.message) or "falling back" in str(w.message)
                   for w in caught)
        c_dir, g_dir = eval_repulsion_direct(pts, cfg.kernel_eps)
        assert abs(c_tree - c_dir) / abs(c_dir) <= 1e-9

    def test_dispatcher(self, rng):
        pts = rng.uniform(-1, 1, (300, 2))
        c1, _ = eval_repulsion(pts, RepulsionConfig(backend="direct"))
        c2, _ = eval_repulsion(pts, RepulsionConfig(backend="tree"))
        assert c2 == pytest.approx(c1, rel=1e-4)

    def test_degenerate_distributions(self, rng):
        cfg = RepulsionConfig(backend="tree")
        # coincident points exercise the depth-cap path
        pts = np.tile(np.array([[0.3, -0.2, 0.1]]), (500, 1))
        c_t, g_t = eval_repulsion_tree(np.ascontiguousarray(pts), cfg)
        c_d, _ = eval_repulsion_direct(pts, cfg.kernel_eps)
        assert c_t == pytest.approx(c_d, rel=1e-12)
        assert np.abs(g_t).max() == 0.0
        # near-degenerate needle along one axis
        t = rng.uniform(-1, 1, 3000)
        pts = np.stack([t, 1e-6 * rng.normal(size=3000), np.zeros(3000)], axis=1)
        c_t, g_t = eval_repulsion_tree(np.ascontiguousarray(pts), cfg)
        c_d, g_d = eval_repulsion_direct(pts, cfg.kernel_eps)
        assert abs(c_t - c_d) / abs(c_d) <= cfg.tree_precision
        assert np.linalg.norm(g_t - g_d) / np.linalg.norm(g_d) <= cfg.tree_precision

    def test_translation_invariance_of_tree(self, rng):
        # The tree geometry shifts with the cloud, so invariance holds to the
        # configured precision rather than machine precision.
        pts = rng.uniform(-0.4, 0.4, (2000, 2))
        cfg = RepulsionConfig(backend="tree")
        c1, g1 = eval_repulsion_tree(pts, cfg)
        c2, g2 = eval_repulsion_tree(pts + 0.25, cfg)
        assert abs(c1 - c2) <= 2 * cfg.tree_precision * abs(c1)


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            RepulsionConfig(backend="gpu")
        with pytest.raises(ValueError):
            RepulsionConfig(tree_precision=0.0)
        with pytest.raises(ValueError):
            RepulsionConfig(leaf_size=4)
        with pytest.raises(ValueError):
            RepulsionConfig(interp_order=1)
        with pytest.raises(ValueError):
            RepulsionConfig(kernel_eps=-1.0)
