"""Gaussian cloud: densities, EWA projection, and ordered alpha blending."""

import numpy as np
import pytest
import torch
from scipy.spatial.transform import Rotation
from scipy.stats import multivariate_normal

from pseudoview.errors import DataError
from pseudoview.geometry import Pose
from pseudoview.gsplat import (
    COV2D_DILATION,
    Gaussian3D,
    GaussianCloud,
    eval_density,
    init_cloud,
    load_cloud,
    project_gaussian,
    quats_to_rotmats,
    save_cloud,
    splat_render,
)

from conftest import make_intrinsics

BBOX = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])


def logistic(x):
    return 1.0 / (1.0 + np.exp(-x))


def iso_gaussian(mean, scale, opacity_logit=2.0, color=(1.0, 0.0, 0.0)):
    return Gaussian3D(
        mean=np.asarray(mean, dtype=np.float64),
        log_scale=np.log(scale) * np.ones(3),
        rotation_q=np.array([1.0, 0.0, 0.0, 0.0]),
        opacity_logit=opacity_logit,
        color=np.asarray(color, dtype=np.float64),
    )


def random_gaussian(rng, **overrides):
    quat = rng.standard_normal(4)
    fields = dict(
        mean=rng.uniform(-0.5, 0.5, 3),
        log_scale=rng.uniform(-2.0, 0.0, 3),
        rotation_q=quat / np.linalg.norm(quat),
        opacity_logit=float(rng.uniform(-1, 2)),
        color=rng.random(3),
    )
    fields.update(overrides)
    return Gaussian3D(**fields)


class TestGaussian3D:
    def test_quaternion_normalized_on_construction(self):
        g = Gaussian3D(np.zeros(3), np.zeros(3), np.array([2.0, 0, 0, 0]), 0.0, np.full(3, 0.5))
        assert abs(np.linalg.norm(g.rotation_q) - 1.0) < 1e-9
        with pytest.raises(ValueError, match="quaternion"):
            Gaussian3D(np.zeros(3), np.zeros(3), np.zeros(4), 0.0, np.full(3, 0.5))

    def test_covariance_spd(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            cov = random_gaussian(rng).covariance()
            np.testing.assert_allclose(cov, cov.T, atol=1e-12)
            assert np.all(np.linalg.eigvalsh(cov) > 0)

    def test_rotation_matches_scipy(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            g = random_gaussian(rng)
            w, x, y, z = g.rotation_q
            expected = Rotation.from_quat([x, y, z, w]).as_matrix()
            np.testing.assert_allclose(g.rotation_matrix(), expected, atol=1e-12)
            got = quats_to_rotmats(torch.as_tensor(g.rotation_q, dtype=torch.float64).unsqueeze(0))
            np.testing.assert_allclose(got[0].numpy(), expected, atol=1e-12)


class TestEvalDensity:
    def test_unit_gaussian_at_mean(self):
        g = iso_gaussian([0.3, -0.2, 0.5], 1.0)
        np.testing.assert_allclose(eval_density(g, g.mean), (2 * np.pi) ** -1.5, rtol=1e-12)

    def test_unit_mahalanobis(self):
        g = iso_gaussian([0, 0, 0], 1.0)
        val = eval_density(g, [1.0, 0.0, 0.0])
        np.testing.assert_allclose(val, (2 * np.pi) ** -1.5 * np.exp(-0.5), rtol=1e-12)

    def test_matches_scipy_for_anisotropic(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            g = random_gaussian(rng)
            pts = g.mean + rng.standard_normal((20, 3)) * 0.5
            expected = multivariate_normal(mean=g.mean, cov=g.covariance()).pdf(pts)
            np.testing.assert_allclose(eval_density(g, pts), expected, rtol=1e-9)

    def test_integrates_to_one_monte_carlo(self):
        rng = np.random.default_rng(3)
        g = random_gaussian(rng, log_scale=np.log([0.5, 1.0, 1.4]))
        half = 6.0 * np.exp(np.max(g.log_scale))
        lo, hi = g.mean - half, g.mean + half
        pts = lo + rng.random((1_000_000, 3)) * (hi - lo)
        volume = float(np.prod(hi - lo))
        estimate = volume * float(np.mean(eval_density(g, pts)))
        assert abs(estimate - 1.0) < 0.02


class TestProjectGaussian:
    def test_on_axis_closed_form(self):
        intr = make_intrinsics(64)
        s, d = 0.2, 3.0
        g = iso_gaussian([0.0, 0.0, d], s)
        mean2d, cov2d, depth = project_gaussian(g, intr, Pose.identity())
        np.testing.assert_allclose(mean2d, [intr.cx, intr.cy], atol=1e-12)
        assert depth == d
        expected = (intr.fx * s / d) ** 2 * np.eye(2) + COV2D_DILATION * np.eye(2)
        np.testing.assert_allclose(cov2d, expected, rtol=1e-12)

    def test_behind_camera_culled(self):
        assert project_gaussian(iso_gaussian([0, 0, -1.0], 0.1), make_intrinsics(64), Pose.identity()) is None

    def test_perspective_scaling(self):
        intr = make_intrinsics(64)
        s = 0.15
        _, cov_near, _ = project_gaussian(iso_gaussian([0, 0, 2.0], s), intr, Pose.identity())
        _, cov_far, _ = project_gaussian(iso_gaussian([0, 0, 4.0], s), intr, Pose.identity())
        std_near = np.sqrt(cov_near[0, 0] - COV2D_DILATION)
        std_far = np.sqrt(cov_far[0, 0] - COV2D_DILATION)
        np.testing.assert_allclose(std_near / std_far, 2.0, rtol=1e-9)


class TestSplatRender:
    def test_transparent_cloud_is_background(self):
        rng = np.random.default_rng(4)
        cloud = GaussianCloud([random_gaussian(rng, opacity_logit=-30.0) for _ in range(10)])
        intr = make_intrinsics(32)
        pose = Pose(np.eye(3), np.array([0.0, 0.0, -3.0]))
        out = splat_render(cloud, intr, pose, background=(0.1, 0.5, 0.9))
        np.testing.assert_allclose(out.rgb, np.broadcast_to([0.1, 0.5, 0.9], out.rgb.shape), atol=1e-6)
        np.testing.assert_allclose(out.acc, 0.0, atol=1e-6)

    def test_single_gaussian_argmax_and_color(self):
        intr = make_intrinsics(64)
        pose = Pose(np.eye(3), np.array([0.0, 0.0, -3.0]))
        # wide enough that the half-pixel falloff around the mean is negligible
        g = iso_gaussian([0.21, -0.14, 0.3], 0.3, opacity_logit=8.0, color=(0.8, 0.6, 0.1))
        mean2d, _, _ = project_gaussian(g, intr, pose)
        out = splat_render(GaussianCloud([g]), intr, pose)
        iy, ix = np.unravel_index(np.argmax(out.acc), out.acc.shape)
        assert abs(ix + 0.5 - mean2d[0]) <= 1.0 and abs(iy + 0.5 - mean2d[1]) <= 1.0
        center = out.rgb[int(mean2d[1]), int(mean2d[0])]
        np.testing.assert_allclose(center, [0.8, 0.6, 0.1], atol=0.01)

    def test_two_gaussian_depth_order_hand_blend(self):
        intr = make_intrinsics(64)
        pose = Pose(np.eye(3), np.array([0.0, 0.0, -3.0]))
        # unsaturated colors: the raw-color parameterization clips exact 0/1
        g_near = iso_gaussian([0.0, 0.0, 0.0], 0.25, opacity_logit=0.8, color=(0.9, 0.05, 0.1))
        g_far = iso_gaussian([0.05, 0.0, 1.0], 0.25, opacity_logit=0.4, color=(0.15, 0.85, 0.2))

        def hand_blend(first, second, px):
            """Two-term front-to-back blend computed from projections."""
            total = np.zeros(3)
            trans = 1.0
            for g in (first, second):
                mean2d, cov2d, _ = project_gaussian(g, intr, pose)
                d = np.asarray(px) - mean2d
                alpha = logistic(g.opacity_logit) * np.exp(-0.5 * d @ np.linalg.inv(cov2d) @ d)
                alpha = min(alpha, 0.999)
                if alpha < 1.0 / 255.0:
                    alpha = 0.0
                total = total + trans * alpha * g.color
                trans *= 1.0 - alpha
            return total

        px = (intr.cx + 0.5, intr.cy + 0.5)
        ix, iy = int(px[0] - 0.5), int(px[1] - 0.5)
        out = splat_render(GaussianCloud([g_far, g_near]), intr, pose, dtype=torch.float64)
        np.testing.assert_allclose(out.rgb[iy, ix], hand_blend(g_near, g_far, px), atol=1e-6)

        # swapping depths swaps the blend order and changes the color accordingly
        g_near_swapped = iso_gaussian([0.0, 0.0, 1.0], 0.25, opacity_logit=0.8, color=(0.9, 0.05, 0.1))
        g_far_swapped = iso_gaussian([0.05, 0.0, 0.0], 0.25, opacity_logit=0.4, color=(0.15, 0.85, 0.2))
        out2 = splat_render(GaussianCloud([g_far_swapped, g_near_swapped]), intr, pose, dtype=torch.float64)
        np.testing.assert_allclose(out2.rgb[iy, ix], hand_blend(g_far_swapped, g_near_swapped, px), atol=1e-6)
        assert np.max(np.abs(out2.rgb[iy, ix] - out.rgb[iy, ix])) > 1e-3

    def test_weights_plus_leftover_sum_to_one(self):
        from pseudoview.gsplat import render_pixels_from_tensors

        rng = np.random.default_rng(5)
        cloud = GaussianCloud([random_gaussian(rng, opacity_logit=float(rng.uniform(0, 3))) for _ in range(40)])
        intr = make_intrinsics(32)
        pose = Pose(np.eye(3), np.array([0.0, 0.0, -3.0]))
        params = cloud.pack(torch.float64)
        gx, gy = np.meshgrid(np.arange(32) + 0.5, np.arange(32) + 0.5)
        pixels = torch.as_tensor(np.stack([gx.ravel(), gy.ravel()], -1), dtype=torch.float64)
        # acc sums the per-gaussian weights; rendering black gaussians on a
        # white background isolates the cumprod leftover; together they must
        # reconstruct exactly 1
        _, _, acc = render_pixels_from_tensors(params, intr, pose, pixels, (0.0, 0.0, 0.0))
        params_black = dict(params, colors_raw=torch.full_like(params["colors_raw"], -40.0))
        rgb_white_bg, _, _ = render_pixels_from_tensors(params_black, intr, pose, pixels, (1.0, 1.0, 1.0))
        leftover = rgb_white_bg[:, 0]
        assert float((acc + leftover - 1.0).abs().max()) < 1e-9

    def test_permutation_invariance(self):
        rng = np.random.default_rng(6)
        gaussians = [random_gaussian(rng, opacity_logit=1.0) for _ in range(25)]
        intr = make_intrinsics(24)
        pose = Pose(np.eye(3), np.array([0.0, 0.0, -3.0]))
        base = splat_render(GaussianCloud(gaussians), intr, pose)
        perm = [gaussians[i] for i in rng.permutation(len(gaussians))]
        shuffled = splat_render(GaussianCloud(perm), intr, pose)
        np.testing.assert_array_equal(base.rgb, shuffled.rgb)
        np.testing.assert_array_equal(base.depth, shuffled.depth)

    def test_identical_across_thread_counts(self):
        rng = np.random.default_rng(7)
        cloud = GaussianCloud([random_gaussian(rng) for _ in range(30)])
        intr = make_intrinsics(32)
        pose = Pose(np.eye(3), np.array([0.0, 0.0, -3.0]))
        n = torch.get_num_threads()
        try:
            torch.set_num_threads(1)
            a = splat_render(cloud, intr, pose)
            torch.set_num_threads(max(2, n))
            b = splat_render(cloud, intr, pose)
        finally:
            torch.set_num_threads(n)
        np.testing.assert_array_equal(a.rgb, b.rgb)

    def test_empty_cloud_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            splat_render(GaussianCloud([]), make_intrinsics(16), Pose.identity())


class TestCloudIO:
    def test_init_cloud_deterministic_and_in_bbox(self):
        a = init_cloud(50, BBOX, seed=1)
        b = init_cloud(50, BBOX, seed=1)
        for ga, gb in zip(a.gaussians, b.gaussians):
            np.testing.assert_array_equal(ga.mean, gb.mean)
        for g in a.gaussians:
            assert np.all(g.mean >= BBOX[0]) and np.all(g.mean <= BBOX[1])

    def test_checkpoint_round_trip(self, tmp_path):
        cloud = init_cloud(17, BBOX, seed=2)
        path = tmp_path / "cloud.ckpt"
        save_cloud(path, cloud)
        back = load_cloud(path)
        assert len(back) == 17
        for ga, gb in zip(cloud.gaussians, back.gaussians):
            np.testing.assert_allclose(gb.mean, ga.mean, atol=1e-6)
            np.testing.assert_allclose(gb.rotation_q, ga.rotation_q, atol=1e-6)
            np.testing.assert_allclose(gb.color, ga.color, atol=1e-6)

    def test_rejects_bad_files(self, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"XXXX" + b"\0" * 32)
        with pytest.raises(DataError, match="magic"):
            load_cloud(bad)
        path = tmp_path / "trunc.ckpt"
        save_cloud(path, init_cloud(5, BBOX, seed=0))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(DataError, match="floats"):
            load_cloud(path)
