"""Enhancer contract, wire client, noise augmentation, and duo quartets."""

import numpy as np
import pytest
from scipy.stats import truncnorm

from pseudoview.enhance import (
    EnhanceRequest,
    IdentityEnhancer,
    MockDegradeEnhancer,
    OracleEnhancer,
    PseudoObservation,
    Quartet,
    corrupt_image,
    enhance,
    make_duos,
    make_noise_quartets,
    remote_enhance,
    write_quartets,
)
from pseudoview.errors import DataError, EnhanceProtocolError, EnhancerUnavailable
from pseudoview.harness.dataset import RingGeometry, make_dataset
from pseudoview.harness.metrics import psnr
from pseudoview.harness.scene import render_ground_truth
from pseudoview.imgio import decode_pfm, decode_png, encode_pfm, encode_png, read_png
from pseudoview.optim import RepresentationSpec, TrainConfig
from pseudoview.volren import RenderConfig

from conftest import make_intrinsics
from wire_utils import EnhanceTestServer


def make_request(rng, size=24, intr=None, view_id="v0"):
    rgb = rng.random((size, size, 3)).astype(np.float32)
    depth = rng.uniform(0.5, 4.0, (size, size)).astype(np.float32)
    unc = rng.random((size, size)).astype(np.float32)
    return EnhanceRequest(rgb=rgb, depth=depth, uncertainty=unc, view_id=view_id, intrinsics=intr)


class TestRequestValidation:
    def test_rejects_mismatched_resolutions(self):
        with pytest.raises(ValueError, match="resolution"):
            EnhanceRequest(
                rgb=np.zeros((8, 8, 3)), depth=np.zeros((9, 9)), uncertainty=np.zeros((8, 8)), view_id="x"
            )

    def test_rejects_non_finite(self):
        depth = np.zeros((8, 8))
        depth[0, 0] = np.nan
        with pytest.raises(ValueError, match="depth"):
            EnhanceRequest(rgb=np.zeros((8, 8, 3)), depth=depth, uncertainty=np.zeros((8, 8)), view_id="x")

    def test_pseudo_observation_round_starts_at_one(self, intr64):
        from pseudoview.geometry import Pose

        with pytest.raises(ValueError, match="round"):
            PseudoObservation(np.zeros((4, 4, 3)), Pose.identity(), intr64, round_index=0)


class TestLocalEnhancers:
    def test_identity_is_bit_exact_and_idempotent(self):
        rng = np.random.default_rng(0)
        req = make_request(rng)
        impl = IdentityEnhancer()
        out = enhance(impl, req)
        np.testing.assert_array_equal(out, req.rgb)
        again = enhance(impl, EnhanceRequest(out, req.depth, req.uncertainty, "v1"))
        np.testing.assert_array_equal(again, out)

    def test_oracle_returns_ground_truth(self, oracle_scene, intr64, ring_dataset):
        view = ring_dataset.test_views()[0]
        impl = OracleEnhancer(oracle_scene, intr64)
        impl.register_view("nv0", view.pose)
        rng = np.random.default_rng(1)
        req = make_request(rng, size=64, view_id="nv0")
        out = enhance(impl, req)
        expected, _ = render_ground_truth(oracle_scene, intr64, view.pose)
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_oracle_requires_registered_pose(self, oracle_scene, intr64):
        impl = OracleEnhancer(oracle_scene, intr64)
        with pytest.raises(DataError, match="registered"):
            impl.enhance(make_request(np.random.default_rng(2), size=64, view_id="unknown"))

    def test_mock_degrade_blends_toward_ground_truth(self, oracle_scene, intr64, ring_dataset):
        view = ring_dataset.test_views()[0]
        impl = MockDegradeEnhancer(oracle_scene, intr64, beta=0.5)
        impl.register_view("nv0", view.pose)
        rng = np.random.default_rng(3)
        req = make_request(rng, size=64, view_id="nv0")
        out = enhance(impl, req)
        gt, _ = render_ground_truth(oracle_scene, intr64, view.pose)
        np.testing.assert_allclose(out, 0.5 * req.rgb + 0.5 * gt, atol=1e-6)

    def test_contract_validation_rejects_bad_impls(self):
        rng = np.random.default_rng(4)
        req = make_request(rng)

        class WrongShape:
            def enhance(self, r):
                return r.rgb[:-1]

        class OutOfRange:
            def enhance(self, r):
                return r.rgb + 2.0

        with pytest.raises(EnhanceProtocolError, match="shape"):
            enhance(WrongShape(), req)
        with pytest.raises(EnhanceProtocolError, match="range"):
            enhance(OutOfRange(), req)


class TestCorruptImage:
    def test_zero_std_is_identity(self):
        rng = np.random.default_rng(5)
        img = rng.random((16, 16, 3)).astype(np.float32)
        np.testing.assert_array_equal(corrupt_image(img, 0.0, seed=1), img)

    def test_deterministic(self):
        img = np.full((32, 32, 3), 0.5, dtype=np.float32)
        a = corrupt_image(img, 0.3, seed=7)
        b = corrupt_image(img, 0.3, seed=7)
        np.testing.assert_array_equal(a, b)
        c = corrupt_image(img, 0.3, seed=8)
        assert np.any(a != c)

    def test_small_std_matches_requested_sigma(self):
        # sigma small enough that clamping never triggers on mid-gray
        img = np.full((128, 128, 3), 0.5, dtype=np.float32)
        noise = corrupt_image(img, 0.1, seed=2) - img
        assert abs(float(noise.std()) - 0.1) / 0.1 < 0.05

    def test_default_std_against_truncated_normal(self):
        # with sigma=0.3 on mid-gray the [0,1] clamp truncates at +-1.667 sigma;
        # unclipped samples should match the truncated-normal sigma
        img = np.full((256, 256, 3), 0.5, dtype=np.float32)
        out = corrupt_image(img, 0.3, seed=3)
        noise = (out - img)[(out > 1e-6) & (out < 1 - 1e-6)]
        expected_std = truncnorm.std(-0.5 / 0.3, 0.5 / 0.3, scale=0.3)
        assert abs(float(noise.std()) - expected_std) / expected_std < 0.05

    def test_rejects_negative_std(self):
        with pytest.raises(ValueError):
            corrupt_image(np.zeros((4, 4, 3)), -0.1)


class TestWireClient:
    def test_echo_round_trip_within_quantization(self, intr64):
        rng = np.random.default_rng(6)
        req = make_request(rng, size=32, intr=make_intrinsics(32))
        with EnhanceTestServer() as server:
            out = remote_enhance(server.endpoint, req, timeout=5.0, retries=0, backoff=0.0)
        assert out.shape == req.rgb.shape
        assert np.max(np.abs(out - req.rgb)) <= 1.0 / 255.0

    def test_codec_round_trips(self):
        rng = np.random.default_rng(7)
        img = rng.random((20, 30, 3)).astype(np.float32)
        assert np.max(np.abs(decode_png(encode_png(img)) - img)) <= 1.0 / 255.0
        depth = rng.uniform(-1, 5, (20, 30)).astype(np.float32)
        np.testing.assert_array_equal(decode_pfm(encode_pfm(depth)), depth)

    def test_wrong_resolution_is_protocol_error(self, intr64):
        rng = np.random.default_rng(8)
        req = make_request(rng, size=32, intr=make_intrinsics(32))
        with EnhanceTestServer() as server:
            server.respond_with = encode_png(np.zeros((8, 8, 3), dtype=np.float32))
            with pytest.raises(EnhanceProtocolError, match="shape"):
                remote_enhance(server.endpoint, req, timeout=5.0, retries=0, backoff=0.0)

    def test_4xx_is_protocol_error_without_retry(self, intr64):
        rng = np.random.default_rng(9)
        req = make_request(rng, size=16, intr=make_intrinsics(16))
        with EnhanceTestServer() as server:
            server.force_status = 400
            with pytest.raises(EnhanceProtocolError, match="400"):
                remote_enhance(server.endpoint, req, timeout=5.0, retries=3, backoff=0.0)
            assert server.request_count == 1

    def test_5xx_retries_exactly_then_unavailable(self, intr64):
        rng = np.random.default_rng(10)
        req = make_request(rng, size=16, intr=make_intrinsics(16))
        with EnhanceTestServer() as server:
            server.fail_with_5xx_remaining = -1
            with pytest.raises(EnhancerUnavailable, match="3 attempts"):
                remote_enhance(server.endpoint, req, timeout=5.0, retries=2, backoff=0.0)
            assert server.request_count == 3

    def test_5xx_then_success_recovers(self, intr64):
        rng = np.random.default_rng(11)
        req = make_request(rng, size=16, intr=make_intrinsics(16))
        with EnhanceTestServer() as server:
            server.fail_with_5xx_remaining = 2
            out = remote_enhance(server.endpoint, req, timeout=5.0, retries=2, backoff=0.0)
            assert server.request_count == 3
        assert np.max(np.abs(out - req.rgb)) <= 1.0 / 255.0

    def test_unreachable_endpoint_unavailable(self, intr64):
        rng = np.random.default_rng(12)
        req = make_request(rng, size=16, intr=make_intrinsics(16))
        with pytest.raises(EnhancerUnavailable):
            remote_enhance("http://127.0.0.1:9", req, timeout=0.2, retries=1, backoff=0.0)

    def test_meta_requires_intrinsics(self):
        req = make_request(np.random.default_rng(13), size=16, intr=None)
        with pytest.raises(ValueError, match="intrinsics"):
            remote_enhance("http://localhost:1", req, retries=0)


@pytest.fixture(scope="module")
def duo_dataset(oracle_scene, intr64, tmp_path_factory):
    # 14 ring views -> 10 train / 4 test
    out = tmp_path_factory.mktemp("duo_dataset")
    return make_dataset(oracle_scene, intr64, view_count=14, ring=RingGeometry(), seed=5, out_dir=out)


def duo_config(iterations=120):
    return TrainConfig(
        representation="grid",
        iterations=iterations,
        batch_size=256,
        seed=4,
        render=RenderConfig(near=0.5, far=6.0, samples_per_ray=32),
    )


def duo_spec():
    return RepresentationSpec(kind="grid", grid_resolution=(24, 24, 24), init_seed=4)


class TestMakeDuos:
    def test_counting_contract(self, duo_dataset):
        quartets = make_duos(duo_dataset, duo_spec(), duo_config(iterations=20), subset_fraction=0.2)
        assert len(quartets) == len(duo_dataset.test_views())
        poses = [duo_dataset.test_views()[0].pose, duo_dataset.test_views()[1].pose]
        quartets = make_duos(duo_dataset, duo_spec(), duo_config(iterations=20), subset_fraction=0.2, poses=poses)
        assert len(quartets) == 2

    def test_subset_too_small_rejected(self, duo_dataset):
        with pytest.raises(DataError, match="subset"):
            make_duos(duo_dataset, duo_spec(), duo_config(iterations=10), subset_fraction=0.05)

    def test_degenerate_fraction_one_gives_indistinguishable_duo(self, duo_dataset):
        quartets = make_duos(duo_dataset, duo_spec(), duo_config(iterations=60), subset_fraction=1.0)
        for q in quartets:
            assert psnr(q.fine, q.coarse) > 30.0

    def test_quartet_layout_on_disk(self, duo_dataset, tmp_path):
        quartets = make_duos(duo_dataset, duo_spec(), duo_config(iterations=20), subset_fraction=0.2)
        write_quartets(tmp_path, quartets)
        first = tmp_path / "quartets" / "0000"
        assert (first / "fine.png").exists()
        assert (first / "coarse.png").exists()
        assert (first / "depth.pfm").exists()
        assert (first / "uncertainty.pfm").exists()
        img = read_png(first / "fine.png")
        assert img.shape == quartets[0].fine.shape

    def test_noise_quartets_have_no_uncertainty(self, duo_dataset):
        quartets = make_noise_quartets(duo_dataset, noise_std=0.3, seed=0)
        assert len(quartets) == len(duo_dataset.views)
        for q in quartets:
            assert q.uncertainty is None
            assert q.coarse.shape == q.fine.shape

    def test_quartet_resolution_validation(self):
        with pytest.raises(ValueError, match="resolution"):
            Quartet(fine=np.zeros((8, 8, 3)), coarse=np.zeros((8, 8, 3)), depth=np.zeros((4, 4)))
