import numpy as np
import pytest

from pseudoview.geometry import Intrinsics
from pseudoview.harness.dataset import RingGeometry, make_dataset
from pseudoview.harness.scene import Box, Sphere, SyntheticScene, generate_scene


def make_intrinsics(size: int = 64, focal: float | None = None) -> Intrinsics:
    focal = 1.1 * size if focal is None else focal
    return Intrinsics(fx=focal, fy=focal, cx=size / 2.0, cy=size / 2.0, width=size, height=size)


def bulky_scene() -> SyntheticScene:
    """Frame-filling geometry: a platform slab plus two objects on it.

    A fog-initialized field is far from this target (low starting PSNR) while
    a handful of ring views generalize well, which keeps training and
    densification effects measurable above the background.
    """
    return SyntheticScene(
        boxes=[
            Box(center=[0, 0, -0.3], half_size=[0.85, 0.85, 0.25], albedo=[0.55, 0.45, 0.3]),
            Box(center=[-0.35, 0.3, 0.25], half_size=[0.25, 0.25, 0.3], albedo=[0.8, 0.2, 0.15]),
        ],
        spheres=[Sphere(center=[0.4, -0.3, 0.25], radius=0.3, albedo=[0.15, 0.5, 0.8])],
    )


def bulky_ring() -> RingGeometry:
    return RingGeometry(radius=2.3, height=1.3)


@pytest.fixture(scope="session")
def intr64() -> Intrinsics:
    return make_intrinsics(64)


@pytest.fixture(scope="session")
def oracle_scene():
    return generate_scene(seed=7, object_count=6)


@pytest.fixture(scope="session")
def ring_dataset(oracle_scene, intr64, tmp_path_factory):
    """8-view ring dataset (6 train / 2 test) written to a session tmp dir."""
    out = tmp_path_factory.mktemp("ring_dataset")
    return make_dataset(oracle_scene, intr64, view_count=8, ring=RingGeometry(), seed=3, out_dir=out)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation via QR of a gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
