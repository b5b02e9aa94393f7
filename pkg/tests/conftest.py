import numpy as np
import pytest

from freqsplat.model import Camera, GaussianScene, inverse_sigmoid


def front_camera(width=32, height=32, focal=None, distance=3.0, near=0.05):
    """Identity-rotation camera at z = -distance looking down +z."""
    focal = focal if focal is not None else 1.2 * width
    return Camera(width, height, focal, focal, width / 2.0, height / 2.0,
                  np.eye(3), np.array([0.0, 0.0, distance]), near=near)


def random_scene(rng, count, num_levels=1, extent=0.8, scale_range=(-3.0, -1.5),
                 background=0.5):
    """Random scene in a box around the origin, visible from front_camera."""
    positions = rng.uniform(-extent, extent, (count, 3))
    quaternions = rng.standard_normal((count, 4))
    quaternions /= np.linalg.norm(quaternions, axis=1, keepdims=True)
    log_scales = rng.uniform(*scale_range, (count, 3))
    opacity_logits = inverse_sigmoid(rng.uniform(0.2, 0.95, count))
    sh = np.zeros((count, 3, 4))
    sh[:, :, 0] = rng.uniform(-1.0, 1.0, (count, 3))
    sh[:, :, 1:] = rng.normal(0.0, 0.1, (count, 3, 3))
    levels = rng.integers(1, num_levels + 1, count)
    levels[0] = 1  # always at least one base splat
    return GaussianScene(positions, quaternions, log_scales, opacity_logits,
                         sh, levels, num_levels=num_levels,
                         background=np.full(3, background))


@pytest.fixture
def rng():
    return np.random.default_rng(7)
