import numpy as np
import pytest

from bevkit.configs import default_config_path, load_config
from bevkit.geometry import CameraIntrinsics, RigidTransform
from bevkit.scene import SceneSpec, make_pair


@pytest.fixture(scope="session")
def default_config():
    return load_config(default_config_path())


@pytest.fixture(scope="session")
def fixture_camera(default_config):
    return default_config.depth.camera.to_intrinsics()


@pytest.fixture(scope="session")
def static_scene(default_config):
    return default_config.depth.scene_spec()


@pytest.fixture(scope="session")
def moving_scene(default_config):
    return default_config.depth.moving_scene_spec()


@pytest.fixture(scope="session")
def lateral_poses(default_config):
    return default_config.depth.ref_pose(), default_config.depth.src_pose()


@pytest.fixture(scope="session")
def static_pair(static_scene, fixture_camera, lateral_poses):
    """Canonical static fixture: 3 planes, 0.5 m lateral baseline, seed 42."""
    ref_pose, src_pose = lateral_poses
    return make_pair(static_scene, fixture_camera, ref_pose, src_pose, dt=0.0)


@pytest.fixture(scope="session")
def moving_pair(moving_scene, fixture_camera, lateral_poses, default_config):
    ref_pose, src_pose = lateral_poses
    return make_pair(moving_scene, fixture_camera, ref_pose, src_pose,
                     dt=default_config.depth.dt)


def random_rigid_transform(rng, max_angle=0.5, max_translation=1.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-max_angle, max_angle)
    k = np.array([
        [0, -axis[2], axis[1]],
        [axis[2], 0, -axis[0]],
        [-axis[1], axis[0], 0],
    ])
    rot = np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)
    # Re-orthonormalize so the constructor's 1e-9 gate is met exactly.
    u, _, vt = np.linalg.svd(rot)
    rot = u @ vt
    return RigidTransform(rot, rng.uniform(-max_translation, max_translation, size=3))
