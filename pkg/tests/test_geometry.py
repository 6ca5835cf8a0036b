"""Pinhole rig math: hand-derived transform cases, random-rig inversion,
and validation errors."""

import numpy as np
import pytest

from geofuse.errors import ConfigError, NumericError
from geofuse.geometry import (
    CameraRig,
    CameraView,
    camera_token,
    camera_token_matrix,
    compose_lidar2img,
    default_rig,
    img2lidar,
    invert4,
    lidar2img,
    rig_camera_tokens,
    scale_intrinsics,
)

I3 = np.eye(3)


def random_rotation(rng) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def make_view(rng) -> CameraView:
    fx, fy = rng.uniform(100, 2000, size=2)
    cx, cy = rng.uniform(100, 1000, size=2)
    K = np.array([[fx, rng.uniform(-5, 5), cx], [0, fy, cy], [0, 0, 1.0]])
    return CameraView(
        K=K,
        R=random_rotation(rng),
        t=rng.uniform(-10, 10, size=3),
        orig_size=(1600, 900),
        target_size=(int(rng.integers(100, 1600)), int(rng.integers(100, 900))),
    )


# ---------------------------------------------------------------------------
# hand-derived cases
# ---------------------------------------------------------------------------

def test_identity_camera_forward_map():
    # K = I, R = I, t = 0: the composed map is the identity
    m = compose_lidar2img(I3, I3, np.zeros(3))
    np.testing.assert_array_equal(m, np.eye(4))


def test_pure_translation_moves_points_opposite():
    # camera at t, no rotation: world point p maps to p - t
    t = np.array([1.0, 2.0, 3.0])
    m = compose_lidar2img(I3, I3, t)
    p = np.array([4.0, 4.0, 4.0, 1.0])
    np.testing.assert_allclose(m @ p, np.array([3.0, 2.0, 1.0, 1.0]))


def test_focal_and_yaw_composition_by_hand():
    # f=2 with principal point (3, 4); 90-degree yaw about +z; camera at origin.
    # R columns are the camera axes, so R^T maps world into camera coordinates:
    # world x -> camera y, world y -> -camera x.
    K = np.array([[2.0, 0.0, 3.0], [0.0, 2.0, 4.0], [0.0, 0.0, 1.0]])
    R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    m = compose_lidar2img(K, R, np.zeros(3))
    p = np.array([1.0, 2.0, 3.0, 1.0])
    cam = R.T @ p[:3]  # (2, -1, 3)
    want = np.array([2.0 * cam[0] + 3.0 * cam[2], 2.0 * cam[1] + 4.0 * cam[2], cam[2], 1.0])
    np.testing.assert_allclose(m @ p, want)
    np.testing.assert_allclose(m @ p, np.array([13.0, 10.0, 3.0, 1.0]))


def test_scale_intrinsics_rows_scale_independently():
    K = np.array([[800.0, 1.0, 640.0], [0.0, 700.0, 360.0], [0.0, 0.0, 1.0]])
    out = scale_intrinsics(K, (1280, 720), (640, 180))
    np.testing.assert_allclose(out[0], [400.0, 0.5, 320.0])  # width halved
    np.testing.assert_allclose(out[1], [0.0, 175.0, 90.0])  # height quartered
    np.testing.assert_allclose(out[2], [0.0, 0.0, 1.0])
    np.testing.assert_allclose(K[0], [800.0, 1.0, 640.0])  # input untouched


# ---------------------------------------------------------------------------
# inversion
# ---------------------------------------------------------------------------

def test_invert4_exact_on_permutation():
    m = np.array(
        [
            [0.0, 2.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [3.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 4.0, 0.0],
        ]
    )
    np.testing.assert_allclose(invert4(m) @ m, np.eye(4), atol=1e-15)


def test_invert4_refuses_singular():
    m = np.eye(4)
    m[2, 2] = 0.0
    with pytest.raises(NumericError):
        invert4(m)


def test_thousand_random_rigs_invert_to_identity():
    rng = np.random.default_rng(2026)
    worst = 0.0
    for _ in range(1000):
        view = make_view(rng)
        forward = lidar2img(view)
        backward = img2lidar(view)
        err = np.abs(backward @ forward - np.eye(4)).max()
        worst = max(worst, err)
    assert worst < 1e-9


def test_roundtrip_recovers_world_points():
    rng = np.random.default_rng(5)
    view = make_view(rng)
    pts = np.concatenate([rng.uniform(-50, 50, (64, 3)), np.ones((64, 1))], axis=1)
    mapped = (img2lidar(view) @ lidar2img(view) @ pts.T).T
    np.testing.assert_allclose(mapped, pts, atol=1e-9)


# ---------------------------------------------------------------------------
# tokens and rigs
# ---------------------------------------------------------------------------

def test_camera_token_roundtrip():
    rng = np.random.default_rng(0)
    m = rng.standard_normal((4, 4))
    tok = camera_token(m)
    assert tok.shape == (16,)
    np.testing.assert_array_equal(tok[:4], m[0])  # row-major
    np.testing.assert_array_equal(camera_token_matrix(tok), m)
    with pytest.raises(ConfigError):
        camera_token(np.eye(3))
    with pytest.raises(ConfigError):
        camera_token_matrix(np.zeros(15))


def test_rig_tokens_stack_per_view():
    rig = default_rig(3)
    toks = rig_camera_tokens(rig)
    assert toks.shape == (3, 16)
    for c, view in enumerate(rig.views):
        np.testing.assert_array_equal(toks[c], camera_token(img2lidar(view)))


def test_default_rig_geometry():
    rig = default_rig(4, mount_radius=2.0)
    assert len(rig) == 4
    for c, view in enumerate(rig.views):
        yaw = 2 * np.pi * c / 4
        fwd = np.array([np.cos(yaw), np.sin(yaw), 0.0])
        np.testing.assert_allclose(view.t, 2.0 * fwd, atol=1e-12)
        # a point straight ahead of the camera projects to the image center
        ahead = np.append(view.t + 10.0 * fwd, 1.0)
        u = lidar2img(view) @ ahead
        u /= u[2]
        np.testing.assert_allclose(u[:2], [400.0, 225.0], atol=1e-9)  # target 800x450 center


def test_validation_rejects_bad_inputs():
    with pytest.raises(ConfigError):
        CameraView(K=np.eye(3), R=2 * I3, t=np.zeros(3), orig_size=(10, 10), target_size=(5, 5))
    refl = np.diag([1.0, 1.0, -1.0])  # orthonormal but det = -1
    with pytest.raises(ConfigError):
        CameraView(K=np.eye(3), R=refl, t=np.zeros(3), orig_size=(10, 10), target_size=(5, 5))
    bad_focal = np.diag([-1.0, 1.0, 1.0])
    with pytest.raises(ConfigError):
        CameraView(K=bad_focal, R=I3, t=np.zeros(3), orig_size=(10, 10), target_size=(5, 5))
    with pytest.raises(ConfigError):
        CameraView(K=np.eye(3), R=I3, t=np.zeros(3), orig_size=(0, 10), target_size=(5, 5))
    with pytest.raises(ConfigError):
        scale_intrinsics(np.eye(4), (10, 10), (5, 5))
    with pytest.raises(NumericError):
        compose_lidar2img(np.diag([1.0, 1.0, 0.0]), I3, np.zeros(3))
    with pytest.raises(ConfigError):
        CameraRig(views=())
    with pytest.raises(ConfigError):
        default_rig(0)
