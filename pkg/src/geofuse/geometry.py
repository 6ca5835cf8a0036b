"""Pinhole rig math: intrinsic rescaling, homogeneous composition, image-to-lidar inversion.

Conventions: K is the 3x3 intrinsic matrix of the image at its original
resolution, (R, t) the view's extrinsics, and all transforms act on
homogeneous column vectors. The forward map embeds K as [[K, 0], [0, 1]] and
composes it with [[R^T, -R^T t], [0, 1]]; the backward map is its exact 4x4
inverse, computed by Gauss-Jordan elimination with partial pivoting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError

PIVOT_EPS = 1e-12


def _check_rotation(r: np.ndarray, name: str) -> None:
    if r.shape != (3, 3):
        raise ConfigError(f"{name}: rotation must be 3x3, got {r.shape}")
    if not np.allclose(r @ r.T, np.eye(3), atol=1e-9):
        raise ConfigError(f"{name}: rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > 1e-9:
        raise ConfigError(f"{name}: rotation determinant is {np.linalg.det(r):.6f}, expected +1")


def _check_size(size: tuple[int, int], name: str) -> None:
    w, h = size
    if w <= 0 or h <= 0:
        raise ConfigError(f"{name}: image size must be positive, got {size}")


@dataclass(frozen=True)
class CameraView:
    """One camera: intrinsics at the original resolution plus extrinsics."""

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    orig_size: tuple[int, int]
    target_size: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "K", np.asarray(self.K, dtype=np.float64))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))
        if self.K.shape != (3, 3):
            raise ConfigError(f"camera K must be 3x3, got {self.K.shape}")
        if self.K[0, 0] <= 0 or self.K[1, 1] <= 0:
            raise ConfigError("camera focal lengths must be positive")
        _check_rotation(self.R, "camera R")
        _check_size(tuple(self.orig_size), "orig_size")
        _check_size(tuple(self.target_size), "target_size")


@dataclass(frozen=True)
class CameraRig:
    views: tuple[CameraView, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.views:
            raise ConfigError("a rig needs at least one view")

    def __len__(self) -> int:
        return len(self.views)


def scale_intrinsics(K, orig_size: tuple[int, int], target_size: tuple[int, int]) -> np.ndarray:
    """Rescale K from orig_size (W, H) to target_size.

    Row 0 (fx, skew, cx) scales with the width ratio, row 1 with the height
    ratio, row 2 is untouched.
    """
    K = np.asarray(K, dtype=np.float64)
    if K.shape != (3, 3):
        raise ConfigError(f"scale_intrinsics: K must be 3x3, got {K.shape}")
    _check_size(tuple(orig_size), "orig_size")
    _check_size(tuple(target_size), "target_size")
    sw = target_size[0] / orig_size[0]
    sh = target_size[1] / orig_size[1]
    out = K.copy()
    out[0, :] *= sw
    out[1, :] *= sh
    return out


def compose_lidar2img(K, R, t) -> np.ndarray:
    """4x4 forward map: [[K, 0], [0, 1]] @ [[R^T, -R^T t], [0, 1]]."""
    K = np.asarray(K, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64).reshape(3)
    if K.shape != (3, 3) or R.shape != (3, 3):
        raise ConfigError(f"compose_lidar2img: K {K.shape} / R {R.shape} must be 3x3")
    det = float(np.linalg.det(K))
    if abs(det) <= PIVOT_EPS:
        raise NumericError(f"compose_lidar2img: singular intrinsics, |det K| = {abs(det):.3e}")
    ext = np.eye(4)
    ext[:3, :3] = R.T
    ext[:3, 3] = -R.T @ t
    k4 = np.eye(4)
    k4[:3, :3] = K
    return k4 @ ext


def invert4(m) -> np.ndarray:
    """Exact 4x4 inverse via Gauss-Jordan elimination with partial pivoting."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (4, 4):
        raise ConfigError(f"invert4: expected 4x4, got {m.shape}")
    a = m.copy()
    inv = np.eye(4)
    for col in range(4):
        pivot_row = col + int(np.argmax(np.abs(a[col:, col])))
        pivot = a[pivot_row, col]
        if abs(pivot) < PIVOT_EPS:
            raise NumericError(f"invert4: pivot {abs(pivot):.3e} below {PIVOT_EPS} in column {col}")
        if pivot_row != col:
            a[[col, pivot_row]] = a[[pivot_row, col]]
            inv[[col, pivot_row]] = inv[[pivot_row, col]]
        factor = a[col, col]
        a[col] /= factor
        inv[col] /= factor
        for row in range(4):
            if row != col and a[row, col] != 0.0:
                f = a[row, col]
                a[row] -= f * a[col]
                inv[row] -= f * inv[col]
    return inv


def lidar2img(view: CameraView) -> np.ndarray:
    """Forward map for one view with intrinsics scaled to the target size."""
    k_scaled = scale_intrinsics(view.K, view.orig_size, view.target_size)
    return compose_lidar2img(k_scaled, view.R, view.t)


def img2lidar(view: CameraView) -> np.ndarray:
    """Backward map: exact inverse of the scaled forward transform."""
    return invert4(lidar2img(view))


def camera_token(transform) -> np.ndarray:
    """Flatten a 4x4 transform row-major into a 16-vector."""
    transform = np.asarray(transform, dtype=np.float64)
    if transform.shape != (4, 4):
        raise ConfigError(f"camera_token: expected 4x4, got {transform.shape}")
    return transform.reshape(16).copy()


def camera_token_matrix(token) -> np.ndarray:
    """Inverse of camera_token: 16-vector back to the 4x4 transform."""
    token = np.asarray(token, dtype=np.float64)
    if token.shape != (16,):
        raise ConfigError(f"camera_token_matrix: expected 16 values, got {token.shape}")
    return token.reshape(4, 4).copy()


def rig_camera_tokens(rig: CameraRig) -> np.ndarray:
    """Per-view img2lidar tokens, shape (C, 16)."""
    return np.stack([camera_token(img2lidar(v)) for v in rig.views])


def default_rig(
    views: int,
    focal: float = 800.0,
    orig_size: tuple[int, int] = (1600, 900),
    target_size: tuple[int, int] = (800, 450),
    mount_radius: float = 1.5,
) -> CameraRig:
    """Evenly spaced yaw ring of forward-tilted cameras around the ego origin.

    Column k of each R holds the camera's (right, down, forward) axis in the
    lidar frame (x forward, y left, z up), so R is camera-to-lidar and the
    composed forward map sends lidar points toward the image plane.
    """
    if views < 1:
        raise ConfigError(f"default_rig: need at least one view, got {views}")
    cams = []
    w, h = orig_size
    K = np.array([[focal, 0.0, w / 2.0], [0.0, focal, h / 2.0], [0.0, 0.0, 1.0]])
    for c in range(views):
        yaw = 2.0 * np.pi * c / views
        forward = np.array([np.cos(yaw), np.sin(yaw), 0.0])
        right = np.array([np.sin(yaw), -np.cos(yaw), 0.0])
        down = np.array([0.0, 0.0, -1.0])
        R = np.column_stack([right, down, forward])
        t = mount_radius * forward
        cams.append(CameraView(K=K, R=R, t=t, orig_size=orig_size, target_size=target_size))
    return CameraRig(views=tuple(cams))
