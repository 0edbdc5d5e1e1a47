"""SE(3) arithmetic, pinhole projection, and the analytic pose Jacobian.

Conventions used throughout the package:

* Poses are rigid transforms ``X_dst = R @ X_src + t`` mapping camera
  coordinates of a source frame into a destination frame.
* Twists are 6-vectors ``[v, w]`` (translation part first), and pose
  increments are applied on the left: ``T <- exp(delta) @ T``.
* Pixel coordinates are ``(u, v) = (column, row)``; integer coordinates sit
  on pixel centers. Depth is the camera-frame z coordinate; points carry
  inverse depth ``q = 1/z``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Rotation angles below this norm take the series branch of exp/log.
SMALL_ANGLE = 1e-8


def _skew(w: np.ndarray) -> np.ndarray:
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


@dataclass(frozen=True)
class SE3Pose:
    """Rigid transform with a 3x3 rotation and a 3-vector translation."""

    rotation: np.ndarray
    translation: np.ndarray

    @staticmethod
    def identity() -> "SE3Pose":
        return SE3Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "SE3Pose") -> "SE3Pose":
        """Returns self @ other (other applied first)."""
        return SE3Pose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "SE3Pose":
        rt = self.rotation.T
        return SE3Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transforms one (3,) point or a batch (N, 3)."""
        return points @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m: np.ndarray) -> "SE3Pose":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 pose matrix, got {m.shape}")
        return SE3Pose(m[:3, :3].copy(), m[:3, 3].copy())


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model: focal lengths, principal point, image size in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def scaled(self, level: int) -> "CameraIntrinsics":
        """Intrinsics of pyramid level ``level`` (coordinates divided by 2^level)."""
        s = 2.0**level
        return CameraIntrinsics(
            self.fx / s,
            self.fy / s,
            self.cx / s,
            self.cy / s,
            self.width // int(s),
            self.height // int(s),
        )


@dataclass(frozen=True)
class PointWithDepth:
    """A pixel location with known inverse depth in its host frame."""

    pixel: np.ndarray
    inverse_depth: float

    def __post_init__(self):
        if not self.inverse_depth > 0:
            raise ValueError("inverse depth must be positive")


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula with a series branch near zero."""
    theta = float(np.linalg.norm(w))
    wx = _skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + wx + 0.5 * (wx @ wx)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * wx + b * (wx @ wx)


def so3_log(rotation: np.ndarray) -> np.ndarray:
    cos_theta = np.clip((np.trace(rotation) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    off = np.array(
        [
            rotation[2, 1] - rotation[1, 2],
            rotation[0, 2] - rotation[2, 0],
            rotation[1, 0] - rotation[0, 1],
        ]
    )
    if theta < SMALL_ANGLE:
        return 0.5 * off
    if np.pi - theta < 1e-6:
        # Near pi the off-diagonal form degenerates; recover the axis from
        # the dominant diagonal entry of R + I.
        m = rotation + np.eye(3)
        k = int(np.argmax(np.diag(m)))
        axis = m[:, k] / np.sqrt(2.0 * (1.0 + rotation[k, k]))
        axis = axis / np.linalg.norm(axis)
        # Fix the sign so that it matches the skew-symmetric part.
        if np.dot(axis, off) < 0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * off


def _so3_left_jacobian(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    wx = _skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * wx + (wx @ wx) / 6.0
    a = (1.0 - np.cos(theta)) / theta**2
    b = (theta - np.sin(theta)) / theta**3
    return np.eye(3) + a * wx + b * (wx @ wx)


def _so3_left_jacobian_inv(w: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(w))
    wx = _skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * wx + (wx @ wx) / 12.0
    half = 0.5 * theta
    cot = half / np.tan(half)
    coeff = (1.0 - cot) / theta**2
    return np.eye(3) - 0.5 * wx + coeff * (wx @ wx)


def se3_exp(twist: np.ndarray) -> SE3Pose:
    """Exponential map from a twist ``[v, w]`` to a pose. exp(0) = identity."""
    twist = np.asarray(twist, dtype=float)
    if twist.shape != (6,):
        raise ValueError(f"twist must be a 6-vector, got shape {twist.shape}")
    if not np.all(np.isfinite(twist)):
        raise ValueError("twist must be finite")
    v, w = twist[:3], twist[3:]
    rotation = so3_exp(w)
    translation = _so3_left_jacobian(w) @ v
    return SE3Pose(rotation, translation)


def se3_log(pose: SE3Pose) -> np.ndarray:
    """Inverse of :func:`se3_exp` for rotation angles below pi."""
    w = so3_log(pose.rotation)
    v = _so3_left_jacobian_inv(w) @ pose.translation
    return np.concatenate([v, w])


def backproject(point: PointWithDepth, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Pixel + inverse depth -> camera-frame 3D point."""
    u, v = point.pixel
    z = 1.0 / point.inverse_depth
    x = (u - intrinsics.cx) / intrinsics.fx * z
    y = (v - intrinsics.cy) / intrinsics.fy * z
    return np.array([x, y, z])


def project(
    point: PointWithDepth,
    pose: SE3Pose,
    intr_src: CameraIntrinsics,
    intr_dst: CameraIntrinsics,
    border: float = 2.0,
):
    """Projects a source pixel with depth into the destination frame.

    Returns the destination pixel as a 2-vector, or None when the
    transformed point has non-positive depth or lands outside the image
    minus ``border`` pixels. Out-of-view is a value, not an error.
    """
    p_cam = pose.apply(backproject(point, intr_src))
    z = p_cam[2]
    if z <= 0.0:
        return None
    u = intr_dst.fx * p_cam[0] / z + intr_dst.cx
    v = intr_dst.fy * p_cam[1] / z + intr_dst.cy
    if not (
        border <= u <= intr_dst.width - 1 - border
        and border <= v <= intr_dst.height - 1 - border
    ):
        return None
    return np.array([u, v])


def project_points(
    pixels: np.ndarray,
    inverse_depths: np.ndarray,
    pose: SE3Pose,
    intr_src: CameraIntrinsics,
    intr_dst: CameraIntrinsics,
    border: float = 2.0,
):
    """Vectorized projection of N points.

    Returns (projected (N,2), camera-frame points (N,3), valid mask (N,)).
    Entries of invalid points are left in place but must not be used.
    """
    z_src = 1.0 / inverse_depths
    x = (pixels[:, 0] - intr_src.cx) / intr_src.fx * z_src
    y = (pixels[:, 1] - intr_src.cy) / intr_src.fy * z_src
    p_cam = pose.apply(np.stack([x, y, z_src], axis=1))
    z = p_cam[:, 2]
    safe_z = np.where(z > 0, z, 1.0)
    u = intr_dst.fx * p_cam[:, 0] / safe_z + intr_dst.cx
    v = intr_dst.fy * p_cam[:, 1] / safe_z + intr_dst.cy
    valid = (
        (z > 0)
        & (u >= border)
        & (u <= intr_dst.width - 1 - border)
        & (v >= border)
        & (v <= intr_dst.height - 1 - border)
    )
    return np.stack([u, v], axis=1), p_cam, valid


def pose_jacobian(
    point: PointWithDepth,
    pose: SE3Pose,
    intr_src: CameraIntrinsics,
    intr_dst: CameraIntrinsics,
) -> np.ndarray:
    """2x6 derivative of the projected pixel w.r.t. a left-multiplied twist.

    Columns are ordered [v, w] to match :func:`se3_exp`. The point must
    project in front of the camera.
    """
    p_cam = pose.apply(backproject(point, intr_src))
    if p_cam[2] <= 0.0:
        raise ValueError("point does not project in view (non-positive depth)")
    return _projection_jacobian(p_cam[None, :], intr_dst)[0]


def _projection_jacobian(p_cam: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Batched 2x6 pixel-vs-twist Jacobian for camera-frame points (N, 3).

    For a left increment, d(exp(d)X)/dd = [I | -skew(X)], composed with the
    pinhole derivative [[fx/z, 0, -fx x/z^2], [0, fy/z, -fy y/z^2]].
    """
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    inv_z = 1.0 / z
    n = p_cam.shape[0]
    jac = np.empty((n, 2, 6))
    fx, fy = intr.fx, intr.fy
    jac[:, 0, 0] = fx * inv_z
    jac[:, 0, 1] = 0.0
    jac[:, 0, 2] = -fx * x * inv_z**2
    jac[:, 1, 0] = 0.0
    jac[:, 1, 1] = fy * inv_z
    jac[:, 1, 2] = -fy * y * inv_z**2
    # Rotation columns: -d(pi)/dX @ skew(X), written out per entry.
    jac[:, 0, 3] = -fx * x * y * inv_z**2
    jac[:, 0, 4] = fx * (1.0 + x**2 * inv_z**2)
    jac[:, 0, 5] = -fx * y * inv_z
    jac[:, 1, 3] = -fy * (1.0 + y**2 * inv_z**2)
    jac[:, 1, 4] = fy * x * y * inv_z**2
    jac[:, 1, 5] = fy * x * inv_z
    return jac


def pose_jacobians(p_cam: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Batched variant of :func:`pose_jacobian` for camera-frame points."""
    return _projection_jacobian(p_cam, intr)
