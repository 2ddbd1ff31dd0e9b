"""Pinhole stereo geometry: projection, triangulation, rigid transforms,
and the depth -> descriptor-support-radius mapping.

Camera convention: z forward, x right, y down (matches KITTI projection
matrices).  The stereo pair is assumed rectified, so triangulation reduces
to the disparity formula z = fx * baseline / d.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EpipolarViolation, NonPositiveDepth, NonPositiveDisparity


@dataclass(frozen=True)
class PinholeIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (np.isfinite(self.cx) and np.isfinite(self.cy)):
            raise ValueError("principal point must be finite")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class StereoRig:
    """Calibrated rectified pair: shared intrinsics plus metric baseline."""

    intrinsics: PinholeIntrinsics
    baseline: float

    def __post_init__(self) -> None:
        if not self.baseline > 0:
            raise ValueError(f"baseline must be positive, got {self.baseline}")


@dataclass(frozen=True)
class Pose:
    """Rigid transform p -> R @ p + t."""

    rotation: np.ndarray  # (3, 3) orthonormal, det +1
    translation: np.ndarray  # (3,)

    def __post_init__(self) -> None:
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """self after other: (self ∘ other)(p) = self(other(p))."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def orthonormalized(self) -> "Pose":
        """Project the rotation back onto SO(3) (nearest by Frobenius norm)."""
        u, _, vt = np.linalg.svd(self.rotation)
        r = u @ vt
        if np.linalg.det(r) < 0:
            u[:, -1] *= -1.0
            r = u @ vt
        return Pose(r, self.translation)

    @property
    def matrix34(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation[:, None]])

    @staticmethod
    def from_matrix34(m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64).reshape(3, 4)
        return Pose(m[:, :3], m[:, 3])


def transform(pose: Pose, p: np.ndarray) -> np.ndarray:
    """Apply a rigid transform to one point or an (n, 3) batch."""
    return pose.apply(p)


def project(p: np.ndarray, k: PinholeIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame points to pixel (u, v).

    Accepts a single (3,) point or an (n, 3) batch; raises NonPositiveDepth
    if any point is at or behind the camera plane.
    """
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    z = pts[:, 2]
    if np.any(z <= 0):
        raise NonPositiveDepth(f"cannot project point(s) with z <= 0 (min z = {z.min()})")
    u = k.fx * pts[:, 0] / z + k.cx
    v = k.fy * pts[:, 1] / z + k.cy
    uv = np.stack([u, v], axis=1)
    return uv[0] if single else uv


def project_stereo(p: np.ndarray, rig: StereoRig) -> tuple[np.ndarray, np.ndarray]:
    """Project into the left and right cameras of a rectified rig."""
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64))
    left = project(pts, rig.intrinsics)
    shifted = pts.copy()
    shifted[:, 0] -= rig.baseline
    right = project(shifted, rig.intrinsics)
    if np.asarray(p).ndim == 1:
        return left[0], right[0]
    return left, right


def triangulate(
    left_px: np.ndarray,
    right_px: np.ndarray,
    rig: StereoRig,
    epipolar_tol: float = 2.0,
) -> np.ndarray:
    """Recover the camera-frame 3D point from a rectified correspondence."""
    ul, vl = float(left_px[0]), float(left_px[1])
    ur, vr = float(right_px[0]), float(right_px[1])
    d = ul - ur
    if d <= 0:
        raise NonPositiveDisparity(f"disparity must be positive, got {d}")
    if abs(vl - vr) > epipolar_tol:
        raise EpipolarViolation(f"|dv| = {abs(vl - vr):.3f} exceeds tolerance {epipolar_tol}")
    k = rig.intrinsics
    z = k.fx * rig.baseline / d
    x = (ul - k.cx) * z / k.fx
    y = (vl - k.cy) * z / k.fy
    return np.array([x, y, z])


def backproject(u: np.ndarray, v: np.ndarray, z: np.ndarray, k: PinholeIntrinsics) -> np.ndarray:
    """Pixel + depth -> camera-frame 3D; vectorized, returns (n, 3)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    x = (u - k.cx) * z / k.fx
    y = (v - k.cy) * z / k.fy
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def depth_to_radius(z, rig: StereoRig, cfg) -> np.ndarray | float:
    """Descriptor support radius (px) for a feature at metric depth z.

    radius = clamp(fx * metric_radius / z, r_min, r_max): the pinhole image
    of a fixed metric disc, so a feature's support covers the same world
    area at any viewing distance.
    """
    z_arr = np.asarray(z, dtype=np.float64)
    if np.any(z_arr <= 0):
        raise NonPositiveDepth("depth must be positive for radius mapping")
    r = rig.intrinsics.fx * cfg.metric_radius / z_arr
    r = np.clip(r, cfg.r_min, cfg.r_max)
    return float(r) if np.isscalar(z) or np.ndim(z) == 0 else r


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]], dtype=np.float64)


def se3_exp(twist: np.ndarray) -> Pose:
    """Exponential map from a 6-vector (v, omega) to a rigid transform."""
    twist = np.asarray(twist, dtype=np.float64).reshape(6)
    v, omega = twist[:3], twist[3:]
    theta = np.linalg.norm(omega)
    w = _skew(omega)
    if theta < 1e-12:
        r = np.eye(3) + w
        j = np.eye(3) + 0.5 * w
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta**2
        c = (theta - np.sin(theta)) / theta**3
        r = np.eye(3) + a * w + b * (w @ w)
        j = np.eye(3) + b * w + c * (w @ w)
    return Pose(r, j @ v)
