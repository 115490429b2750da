"""Rigid transforms, pose streams and the pixel -> world mapping chain.

Rotations are unit quaternions ``(w, x, y, z)``; 4x4 homogeneous matrices
appear only at serialization boundaries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DomainError, InvalidInputError, RangeError


def _readonly(a):
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def quat_multiply(a, b):
    """Hamilton product ``a * b`` of two (w, x, y, z) quaternions."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def slerp(q0, q1, u):
    """Spherical linear interpolation along the shorter arc, ``u`` in [0, 1]."""
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 0.9999995:
        q = q0 + u * (q1 - q0)
        return q / np.linalg.norm(q)
    theta = math.acos(min(dot, 1.0))
    s = math.sin(theta)
    return (math.sin((1 - u) * theta) / s) * q0 + (math.sin(u * theta) / s) * q1


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion ``p -> R p + t`` (translation in mm)."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64).reshape(-1)
        t = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if q.shape != (4,) or t.shape != (3,):
            raise InvalidInputError("rotation must be 4 numbers (w,x,y,z), translation 3")
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n < 1e-12 or not np.all(np.isfinite(t)):
            raise InvalidInputError("transform must be finite with a non-zero quaternion")
        object.__setattr__(self, "rotation", _readonly(q / n))
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_translation(cls, x, y=None, z=None):
        t = x if y is None else (x, y, z)
        return cls(translation=t)

    @classmethod
    def from_axis_angle(cls, axis, angle_rad, translation=(0.0, 0.0, 0.0)):
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        h = 0.5 * angle_rad
        q = np.concatenate([[math.cos(h)], math.sin(h) * axis])
        return cls(q, translation)

    @classmethod
    def rot_z(cls, degrees, translation=(0.0, 0.0, 0.0)):
        return cls.from_axis_angle((0, 0, 1), math.radians(degrees), translation)

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        if m.shape == (16,):
            m = m.reshape(4, 4)
        if m.shape != (4, 4):
            raise InvalidInputError("expected a 4x4 homogeneous matrix")
        r = m[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or np.linalg.det(r) < 0:
            raise InvalidInputError("matrix rotation block is not a proper rotation")
        x, y, z, w = Rotation.from_matrix(r).as_quat()
        return cls((w, x, y, z), m[:3, 3])

    @property
    def matrix3(self):
        return quat_to_matrix(self.rotation)

    def as_matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.matrix3
        m[:3, 3] = self.translation
        return m

    def apply(self, points):
        p = np.asarray(points, dtype=np.float64)
        return p @ self.matrix3.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        q = quat_multiply(self.rotation, other.rotation)
        t = self.matrix3 @ other.translation + self.translation
        return RigidTransform(q, t)

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        w, x, y, z = self.rotation
        q = np.array([w, -x, -y, -z])
        return RigidTransform(q, -(quat_to_matrix(q) @ self.translation))

    def almost_equal(self, other, rot_tol=1e-9, trans_tol=1e-6):
        dot = abs(float(np.dot(self.rotation, other.rotation)))
        return (1.0 - dot) <= rot_tol and np.allclose(
            self.translation, other.translation, atol=trans_tol, rtol=0)

    def __repr__(self):
        q = ", ".join(f"{v:.6g}" for v in self.rotation)
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return f"RigidTransform(q=[{q}], t=[{t}])"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def invert(t: RigidTransform) -> RigidTransform:
    return t.inverse()


@dataclass(frozen=True)
class TimedPose:
    """Transducer -> world pose stamped in ms since stream start."""

    t: float
    transform: RigidTransform

    def __post_init__(self):
        if not (self.t >= 0.0):
            raise InvalidInputError(f"pose time must be non-negative, got {self.t}")


class PoseStream:
    """Sorted pose samples with fast bracketing lookups.

    Built from a sequence of :class:`TimedPose`; times must be strictly increasing.
    """

    def __init__(self, poses: Sequence[TimedPose]):
        poses = list(poses)
        if not poses:
            raise InvalidInputError("pose stream is empty")
        self.times = np.array([p.t for p in poses], dtype=np.float64)
        if np.any(np.diff(self.times) <= 0):
            raise InvalidInputError("pose timestamps must be strictly increasing")
        self.poses = poses

    def __len__(self):
        return len(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    def interpolate(self, t: float) -> RigidTransform:
        times = self.times
        if not (times[0] <= t <= times[-1]):
            raise RangeError(f"t={t} ms outside pose range [{times[0]}, {times[-1]}]")
        i = int(np.searchsorted(times, t, side="right")) - 1
        if times[i] == t or i == len(times) - 1:
            return self.poses[i].transform
        a, b = self.poses[i].transform, self.poses[i + 1].transform
        u = (t - times[i]) / (times[i + 1] - times[i])
        q = slerp(a.rotation, b.rotation, u)
        p = (1.0 - u) * a.translation + u * b.translation
        return RigidTransform(q, p)


def interpolate_pose(poses, t: float) -> RigidTransform:
    """Pose at time ``t``: lerp on translation, slerp on rotation."""
    stream = poses if isinstance(poses, PoseStream) else PoseStream(poses)
    return stream.interpolate(t)


@dataclass(frozen=True)
class ImageCalibration:
    """Where the B-mode image sits in the screenshot and how it maps to the transducer.

    ``latency_ms`` is the pose-clock minus frame-clock offset: the pose that
    matches a frame stamped ``t`` is the one stamped ``t + latency_ms``.
    """

    crop_rect: tuple = (0, 0, 559, 699)
    scale: tuple = (0.1, 0.1)
    image_to_transducer: RigidTransform = field(default_factory=RigidTransform)
    latency_ms: float = 0.0
    camera_from_world: RigidTransform = field(default_factory=RigidTransform)
    raw_shape: tuple | None = None

    def __post_init__(self):
        crop = tuple(int(v) for v in self.crop_rect)
        scale = tuple(float(v) for v in self.scale)
        if len(crop) != 4 or crop[2] <= 0 or crop[3] <= 0 or crop[0] < 0 or crop[1] < 0:
            raise InvalidInputError(f"bad crop_rect {self.crop_rect}")
        if len(scale) != 2 or not all(s > 0 and math.isfinite(s) for s in scale):
            raise InvalidInputError(f"scale components must be > 0, got {self.scale}")
        if self.raw_shape is not None:
            rh, rw = (int(v) for v in self.raw_shape)
            if crop[0] + crop[2] > rw or crop[1] + crop[3] > rh:
                raise InvalidInputError("crop_rect exceeds raw frame bounds")
            object.__setattr__(self, "raw_shape", (rh, rw))
        object.__setattr__(self, "crop_rect", crop)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "latency_ms", float(self.latency_ms))

    @property
    def width(self) -> int:
        return self.crop_rect[2]

    @property
    def height(self) -> int:
        return self.crop_rect[3]

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def axial_extent_mm(self) -> float:
        return self.height * self.scale[1]

    def replace(self, **changes):
        kw = dict(crop_rect=self.crop_rect, scale=self.scale,
                  image_to_transducer=self.image_to_transducer,
                  latency_ms=self.latency_ms, camera_from_world=self.camera_from_world,
                  raw_shape=self.raw_shape)
        kw.update(changes)
        return ImageCalibration(**kw)

    def extract_bmode(self, raw):
        """Crop the B-mode region out of a raw screenshot (a no-op if already cropped)."""
        raw = np.asarray(raw)
        if raw.shape[:2] == self.shape:
            return raw
        x, y, w, h = self.crop_rect
        if raw.shape[0] < y + h or raw.shape[1] < x + w:
            raise DomainError(f"frame {raw.shape} too small for crop_rect {self.crop_rect}")
        return raw[y:y + h, x:x + w]

    def to_dict(self):
        d = {
            "schema_version": 1,
            "crop_rect": list(self.crop_rect),
            "scale": list(self.scale),
            "image_to_transducer": self.image_to_transducer.as_matrix().reshape(-1).tolist(),
            "latency_ms": self.latency_ms,
            "camera_from_world": self.camera_from_world.as_matrix().reshape(-1).tolist(),
        }
        if self.raw_shape is not None:
            d["raw_shape"] = list(self.raw_shape)
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            cam = d.get("camera_from_world")
            return cls(
                crop_rect=tuple(d["crop_rect"]),
                scale=tuple(d["scale"]),
                image_to_transducer=RigidTransform.from_matrix(d["image_to_transducer"]),
                latency_ms=float(d.get("latency_ms", 0.0)),
                camera_from_world=RigidTransform.from_matrix(cam) if cam else RigidTransform(),
                raw_shape=tuple(d["raw_shape"]) if d.get("raw_shape") else None,
            )
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"malformed calibration: {exc}") from exc


def _as_transform(pose):
    return pose.transform if isinstance(pose, TimedPose) else pose


def frame_to_world(calib: ImageCalibration, pose) -> RigidTransform:
    """Full chain image plane (mm) -> reconstruction frame."""
    return calib.camera_from_world.compose(_as_transform(pose)).compose(calib.image_to_transducer)


def frame_affine(calib: ImageCalibration, pose):
    """World position of pixel (col, row) as ``origin + col * col_step + row * row_step``."""
    chain = frame_to_world(calib, pose)
    r = chain.matrix3
    sx, sy = calib.scale
    return chain.translation.copy(), r[:, 0] * sx, r[:, 1] * sy


def pixel_to_world(px, calib: ImageCalibration, pose) -> np.ndarray:
    col, row = px
    if not (0 <= col <= calib.width - 1 and 0 <= row <= calib.height - 1):
        raise DomainError(f"pixel {px} outside {calib.width}x{calib.height} image")
    sx, sy = calib.scale
    return frame_to_world(calib, pose).apply(np.array([col * sx, row * sy, 0.0]))
