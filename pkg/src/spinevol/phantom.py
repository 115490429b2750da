"""Synthetic spine and flat-plate phantoms with exact ground truth.

World frame: x runs along the spine from the neck (x = 0) to the sacrum
(x = L), y is lateral, z is depth below the skin plane z = 0. The transducer
frame has x lateral along the array, y axial (into tissue), z elevational; the
untilted probe maps those to world y, z, x respectively.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InvalidInputError
from .geometry import ImageCalibration, RigidTransform, TimedPose, frame_affine, quat_multiply
from .validation import check_positive

# transducer (lateral, axial, elevation) -> world (y, z, x)
PROBE_BASE = RigidTransform.from_matrix(np.array([
    [0, 0, 1, 0],
    [1, 0, 0, 0],
    [0, 1, 0, 0],
    [0, 0, 0, 1.0],
]))

FRAME_SHAPE = (699, 559)   # rows, cols of the B-mode image
DEFAULT_FPS = 30.0


def default_calibration(shape=FRAME_SHAPE, scale=(0.1, 0.1), latency_ms=0.0):
    h, w = shape
    # image top-centre sits on the transducer origin
    to_transducer = RigidTransform.from_translation(-(w - 1) * scale[0] / 2.0, 0.0, 0.0)
    return ImageCalibration(crop_rect=(0, 0, w, h), scale=scale,
                            image_to_transducer=to_transducer, latency_ms=latency_ms)


@dataclass(frozen=True)
class PhantomScene:
    length_mm: float = 500.0
    centerline: tuple = ((0.0, 0.0), (250.0, 0.0), (500.0, 0.0))
    depth_profile: tuple = ((0.0, 35.0), (250.0, 40.0), (500.0, 45.0))
    vertebra_pitch_mm: float = 28.0
    lump_width_mm: float = 14.0
    lump_offsets_mm: tuple = (-22.0, 0.0, 22.0)
    fascia_depth_mm: float = 15.0
    fascia_thickness_mm: float = 2.0
    bone_thickness_mm: float = 1.5
    half_width_mm: float = 75.0
    speckle_seed: int = 0
    background_level: float = 40.0
    fascia_level: float = 180.0
    bone_level: float = 230.0
    shadow_level: float = 6.0
    shadow_max: int = 15
    structure_contrast: float = 0.1

    def __post_init__(self):
        check_positive(self.length_mm, "length_mm")
        if self.vertebra_pitch_mm <= self.lump_width_mm:
            raise InvalidInputError("vertebra_pitch_mm must exceed lump_width_mm")
        for name in ("centerline", "depth_profile"):
            pts = np.asarray(getattr(self, name), dtype=np.float64)
            if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2 or np.any(np.diff(pts[:, 0]) <= 0):
                raise InvalidInputError(f"{name} needs >= 2 (x, value) points with increasing x")
            object.__setattr__(self, name, tuple(map(tuple, pts.tolist())))
        object.__setattr__(self, "lump_offsets_mm", tuple(float(o) for o in self.lump_offsets_mm))
        d = self.bone_depth(np.linspace(0.0, self.length_mm, 2001))
        if d.min() < 15.0 or d.max() > 60.0:
            raise InvalidInputError(f"bone depth must stay within [15, 60] mm, got [{d.min():.1f}, {d.max():.1f}]")

    def _spline(self, name):
        pts = np.asarray(getattr(self, name))
        return CubicSpline(pts[:, 0], pts[:, 1], bc_type="natural")

    def bone_depth(self, x):
        return self._spline("depth_profile")(np.clip(x, 0.0, self.length_mm))

    def lateral(self, x):
        return self._spline("centerline")(np.clip(x, 0.0, self.length_mm))

    def lateral_slope(self, x):
        return self._spline("centerline")(np.clip(x, 0.0, self.length_mm), 1)

    def vertebra_x(self):
        p = self.vertebra_pitch_mm
        return np.arange(p / 2.0, self.length_mm, p)

    def lump_centers(self):
        xs = self.vertebra_x()
        ys = self.lateral(xs)
        return np.array([(x, y + o) for x, y in zip(xs, ys) for o in self.lump_offsets_mm])

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["centerline"] = [list(p) for p in self.centerline]
        d["depth_profile"] = [list(p) for p in self.depth_profile]
        d["lump_offsets_mm"] = list(self.lump_offsets_mm)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"schema_version"}
        if unknown:
            raise InvalidInputError(f"unknown scene fields: {sorted(unknown)}")
        try:
            return cls(**{k: v for k, v in d.items() if k in known})
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            raise InvalidInputError(f"invalid scene: {exc}") from exc


def scoliotic_scene(angle_deg, phase=0.0, n_points=17, **kw):
    """Scene whose centerline is a one-wavelength cosine with the given curve angle.

    For ``y = A cos(2 pi x / L + phase)`` the tangent inclination spans
    ``2 atan(2 pi A / L)``, so ``A = L tan(angle / 2) / (2 pi)``.
    """
    length = kw.get("length_mm", 500.0)
    amp = length * math.tan(math.radians(angle_deg) / 2.0) / (2.0 * math.pi)
    xs = np.linspace(0.0, length, n_points)
    ys = amp * np.cos(2.0 * math.pi * xs / length + phase)
    return PhantomScene(centerline=tuple(zip(xs, ys)), **kw)


def true_curve_angle(scene: PhantomScene, samples=5001) -> float:
    x = np.linspace(0.0, scene.length_mm, samples)
    incl = np.degrees(np.arctan(scene.lateral_slope(x)))
    return float(incl.max() - incl.min())


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def render_frame(scene: PhantomScene, pose, calib: ImageCalibration, rng=None) -> np.ndarray:
    """Render one 8-bit B-mode frame for the probe at ``pose``."""
    rng = _as_rng(scene.speckle_seed if rng is None else rng)
    h, w = calib.shape
    origin, col_step, row_step = frame_affine(calib, pose)
    c = np.arange(w, dtype=np.float32)[None, :]
    r = np.arange(h, dtype=np.float32)[:, None]
    X = origin[0] + c * np.float32(col_step[0]) + r * np.float32(row_step[0])
    Y = origin[1] + c * np.float32(col_step[1]) + r * np.float32(row_step[1])
    Z = origin[2] + c * np.float32(col_step[2]) + r * np.float32(row_step[2])

    level = np.full((h, w), scene.background_level, dtype=np.float32)
    contrast = np.ones((h, w), dtype=np.float32)
    inside = (X >= 0) & (X <= scene.length_mm) & (np.abs(Y) <= scene.half_width_mm)

    f_mid = scene.fascia_depth_mm + scene.fascia_thickness_mm / 2.0
    fascia = inside & (np.abs(Z - f_mid) <= scene.fascia_thickness_mm / 2.0)
    level[fascia] = scene.fascia_level
    contrast[fascia] = scene.structure_contrast

    radius = scene.lump_width_mm / 2.0
    centers = scene.lump_centers()
    near = ((centers[:, 0] >= X.min() - radius) & (centers[:, 0] <= X.max() + radius)
            & (centers[:, 1] >= Y.min() - radius) & (centers[:, 1] <= Y.max() + radius))
    in_lump = np.zeros((h, w), dtype=bool)
    for cx, cy in centers[near]:
        in_lump |= (X - cx) ** 2 + (Y - cy) ** 2 <= radius * radius
    if in_lump.any():
        xl = X[in_lump]
        s = Z[in_lump] - scene.bone_depth(xl).astype(np.float32)
        half_t = scene.bone_thickness_mm / 2.0
        bone = np.abs(s) <= half_t
        shadow = s > half_t
        sub_level = level[in_lump]
        sub_contrast = contrast[in_lump]
        sub_level[bone] = scene.bone_level * (1.0 - 0.4 * (s[bone] / half_t) ** 2)
        sub_contrast[bone] = scene.structure_contrast
        sub_level[shadow] = scene.shadow_level
        sub_contrast[shadow] = 1.0
        level[in_lump] = sub_level
        contrast[in_lump] = sub_contrast
        shadow_mask = np.zeros((h, w), dtype=bool)
        shadow_mask[in_lump] = shadow
    else:
        shadow_mask = None

    speckle = rng.standard_exponential((h, w), dtype=np.float32)
    img = level * (1.0 - contrast + contrast * speckle)
    if shadow_mask is not None:
        np.minimum(img, scene.shadow_max, out=img, where=shadow_mask)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


@dataclass
class ScanTruth:
    frame_depth_mm: np.ndarray
    true_curve_angle_deg: float
    centerline: np.ndarray
    latency_ms: float
    frame_positions: np.ndarray = None
    lump_centers: np.ndarray = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = {
            "frame_depth_mm": np.asarray(self.frame_depth_mm).tolist(),
            "true_curve_angle_deg": float(self.true_curve_angle_deg),
            "centerline": np.asarray(self.centerline).tolist(),
            "latency_ms": float(self.latency_ms),
        }
        for name in ("frame_positions", "lump_centers"):
            v = getattr(self, name)
            if v is not None:
                d[name] = np.asarray(v).tolist()
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d):
        opt = {k: np.asarray(d[k]) for k in ("frame_positions", "lump_centers") if k in d}
        base = {"frame_depth_mm", "true_curve_angle_deg", "centerline", "latency_ms",
                "frame_positions", "lump_centers", "schema_version"}
        return cls(np.asarray(d["frame_depth_mm"], dtype=np.float64), float(d["true_curve_angle_deg"]),
                   np.asarray(d["centerline"]), float(d["latency_ms"]),
                   extra={k: v for k, v in d.items() if k not in base}, **opt)


@dataclass
class Scan:
    frames: list
    frame_times: np.ndarray
    poses: list
    calib: ImageCalibration
    truth: ScanTruth
    tilts_deg: np.ndarray = None    # per-frame (roll, pitch); kept out of the truth on purpose

    def __iter__(self):
        return iter((self.frames, self.poses, self.calib, self.truth))

    def frame_poses(self):
        """Pose matched to each frame (exact: stamps already differ by the latency)."""
        return [p.transform for p in self.poses]


def _tilt(rng, jitter_deg):
    """Tilt of magnitude U(-j, j) about a horizontal axis of random azimuth.

    Returns the rotation (in the transducer frame) and its roll (about the
    elevation axis, in-plane) and pitch (about the lateral axis) parts.
    """
    if jitter_deg <= 0:
        return RigidTransform(), 0.0, 0.0
    angle, azimuth = rng.uniform(-jitter_deg, jitter_deg), rng.uniform(0.0, math.pi)
    axis = (math.sin(azimuth), 0.0, math.cos(azimuth))   # lateral / elevation mix
    rot = RigidTransform.from_axis_angle(axis, math.radians(angle))
    return rot, angle * math.cos(azimuth), angle * math.sin(azimuth)


SWEEP_COLUMNS = (-30.0, 0.0, 30.0)


def scan_positions(scene, path, frame_count, columns=SWEEP_COLUMNS):
    """Nominal probe (x, y) per frame for a constant-speed sweep.

    Each column keeps a fixed lateral offset from the spine centerline, the way
    an operator follows the spine with the probe.
    """
    if path == "single":
        columns = (0.0,)
    elif path != "serpentine":
        raise InvalidInputError(f"unknown scan path {path!r}")
    per_col = np.full(len(columns), frame_count // len(columns))
    per_col[: frame_count % len(columns)] += 1
    xs, ys = [], []
    for j, (n, y) in enumerate(zip(per_col, columns)):
        x = scene.length_mm * (np.arange(n) + 0.5) / n
        if j % 2 == 1:
            x = x[::-1]
        xs.append(x)
        ys.append(scene.lateral(x) + y)
    return np.concatenate(xs), np.concatenate(ys)


def make_scan(scene: PhantomScene = None, path="serpentine", frame_count=3000, tilt_jitter_deg=0.0,
              latency_ms=0.0, rng=0, calib=None, fps=DEFAULT_FPS, columns=SWEEP_COLUMNS,
              render=True):
    """Sweep the scene and return frames, poses, calibration and truth.

    Pose stamps run ``latency_ms`` ahead of the frame stamps for the same instant,
    so the pose for a frame stamped ``t`` is the one stamped ``t + latency_ms``.
    """
    if frame_count < 2:
        raise InvalidInputError("frame_count must be >= 2")
    scene = scene or PhantomScene()
    calib = calib or default_calibration()
    seed_rng = _as_rng(rng)
    seed = int(seed_rng.integers(0, 2**31 - 1))
    tilt_rng = np.random.default_rng([seed, 1])
    xs, ys = scan_positions(scene, path, frame_count, columns)
    t0 = max(0.0, -latency_ms)
    frame_times = t0 + np.arange(frame_count) * (1000.0 / fps)
    poses, frames, tilts = [], [], []
    for i, (x, y) in enumerate(zip(xs, ys)):
        tilt, roll, pitch = _tilt(tilt_rng, tilt_jitter_deg)
        tr = RigidTransform(quat_multiply(PROBE_BASE.rotation, tilt.rotation), (x, y, 0.0))
        poses.append(TimedPose(frame_times[i] + latency_ms, tr))
        tilts.append((roll, pitch))
        if render:
            frames.append(render_frame(scene, tr, calib, np.random.default_rng([seed, 2, i])))
    truth = ScanTruth(
        frame_depth_mm=scene.bone_depth(xs),
        true_curve_angle_deg=true_curve_angle(scene),
        centerline=np.column_stack([np.arange(0, scene.length_mm + 1e-9, 1.0),
                                    scene.lateral(np.arange(0, scene.length_mm + 1e-9, 1.0))]),
        latency_ms=latency_ms,
        frame_positions=np.column_stack([xs, ys, np.zeros_like(xs)]),
        lump_centers=scene.lump_centers(),
        extra={"scene": scene.to_dict(), "path": path},
    )
    return Scan(frames, frame_times, poses, calib, truth, np.array(tilts))


def flat_plate_calibration():
    return default_calibration(shape=(350, 64), scale=(0.2, 0.2))


def make_flat_plate_scan(amplitude_mm=10.0, frequency_hz=1.0, plate_depth_mm=35.0, frame_count=120,
                         latency_ms=0.0, rng=0, fps=DEFAULT_FPS, calib=None, band_mm=1.0,
                         band_level=230.0, background_level=40.0):
    """Probe bobbing vertically over a flat reflector.

    The probe rises by ``h(t) = A sin(2 pi f t)`` above the skin plane; the
    reflector then shows up at image depth ``plate_depth_mm + h(t)``.
    """
    if frame_count < 2:
        raise InvalidInputError("frame_count must be >= 2")
    calib = calib or flat_plate_calibration()
    rng = _as_rng(rng)
    h, w = calib.shape
    t0 = max(0.0, -latency_ms)
    frame_times = t0 + np.arange(frame_count) * (1000.0 / fps)
    rise = amplitude_mm * np.sin(2.0 * math.pi * frequency_hz * (frame_times - t0) / 1000.0)
    depth = plate_depth_mm + rise
    rows = np.arange(h, dtype=np.float64)[:, None] * calib.scale[1]
    frames, poses = [], []
    for i in range(frame_count):
        s = (rows - depth[i]) / (band_mm / 2.0)
        level = np.where(np.abs(s) <= 1.0, band_level * (1.0 - 0.4 * s * s), background_level)
        contrast = np.where(np.abs(s) <= 1.0, 0.1, 1.0)
        speckle = rng.standard_exponential((h, w))
        img = level * (1.0 - contrast + contrast * speckle)
        frames.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
        tr = RigidTransform(PROBE_BASE.rotation, (0.0, 0.0, -rise[i]))
        poses.append(TimedPose(frame_times[i] + latency_ms, tr))
    truth = ScanTruth(frame_depth_mm=depth, true_curve_angle_deg=0.0, centerline=np.zeros((0, 2)),
                      latency_ms=latency_ms,
                      extra={"fixture": "flat_plate", "amplitude_mm": amplitude_mm,
                             "frequency_hz": frequency_hz})
    return Scan(frames, frame_times, poses, calib, truth)
