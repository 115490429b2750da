"""Depth-of-cut selection for bone-surface extraction.

Two ways of choosing, per frame, the axial band that holds the vertebral
surface:

* Algorithm 1 derives the cut from the probe position alone,
  ``Cut_n = K |x_1 - x_n - L/2| + D``, so it can run inside the live stream.
* Algorithm 2 finds the bright-over-dark cortex edge in every frame, median
  filters the depth series and cuts at the filtered depth. It needs the whole
  scan first.

A cut keeps rows whose depth lies in ``[cut, cut + band]`` and zeros the rest.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import InvalidInputError, NoContourError, RangeError
from .geometry import TimedPose
from .validation import check_image, check_odd_window, check_positive

DEFAULT_BAND_MM = 5.0
DEFAULT_LEAD_MM = 2.5
DEFAULT_WINDOW = 11
_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class Alg1Params:
    K: float = 0.04
    D: float = 35.0
    L: float = 500.0
    axis: str = "x"

    def __post_init__(self):
        if not (math.isfinite(self.K) and self.K >= 0):
            raise InvalidInputError(f"K must be >= 0, got {self.K}")
        check_positive(self.D, "D")
        check_positive(self.L, "L")
        if self.axis not in _AXES:
            raise InvalidInputError(f"axis must be one of {sorted(_AXES)}, got {self.axis!r}")


@dataclass
class CutProfile:
    depths_mm: np.ndarray
    source: str
    band_mm: float
    raw_depths_mm: np.ndarray = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.depths_mm = np.asarray(self.depths_mm, dtype=np.float64).reshape(-1)
        self.band_mm = check_positive(self.band_mm, "band_mm")
        if not np.all(np.isfinite(self.depths_mm)):
            raise InvalidInputError("cut depths must be finite")

    def __len__(self):
        return self.depths_mm.size

    def check_extent(self, calib):
        ext = calib.axial_extent_mm
        if self.depths_mm.size and (self.depths_mm.min() < 0 or self.depths_mm.max() > ext):
            raise RangeError(f"cut depths must lie in [0, {ext}] mm")
        return self

    def row_ranges(self, calib):
        return [cut_rows(d, self.band_mm, calib) for d in self.depths_mm]

    def records(self):
        return [{"frame": i, "cut_mm": float(d)} for i, d in enumerate(self.depths_mm)]


def _position(pose, calib, axis):
    tr = pose.transform if isinstance(pose, TimedPose) else pose
    if calib is not None:
        tr = calib.camera_from_world.compose(tr)
    return float(tr.translation[_AXES[axis]])


def cut_depth_alg1(p_c1_x, p_cn_x, params: Alg1Params, axial_extent_mm=None):
    cut = params.K * abs(p_c1_x - p_cn_x - params.L / 2.0) + params.D
    if axial_extent_mm is not None:
        cut = min(max(cut, 0.0), axial_extent_mm)
    return cut


def matched_alg1_params(depth_start, depth_end, L=500.0, lead_mm=DEFAULT_LEAD_MM, x_first=0.0):
    """K, D reproducing a linear depth ramp for a sweep toward +x, minus ``lead_mm``.

    For ``x_n >= x_1`` the absolute value opens as ``x_n - x_1 + L/2``, so the
    cut is linear in ``x_n`` with slope K.
    """
    k = (depth_end - depth_start) / L
    d = depth_start + k * x_first - lead_mm - k * L / 2.0
    return Alg1Params(K=k, D=d, L=L)


def cut_rows(cut_mm, band_mm, calib):
    """Inclusive row range kept by a cut; ``(r0, r1)`` with ``r1 < r0`` when nothing survives."""
    sy = calib.scale[1]
    r0 = max(0, math.ceil(cut_mm / sy - 1e-6))
    r1 = min(calib.height - 1, math.floor((cut_mm + band_mm) / sy + 1e-6))
    return r0, r1


def apply_cut(frame, cut_mm, band_mm, calib):
    frame = check_image(frame, "frame")
    check_positive(band_mm, "band_mm")
    if not (0.0 <= cut_mm <= calib.axial_extent_mm):
        raise RangeError(f"cut {cut_mm} mm outside image extent [0, {calib.axial_extent_mm}]")
    r0, r1 = cut_rows(cut_mm, band_mm, calib)
    out = np.zeros_like(frame)
    if r1 >= r0:
        out[r0:r1 + 1] = frame[r0:r1 + 1]
    return out


@dataclass(frozen=True)
class ContourParams:
    smooth_mm: tuple = (0.5, 1.0)       # axial, lateral
    brightness_percentile: float = 70.0
    gradient_per_mm: float = 25.0
    baseline_rows: int = 3
    shadow_mm: float = 2.0
    shadow_ratio: float = 0.15
    ridge_mm: float = 2.0
    min_valid_fraction: float = 0.1


@dataclass(frozen=True)
class Contour:
    depth_mm: float
    column_depths_mm: np.ndarray    # NaN where a column had no hit
    valid_fraction: float


def _odd(n):
    n = max(1, int(round(n)))
    return n if n % 2 else n + 1


def bone_contour(frame, calib, params: ContourParams = None) -> Contour:
    """Per-column bottom-up search for the cortex edge; frame depth is the column median.

    A row qualifies when the smoothed image is bright, drops steeply towards the
    row ``baseline_rows`` below, and the ``shadow_mm`` beneath is dark relative to
    what lies above (sound does not get through bone). The hit is then moved up
    to the brightest smoothed row within ``ridge_mm`` so the depth refers to the
    middle of the reflection rather than its lower edge.
    """
    p = params or ContourParams()
    frame = check_image(frame, "frame")
    h, w = frame.shape
    sx, sy = calib.scale
    s = uniform_filter(frame.astype(np.float32), size=(_odd(p.smooth_mm[0] / sy), _odd(p.smooth_mm[1] / sx)),
                       mode="nearest")
    b = int(p.baseline_rows)
    ns = max(1, int(round(p.shadow_mm / sy)))
    if h <= 2 * b + ns:
        raise NoContourError("frame too short for contour search")
    bright = float(np.percentile(s, p.brightness_percentile))

    r = np.arange(b, h - max(b, ns))            # candidate rows
    above = s[r - b]
    grad = (above - s[r + b]) / (2 * b * sy)
    csum = np.vstack([np.zeros((1, w), np.float64), np.cumsum(s, axis=0, dtype=np.float64)])
    below = (csum[r + 1 + ns] - csum[r + 1]) / ns
    ok = (grad >= p.gradient_per_mm) & (s[r] >= bright) & (below <= p.shadow_ratio * above)

    hit = ok.any(axis=0)
    last = ok.shape[0] - 1 - np.argmax(ok[::-1], axis=0)
    rows = r[last]
    nr = max(1, int(round(p.ridge_mm / sy)))
    depths = np.full(w, np.nan)
    for c in np.nonzero(hit)[0]:
        r1 = rows[c]
        r0 = max(0, r1 - nr)
        depths[c] = (r0 + int(np.argmax(s[r0:r1 + 1, c]))) * sy
    frac = float(hit.mean())
    if frac < p.min_valid_fraction:
        raise NoContourError(f"only {frac:.0%} of columns show a bone edge")
    return Contour(float(np.median(depths[hit])), depths, frac)


def smooth_depths(depths, window=DEFAULT_WINDOW):
    """Bridge NaN gaps linearly (ends take the nearest value), then a truncated sliding median."""
    window = check_odd_window(window)
    d = np.asarray(depths, dtype=np.float64).reshape(-1)
    ok = np.isfinite(d)
    if not ok.any():
        raise NoContourError("no valid depth in the series")
    idx = np.arange(d.size)
    bridged = np.interp(idx, idx[ok], d[ok])
    half = window // 2
    out = np.empty_like(bridged)
    for i in range(d.size):
        out[i] = np.median(bridged[max(0, i - half): i + half + 1])
    return out


def alg1_profile(poses, calib, params: Alg1Params, band_mm=DEFAULT_BAND_MM) -> CutProfile:
    poses = list(poses)
    if not poses:
        return CutProfile(np.zeros(0), "alg1", band_mm)
    x1 = _position(poses[0], calib, params.axis)
    ext = calib.axial_extent_mm
    cuts = [cut_depth_alg1(x1, _position(p, calib, params.axis), params, ext) for p in poses]
    return CutProfile(np.array(cuts), "alg1", band_mm, extra={"K": params.K, "D": params.D, "L": params.L,
                                                               "axis": params.axis})


def segment_stream_alg1(frames, poses, calib, params: Alg1Params, band_mm=DEFAULT_BAND_MM):
    """Yield ``(cut_frame, cut_mm)`` one frame at a time; the first pose fixes ``x_1``."""
    ext = calib.axial_extent_mm
    x1 = None
    for frame, pose in zip(frames, poses):
        xn = _position(pose, calib, params.axis)
        if x1 is None:
            x1 = xn
        cut = cut_depth_alg1(x1, xn, params, ext)
        yield apply_cut(frame, cut, band_mm, calib), cut


def alg2_profile(frames, calib, window=DEFAULT_WINDOW, band_mm=DEFAULT_BAND_MM, lead_mm=DEFAULT_LEAD_MM,
                 params: ContourParams = None) -> CutProfile:
    """Contour every frame, smooth, and place the cut ``lead_mm`` above the surface."""
    raw = []
    for frame in frames:
        try:
            raw.append(bone_contour(frame, calib, params).depth_mm)
        except NoContourError:
            raw.append(np.nan)
    raw = np.array(raw)
    if raw.size == 0:
        raise NoContourError("empty scan")
    if not np.isfinite(raw).any():
        raise NoContourError("no frame shows a bone contour")
    smooth = smooth_depths(raw, window)
    cuts = np.clip(smooth - lead_mm, 0.0, calib.axial_extent_mm)
    return CutProfile(cuts, "alg2", band_mm, raw_depths_mm=raw,
                      extra={"window": window, "lead_mm": lead_mm, "surface_mm": smooth.tolist()})


def segment_scan_alg2(frames, calib, window=DEFAULT_WINDOW, band_mm=DEFAULT_BAND_MM,
                      lead_mm=DEFAULT_LEAD_MM, params: ContourParams = None):
    frames = list(frames)
    profile = alg2_profile(frames, calib, window, band_mm, lead_mm, params)
    cut = [apply_cut(f, d, band_mm, calib) for f, d in zip(frames, profile.depths_mm)]
    return cut, profile


def fixed_profile(n_frames, depth_mm, band_mm=DEFAULT_BAND_MM) -> CutProfile:
    return CutProfile(np.full(n_frames, float(depth_mm)), "fixed", band_mm)


def band_containment(profile: CutProfile, true_depths_mm):
    """Fraction of frames whose kept band ``[cut, cut + band]`` contains the true depth."""
    t = np.asarray(true_depths_mm, dtype=np.float64).reshape(-1)
    if t.size != len(profile):
        raise InvalidInputError(f"{t.size} truth depths for {len(profile)} cuts")
    c = profile.depths_mm
    return float(np.mean((t >= c) & (t <= c + profile.band_mm)))
