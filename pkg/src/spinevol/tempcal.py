"""Pose-vs-frame latency from the vertical motion of a bright line.

The probe is moved up and down over a flat reflector. The reflector's axial
position in each image and the probe's vertical position from the tracker are
two noisy copies of the same motion, offset by the clock delay. The delay is
the lag of the normalized cross-correlation peak.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NotFoundError, UnreliableEstimateError
from .validation import check_image, check_positive, check_series

RESAMPLE_MS = 5.0
MIN_CORRELATION = 0.5


@dataclass(frozen=True)
class DepthSeries:
    t: np.ndarray       # ms
    depth: np.ndarray   # mm

    def __post_init__(self):
        t, d = check_series(self.t, self.depth, "DepthSeries")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "depth", d)

    def scaled(self, k):
        return DepthSeries(self.t, self.depth * k)


def extract_line_depth(frame, calib, half_window=5, min_contrast=20.0):
    """Axial position (mm) of the dominant horizontal bright band.

    Rows are reduced to their mean; the background level (median row mean) is
    subtracted and the centroid is taken over ``half_window`` rows either side of
    the brightest row.
    """
    frame = check_image(frame, "frame")
    profile = frame.mean(axis=1)
    background = np.median(profile)
    excess = profile - background
    peak = int(np.argmax(excess))
    if excess[peak] < min_contrast:
        raise NotFoundError("no bright line above background")
    lo = max(0, peak - half_window)
    hi = min(profile.size, peak + half_window + 1)
    w = np.clip(excess[lo:hi], 0.0, None)
    row = float(np.dot(w, np.arange(lo, hi)) / w.sum())
    return row * calib.scale[1]


def _resample(series, grid):
    return np.interp(grid, series.t, series.depth)


def cross_correlation(a, b, max_shift):
    """Normalized correlation of ``a[i]`` with ``b[i + k]`` for k in [-max_shift, max_shift]."""
    n = a.size
    shifts = np.arange(-max_shift, max_shift + 1)
    rho = np.empty(shifts.size)
    for j, k in enumerate(shifts):
        if k >= 0:
            x, y = a[:n - k], b[k:]
        else:
            x, y = a[-k:], b[:n + k]
        x = x - x.mean()
        y = y - y.mean()
        den = np.sqrt(np.dot(x, x) * np.dot(y, y))
        rho[j] = np.dot(x, y) / den if den > 0 else 0.0
    return shifts, rho


def estimate_latency(image: DepthSeries, probe_z: DepthSeries, max_lag_ms=250.0,
                     resample_ms=RESAMPLE_MS, min_correlation=MIN_CORRELATION,
                     return_correlation=False):
    """Lag (ms) by which ``probe_z`` trails ``image``.

    Both series go onto a common ``resample_ms`` clock over their overlap, are
    mean-removed, and the normalized cross-correlation is maximised over
    ``[-max_lag_ms, max_lag_ms]``. The integer-step peak is refined with a
    parabola through its neighbours.
    """
    check_positive(max_lag_ms, "max_lag_ms")
    check_positive(resample_ms, "resample_ms")
    t0 = max(image.t[0], probe_z.t[0])
    t1 = min(image.t[-1], probe_z.t[-1])
    span = t1 - t0
    if span <= 0:
        raise InvalidInputError("series do not overlap in time")
    if max_lag_ms >= span / 2:
        raise InvalidInputError(f"max_lag_ms={max_lag_ms} must be < half the common span ({span / 2:.1f} ms)")
    grid = t0 + resample_ms * np.arange(int(np.floor(span / resample_ms)) + 1)
    a = _resample(image, grid)
    b = _resample(probe_z, grid)
    a = a - a.mean()
    b = b - b.mean()
    scale_a = np.abs(a).max()
    scale_b = np.abs(b).max()
    if scale_a <= 1e-12 or scale_b <= 1e-12:
        raise UnreliableEstimateError("no motion in one of the series", 0.0)
    max_shift = int(np.floor(max_lag_ms / resample_ms))
    shifts, rho = cross_correlation(a / scale_a, b / scale_b, max_shift)
    j = int(np.argmax(rho))
    peak = float(rho[j])
    if not peak >= min_correlation:
        raise UnreliableEstimateError(
            f"peak correlation {peak:.3f} below {min_correlation} (insufficient motion?)", peak)
    offset = 0.0
    if 0 < j < rho.size - 1:
        y0, y1, y2 = rho[j - 1], rho[j], rho[j + 1]
        den = y0 - 2 * y1 + y2
        if den < 0:
            offset = 0.5 * (y0 - y2) / den
    lag = (shifts[j] + offset) * resample_ms
    return (lag, peak) if return_correlation else lag


def probe_depth_series(times, transforms, axis=2):
    """Vertical probe coordinate of each pose, sign-flipped so it tracks reflector depth.

    Moving the probe away from a fixed reflector (world ``-z``) makes the reflector
    appear deeper, so ``-z`` changes in step with image depth.
    """
    z = np.array([-tr.translation[axis] for tr in transforms])
    return DepthSeries(np.asarray(times, dtype=np.float64), z)


def image_depth_series(times, frames, calib, **kw):
    depths = np.array([extract_line_depth(f, calib, **kw) for f in frames])
    return DepthSeries(np.asarray(times, dtype=np.float64), depths)


def calibrate_bundle(bundle, max_lag_ms=250.0):
    """Estimate latency for a flat-reflector bundle; returns ``(latency_ms, peak_rho)``."""
    image = image_depth_series(bundle.frame_times, bundle.iter_frames(), bundle.calib)
    stream = bundle.poses()
    probe = probe_depth_series(stream.times, [p.transform for p in stream.poses])
    return estimate_latency(image, probe, max_lag_ms=max_lag_ms, return_correlation=True)
