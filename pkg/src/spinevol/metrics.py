"""Curve-angle measurement on coronal maps and the true-vs-measured correlation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import make_smoothing_spline

from .errors import DomainError, InvalidInputError, NotFoundError
from .fileio import read_json

DEFAULT_BAND_MM = 10.0
# penalty weight of the smoothing spline, in mm^3 (x is in mm)
DEFAULT_SPLINE_LAM = 1.0e4
MIN_BANDS = 5


@dataclass(frozen=True)
class AngleLine:
    p0: tuple
    p1: tuple

    def __post_init__(self):
        p0 = tuple(float(v) for v in self.p0)
        p1 = tuple(float(v) for v in self.p1)
        if len(p0) != 2 or len(p1) != 2:
            raise InvalidInputError("line endpoints must be (x, y) pairs")
        if not all(math.isfinite(v) for v in p0 + p1):
            raise InvalidInputError("line endpoints must be finite")
        if p0 == p1:
            raise DomainError("degenerate line: endpoints coincide")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)

    @property
    def direction(self):
        return (self.p1[0] - self.p0[0], self.p1[1] - self.p0[1])

    def to_list(self):
        return [list(self.p0), list(self.p1)]

    @classmethod
    def from_list(cls, pts):
        try:
            (a, b), (c, d) = pts
        except (TypeError, ValueError) as exc:
            raise InvalidInputError(f"line must be [[x0, y0], [x1, y1]], got {pts!r}") from exc
        return cls((a, b), (c, d))


@dataclass(frozen=True)
class CurveMeasurement:
    uca_deg: float
    line_upper: AngleLine
    line_lower: AngleLine
    method: str
    band_mm: float = None
    extra: dict = None

    def __post_init__(self):
        if not (0.0 <= self.uca_deg <= 90.0):
            raise DomainError(f"uca_deg {self.uca_deg} outside [0, 90]")
        if self.method not in ("manual-lines", "auto-centerline"):
            raise InvalidInputError(f"unknown method {self.method!r}")

    def to_dict(self):
        d = {"uca_deg": float(self.uca_deg), "method": self.method,
             "lines": {"upper": self.line_upper.to_list(), "lower": self.line_lower.to_list()},
             "band_mm": self.band_mm}
        d.update(self.extra or {})
        return d


def uca_from_lines(a: AngleLine, b: AngleLine) -> float:
    """Acute angle between two lines, degrees."""
    ax, ay = a.direction
    bx, by = b.direction
    cross = ax * by - ay * bx
    dot = ax * bx + ay * by
    return math.degrees(math.atan2(abs(cross), abs(dot)))


def bright_threshold(values, level=0.5, top=99.0):
    """``level`` of the way from the median up to the ``top`` percentile.

    Shifts with the data, so a constant offset cancels in ``values - threshold``.
    """
    med, hi = np.percentile(values, [50.0, top])
    return float(med + level * (hi - med))


def band_centroids(proj, band_mm=DEFAULT_BAND_MM, level=0.5, min_mass=0.1):
    """Intensity-weighted (x, y) centroid of the bright content in each x band.

    Weights are the excess over :func:`bright_threshold`, so adding a constant
    to the map leaves them unchanged. Bands whose total weight is below
    ``min_mass`` times the heaviest band's (gaps between vertebrae, stray
    speckle) are skipped. Rows of the result are ``(x, y, mass)``.
    """
    img = proj.pixels.astype(np.float64)
    w = np.clip(img - bright_threshold(img, level), 0.0, None)
    xs, ys = proj.coords()
    rows = max(1, int(round(band_mm / proj.mm_per_pixel)))
    out = []
    for r0 in range(0, img.shape[0], rows):
        wb = w[r0:r0 + rows]
        total = wb.sum()
        if total <= 0:
            continue
        cx = float(np.dot(wb.sum(axis=1), xs[r0:r0 + rows]) / total)
        cy = float(np.dot(wb.sum(axis=0), ys) / total)
        out.append((cx, cy, total))
    out = np.array(out).reshape(-1, 3)
    if out.size:
        out = out[out[:, 2] >= min_mass * out[:, 2].max()]
    return out


def auto_centerline_angle(proj, band_mm=DEFAULT_BAND_MM, lam=DEFAULT_SPLINE_LAM, samples=1001,
                          level=0.5) -> CurveMeasurement:
    """Curve angle from a smoothing spline through per-band centroids.

    The angle is the spread of tangent inclinations along the fitted curve; the
    tangents at the two extremes are returned as the measurement lines.
    """
    check = band_centroids(proj, band_mm, level)
    if check.shape[0] < MIN_BANDS:
        raise NotFoundError(f"only {check.shape[0]} bands with bright content (need {MIN_BANDS})")
    x, y, mass = check[:, 0], check[:, 1], check[:, 2]
    spline = make_smoothing_spline(x, y, w=mass / mass.mean(), lam=lam)
    xx = np.linspace(x[0], x[-1], samples)
    slope = spline(xx, 1)
    incl = np.degrees(np.arctan(slope))
    i_hi, i_lo = int(np.argmax(incl)), int(np.argmin(incl))
    half = band_mm / 2.0

    def tangent(i):
        x0, y0, m = xx[i], float(spline(xx[i])), slope[i]
        return AngleLine((x0 - half, y0 - m * half), (x0 + half, y0 + m * half))

    first, second = sorted((i_hi, i_lo))
    upper, lower = tangent(first), tangent(second)
    spread = float(incl[i_hi] - incl[i_lo])
    uca = uca_from_lines(upper, lower) if spread < 90.0 else 90.0
    return CurveMeasurement(uca, upper, lower, "auto-centerline", band_mm,
                            {"n_bands": int(x.size), "inclination_spread_deg": spread})


def manual_angle(lines) -> CurveMeasurement:
    """Measurement from user-placed lines: ``{"upper": [[x, y], [x, y]], "lower": ...}``."""
    try:
        upper = AngleLine.from_list(lines["upper"])
        lower = AngleLine.from_list(lines["lower"])
    except (KeyError, TypeError) as exc:
        raise InvalidInputError("lines file needs 'upper' and 'lower' entries") from exc
    return CurveMeasurement(uca_from_lines(upper, lower), upper, lower, "manual-lines")


def pearson_r(pairs) -> float:
    p = np.asarray(pairs, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 3:
        raise InvalidInputError("pearson_r needs at least 3 (x, y) pairs")
    x, y = p[:, 0], p[:, 1]
    dx = x - x.sum() / x.size
    dy = y - y.sum() / y.size
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0 or syy == 0:
        raise DomainError("pearson_r undefined for zero variance")
    return float(np.dot(dx, dy) / math.sqrt(sxx * syy))


def correlate_reports(directory):
    """Pair ``true_angle_deg`` with ``uca_deg`` across measurement reports in a directory."""
    directory = Path(directory)
    pairs = []
    for path in sorted(directory.glob("*.json")):
        rep = read_json(path)
        if "uca_deg" in rep and rep.get("true_angle_deg") is not None:
            pairs.append((float(rep["true_angle_deg"]), float(rep["uca_deg"])))
    if len(pairs) < 3:
        raise InvalidInputError(f"need >= 3 reports with true_angle_deg, found {len(pairs)}")
    r = pearson_r(pairs)
    mae = float(np.mean([abs(a - b) for a, b in pairs]))
    return {"n": len(pairs), "r": r, "mae_deg": mae, "pairs": [list(p) for p in pairs]}
