"""Bright-blob marker localisation with previous-frame ROI cropping."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import NotFoundError
from .validation import check_image

THRESHOLD = 200
DEFAULT_MARGIN = 32


@dataclass(frozen=True)
class MarkerDetection:
    centroid: tuple      # (x, y) pixels, sub-pixel
    bbox: tuple          # (x, y, w, h) pixels
    mode: str            # "full" | "roi"
    pixels_examined: int = 0
    fallback: bool = False


def _blob(image, threshold):
    """Weighted centroid and tight bbox of above-threshold pixels in local coords."""
    rows, cols = np.nonzero(image > threshold)
    if rows.size == 0:
        return None
    w = image[rows, cols].astype(np.float64)
    total = w.sum()
    return (rows, cols, w, total)


def _detection(blob, x0, y0, mode, examined, fallback=False):
    rows, cols, w, total = blob
    cols = cols + x0
    rows = rows + y0
    cx = float(np.dot(w, cols) / total)
    cy = float(np.dot(w, rows) / total)
    bx, by = int(cols.min()), int(rows.min())
    bbox = (bx, by, int(cols.max()) - bx + 1, int(rows.max()) - by + 1)
    return MarkerDetection((cx, cy), bbox, mode, examined, fallback)


def detect_full(frame, threshold=THRESHOLD) -> MarkerDetection:
    frame = check_image(frame, "frame")
    blob = _blob(frame, threshold)
    if blob is None:
        raise NotFoundError("no pixel above marker threshold")
    return _detection(blob, 0, 0, "full", frame.size)


def roi_box(prev: MarkerDetection, margin, shape):
    """Previous bbox expanded by ``margin`` and clipped: (x0, y0, x1, y1), exclusive ends."""
    h, w = shape
    x, y, bw, bh = prev.bbox
    return (max(0, x - margin), max(0, y - margin),
            min(w, x + bw + margin), min(h, y + bh + margin))


def detect_roi(frame, prev: MarkerDetection, margin=DEFAULT_MARGIN,
               threshold=THRESHOLD) -> MarkerDetection:
    """Search only the neighbourhood of the previous detection.

    Falls back to a whole-frame search when the ROI holds no marker pixel or the
    blob touches an ROI edge that is not also a frame edge (it may be truncated).
    """
    frame = check_image(frame, "frame")
    x0, y0, x1, y1 = roi_box(prev, margin, frame.shape)
    crop = frame[y0:y1, x0:x1]
    examined = crop.size
    blob = _blob(crop, threshold)
    if blob is not None:
        rows, cols = blob[0], blob[1]
        h, w = frame.shape
        clipped = ((cols.min() == 0 and x0 > 0) or (rows.min() == 0 and y0 > 0)
                   or (cols.max() == crop.shape[1] - 1 and x1 < w)
                   or (rows.max() == crop.shape[0] - 1 and y1 < h))
        if not clipped:
            return _detection(blob, x0, y0, "roi", examined)
    full = _blob(frame, threshold)
    if full is None:
        raise NotFoundError("no pixel above marker threshold (after ROI fallback)")
    return _detection(full, 0, 0, "full", examined + frame.size, fallback=True)


class MarkerTracker:
    """Stateful convenience wrapper: full search first, ROI search afterwards."""

    def __init__(self, margin=DEFAULT_MARGIN, threshold=THRESHOLD):
        self.margin = margin
        self.threshold = threshold
        self.prev = None
        self.fallbacks = 0

    def update(self, frame):
        if self.prev is None:
            det = detect_full(frame, self.threshold)
        else:
            try:
                det = detect_roi(frame, self.prev, self.margin, self.threshold)
            except NotFoundError:
                self.prev = None
                raise
            self.fallbacks += det.fallback
        self.prev = det
        return det


def marker_sequence(n_frames, shape=(480, 640), size=12, max_speed=6.0, seed=0,
                    noise_max=150):
    """Yield ``(frame, true_center)`` for a square marker on a sub-threshold background.

    The centre follows a Lissajous path scaled so per-frame displacement stays below
    ``max_speed`` pixels.
    """
    rng = np.random.default_rng(seed)
    h, w = shape
    backgrounds = [rng.integers(0, noise_max + 1, shape, dtype=np.uint8) for _ in range(4)]
    ax, ay = (w - 3 * size) / 2, (h - 3 * size) / 2
    # |d/dn| <= ax*wx + ay*wy <= max_speed
    wx = max_speed / (ax + ay)
    wy = 0.7 * wx
    half = size // 2
    for n in range(n_frames):
        cx = w / 2 + ax * np.sin(wx * n)
        cy = h / 2 + ay * np.sin(wy * n + 0.8)
        frame = backgrounds[n % 4].copy()
        c0, r0 = int(round(cx)) - half, int(round(cy)) - half
        frame[r0:r0 + size, c0:c0 + size] = 255
        yield frame, (c0 + (size - 1) / 2, r0 + (size - 1) / 2)


def benchmark(n_frames=1000, shape=(480, 640), margin=DEFAULT_MARGIN, seed=0, size=12,
              max_speed=6.0):
    """Time detect_full vs detect_roi on the same synthetic sequence."""
    t_full = []
    t_roi = []
    fallbacks = 0
    diverged = 0
    roi_fraction = []
    prev = None
    for frame, _ in marker_sequence(n_frames, shape, size, max_speed, seed):
        t0 = time.perf_counter()
        full = detect_full(frame)
        t1 = time.perf_counter()
        t_full.append(t1 - t0)
        if prev is None:
            roi = full
        else:
            t0 = time.perf_counter()
            roi = detect_roi(frame, prev, margin)
            t1 = time.perf_counter()
            t_roi.append(t1 - t0)
            fallbacks += roi.fallback
            if not roi.fallback:
                roi_fraction.append(roi.pixels_examined / frame.size)
                diverged += (roi.centroid != full.centroid) or (roi.bbox != full.bbox)
        prev = roi
    mean_full = float(np.mean(t_full)) * 1e6
    mean_roi = float(np.mean(t_roi)) * 1e6 if t_roi else float("nan")
    return {
        "frames": n_frames,
        "mean_us_full": mean_full,
        "mean_us_roi": mean_roi,
        "speedup": mean_full / mean_roi if t_roi else float("nan"),
        "fallbacks": int(fallbacks),
        "diverged": int(diverged),
        "max_roi_fraction": float(max(roi_fraction)) if roi_fraction else 0.0,
    }
