import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spinevol.errors import NotFoundError
from spinevol.tracker import (MarkerTracker, benchmark, detect_full, detect_roi, marker_sequence, roi_box)


def _square(shape=(100, 100), center=(50, 50), size=10, value=255):
    f = np.zeros(shape, np.uint8)
    x0, y0 = int(center[0] - size / 2), int(center[1] - size / 2)
    f[y0:y0 + size, x0:x0 + size] = value
    return f


def test_symmetric_square_centroid():
    det = detect_full(_square())
    assert abs(det.centroid[0] - 50) <= 0.5 and abs(det.centroid[1] - 50) <= 0.5
    assert det.bbox == (45, 45, 10, 10)


def test_black_frame_not_found():
    with pytest.raises(NotFoundError):
        detect_full(np.zeros((50, 50), np.uint8))


def test_weighted_two_lobe_centroid_brute_force():
    f = np.zeros((60, 80), np.uint8)
    f[10:14, 10:14] = 210
    f[30:34, 50:54] = 250
    det = detect_full(f)
    ys, xs = np.mgrid[0:60, 0:80]
    w = np.where(f > 200, f, 0).astype(float)
    assert det.centroid[0] == pytest.approx((w * xs).sum() / w.sum(), abs=1e-12)
    assert det.centroid[1] == pytest.approx((w * ys).sum() / w.sum(), abs=1e-12)


def test_roi_small_move_equals_full():
    prev = detect_full(_square(center=(50, 50)))
    frame = _square(center=(53, 50))
    a, b = detect_roi(frame, prev, margin=20), detect_full(frame)
    assert a.mode == "roi" and not a.fallback
    assert a.centroid == pytest.approx(b.centroid, abs=1e-9)
    assert a.bbox == b.bbox


def test_roi_jump_falls_back():
    prev = detect_full(_square((200, 200), center=(30, 30)))
    frame = _square((200, 200), center=(160, 150))
    a = detect_roi(frame, prev, margin=10)
    assert a.fallback and a.centroid == detect_full(frame).centroid


def test_roi_truncated_blob_falls_back():
    prev = detect_full(_square((200, 200), center=(50, 50), size=10))
    frame = _square((200, 200), center=(58, 50), size=10)   # overlaps the ROI edge at margin 4
    a = detect_roi(frame, prev, margin=4)
    assert a.fallback
    assert a.centroid == detect_full(frame).centroid


@given(st.integers(10, 180), st.integers(10, 130), st.integers(-40, 40), st.integers(-40, 40),
       st.integers(1, 40))
def test_roi_equivalence_and_work(x, y, dx, dy, margin):
    shape = (150, 200)
    prev = detect_full(_square(shape, (x, y), 8))
    nx, ny = int(np.clip(x + dx, 6, 194)), int(np.clip(y + dy, 6, 144))
    frame = _square(shape, (nx, ny), 8)
    full = detect_full(frame)
    roi = detect_roi(frame, prev, margin)
    x0, y0, x1, y1 = roi_box(prev, margin, shape)
    bx, by, bw, bh = full.bbox
    inside = x0 <= bx and y0 <= by and bx + bw <= x1 and by + bh <= y1
    assert roi.centroid == full.centroid and roi.bbox == full.bbox
    if inside and not roi.fallback:
        assert roi.pixels_examined <= full.pixels_examined
    if roi.fallback:
        assert roi.pixels_examined <= 2 * full.pixels_examined
    else:
        assert roi.pixels_examined <= full.pixels_examined


def test_detection_invariants():
    for frame, _ in marker_sequence(50, seed=2):
        d = detect_full(frame)
        x, y, w, h = d.bbox
        assert 0 <= x and 0 <= y and x + w <= frame.shape[1] and y + h <= frame.shape[0]
        assert x <= d.centroid[0] <= x + w - 1 and y <= d.centroid[1] <= y + h - 1


def test_tracker_1000_frames_never_loses_marker():
    tr = MarkerTracker(margin=32)
    for frame, truth in marker_sequence(1000, max_speed=6.0, seed=1):
        d = tr.update(frame)
        assert d.centroid == pytest.approx(truth, abs=1e-9)
    assert tr.fallbacks == 0


def test_benchmark_roi_speedup():
    r = benchmark(300)
    assert r["frames"] == 300 and r["diverged"] == 0 and r["fallbacks"] == 0
    assert r["max_roi_fraction"] <= 1 / 3
    assert r["speedup"] >= 2.0
