import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spinevol.errors import InvalidInputError, NoContourError, RangeError
from spinevol.geometry import ImageCalibration, RigidTransform, TimedPose
from spinevol.phantom import PROBE_BASE, PhantomScene, default_calibration, make_scan, render_frame
from spinevol.segment import (Alg1Params, alg1_profile, alg2_profile, apply_cut, band_containment,
                              bone_contour, cut_depth_alg1, cut_rows, fixed_profile, matched_alg1_params,
                              segment_scan_alg2, segment_stream_alg1, smooth_depths)

from conftest import SMALL_CALIB

CAL01 = ImageCalibration(crop_rect=(0, 0, 40, 699), scale=(0.1, 0.1))


def test_alg1_mid_back_gives_d():
    p = Alg1Params(K=0.04, D=35.0, L=500.0)
    assert cut_depth_alg1(100.0, 100.0 - 250.0, p) == 35.0


def test_alg1_scan_start():
    assert cut_depth_alg1(0.0, 0.0, Alg1Params(K=0.04, D=35.0, L=500.0)) == pytest.approx(45.0, abs=1e-12)


@given(st.floats(-1000, 1000), st.floats(-1000, 1000))
def test_alg1_k_zero_constant(a, b):
    assert cut_depth_alg1(a, b, Alg1Params(K=0.0, D=31.0)) == 31.0


def test_alg1_params_validation():
    for kw in ({"K": -0.1}, {"D": 0.0}, {"L": 0.0}, {"axis": "w"}):
        with pytest.raises(InvalidInputError):
            Alg1Params(**kw)


def test_alg1_clamped_to_extent():
    assert cut_depth_alg1(0.0, 0.0, Alg1Params(K=1.0, D=35.0), axial_extent_mm=69.9) == 69.9


@given(st.floats(0, 2, allow_nan=False), st.floats(1, 60), st.floats(100, 800), st.floats(0, 400))
def test_alg1_symmetry(k, d, length, off):
    p = Alg1Params(K=k, D=d, L=length)
    mid = -length / 2.0    # p_c1 - p_cn - L/2 = 0 when p_cn = p_c1 - L/2
    assert cut_depth_alg1(0.0, mid - off, p) == pytest.approx(cut_depth_alg1(0.0, mid + off, p), abs=1e-9)


@given(st.floats(0, 2), st.floats(1, 60), st.floats(0, 400), st.floats(0, 400))
def test_alg1_monotone_in_offset(k, d, o1, o2):
    p = Alg1Params(K=k, D=d, L=500.0)
    lo, hi = sorted((o1, o2))
    assert cut_depth_alg1(0.0, -250.0 + lo, p) <= cut_depth_alg1(0.0, -250.0 + hi, p) + 1e-12


def test_cut_rows_index_arithmetic():
    assert cut_rows(30.0, 15.0, CAL01) == (300, 450)


def test_apply_cut_band():
    rng = np.random.default_rng(0)
    f = rng.integers(1, 256, (699, 40), dtype=np.uint8)
    out = apply_cut(f, 30.0, 15.0, CAL01)
    assert np.array_equal(out[300:451], f[300:451])
    assert not out[:300].any() and not out[451:].any()


def test_apply_cut_whole_image_and_bottom_edge():
    f = np.random.default_rng(1).integers(0, 256, (699, 40), dtype=np.uint8)
    assert np.array_equal(apply_cut(f, 0.0, 70.0, CAL01), f)
    assert not apply_cut(f, CAL01.axial_extent_mm, 5.0, CAL01).any()
    with pytest.raises(RangeError):
        apply_cut(f, 80.0, 5.0, CAL01)


@given(st.floats(0, 69.9), st.floats(0.1, 30))
def test_apply_cut_idempotent(cut, band):
    f = np.random.default_rng(2).integers(0, 256, (699, 40), dtype=np.uint8)
    once = apply_cut(f, cut, band, CAL01)
    assert np.array_equal(apply_cut(once, cut, band, CAL01), once)


def _over_lump(depth=35.0, roll_deg=0.0, rng=0, calib=None):
    scene = PhantomScene(depth_profile=((0, depth), (500, depth)))
    base = PROBE_BASE
    if roll_deg:
        base = base.compose(RigidTransform.from_axis_angle((0, 0, 1), math.radians(roll_deg)))
    x = scene.vertebra_x()[6]
    pose = RigidTransform(base.rotation, (x, 0.0, 0.0))
    return render_frame(scene, pose, calib or default_calibration(), rng=rng)


def test_contour_ignores_fascia():
    c = bone_contour(_over_lump(35.0), default_calibration())
    assert c.depth_mm == pytest.approx(35.0, abs=0.5)


def test_contour_pure_speckle_fails():
    scene = PhantomScene()
    frame = render_frame(scene, RigidTransform(PROBE_BASE.rotation, (900.0, 0, 0)), default_calibration(), 0)
    with pytest.raises(NoContourError):
        bone_contour(frame, default_calibration())


def test_contour_tilted_frame():
    c = bone_contour(_over_lump(35.0, roll_deg=10.0), default_calibration())
    cols = c.column_depths_mm[np.isfinite(c.column_depths_mm)]
    assert cols.max() - cols.min() >= 1.0          # the arc is visibly slanted
    assert 33.0 <= c.depth_mm <= 37.0


def test_smooth_constant_unchanged():
    np.testing.assert_array_equal(smooth_depths(np.full(9, 37.5), 5), np.full(9, 37.5))


def test_smooth_removes_outlier():
    np.testing.assert_array_equal(smooth_depths([35, 35, 80, 35, 35], 5), [35] * 5)


def test_smooth_bridges_gap():
    # window 3 leaves a linear ramp unchanged, so the bridged midpoint is visible directly
    out = smooth_depths([20.0, 30.0, np.nan, 40.0, 50.0], 3)
    assert out[2] == 35.0
    np.testing.assert_array_equal(smooth_depths([np.nan, 30.0, np.nan], 3), [30.0] * 3)


def test_smooth_errors():
    with pytest.raises(NoContourError):
        smooth_depths([np.nan, np.nan], 3)
    with pytest.raises(InvalidInputError):
        smooth_depths([1.0, 2.0], 4)
    with pytest.raises(InvalidInputError):
        smooth_depths([1.0, 2.0], 1)


@given(st.lists(st.floats(10, 60), min_size=1, max_size=40), st.sampled_from([3, 5, 11]))
def test_smooth_within_input_range(values, window):
    out = smooth_depths(values, window)
    assert min(values) <= out.min() and out.max() <= max(values)


def _line_poses(n, length=500.0, reverse=False):
    xs = np.linspace(0.0, length, n)
    if reverse:
        xs = xs[::-1]
    return [TimedPose(float(i), RigidTransform(PROBE_BASE.rotation, (x, 0.0, 0.0))) for i, x in enumerate(xs)]


def test_alg1_v_profile():
    # x1 - xn runs 0..L on a sweep toward -x, so |x1 - xn - L/2| is a V centred mid-sweep
    p = Alg1Params(K=0.04, D=30.0, L=500.0)
    prof = alg1_profile(_line_poses(101, reverse=True), default_calibration(), p)
    d = prof.depths_mm
    assert d[0] == pytest.approx(30.0 + 0.04 * 250.0) and d[-1] == pytest.approx(30.0 + 0.04 * 250.0)
    assert d[50] == pytest.approx(30.0)
    assert np.all(np.diff(d[:51]) < 0) and np.all(np.diff(d[50:]) > 0)


def test_alg1_forward_sweep_is_linear():
    # toward +x the offset grows from L/2 to 3L/2: a straight ramp of slope K
    p = Alg1Params(K=0.02, D=30.0, L=500.0)
    d = alg1_profile(_line_poses(101), default_calibration(), p).depths_mm
    np.testing.assert_allclose(np.diff(d), 0.02 * 5.0, atol=1e-9)
    assert d[0] == pytest.approx(35.0)


def test_alg1_k_zero_is_fixed_depth():
    calib = SMALL_CALIB
    poses = _line_poses(5)
    frames = [np.random.default_rng(i).integers(0, 256, calib.shape, dtype=np.uint8) for i in range(5)]
    out = list(segment_stream_alg1(frames, poses, calib, Alg1Params(K=0.0, D=33.0)))
    for (cut_frame, cut), f in zip(out, frames):
        assert cut == 33.0
        assert np.array_equal(cut_frame, apply_cut(f, 33.0, 5.0, calib))


def test_alg1_matched_ramp_containment(ramp_scan):
    poses = ramp_scan.frame_poses()
    x_first = poses[0].translation[0]
    params = matched_alg1_params(35.0, 45.0, 500.0, x_first=x_first)
    prof = alg1_profile(poses, ramp_scan.calib, params)
    assert band_containment(prof, ramp_scan.truth.frame_depth_mm) >= 0.95


def test_alg2_ramp_within_2mm(ramp_scan):
    prof = alg2_profile(ramp_scan.frames, ramp_scan.calib)
    surface = np.asarray(prof.extra["surface_mm"])
    assert np.mean(np.abs(surface - ramp_scan.truth.frame_depth_mm) <= 2.0) >= 0.95
    assert band_containment(prof, ramp_scan.truth.frame_depth_mm) >= 0.95


def test_alg2_all_speckle_fails():
    calib = SMALL_CALIB
    f = render_frame(PhantomScene(), RigidTransform(PROBE_BASE.rotation, (900.0, 0, 0)), calib, 0)
    with pytest.raises(NoContourError):
        segment_scan_alg2([f, f, f], calib)


def test_alg2_constant_depth_scan():
    scene = PhantomScene(depth_profile=((0, 40.0), (500, 40.0)))
    scan = make_scan(scene, frame_count=120, rng=2, calib=SMALL_CALIB)
    cut_frames, prof = segment_scan_alg2(scan.frames, scan.calib)
    surface = np.asarray(prof.extra["surface_mm"])
    assert surface.max() - 40.0 <= 0.5 and 40.0 - surface.min() <= 0.5
    assert len(cut_frames) == 120


def test_alg2_tilt_tolerance():
    errs = {}
    for tilt in (0.0, 10.0):
        scan = make_scan(PhantomScene(), frame_count=300, tilt_jitter_deg=tilt, rng=11, calib=SMALL_CALIB)
        prof = alg2_profile(scan.frames, scan.calib)
        errs[tilt] = np.percentile(np.abs(np.asarray(prof.extra["surface_mm"]) - scan.truth.frame_depth_mm), 95)
    assert errs[10.0] - errs[0.0] <= 1.0


def test_fixed_depth_cuts_fail_on_ramp(ramp_scan):
    truth = ramp_scan.truth.frame_depth_mm
    assert band_containment(fixed_profile(len(truth), 35.0), truth) < 0.7
    assert band_containment(fixed_profile(len(truth), 45.0), truth) < 0.7


def test_profile_validation():
    with pytest.raises(InvalidInputError):
        fixed_profile(3, 35.0, band_mm=0.0)
    with pytest.raises(RangeError):
        fixed_profile(3, 90.0).check_extent(SMALL_CALIB)
    with pytest.raises(InvalidInputError):
        band_containment(fixed_profile(3, 35.0), [1.0, 2.0])
