import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spinevol.errors import DomainError, InvalidInputError, RangeError
from spinevol.geometry import (ImageCalibration, PoseStream, RigidTransform, TimedPose, compose, frame_affine,
                               interpolate_pose, invert, pixel_to_world)

unit = st.floats(-1.0, 1.0, allow_nan=False)
coord = st.floats(-500.0, 500.0, allow_nan=False)


@st.composite
def transforms(draw):
    axis = np.array([draw(unit), draw(unit), draw(unit)])
    if np.linalg.norm(axis) < 1e-3:
        axis = np.array([0.0, 0.0, 1.0])
    angle = draw(st.floats(-math.pi, math.pi))
    t = (draw(coord), draw(coord), draw(coord))
    return RigidTransform.from_axis_angle(axis, angle, t)


points = st.tuples(coord, coord, coord).map(np.array)


def test_compose_identity():
    t = RigidTransform.from_axis_angle((1, 2, 3), 0.7, (4, 5, 6))
    assert compose(RigidTransform.identity(), t).almost_equal(t)
    assert compose(t, RigidTransform.identity()).almost_equal(t)


def test_compose_with_inverse_is_identity():
    t = RigidTransform.from_axis_angle((0, 1, 1), -1.2, (10, -3, 2))
    assert compose(t, invert(t)).almost_equal(RigidTransform.identity())


def test_rot_z_after_translation_hand_computed():
    # rot_z(90) * (origin + (1, 0, 0)) = (0, 1, 0)
    t = compose(RigidTransform.rot_z(90), RigidTransform.from_translation(1, 0, 0))
    np.testing.assert_allclose(t.apply([0, 0, 0]), [0, 1, 0], atol=1e-9)


def test_pixel_origin_identity():
    calib = ImageCalibration(crop_rect=(0, 0, 10, 10), scale=(1, 1))
    np.testing.assert_array_equal(pixel_to_world((0, 0), calib, RigidTransform()), [0, 0, 0])


def test_pixel_affine_chain():
    calib = ImageCalibration(crop_rect=(0, 0, 559, 699), scale=(0.1, 0.1))
    pose = TimedPose(0.0, RigidTransform.from_translation(5, 0, 0))
    np.testing.assert_allclose(pixel_to_world((100, 200), calib, pose), [15, 20, 0], atol=1e-12)


def test_pixel_out_of_bounds():
    calib = ImageCalibration(crop_rect=(0, 0, 10, 10))
    with pytest.raises(DomainError):
        pixel_to_world((10, 0), calib, RigidTransform())
    with pytest.raises(DomainError):
        pixel_to_world((0, -1), calib, RigidTransform())


@given(transforms(), transforms(), st.integers(0, 558), st.integers(0, 698))
def test_pixel_under_composed_pose_differs_by_q(q, p, col, row):
    calib = ImageCalibration(scale=(0.1, 0.1))
    a = pixel_to_world((col, row), calib, compose(q, p))
    b = q.apply(pixel_to_world((col, row), calib, p))
    np.testing.assert_allclose(a, b, atol=1e-9)


@given(transforms(), transforms(), points)
def test_compose_post_condition(a, b, p):
    np.testing.assert_allclose(compose(a, b).apply(p), a.apply(b.apply(p)), atol=1e-8)


@given(transforms(), points, points)
def test_apply_preserves_distance(t, p, q):
    d0 = np.linalg.norm(p - q)
    d1 = np.linalg.norm(t.apply(p) - t.apply(q))
    assert abs(d0 - d1) <= 1e-6


@given(transforms())
def test_inverse_round_trip(t):
    assert compose(invert(t), t).almost_equal(RigidTransform())


@given(transforms())
def test_matrix_round_trip(t):
    assert RigidTransform.from_matrix(t.as_matrix()).almost_equal(t)


@given(transforms(), st.floats(0, 558), st.floats(0, 698), st.floats(0, 558), st.floats(0, 698),
       st.floats(0, 1))
def test_pixel_to_world_is_affine(t, c0, r0, c1, r1, u):
    calib = ImageCalibration(scale=(0.1, 0.13))
    a = pixel_to_world((c0, r0), calib, t)
    b = pixel_to_world((c1, r1), calib, t)
    m = pixel_to_world((c0 + u * (c1 - c0), r0 + u * (r1 - r0)), calib, t)
    np.testing.assert_allclose(m, a + u * (b - a), atol=1e-9)


def test_frame_affine_matches_pixel_to_world():
    calib = ImageCalibration(scale=(0.1, 0.2), image_to_transducer=RigidTransform.rot_z(10, (1, 2, 3)))
    pose = RigidTransform.from_axis_angle((1, 1, 0), 0.3, (7, 8, 9))
    o, a, b = frame_affine(calib, pose)
    np.testing.assert_allclose(o + 12 * a + 34 * b, pixel_to_world((12, 34), calib, pose), atol=1e-12)


def _stream():
    return [TimedPose(0.0, RigidTransform()),
            TimedPose(10.0, RigidTransform.rot_z(90, (10, 0, 0))),
            TimedPose(25.0, RigidTransform.rot_z(-30, (0, 4, 0)))]


def test_interpolate_at_samples_is_exact():
    poses = _stream()
    for p in poses:
        got = interpolate_pose(poses, p.t)
        assert np.array_equal(got.rotation, p.transform.rotation)
        assert np.array_equal(got.translation, p.transform.translation)


def test_interpolate_midpoint_translation():
    poses = [TimedPose(0.0, RigidTransform()), TimedPose(2.0, RigidTransform.from_translation(10, 0, 0))]
    np.testing.assert_allclose(interpolate_pose(poses, 1.0).translation, [5, 0, 0])


def test_interpolate_midpoint_rotation_is_slerp():
    poses = [TimedPose(0.0, RigidTransform.rot_z(0)), TimedPose(1.0, RigidTransform.rot_z(90))]
    assert interpolate_pose(poses, 0.5).almost_equal(RigidTransform.rot_z(45))


def test_interpolate_out_of_range():
    with pytest.raises(RangeError):
        interpolate_pose(_stream(), 25.5)
    with pytest.raises(RangeError):
        interpolate_pose(_stream(), -0.1)


def test_stream_requires_strictly_increasing_times():
    with pytest.raises(InvalidInputError):
        PoseStream([TimedPose(1.0, RigidTransform()), TimedPose(1.0, RigidTransform())])
    with pytest.raises(InvalidInputError):
        TimedPose(-1.0, RigidTransform())


def test_calibration_validation_and_round_trip():
    with pytest.raises(InvalidInputError):
        ImageCalibration(scale=(0.0, 0.1))
    with pytest.raises(InvalidInputError):
        ImageCalibration(crop_rect=(10, 0, 559, 699), raw_shape=(699, 560))
    c = ImageCalibration(crop_rect=(3, 4, 50, 60), scale=(0.2, 0.3), latency_ms=12.5,
                         image_to_transducer=RigidTransform.rot_z(30, (1, 2, 3)), raw_shape=(100, 100))
    back = ImageCalibration.from_dict(c.to_dict())
    assert back.crop_rect == c.crop_rect and back.scale == c.scale and back.latency_ms == 12.5
    assert back.image_to_transducer.almost_equal(c.image_to_transducer)
    raw = np.arange(100 * 100, dtype=np.uint32).reshape(100, 100)
    np.testing.assert_array_equal(c.extract_bmode(raw), raw[4:64, 3:53])
    assert c.axial_extent_mm == pytest.approx(60 * 0.3)
