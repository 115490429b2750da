import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spinevol.errors import DomainError, InvalidInputError
from spinevol.geometry import RigidTransform
from spinevol.metrics import band_centroids
from spinevol.pipeline import reconstruct_scan
from spinevol.project import (VISIBLE_SCORE, ProjectionImage, coronal_projection, lump_visibility, project_volume,
                              vpi_fixed_depth)
from spinevol.reconstruct import VoxelGrid, insert_frame
from spinevol.segment import alg2_profile, fixed_profile


def test_single_voxel_single_pixel():
    g = VoxelGrid((6, 7, 8), 1.0, (10.0, 20.0, 0.0))
    g.sums[2, 3, 4], g.counts[2, 3, 4] = 180, 1
    for mode in ("max", "mean"):
        p = coronal_projection(g, mode)
        assert p.shape == (6, 7) and p.origin == (10.0, 20.0)
        assert [tuple(i) for i in np.argwhere(p.pixels)] == [(2, 3)] and p.pixels[2, 3] == 180


def test_uniform_slab():
    g = VoxelGrid((4, 5, 6))
    g.sums[:, :, 2:4], g.counts[:, :, 2:4] = 100, 1
    for mode in ("max", "mean"):
        assert np.all(coronal_projection(g, mode).pixels == 100)


def test_mean_mode_ignores_empty_voxels():
    g = VoxelGrid((1, 1, 5))
    g.sums[0, 0, 1], g.counts[0, 0, 1] = 100, 1
    g.sums[0, 0, 3], g.counts[0, 0, 3] = 201, 1
    assert coronal_projection(g, "mean").pixels[0, 0] == 151


def test_empty_grid_rejected():
    with pytest.raises(InvalidInputError):
        coronal_projection(VoxelGrid((2, 2, 2)))


def test_projection_of_saved_volume_matches(curved_alg2, tmp_path):
    from spinevol.fileio import read_volume
    from spinevol.reconstruct import save_volume
    grid, proj = curved_alg2
    save_volume(grid, tmp_path / "v.raw")
    values, meta = read_volume(tmp_path / "v.raw")
    assert np.array_equal(project_volume(values, meta, "max").pixels, proj.pixels)


def test_alg2_map_traces_centerline(curved_scan, curved_alg2):
    _, proj = curved_alg2
    c = band_centroids(proj, 10.0)
    truth = curved_scan.truth.centerline
    y_true = np.interp(c[:, 0], truth[:, 0], truth[:, 1])
    inside = (c[:, 0] > 15) & (c[:, 0] < 485)
    rms = float(np.sqrt(np.mean((c[inside, 1] - y_true[inside]) ** 2)))
    assert rms <= 2.0


def _visibility(proj, lumps):
    inside = [proj.contains(x, y) for x, y in lumps]
    return lumps[inside], lump_visibility(proj, lumps[inside], 7.0)


def test_fixed_depth_failure_modes(ramp_scan):
    frames, poses, calib = ramp_scan.frames, ramp_scan.frame_poses(), ramp_scan.calib
    lumps = ramp_scan.truth.lump_centers
    at35 = vpi_fixed_depth(frames, poses, calib, 35.0)
    at45 = vpi_fixed_depth(frames, poses, calib, 45.0)
    grid, _ = reconstruct_scan(frames, poses, calib, alg2_profile(frames, calib))
    alg2 = coronal_projection(grid)
    c35, s35 = _visibility(at35, lumps)
    c45, s45 = _visibility(at45, lumps)
    c2, s2 = _visibility(alg2, lumps)
    # bone deeper than ~41 mm lies below the 35 mm band; shallower than ~44 mm lies above the 45 mm band
    assert s35[c35[:, 0] > 300].mean() < VISIBLE_SCORE
    assert s45[c45[:, 0] < 200].mean() < VISIBLE_SCORE
    assert s2.min() > VISIBLE_SCORE
    assert s2[c2[:, 0] > 300].min() > s35[c35[:, 0] > 300].min()


def test_full_band_vpi_equals_plain_projection(tiny_scan):
    frames, poses, calib = tiny_scan.frames, tiny_scan.frame_poses(), tiny_scan.calib
    plain, _ = reconstruct_scan(frames, poses, calib)
    vpi = vpi_fixed_depth(frames, poses, calib, 0.0, calib.axial_extent_mm)
    assert np.array_equal(vpi.pixels, coronal_projection(plain).pixels)
    assert vpi.origin == tuple(plain.origin[:2])


def test_max_projection_monotone_when_adding_frames(tiny_scan):
    # holds for max compounding without hole filling: a new pixel can only raise a voxel
    frames, poses, calib = tiny_scan.frames, tiny_scan.frame_poses(), tiny_scan.calib
    g = VoxelGrid.for_scan(poses, calib, 1.0, compound_mode="max")
    order = np.random.default_rng(3).permutation(len(frames))
    insert_frame(g, frames[order[0]], poses[order[0]], calib)
    prev = coronal_projection(g, "max").pixels
    for i in order[1:]:
        insert_frame(g, frames[i], poses[i], calib)
        cur = coronal_projection(g, "max").pixels
        assert np.all(cur >= prev)
        prev = cur


def _disk_image(level, bg=40, shape=(80, 60)):
    img = np.full(shape, bg, np.uint8)
    xs, ys = np.mgrid[0:shape[0], 0:shape[1]]
    img[(xs - 40) ** 2 + (ys - 30) ** 2 <= 25] = level
    return ProjectionImage(img, 1.0)


def test_visibility_disk_and_monotone():
    scores = [lump_visibility(_disk_image(v), [(40, 30)], 5.0)[0] for v in (60, 120, 200)]
    assert scores[2] > 100 and scores[0] < scores[1] < scores[2]


def test_visibility_uniform_image_zero():
    proj = ProjectionImage(np.full((50, 50), 77, np.uint8), 0.5, (10.0, -5.0))
    np.testing.assert_allclose(lump_visibility(proj, [(15, 0), (20, 5)], 2.0), 0.0)


def test_visibility_centre_outside():
    with pytest.raises(DomainError):
        lump_visibility(ProjectionImage(np.zeros((5, 5), np.uint8), 1.0), [(10, 0)], 1.0)


@given(st.integers(0, 55), st.integers(0, 2**32 - 1))
def test_visibility_constant_offset_invariance(c, seed):
    img = np.random.default_rng(seed).integers(0, 200, (40, 30)).astype(np.uint8)
    a = ProjectionImage(img, 1.0)
    b = ProjectionImage(img + np.uint8(c), 1.0)
    centers = [(10, 10), (25, 20)]
    np.testing.assert_allclose(lump_visibility(a, centers, 4.0), lump_visibility(b, centers, 4.0), atol=1e-12)


def test_projection_save_load(tmp_path):
    p = ProjectionImage(np.arange(12, dtype=np.uint8).reshape(3, 4), 0.5, (1.0, 2.0))
    p.save(tmp_path / "p.pgm")
    q = ProjectionImage.load(tmp_path / "p.pgm")
    assert np.array_equal(p.pixels, q.pixels) and q.mm_per_pixel == 0.5 and q.origin == (1.0, 2.0)
