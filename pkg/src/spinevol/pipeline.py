"""End-to-end helpers shared by the CLI, the estimators and the acceptance checks."""
from __future__ import annotations

from .errors import InvalidInputError
from .reconstruct import DEFAULT_HOLE_RADIUS, VoxelGrid, reconstruct_batch, run_incremental
from .segment import (DEFAULT_BAND_MM, DEFAULT_LEAD_MM, DEFAULT_WINDOW, Alg1Params, alg1_profile,
                      alg2_profile, fixed_profile)

SEGMENT_METHODS = ("none", "alg1", "alg2", "fixed")


def cut_profile(method, frames, poses, calib, band_mm=DEFAULT_BAND_MM, alg1=None, depth_mm=None,
                window=DEFAULT_WINDOW, lead_mm=DEFAULT_LEAD_MM, contour=None):
    """CutProfile for ``method``, or None for ``none``. ``frames`` is only read for alg2."""
    if method == "none":
        return None
    if method == "alg1":
        return alg1_profile(poses, calib, alg1 or Alg1Params(), band_mm)
    if method == "alg2":
        return alg2_profile(frames, calib, window, band_mm, lead_mm, contour)
    if method == "fixed":
        if depth_mm is None:
            raise InvalidInputError("fixed cut needs depth_mm")
        return fixed_profile(len(poses), depth_mm, band_mm)
    raise InvalidInputError(f"segment method must be one of {SEGMENT_METHODS}, got {method!r}")


def reconstruct_scan(frames, poses, calib, profile=None, voxel_mm=1.0, mode="batch", workers=1,
                     hole_radius=DEFAULT_HOLE_RADIUS, compound_mode="mean", margin_mm=10.0, grid=None,
                     fill_every=30):
    """Reconstruct a (possibly cut) scan; returns ``(grid, stats)``."""
    poses = list(poses)
    if grid is None:
        grid = VoxelGrid.for_scan(poses, calib, voxel_mm, margin_mm, compound_mode)
    rows = None if profile is None else profile.row_ranges(calib)
    if rows is not None and len(rows) != len(poses):
        raise InvalidInputError(f"cut profile has {len(rows)} entries for {len(poses)} frames")
    if mode == "batch":
        reconstruct_batch(frames, poses, calib, grid, hole_radius, row_ranges=rows)
        return grid, dict(grid.stats)
    if mode == "incremental":
        return run_incremental(frames, poses, calib, grid, hole_radius, workers, fill_every,
                               row_ranges=rows)
    raise InvalidInputError(f"mode must be batch or incremental, got {mode!r}")
