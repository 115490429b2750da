"""Throughput and tracker benchmarks."""
from __future__ import annotations

import os
import time

import numpy as np

from .errors import InvalidInputError
from .phantom import PhantomScene, default_calibration, make_scan, render_frame
from .reconstruct import DEFAULT_HOLE_RADIUS, VoxelGrid, run_incremental
from .tracker import benchmark as tracker_benchmark  # noqa: F401  (re-exported for the CLI)


def default_workers():
    return max(1, os.cpu_count() or 1)


def ingest(frames, poses, calib, voxel_mm=1.0, workers=None, hole_radius=DEFAULT_HOLE_RADIUS,
           fill_every=30, margin_mm=10.0):
    """Time the streaming reconstruction of ``frames``; returns a stats dict."""
    poses = list(poses)
    if not poses:
        raise InvalidInputError("nothing to ingest: empty scan")
    grid = VoxelGrid.for_scan(poses, calib, voxel_mm, margin_mm)
    _, stats = run_incremental(frames, poses, calib, grid, hole_radius, workers or default_workers(),
                               fill_every)
    stats["grid_dims"] = list(grid.dims)
    stats["grid_extent_mm"] = [float(v) for v in grid.extent_mm]
    stats["frame_shape"] = list(calib.shape)
    return stats


def cycled_frames(pool, n):
    for i in range(n):
        yield pool[i % len(pool)]


def synthetic_ingest(frame_count=3000, pool_size=32, workers=None, seed=0, voxel_mm=1.0,
                     tilt_jitter_deg=5.0):
    """Full-size sweep: real poses for every frame, pixel content cycled from a rendered pool.

    Rendering is kept out of the timed region; the ingest path does not look at
    pixel values beyond accumulating them.
    """
    calib = default_calibration()
    scene = PhantomScene()
    scan = make_scan(scene, frame_count=frame_count, tilt_jitter_deg=tilt_jitter_deg, rng=seed,
                     calib=calib, render=False)
    poses = scan.frame_poses()
    step = max(1, frame_count // pool_size)
    pool = [render_frame(scene, poses[i], calib, np.random.default_rng([seed, i]))
            for i in range(0, frame_count, step)][:pool_size]
    t0 = time.perf_counter()
    stats = ingest(cycled_frames(pool, frame_count), poses, calib, voxel_mm, workers)
    stats["total_s"] = time.perf_counter() - t0
    return stats
