"""Incremental pixel-nearest-neighbour (PNN) compounding into a voxel grid.

Each pixel is carried through the image -> transducer -> world chain, snapped
to the nearest voxel centre and accumulated into integer ``sum``/``count``
arrays. Integer accumulation commutes, so the result does not depend on the
order frames arrive in or how many workers bin them.
"""
from __future__ import annotations

import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .errors import BundleIOError, InvalidInputError
from .fileio import read_json, read_pgm, write_json, write_pgm, write_volume
from .geometry import frame_affine
from .validation import check_image, check_positive

SUM_CAP = 2**32 - 256
COUNT_CAP = 2**16 - 1
COMPOUND_MODES = ("mean", "max")
DEFAULT_HOLE_RADIUS = 2


@dataclass(frozen=True)
class DirtyRegion:
    """Inclusive voxel-index box; ``hi < lo`` on any axis means empty."""

    lo: tuple
    hi: tuple

    @classmethod
    def empty(cls):
        return cls((0, 0, 0), (-1, -1, -1))

    @property
    def is_empty(self):
        return any(h < l for l, h in zip(self.lo, self.hi))

    def union(self, other):
        if self.is_empty:
            return other
        if other.is_empty:
            return self
        return DirtyRegion(tuple(map(min, self.lo, other.lo)), tuple(map(max, self.hi, other.hi)))

    def expanded(self, r, dims):
        if self.is_empty:
            return self
        return DirtyRegion(tuple(max(0, l - r) for l in self.lo),
                           tuple(min(d - 1, h + r) for h, d in zip(self.hi, dims)))

    def slices(self):
        return tuple(slice(l, h + 1) for l, h in zip(self.lo, self.hi))

    def contains(self, idx):
        return all(l <= i <= h for l, i, h in zip(self.lo, idx, self.hi))

    @property
    def size(self):
        return 0 if self.is_empty else int(np.prod([h - l + 1 for l, h in zip(self.lo, self.hi)]))


@numba.njit(nogil=True, cache=True)
def _bin_kernel(frame, o, a, b, dims, r0, r1, skip_zero, out):
    """Voxel flat index per pixel: -1 out of bounds, -2 skipped zero, -3 outside row band."""
    h, w = frame.shape
    nx, ny, nz = dims[0], dims[1], dims[2]
    n_oob = 0
    n_zero = 0
    lo0 = nx
    lo1 = ny
    lo2 = nz
    hi0 = -1
    hi1 = -1
    hi2 = -1
    for r in range(h):
        if r < r0 or r > r1:
            for c in range(w):
                out[r, c] = -3
            continue
        for c in range(w):
            if skip_zero and frame[r, c] == 0:
                out[r, c] = -2
                n_zero += 1
                continue
            i = int(math.floor(o[0] + c * a[0] + r * b[0] + 0.5))
            j = int(math.floor(o[1] + c * a[1] + r * b[1] + 0.5))
            k = int(math.floor(o[2] + c * a[2] + r * b[2] + 0.5))
            if i < 0 or i >= nx or j < 0 or j >= ny or k < 0 or k >= nz:
                out[r, c] = -1
                n_oob += 1
                continue
            out[r, c] = (i * ny + j) * nz + k
            if i < lo0:
                lo0 = i
            if i > hi0:
                hi0 = i
            if j < lo1:
                lo1 = j
            if j > hi1:
                hi1 = j
            if k < lo2:
                lo2 = k
            if k > hi2:
                hi2 = k
    return n_oob, n_zero, lo0, lo1, lo2, hi0, hi1, hi2


@numba.njit(nogil=True, cache=True)
def _accumulate_kernel(flat, frame, sums, counts, use_max, sum_cap, count_cap):
    h, w = flat.shape
    dropped = 0
    for r in range(h):
        for c in range(w):
            f = flat[r, c]
            if f < 0:
                continue
            v = frame[r, c]
            n = counts[f]
            if n >= count_cap - 1:
                dropped += 1
                continue
            if use_max:
                if v > sums[f]:
                    sums[f] = v
            else:
                s = sums[f]
                if s + v >= sum_cap:
                    dropped += 1
                    continue
                sums[f] = s + v
            counts[f] = n + 1
    return dropped


@numba.njit(nogil=True, cache=True)
def _voxel_value(s, n, use_max):
    if n == 0:
        return 0
    if use_max:
        return s
    return (2 * s + n) // (2 * n)


@numba.njit(nogil=True, cache=True)
def _fill_kernel(sums, counts, use_max, filled, fill_value, lo, hi, radius):
    nx, ny, nz = counts.shape
    m = 2 * radius + 1
    buf = np.empty(m * m * m, dtype=np.int64)
    hist = np.zeros(256, dtype=np.int64)
    n_filled = 0
    for i in range(lo[0], hi[0] + 1):
        for j in range(lo[1], hi[1] + 1):
            for k in range(lo[2], hi[2] + 1):
                if counts[i, j, k] > 0:
                    filled[i, j, k] = False
                    fill_value[i, j, k] = 0
                    continue
                n = 0
                for di in range(max(0, i - radius), min(nx, i + radius + 1)):
                    for dj in range(max(0, j - radius), min(ny, j + radius + 1)):
                        for dk in range(max(0, k - radius), min(nz, k + radius + 1)):
                            c = counts[di, dj, dk]
                            if c > 0:
                                v = _voxel_value(np.int64(sums[di, dj, dk]), np.int64(c), use_max)
                                buf[n] = v
                                hist[v] += 1
                                n += 1
                if n == 0:
                    filled[i, j, k] = False
                    fill_value[i, j, k] = 0
                    continue
                # low median: the ((n - 1) // 2)-th smallest value
                target = (n - 1) // 2
                acc = 0
                med = 0
                for v in range(256):
                    acc += hist[v]
                    if acc > target:
                        med = v
                        break
                for p in range(n):
                    hist[buf[p]] = 0
                filled[i, j, k] = True
                fill_value[i, j, k] = med
                n_filled += 1
    return n_filled


class VoxelGrid:
    """Accumulator grid. ``origin`` is the world position (mm) of voxel (0, 0, 0)'s centre."""

    def __init__(self, dims, voxel_mm=1.0, origin=(0.0, 0.0, 0.0), compound_mode="mean"):
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3 or min(dims) < 1:
            raise InvalidInputError(f"grid dims must be 3 positive integers, got {dims}")
        if compound_mode not in COMPOUND_MODES:
            raise InvalidInputError(f"compound_mode must be one of {COMPOUND_MODES}")
        self.dims = dims
        self.voxel_mm = check_positive(voxel_mm, "voxel_mm")
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3)
        self.compound_mode = compound_mode
        self.sums = np.zeros(dims, dtype=np.uint32)
        self.counts = np.zeros(dims, dtype=np.uint16)
        self.filled = np.zeros(dims, dtype=bool)
        self.fill_value = np.zeros(dims, dtype=np.uint8)
        self.stats = {"frames_inserted": 0, "pixels_inserted": 0, "dropped_out_of_bounds": 0,
                      "dropped_saturated": 0, "skipped_zero": 0}
        self.lock = threading.Lock()

    @classmethod
    def for_scan(cls, poses, calib, voxel_mm=1.0, margin_mm=10.0, compound_mode="mean"):
        """Grid enclosing every frame's image footprint plus ``margin_mm``."""
        lo, hi = footprint_bounds(poses, calib)
        lo = lo - margin_mm
        hi = hi + margin_mm
        origin = np.floor(lo / voxel_mm) * voxel_mm
        dims = np.floor((hi - origin) / voxel_mm).astype(int) + 1
        return cls(tuple(dims), voxel_mm, origin, compound_mode)

    @property
    def shape(self):
        return self.dims

    @property
    def extent_mm(self):
        return tuple(d * self.voxel_mm for d in self.dims)

    def is_empty(self):
        return not self.counts.any() and not self.filled.any()

    def values(self):
        n = self.counts.astype(np.uint64)
        s = self.sums.astype(np.uint64)
        out = np.zeros(self.dims, dtype=np.uint8)
        nz = n > 0
        if self.compound_mode == "max":
            out[nz] = s[nz]
        else:
            out[nz] = (2 * s[nz] + n[nz]) // (2 * n[nz])
        out[self.filled] = self.fill_value[self.filled]
        return out

    def value(self, idx):
        i, j, k = idx
        if self.counts[i, j, k]:
            return int(_voxel_value(int(self.sums[i, j, k]), int(self.counts[i, j, k]),
                                    self.compound_mode == "max"))
        return int(self.fill_value[i, j, k]) if self.filled[i, j, k] else 0

    def world_to_index(self, p):
        return tuple(np.floor((np.asarray(p) - self.origin) / self.voxel_mm + 0.5).astype(int))

    def index_to_world(self, idx):
        return self.origin + np.asarray(idx, dtype=np.float64) * self.voxel_mm

    def snapshot(self):
        with self.lock:
            return self.sums.copy(), self.counts.copy(), self.values()

    def meta(self):
        return {"dims": list(self.dims), "voxel_mm": self.voxel_mm,
                "origin": self.origin.tolist(), "compound_mode": self.compound_mode,
                "frames_inserted": self.stats["frames_inserted"]}


def footprint_bounds(poses, calib):
    h, w = calib.shape
    corners = [(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)]
    pts = []
    for pose in poses:
        o, a, b = frame_affine(calib, pose)
        pts.extend(o + c * a + r * b for c, r in corners)
    if not pts:
        raise InvalidInputError("cannot size a grid from an empty pose list")
    pts = np.array(pts)
    return pts.min(axis=0), pts.max(axis=0)


@dataclass
class BinnedFrame:
    flat: np.ndarray
    frame: np.ndarray
    region: DirtyRegion
    n_oob: int
    n_zero: int


def bin_frame(grid, frame, pose, calib, skip_zero=False, row_range=None):
    """Transform/bin stage; touches no shared state, safe to run concurrently."""
    frame = check_image(frame, "frame", calib.shape)
    o, a, b = frame_affine(calib, pose)
    v = grid.voxel_mm
    o = (o - grid.origin) / v
    r0, r1 = (0, frame.shape[0] - 1) if row_range is None else row_range
    flat = np.empty(frame.shape, dtype=np.int64)
    n_oob, n_zero, *box = _bin_kernel(frame, o, a / v, b / v, np.asarray(grid.dims, dtype=np.int64),
                                      int(r0), int(r1), bool(skip_zero), flat)
    region = DirtyRegion(tuple(box[:3]), tuple(box[3:]))
    if region.is_empty:
        region = DirtyRegion.empty()
    return BinnedFrame(flat, frame, region, n_oob, n_zero)


def accumulate(grid, binned: BinnedFrame):
    with grid.lock:
        dropped = _accumulate_kernel(binned.flat, binned.frame, grid.sums.reshape(-1),
                                     grid.counts.reshape(-1), grid.compound_mode == "max",
                                     SUM_CAP, COUNT_CAP)
        st = grid.stats
        st["frames_inserted"] += 1
        st["dropped_out_of_bounds"] += binned.n_oob
        st["skipped_zero"] += binned.n_zero
        st["dropped_saturated"] += int(dropped)
        st["pixels_inserted"] += int(np.count_nonzero(binned.flat >= 0)) - int(dropped)
    return binned.region


def insert_frame(grid, frame, pose, calib, skip_zero=False, row_range=None) -> DirtyRegion:
    """Bin one frame into ``grid``; returns the box of voxels it touched."""
    return accumulate(grid, bin_frame(grid, frame, pose, calib, skip_zero, row_range))


def fill_holes(grid, region: DirtyRegion, radius=DEFAULT_HOLE_RADIUS) -> int:
    """Fill empty voxels in ``region`` with the low median of non-empty neighbours.

    Neighbours are taken within Chebyshev ``radius`` and only from measured
    voxels, so fills never feed other fills. Results go to a separate layer
    (``grid.filled`` / ``grid.fill_value``); counts stay zero.
    """
    if region.is_empty:
        return 0
    radius = int(radius)
    if radius < 0:
        raise InvalidInputError("radius must be >= 0")
    lo = np.maximum(np.asarray(region.lo), 0)
    hi = np.minimum(np.asarray(region.hi), np.asarray(grid.dims) - 1)
    with grid.lock:
        return int(_fill_kernel(grid.sums, grid.counts, grid.compound_mode == "max", grid.filled,
                                grid.fill_value, lo.astype(np.int64), hi.astype(np.int64), radius))


def _percentiles(lat_ms):
    if not lat_ms:
        return {"p50_ms": 0.0, "p95_ms": 0.0, "max_ms": 0.0}
    a = np.asarray(lat_ms)
    return {"p50_ms": float(np.percentile(a, 50)), "p95_ms": float(np.percentile(a, 95)),
            "max_ms": float(a.max())}


def reconstruct_batch(frames, poses, calib, grid, hole_radius=DEFAULT_HOLE_RADIUS, skip_zero=False,
                      row_ranges=None):
    """Reference path: insert every frame in order, then one fill over everything touched."""
    touched = DirtyRegion.empty()
    for i, (frame, pose) in enumerate(zip(frames, poses)):
        rr = None if row_ranges is None else row_ranges[i]
        touched = touched.union(insert_frame(grid, frame, pose, calib, skip_zero, rr))
    if hole_radius > 0:
        fill_holes(grid, touched.expanded(hole_radius, grid.dims), hole_radius)
    return grid


def run_incremental(frames, poses, calib, grid, hole_radius=DEFAULT_HOLE_RADIUS, workers=1,
                    fill_every=30, skip_zero=False, row_ranges=None, on_frame=None):
    """Streaming reconstruction: decode -> bin (worker pool) -> accumulate -> periodic fill.

    ``frames`` may be a lazy iterable (e.g. decoding from disk). Bins complete in
    any order; fills run on the union of recent dirty regions every
    ``fill_every`` frames and once more over everything at the end, so the final
    grid equals :func:`reconstruct_batch` bit for bit.
    Returns ``(grid, stats)``.
    """
    workers = max(1, int(workers))
    latencies = []
    done_at = []
    touched = DirtyRegion.empty()
    recent = DirtyRegion.empty()
    since_fill = 0
    t_start = time.perf_counter()
    n = 0

    def finish(fut, t0):
        nonlocal touched, recent, since_fill
        region = accumulate(grid, fut.result())
        touched = touched.union(region)
        recent = recent.union(region)
        since_fill += 1
        if hole_radius > 0 and since_fill >= fill_every:
            fill_holes(grid, recent.expanded(hole_radius, grid.dims), hole_radius)
            recent = DirtyRegion.empty()
            since_fill = 0
        now = time.perf_counter()
        latencies.append((now - t0) * 1000.0)
        done_at.append(now)
        if on_frame is not None:
            on_frame(len(latencies), region)

    pending = []
    pose_iter = iter(poses)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for i, frame in enumerate(frames):
            try:
                pose = next(pose_iter)
            except StopIteration:
                raise InvalidInputError(f"no pose for frame {i}") from None
            rr = None if row_ranges is None else row_ranges[i]
            t0 = time.perf_counter()
            pending.append((pool.submit(bin_frame, grid, frame, pose, calib, skip_zero, rr), t0))
            n += 1
            if len(pending) >= 2 * workers:
                # drain whichever finished first
                done = [p for p in pending if p[0].done()] or [pending[0]]
                for p in done:
                    pending.remove(p)
                    finish(*p)
        for p in pending:
            finish(*p)
    if hole_radius > 0:
        fill_holes(grid, touched.expanded(hole_radius, grid.dims), hole_radius)
    wall = time.perf_counter() - t_start
    stats = dict(grid.stats)
    stats.update(_percentiles(latencies))
    gaps = np.diff(done_at)
    median_gap = float(np.median(gaps)) if gaps.size else 0.0
    stats.update({"frames": n, "wall_s": wall, "fps": n / wall if wall > 0 else 0.0,
                  "median_fps": 1.0 / median_gap if median_gap > 0 else 0.0, "workers": workers})
    return grid, stats


def export_slices(grid, directory, axis="x"):
    """One PGM per x index (image rows = y, cols = z) plus ``meta.json``."""
    if axis != "x":
        raise InvalidInputError("only x-axis slicing is supported")
    if grid.is_empty():
        raise InvalidInputError("grid is empty")
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise BundleIOError(f"cannot create slice directory ({exc.strerror})", directory) from exc
    values = grid.values()
    width = max(4, len(str(grid.dims[0] - 1)))
    for i in range(grid.dims[0]):
        write_pgm(directory / f"{i:0{width}d}.pgm", values[i])
    meta = grid.meta()
    meta.update({"axis": "x", "count": grid.dims[0], "digits": width})
    write_json(directory / "meta.json", meta)
    return grid.dims[0]


def import_slices(directory):
    directory = Path(directory)
    meta = read_json(directory / "meta.json")
    width = meta["digits"]
    slices = [read_pgm(directory / f"{i:0{width}d}.pgm") for i in range(meta["count"])]
    return np.stack(slices, axis=0), meta


def save_volume(grid, path):
    write_volume(path, grid.values(), grid.meta())
