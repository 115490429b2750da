"""Coronal maps: collapse a volume along depth, plus the fixed-depth VPI baseline."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, InvalidInputError
from .fileio import meta_path, read_json, read_pgm, write_json, write_pgm
from .reconstruct import DEFAULT_HOLE_RADIUS, VoxelGrid, reconstruct_batch
from .segment import DEFAULT_BAND_MM, cut_rows
from .validation import check_positive

PROJECTION_MODES = ("max", "mean")
# lump_visibility score above which a lump counts as visible
VISIBLE_SCORE = 2.0


@dataclass
class ProjectionImage:
    """``pixels[i, j]`` is the map at x = origin[0] + i*mm, y = origin[1] + j*mm."""

    pixels: np.ndarray
    mm_per_pixel: float
    origin: tuple = (0.0, 0.0)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise InvalidInputError("projection pixels must be a non-empty 2D array")
        self.mm_per_pixel = check_positive(self.mm_per_pixel, "mm_per_pixel")
        self.origin = tuple(float(v) for v in self.origin)

    @property
    def shape(self):
        return self.pixels.shape

    def coords(self):
        """World x of every row and y of every column (mm)."""
        nx, ny = self.shape
        return (self.origin[0] + np.arange(nx) * self.mm_per_pixel,
                self.origin[1] + np.arange(ny) * self.mm_per_pixel)

    def contains(self, x, y):
        xs, ys = self.coords()
        return xs[0] <= x <= xs[-1] and ys[0] <= y <= ys[-1]

    def with_pixels(self, pixels):
        return ProjectionImage(pixels, self.mm_per_pixel, self.origin)

    def save(self, path):
        path = Path(path)
        write_pgm(path, np.clip(self.pixels, 0, 255).astype(np.uint8))
        write_json(meta_path(path), {"mm_per_pixel": self.mm_per_pixel,
                                               "origin": list(self.origin)})

    @classmethod
    def load(cls, path):
        path = Path(path)
        side = meta_path(path)
        meta = read_json(side) if side.exists() else {"mm_per_pixel": 1.0, "origin": [0, 0]}
        return cls(read_pgm(path), meta["mm_per_pixel"], tuple(meta["origin"]))


def _project_values(values, occupied, origin, mm, mode):
    if mode not in PROJECTION_MODES:
        raise InvalidInputError(f"mode must be one of {PROJECTION_MODES}")
    if mode == "max":
        out = values.max(axis=2)
    else:
        n = occupied.sum(axis=2).astype(np.int64)
        s = np.where(occupied, values, 0).sum(axis=2, dtype=np.int64)
        out = np.zeros(n.shape, dtype=np.int64)
        nz = n > 0
        out[nz] = (2 * s[nz] + n[nz]) // (2 * n[nz])
    return ProjectionImage(out.astype(np.uint8), mm, origin)


def coronal_projection(grid: VoxelGrid, mode="max") -> ProjectionImage:
    """Collapse the z (depth) axis. ``mean`` averages only non-empty voxels."""
    if grid.is_empty():
        raise InvalidInputError("cannot project an empty grid")
    occupied = (grid.counts > 0) | grid.filled
    return _project_values(grid.values(), occupied, tuple(grid.origin[:2]), grid.voxel_mm, mode)


def project_volume(values, meta, mode="max"):
    """Projection of a volume read back from disk (empty voxels are those equal to 0)."""
    values = np.asarray(values, dtype=np.uint8)
    if not values.any():
        raise InvalidInputError("cannot project an empty volume")
    origin = tuple(meta.get("origin", (0.0, 0.0, 0.0))[:2])
    return _project_values(values, values > 0, origin, float(meta.get("voxel_mm", 1.0)), mode)


def vpi_fixed_depth(frames, poses, calib, depth_mm, band_mm=DEFAULT_BAND_MM, voxel_mm=1.0,
                    margin_mm=10.0, hole_radius=DEFAULT_HOLE_RADIUS, grid_like: VoxelGrid = None,
                    mode="max") -> ProjectionImage:
    """Keep the rows in ``[depth, depth + band]`` of every frame, reconstruct, project."""
    frames = list(frames)
    poses = list(poses)
    if len(frames) != len(poses):
        raise InvalidInputError(f"{len(frames)} frames but {len(poses)} poses")
    if grid_like is not None:
        grid = VoxelGrid(grid_like.dims, grid_like.voxel_mm, grid_like.origin, grid_like.compound_mode)
    else:
        grid = VoxelGrid.for_scan(poses, calib, voxel_mm, margin_mm)
    rows = cut_rows(depth_mm, band_mm, calib)
    reconstruct_batch(frames, poses, calib, grid, hole_radius, row_ranges=[rows] * len(frames))
    return coronal_projection(grid, mode)


def lump_visibility(proj: ProjectionImage, lump_centers, radius_mm):
    """Per-lump contrast: (disk mean - background median) / (background MAD + 1).

    Background is every pixel outside all lump disks.
    """
    radius_mm = check_positive(radius_mm, "radius_mm")
    centers = np.asarray(lump_centers, dtype=np.float64).reshape(-1, 2)
    for x, y in centers:
        if not proj.contains(x, y):
            raise DomainError(f"lump centre ({x:.1f}, {y:.1f}) outside the projection")
    img = proj.pixels.astype(np.float64)
    xs, ys = proj.coords()
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    disks = [(X - x) ** 2 + (Y - y) ** 2 <= radius_mm ** 2 for x, y in centers]
    any_disk = np.logical_or.reduce(disks) if disks else np.zeros(img.shape, bool)
    bg = img[~any_disk]
    if bg.size == 0:
        raise DomainError("lump disks cover the whole projection")
    med = float(np.median(bg))
    mad = float(np.median(np.abs(bg - med)))
    scores = np.array([(img[d].mean() - med) / (mad + 1.0) if d.any() else 0.0 for d in disks])
    return scores
