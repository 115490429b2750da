"""scikit-learn style wrappers around the functional API.

Hyper-parameters go to ``__init__`` (so ``get_params``/``set_params``/``clone``
work); learned state ends in an underscore and is set by ``fit``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import InvalidInputError
from .metrics import DEFAULT_BAND_MM as ANGLE_BAND_MM
from .metrics import DEFAULT_SPLINE_LAM, auto_centerline_angle
from .phantom import default_calibration
from .reconstruct import DEFAULT_HOLE_RADIUS, DirtyRegion, VoxelGrid, fill_holes, insert_frame, run_incremental
from .segment import (DEFAULT_BAND_MM, DEFAULT_LEAD_MM, DEFAULT_WINDOW, Alg1Params, alg1_profile,
                      alg2_profile, apply_cut)
from .tempcal import DepthSeries, estimate_latency
from .validation import check_frames


def _series(x, name):
    if isinstance(x, DepthSeries):
        return x
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 2:
        raise InvalidInputError(f"{name} must be a DepthSeries or an (n, 2) array of (t_ms, depth_mm)")
    return DepthSeries(a[:, 0], a[:, 1])


class TemporalCalibrator(BaseEstimator):
    """Fit the frame/pose clock offset from image-depth and probe-height series."""

    def __init__(self, max_lag_ms=250.0, resample_ms=5.0, min_correlation=0.5):
        self.max_lag_ms = max_lag_ms
        self.resample_ms = resample_ms
        self.min_correlation = min_correlation

    def fit(self, X, y):
        lag, rho = estimate_latency(_series(X, "X"), _series(y, "y"), self.max_lag_ms, self.resample_ms,
                                    self.min_correlation, return_correlation=True)
        self.latency_ms_ = lag
        self.correlation_ = rho
        return self

    def transform(self, calib):
        """Calibration with the fitted latency applied."""
        check_is_fitted(self, "latency_ms_")
        return calib.replace(latency_ms=self.latency_ms_)


class PNNReconstructor(BaseEstimator):
    """Pixel-nearest-neighbour reconstruction; ``partial_fit`` adds frames to the same grid."""

    def __init__(self, voxel_mm=1.0, hole_radius=DEFAULT_HOLE_RADIUS, compound_mode="mean", margin_mm=10.0,
                 workers=1, calib=None):
        self.voxel_mm = voxel_mm
        self.hole_radius = hole_radius
        self.compound_mode = compound_mode
        self.margin_mm = margin_mm
        self.workers = workers
        self.calib = calib

    def _calib(self):
        return self.calib if self.calib is not None else default_calibration()

    def fit(self, X, poses, grid=None):
        calib = self._calib()
        poses = list(poses)
        self.grid_ = grid or VoxelGrid.for_scan(poses, calib, self.voxel_mm, self.margin_mm, self.compound_mode)
        _, self.stats_ = run_incremental(X, poses, calib, self.grid_, self.hole_radius, self.workers)
        self.touched_ = DirtyRegion((0, 0, 0), tuple(d - 1 for d in self.grid_.dims))
        return self

    def partial_fit(self, X, poses, grid=None):
        """Insert more frames; the first call needs ``grid`` or enough poses to size one."""
        calib = self._calib()
        poses = list(poses)
        if not hasattr(self, "grid_"):
            self.grid_ = grid or VoxelGrid.for_scan(poses, calib, self.voxel_mm, self.margin_mm,
                                                    self.compound_mode)
            self.touched_ = DirtyRegion.empty()
        frames = check_frames(X, calib)
        region = DirtyRegion.empty()
        for frame, pose in zip(frames, poses):
            region = region.union(insert_frame(self.grid_, frame, pose, calib))
        self.touched_ = self.touched_.union(region)
        if self.hole_radius > 0:
            r = self.hole_radius
            fill_holes(self.grid_, self.touched_.expanded(r, self.grid_.dims), r)
        self.stats_ = dict(self.grid_.stats)
        return self

    def transform(self, X=None):
        """Voxel values of the current grid, shape ``(nx, ny, nz)``."""
        check_is_fitted(self, "grid_")
        return self.grid_.values()

    get_volume = transform


class ContourDepthCutter(BaseEstimator, TransformerMixin):
    """Image-driven cut: bone contour per frame, median filtered over the scan."""

    def __init__(self, window=DEFAULT_WINDOW, band_mm=DEFAULT_BAND_MM, lead_mm=DEFAULT_LEAD_MM, calib=None):
        self.window = window
        self.band_mm = band_mm
        self.lead_mm = lead_mm
        self.calib = calib

    def _calib(self):
        return self.calib if self.calib is not None else default_calibration()

    def fit(self, X, y=None):
        self.profile_ = alg2_profile(check_frames(X, self._calib()), self._calib(), self.window,
                                     self.band_mm, self.lead_mm)
        self.cut_mm_ = self.profile_.depths_mm
        return self

    def transform(self, X):
        check_is_fitted(self, "profile_")
        frames = check_frames(X, self._calib())
        if len(frames) != len(self.cut_mm_):
            raise InvalidInputError(f"fitted on {len(self.cut_mm_)} frames, got {len(frames)}")
        return [apply_cut(f, d, self.band_mm, self._calib()) for f, d in zip(frames, self.cut_mm_)]


class PoseDepthCutter(BaseEstimator, TransformerMixin):
    """Pose-driven cut; ``fit`` takes the pose sequence, ``transform`` the matching frames."""

    def __init__(self, K=0.04, D=35.0, L=500.0, axis="x", band_mm=DEFAULT_BAND_MM, calib=None):
        self.K = K
        self.D = D
        self.L = L
        self.axis = axis
        self.band_mm = band_mm
        self.calib = calib

    def _calib(self):
        return self.calib if self.calib is not None else default_calibration()

    def fit(self, X, y=None):
        params = Alg1Params(self.K, self.D, self.L, self.axis)
        self.profile_ = alg1_profile(X, self._calib(), params, self.band_mm)
        self.cut_mm_ = self.profile_.depths_mm
        return self

    def transform(self, X):
        check_is_fitted(self, "profile_")
        frames = check_frames(X, self._calib())
        if len(frames) != len(self.cut_mm_):
            raise InvalidInputError(f"fitted on {len(self.cut_mm_)} poses, got {len(frames)} frames")
        return [apply_cut(f, d, self.band_mm, self._calib()) for f, d in zip(frames, self.cut_mm_)]


class CurveAngleEstimator(BaseEstimator):
    """Automatic curve angle of coronal projections."""

    def __init__(self, band_mm=ANGLE_BAND_MM, lam=DEFAULT_SPLINE_LAM):
        self.band_mm = band_mm
        self.lam = lam

    def fit(self, X, y=None):
        self.measurement_ = auto_centerline_angle(X, self.band_mm, self.lam)
        self.uca_deg_ = self.measurement_.uca_deg
        return self

    def predict(self, X):
        """Angles for a sequence of projections."""
        return np.array([auto_centerline_angle(p, self.band_mm, self.lam).uca_deg for p in X])
