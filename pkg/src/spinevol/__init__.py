"""Freehand 3D ultrasound volumes of the spine from tracked B-mode frames."""
__version__ = "0.1.0"

from .errors import (AlgorithmError, BundleIOError, DomainError, InvalidInputError, NoContourError,
                     NotFoundError, RangeError, SpinevolError, UnreliableEstimateError)
from .estimators import (ContourDepthCutter, CurveAngleEstimator, PNNReconstructor, PoseDepthCutter,
                         TemporalCalibrator)
from .geometry import ImageCalibration, PoseStream, RigidTransform, TimedPose
from .reconstruct import VoxelGrid, reconstruct_batch, run_incremental

__all__ = [
    "AlgorithmError", "BundleIOError", "ContourDepthCutter", "CurveAngleEstimator", "DomainError",
    "ImageCalibration", "InvalidInputError", "NoContourError", "NotFoundError", "PNNReconstructor",
    "PoseDepthCutter", "PoseStream", "RangeError", "RigidTransform", "SpinevolError",
    "TemporalCalibrator", "TimedPose", "UnreliableEstimateError", "VoxelGrid", "reconstruct_batch",
    "run_incremental",
]
