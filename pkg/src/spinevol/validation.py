"""Input checks shared by the functional API and the estimators."""
from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, InvalidInputError


def check_image(image, name="image", shape=None):
    """Return ``image`` as a 2D uint8 array, raising on anything else."""
    a = np.asarray(image)
    if a.ndim != 2 or a.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 2D array, got shape {a.shape}")
    if a.dtype != np.uint8:
        if not np.issubdtype(a.dtype, np.integer) or a.min() < 0 or a.max() > 255:
            raise InvalidInputError(f"{name} must hold 8-bit values, got {a.dtype}")
        a = a.astype(np.uint8)
    if shape is not None and a.shape != tuple(shape):
        raise DomainError(f"{name} shape {a.shape} does not match calibration {tuple(shape)}")
    return a


def check_frames(frames, calib=None):
    shape = calib.shape if calib is not None else None
    return [check_image(f, f"frame {i}", shape) for i, f in enumerate(frames)]


def check_positive(value, name, allow_zero=False):
    v = float(value)
    if not math.isfinite(v) or v < 0 or (v == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise InvalidInputError(f"{name} must be {bound}, got {value}")
    return v


def check_odd_window(window, minimum=3):
    w = int(window)
    if w != window or w < minimum or w % 2 == 0:
        raise InvalidInputError(f"window must be an odd integer >= {minimum}, got {window}")
    return w


def check_series(t, values, name):
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if t.shape != v.shape:
        raise InvalidInputError(f"{name}: time and value arrays differ in length")
    if t.size < 2 or np.any(np.diff(t) <= 0):
        raise InvalidInputError(f"{name}: times must be strictly increasing with >= 2 samples")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
        raise InvalidInputError(f"{name}: non-finite samples")
    return t, v
