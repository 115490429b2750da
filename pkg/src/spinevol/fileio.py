"""On-disk formats: binary PGM (P5), raw 8-bit volumes, JSON/JSONL, scan bundles.

Bundle layout::

    DIR/frames/000000.pgm ...   8-bit B-mode images
    DIR/frames.jsonl            {"t_ms", "file"} per frame
    DIR/poses.jsonl             {"t_ms", "q": [w,x,y,z], "p": [x,y,z]} per pose
    DIR/calib.json              ImageCalibration
    DIR/truth.json              optional phantom ground truth
"""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .errors import BundleIOError, FrameDecodeError, InvalidInputError
from .geometry import ImageCalibration, PoseStream, RigidTransform, TimedPose

SCHEMA_VERSION = 1

_PGM_HEADER = re.compile(
    rb"^P5(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def write_pgm(path, image):
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise InvalidInputError(f"PGM export needs a 2D uint8 array, got {image.dtype}{image.shape}")
    h, w = image.shape
    try:
        with open(path, "wb") as f:
            f.write(b"P5\n%d %d\n255\n" % (w, h))
            f.write(np.ascontiguousarray(image).tobytes())
    except OSError as exc:
        raise BundleIOError(f"cannot write PGM ({exc.strerror})", path) from exc


def read_pgm(path):
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise BundleIOError(f"cannot read PGM ({exc.strerror})", path) from exc
    m = _PGM_HEADER.match(buf)
    if m is None:
        raise BundleIOError("not a binary PGM (P5) file", path)
    w, h, maxval = (int(g) for g in m.groups())
    if maxval > 255:
        raise BundleIOError("only 8-bit PGM is supported", path)
    if len(buf) - m.end() < w * h:
        raise BundleIOError("truncated PGM pixel data", path)
    return np.frombuffer(buf, dtype=np.uint8, count=w * h, offset=m.end()).reshape(h, w).copy()


def write_json(path, obj):
    obj = dict(obj)
    obj.setdefault("schema_version", SCHEMA_VERSION)
    try:
        with open(path, "w") as f:
            json.dump(obj, f, indent=2)
            f.write("\n")
    except OSError as exc:
        raise BundleIOError(f"cannot write JSON ({exc.strerror})", path) from exc


def read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as exc:
        raise BundleIOError(f"cannot read JSON ({exc.strerror})", path) from exc
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"invalid JSON in {path}: {exc}") from exc


def read_jsonl(path):
    rows = []
    try:
        with open(path) as f:
            for n, line in enumerate(f, 1):
                line = line.strip()
                if line:
                    try:
                        rows.append(json.loads(line))
                    except json.JSONDecodeError as exc:
                        raise InvalidInputError(f"{path}:{n}: {exc}") from exc
    except OSError as exc:
        raise BundleIOError(f"cannot read JSONL ({exc.strerror})", path) from exc
    return rows


def write_volume(path, values, meta):
    """Raw uint8 volume, x fastest, then y, then z; meta JSON next to it."""
    values = np.asarray(values, dtype=np.uint8)
    nx, ny, nz = values.shape
    path = Path(path)
    try:
        path.write_bytes(np.ascontiguousarray(values.transpose(2, 1, 0)).tobytes())
    except OSError as exc:
        raise BundleIOError(f"cannot write volume ({exc.strerror})", path) from exc
    meta = dict(meta)
    meta["dims"] = [nx, ny, nz]
    write_json(volume_meta_path(path), meta)


def meta_path(path):
    """Sidecar metadata file: the data file's full name plus ``.json``."""
    return Path(str(path) + ".json")


volume_meta_path = meta_path


def read_volume(path):
    path = Path(path)
    meta = read_json(volume_meta_path(path))
    try:
        nx, ny, nz = (int(d) for d in meta["dims"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"{volume_meta_path(path)} is not volume metadata (needs dims)") from exc
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise BundleIOError(f"cannot read volume ({exc.strerror})", path) from exc
    if len(raw) != nx * ny * nz:
        raise BundleIOError(f"volume size {len(raw)} does not match dims {meta['dims']}", path)
    values = np.frombuffer(raw, dtype=np.uint8).reshape(nz, ny, nx).transpose(2, 1, 0).copy()
    return values, meta


def pose_record(t, transform):
    return {"t_ms": float(t), "q": [float(v) for v in transform.rotation],
            "p": [float(v) for v in transform.translation]}


def pose_from_record(rec):
    try:
        return TimedPose(float(rec["t_ms"]), RigidTransform(rec["q"], rec["p"]))
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"malformed pose record {rec!r}") from exc


class ScanBundle:
    """Read access to a scan directory. Frames are decoded lazily."""

    def __init__(self, directory):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise BundleIOError("bundle directory not found", self.directory)
        frames = read_jsonl(self.directory / "frames.jsonl")
        self.frame_times = np.array([float(r["t_ms"]) for r in frames])
        self.frame_files = [self.directory / r["file"] for r in frames]
        if np.any(np.diff(self.frame_times) < 0):
            raise InvalidInputError("frame timestamps must be non-decreasing")
        pose_path = self.directory / "poses.jsonl"
        self.pose_records = read_jsonl(pose_path) if pose_path.exists() else []
        self.calib = ImageCalibration.from_dict(read_json(self.directory / "calib.json"))
        truth_path = self.directory / "truth.json"
        self.truth = read_json(truth_path) if truth_path.exists() else None

    def __len__(self):
        return len(self.frame_files)

    def poses(self):
        return PoseStream([pose_from_record(r) for r in self.pose_records])

    def read_frame(self, i):
        path = self.frame_files[i]
        if not path.exists():
            raise FrameDecodeError("missing frame file", i, path)
        try:
            return self.calib.extract_bmode(read_pgm(path))
        except BundleIOError as exc:
            raise FrameDecodeError(str(exc), i, path) from exc

    def iter_frames(self):
        for i in range(len(self)):
            yield self.read_frame(i)

    def frames(self):
        return [self.read_frame(i) for i in range(len(self))]

    def update_calibration(self, calib):
        write_json(self.directory / "calib.json", calib.to_dict())
        self.calib = calib


def write_bundle(directory, frames, frame_times, poses, calib, truth=None):
    """Write a complete bundle. ``poses`` is a sequence of :class:`TimedPose`."""
    directory = Path(directory)
    try:
        (directory / "frames").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise BundleIOError(f"cannot create bundle ({exc.strerror})", directory) from exc
    lines = []
    for i, (frame, t) in enumerate(zip(frames, frame_times)):
        name = f"frames/{i:06d}.pgm"
        write_pgm(directory / name, frame)
        lines.append(json.dumps({"t_ms": float(t), "file": name}))
    _write_lines(directory / "frames.jsonl", lines)
    _write_lines(directory / "poses.jsonl",
                 [json.dumps(pose_record(p.t, p.transform)) for p in poses])
    write_json(directory / "calib.json", calib.to_dict())
    if truth is not None:
        write_json(directory / "truth.json", truth)
    return directory


def _write_lines(path, lines):
    try:
        with open(path, "w") as f:
            for line in lines:
                f.write(line + "\n")
    except OSError as exc:
        raise BundleIOError(f"cannot write ({exc.strerror})", path) from exc
