"""``spinevol`` command line.

Settings resolve as command-line flag, then ``SPINEVOL_<NAME>`` environment
variable, then built-in default. Exit status: 0 ok, 2 invalid input,
3 algorithmic failure, 4 I/O error. Every JSON document written carries
``schema_version``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BundleIOError, InvalidInputError, RangeError, SpinevolError
from .fileio import SCHEMA_VERSION, ScanBundle, read_json, read_volume, write_bundle, write_json
from .geometry import PoseStream
from .metrics import DEFAULT_BAND_MM as ANGLE_BAND_MM
from .metrics import auto_centerline_angle, correlate_reports, manual_angle
from .phantom import (PhantomScene, default_calibration, make_flat_plate_scan, make_scan, scoliotic_scene)
from .pipeline import SEGMENT_METHODS, cut_profile, reconstruct_scan
from .project import ProjectionImage, coronal_projection, lump_visibility, project_volume, vpi_fixed_depth
from .reconstruct import export_slices, save_volume
from .segment import DEFAULT_BAND_MM, DEFAULT_LEAD_MM, DEFAULT_WINDOW, Alg1Params
from .tempcal import calibrate_bundle

log = logging.getLogger("spinevol")


def env(name, default, kind=float):
    """Default for a flag: ``SPINEVOL_<NAME>`` if set, else ``default``."""
    raw = os.environ.get(f"SPINEVOL_{name}")
    if raw is None:
        return default
    try:
        return kind(raw)
    except ValueError:
        raise InvalidInputError(f"SPINEVOL_{name}={raw!r} is not a valid {kind.__name__}") from None


def emit(obj, out=None):
    obj = dict(obj)
    obj.setdefault("schema_version", SCHEMA_VERSION)
    if out:
        write_json(out, obj)
    print(json.dumps(obj, indent=2, default=float))


# ---------------------------------------------------------------- phantom

def _load_scene(args):
    if args.scene:
        scene = PhantomScene.from_dict(read_json(args.scene))
    else:
        scene = PhantomScene()
    if args.curve_angle is not None:
        kw = scene.to_dict()
        kw.pop("centerline")
        scene = scoliotic_scene(args.curve_angle, args.phase, **kw)
    return scene


def _calibration(args):
    s = args.mm_per_px
    w = int(round(559 * 0.1 / s))
    h = int(round(699 * 0.1 / s))
    return default_calibration(shape=(h, w), scale=(s, s))


def cmd_phantom_gen(args):
    if args.frames < 2:
        raise InvalidInputError(f"--frames must be >= 2, got {args.frames}")
    scene = _load_scene(args)
    scan = make_scan(scene, args.path, args.frames, args.tilt, args.latency, args.seed, _calibration(args))
    write_bundle(args.out, scan.frames, scan.frame_times, scan.poses, scan.calib, scan.truth.to_dict())
    emit({"bundle": str(args.out), "frames": args.frames, "true_curve_angle_deg": scan.truth.true_curve_angle_deg,
          "latency_ms": args.latency})


def cmd_phantom_flat(args):
    if args.frames < 2:
        raise InvalidInputError(f"--frames must be >= 2, got {args.frames}")
    scan = make_flat_plate_scan(args.amplitude, args.frequency, args.plate_depth, args.frames, args.latency,
                                args.seed)
    write_bundle(args.out, scan.frames, scan.frame_times, scan.poses, scan.calib, scan.truth.to_dict())
    emit({"bundle": str(args.out), "frames": args.frames, "latency_ms": args.latency})


# ---------------------------------------------------------------- calibrate

def cmd_calibrate_temporal(args):
    bundle = ScanBundle(args.bundle)
    if len(bundle) == 0:
        raise InvalidInputError("bundle has no frames")
    lag, rho = calibrate_bundle(bundle, args.max_lag)
    bundle.update_calibration(bundle.calib.replace(latency_ms=lag))
    emit({"latency_ms": lag, "correlation": rho, "bundle": str(args.bundle)}, args.out)


# ---------------------------------------------------------------- reconstruct

def matched_poses(bundle, latency_ms):
    """Pose for each frame at ``t + latency``; frames the pose stream does not cover are dropped."""
    stream = bundle.poses()
    keep, poses = [], []
    for i, t in enumerate(bundle.frame_times):
        try:
            poses.append(stream.interpolate(t + latency_ms))
            keep.append(i)
        except RangeError:
            continue
    return keep, poses


def _bundle_scan(args):
    bundle = ScanBundle(args.bundle)
    if len(bundle) == 0:
        raise InvalidInputError("bundle has no frames")
    if not bundle.pose_records:
        raise InvalidInputError("bundle has no poses")
    latency = bundle.calib.latency_ms if args.latency is None else args.latency
    keep, poses = matched_poses(bundle, latency)
    if not keep:
        raise InvalidInputError("no frame falls inside the pose stream's time range")
    if len(keep) < len(bundle):
        log.warning("dropping %d frames without a pose", len(bundle) - len(keep))

    def frames():
        for i in keep:
            yield bundle.read_frame(i)

    return bundle, frames, poses, len(bundle) - len(keep)


def _alg1(args):
    return Alg1Params(args.K, args.D, args.L, args.axis)


def cmd_reconstruct(args):
    bundle, frames, poses, dropped = _bundle_scan(args)
    calib = bundle.calib
    profile = cut_profile(args.segment, frames(), poses, calib, args.band, _alg1(args), args.depth,
                          args.window, args.lead)
    grid, stats = reconstruct_scan(frames(), poses, calib, profile, args.voxel_mm, args.mode, args.workers,
                                   args.hole_radius, args.compound)
    save_volume(grid, args.out)
    if args.slices:
        stats["slices"] = export_slices(grid, args.slices)
    if profile is not None and args.profile_out:
        write_json(args.profile_out, {"source": profile.source, "band_mm": profile.band_mm,
                                      "cuts": profile.records()})
    stats.update({"volume": str(args.out), "dims": list(grid.dims), "segment": args.segment,
                  "mode": args.mode, "frames_without_pose": dropped})
    emit(stats)


# ---------------------------------------------------------------- project

def cmd_project(args):
    if args.volume is None or args.out is None:
        raise InvalidInputError("project needs --volume and --out (or a vpi/visibility subcommand)")
    values, meta = read_volume(args.volume)
    proj = project_volume(values, meta, args.mode)
    proj.save(args.out)
    emit({"projection": str(args.out), "shape": list(proj.shape), "mm_per_pixel": proj.mm_per_pixel,
          "origin": list(proj.origin), "mode": args.mode})


def cmd_project_vpi(args):
    bundle, frames, poses, _ = _bundle_scan(args)
    proj = vpi_fixed_depth(frames(), poses, bundle.calib, args.depth, args.band, args.voxel_mm,
                           hole_radius=args.hole_radius)
    proj.save(args.out)
    emit({"projection": str(args.out), "depth_mm": args.depth, "band_mm": args.band,
          "shape": list(proj.shape), "mm_per_pixel": proj.mm_per_pixel, "origin": list(proj.origin)})


def cmd_project_visibility(args):
    proj = ProjectionImage.load(args.proj)
    truth = read_json(args.truth)
    if "lump_centers" not in truth:
        raise InvalidInputError(f"{args.truth} has no lump_centers")
    centers = np.asarray(truth["lump_centers"], dtype=np.float64)
    inside = [proj.contains(x, y) for x, y in centers]
    scores = lump_visibility(proj, centers[inside], args.radius)
    emit({"projection": str(args.proj), "radius_mm": args.radius, "scores": scores.tolist(),
          "lump_centers": centers[inside].tolist(), "min_score": float(scores.min()),
          "mean_score": float(scores.mean())}, args.out)


# ---------------------------------------------------------------- measure

def cmd_measure(args):
    if args.proj is None:
        raise InvalidInputError("measure needs --proj (or the correlate subcommand)")
    if bool(args.lines) == bool(args.auto):
        raise InvalidInputError("choose exactly one of --lines FILE or --auto")
    if args.lines:
        m = manual_angle(read_json(args.lines))
    else:
        m = auto_centerline_angle(ProjectionImage.load(args.proj), args.band)
    report = m.to_dict()
    report["projection"] = str(args.proj)
    truth = args.truth_angle
    if truth is None and args.truth:
        truth = read_json(args.truth).get("true_curve_angle_deg")
    report["true_angle_deg"] = truth
    emit(report, args.out)


def cmd_measure_correlate(args):
    emit(correlate_reports(args.reports), args.out)


# ---------------------------------------------------------------- bench

def cmd_bench_ingest(args):
    from .bench import ingest, synthetic_ingest
    if args.bundle:
        bundle, frames, poses, _ = _bundle_scan(args)
        stats = ingest(frames(), poses, bundle.calib, args.voxel_mm, args.workers)
    else:
        stats = synthetic_ingest(args.frames, workers=args.workers, seed=args.seed, voxel_mm=args.voxel_mm)
    stats["floor_fps"] = args.floor
    stats["meets_floor"] = bool(stats["fps"] >= args.floor)
    emit(stats, args.out)


def cmd_bench_tracker(args):
    from .tracker import benchmark
    if args.frames < 2:
        raise InvalidInputError("--frames must be >= 2")
    emit(benchmark(args.frames, margin=args.margin, seed=args.seed), args.out)


# ---------------------------------------------------------------- parser

def _recon_flags(p, with_segment=True):
    p.add_argument("--bundle", required=True, type=Path, help="scan bundle directory")
    p.add_argument("--voxel-mm", type=float, default=env("VOXEL_MM", 1.0), help="voxel edge (mm), default 1.0")
    p.add_argument("--hole-radius", type=int, default=env("HOLE_RADIUS", 2, int),
                   help="hole-fill Chebyshev radius in voxels (0 disables)")
    p.add_argument("--latency", type=float, default=None,
                   help="pose latency override (ms); default: calib.json latency_ms")
    if with_segment:
        p.add_argument("--mode", choices=("incremental", "batch"), default=env("MODE", "incremental", str))
        p.add_argument("--segment", choices=SEGMENT_METHODS, default=env("SEGMENT", "none", str))
        p.add_argument("--K", type=float, default=env("K", 0.04), help="cut slope, mm per mm of offset")
        p.add_argument("--D", type=float, default=env("D", 35.0), help="cut at mid-back (mm)")
        p.add_argument("--L", type=float, default=env("L", 500.0), help="back length (mm)")
        p.add_argument("--axis", choices=("x", "y", "z"), default=env("AXIS", "x", str),
                       help="camera axis along which the probe offset is measured")
        p.add_argument("--band", type=float, default=env("BAND_MM", DEFAULT_BAND_MM), help="kept band (mm)")
        p.add_argument("--lead", type=float, default=env("LEAD_MM", DEFAULT_LEAD_MM),
                       help="alg2: cut this far above the detected surface (mm)")
        p.add_argument("--window", type=int, default=env("WINDOW", DEFAULT_WINDOW, int),
                       help="alg2 median window (frames, odd)")
        p.add_argument("--depth", type=float, default=None, help="fixed cut depth (mm) for --segment fixed")
        p.add_argument("--workers", type=int, default=env("WORKERS", 1, int))
        p.add_argument("--compound", choices=("mean", "max"), default=env("COMPOUND", "mean", str))


def build_parser():
    ap = argparse.ArgumentParser(prog="spinevol", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    ph = sub.add_parser("phantom", help="synthetic scans").add_subparsers(dest="phantom_cmd", required=True)
    g = ph.add_parser("gen", help="spine phantom sweep -> bundle")
    g.add_argument("--scene", type=Path, help="scene JSON (PhantomScene fields); default scene if omitted")
    g.add_argument("--frames", type=int, default=env("FRAMES", 3000, int))
    g.add_argument("--tilt", type=float, default=env("TILT_DEG", 0.0), help="tilt jitter (deg)")
    g.add_argument("--latency", type=float, default=env("LATENCY_MS", 0.0), help="injected pose latency (ms)")
    g.add_argument("--seed", type=int, default=env("SEED", 0, int))
    g.add_argument("--path", choices=("serpentine", "single"), default="serpentine")
    g.add_argument("--curve-angle", type=float, default=None, help="replace the centerline by a curve of this angle")
    g.add_argument("--phase", type=float, default=0.0, help="phase (rad) of the --curve-angle centerline")
    g.add_argument("--mm-per-px", type=float, default=env("MM_PER_PX", 0.1),
                   help="pixel size; frame size scales to keep the same field of view")
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(func=cmd_phantom_gen)
    f = ph.add_parser("flat", help="flat-plate bobbing fixture -> bundle")
    f.add_argument("--frames", type=int, default=120)
    f.add_argument("--latency", type=float, default=env("LATENCY_MS", 0.0))
    f.add_argument("--amplitude", type=float, default=10.0, help="vertical motion amplitude (mm)")
    f.add_argument("--frequency", type=float, default=1.0, help="motion frequency (Hz)")
    f.add_argument("--plate-depth", type=float, default=35.0)
    f.add_argument("--seed", type=int, default=env("SEED", 0, int))
    f.add_argument("--out", type=Path, required=True)
    f.set_defaults(func=cmd_phantom_flat)

    ca = sub.add_parser("calibrate", help="calibration").add_subparsers(dest="cal_cmd", required=True)
    t = ca.add_parser("temporal", help="estimate latency from a flat-plate bundle; writes calib.json")
    t.add_argument("--bundle", type=Path, required=True)
    t.add_argument("--max-lag", type=float, default=env("MAX_LAG_MS", 250.0), help="search range (ms)")
    t.add_argument("--out", type=Path, help="also write the result JSON here")
    t.set_defaults(func=cmd_calibrate_temporal)

    r = sub.add_parser("reconstruct", help="bundle -> raw volume")
    _recon_flags(r)
    r.add_argument("--out", type=Path, required=True, help="volume.raw (meta goes to volume.json)")
    r.add_argument("--slices", type=Path, help="also export x slices as PGM into this directory")
    r.add_argument("--profile-out", type=Path, help="write the cut profile JSON")
    r.set_defaults(func=cmd_reconstruct)

    pj = sub.add_parser("project", help="coronal projection of a volume (or vpi / visibility)")
    pj.add_argument("--volume", type=Path)
    pj.add_argument("--mode", choices=("max", "mean"), default="max")
    pj.add_argument("--out", type=Path)
    pj.set_defaults(func=cmd_project)
    pjs = pj.add_subparsers(dest="project_cmd")
    v = pjs.add_parser("vpi", help="fixed-depth volume projection of a bundle")
    _recon_flags(v, with_segment=False)
    v.add_argument("--depth", type=float, default=35.0)
    v.add_argument("--band", type=float, default=env("BAND_MM", DEFAULT_BAND_MM))
    v.add_argument("--out", type=Path, required=True)
    v.set_defaults(func=cmd_project_vpi)
    vis = pjs.add_parser("visibility", help="lump contrast scores of a projection")
    vis.add_argument("--proj", type=Path, required=True)
    vis.add_argument("--truth", type=Path, required=True, help="truth.json with lump_centers")
    vis.add_argument("--radius", type=float, default=7.0)
    vis.add_argument("--out", type=Path)
    vis.set_defaults(func=cmd_project_visibility)

    me = sub.add_parser("measure", help="curve angle of a projection (or correlate reports)")
    me.add_argument("--proj", type=Path)
    me.add_argument("--lines", type=Path, help="JSON with 'upper'/'lower' line endpoints (mm)")
    me.add_argument("--auto", action="store_true", help="automatic centerline measurement")
    me.add_argument("--band", type=float, default=env("ANGLE_BAND_MM", ANGLE_BAND_MM))
    me.add_argument("--truth", type=Path, help="truth.json; copies true_curve_angle_deg into the report")
    me.add_argument("--truth-angle", type=float, default=None)
    me.add_argument("--out", type=Path)
    me.set_defaults(func=cmd_measure)
    mes = me.add_subparsers(dest="measure_cmd")
    co = mes.add_parser("correlate", help="pearson r of true vs measured over a report directory")
    co.add_argument("--reports", type=Path, required=True)
    co.add_argument("--out", type=Path)
    co.set_defaults(func=cmd_measure_correlate)

    be = sub.add_parser("bench", help="benchmarks").add_subparsers(dest="bench_cmd", required=True)
    bi = be.add_parser("ingest", help="streaming reconstruction throughput")
    bi.add_argument("--bundle", type=Path, help="bundle to ingest; synthetic full-size sweep if omitted")
    bi.add_argument("--frames", type=int, default=3000, help="synthetic frame count")
    bi.add_argument("--workers", type=int, default=env("WORKERS", max(1, os.cpu_count() or 1), int))
    bi.add_argument("--voxel-mm", type=float, default=env("VOXEL_MM", 1.0))
    bi.add_argument("--hole-radius", type=int, default=env("HOLE_RADIUS", 2, int))
    bi.add_argument("--latency", type=float, default=None)
    bi.add_argument("--seed", type=int, default=env("SEED", 0, int))
    bi.add_argument("--floor", type=float, default=15.0, help="fps reported as the pass floor")
    bi.add_argument("--out", type=Path)
    bi.set_defaults(func=cmd_bench_ingest)
    bt = be.add_parser("tracker", help="ROI vs full-frame marker detection timing")
    bt.add_argument("--frames", type=int, default=1000)
    bt.add_argument("--margin", type=int, default=32)
    bt.add_argument("--seed", type=int, default=env("SEED", 0, int))
    bt.add_argument("--out", type=Path)
    bt.set_defaults(func=cmd_bench_tracker)
    return ap


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SpinevolError as exc:   # bad SPINEVOL_* value while building defaults
        print(f"spinevol: error: {exc}", file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        for name in ("out", "profile_out"):
            target = getattr(args, name, None)
            if target is not None:
                Path(target).parent.mkdir(parents=True, exist_ok=True)
        args.func(args)
    except SpinevolError as exc:
        print(f"spinevol: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"spinevol: error: {BundleIOError(exc.strerror or str(exc), exc.filename)}", file=sys.stderr)
        return BundleIOError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
