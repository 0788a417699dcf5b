"""Command-line front end.

Exit codes: 0 success, 2 bad arguments, 3 invalid data, 4 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

from .blur import DEFAULT_SIGMA, blur as blur_image, build_kernel
from . import correction, io, metrics, synth, tracking, volume
from ._accel import BACKEND
from .errors import DataError

log = logging.getLogger("wovenseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 2, 3, 4
THREADS_ENV = "WOVENSEG_THREADS"


class UsageError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


def _threads(args):
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if n < 1:
            raise UsageError(f"{THREADS_ENV} must be positive")
        return n
    return 1


# --- shared stage helpers -------------------------------------------------------

def _write_stack(frames, out_dir, source, class_map, threads):
    """Save frames plus a manifest that keeps the source's ground truth."""
    out_dir = Path(out_dir)
    paths = io.save_label_stack(frames, out_dir, threads=threads)
    manifest = io.DatasetManifest(
        frame_paths=[p.resolve() for p in paths],
        pixel_size_um=source.pixel_size_um,
        depth_step_um=source.depth_step_um,
        class_map=dict(class_map),
        ground_truth_paths=[Path(p).resolve() for p in source.ground_truth_paths]
        if source.ground_truth_paths else None,
        ground_truth_class_map=dict(source.truth_classes) if source.ground_truth_paths else None,
    )
    io.save_manifest(manifest, out_dir / "manifest.txt")
    return manifest


def run_track(manifest, out_dir, R, threads):
    frames = io.load_label_stack(manifest, "predictions", threads=threads)
    tracked = tracking.track(frames, manifest.class_map, R)
    _write_stack(tracked.frames, out_dir, manifest, tracked.class_map, threads)
    return tracked


def run_correct(manifest, out_dir, block_size, threads):
    frames = io.load_label_stack(manifest, "predictions", threads=threads)
    tracked = tracking.TrackedStack.from_frames(frames, manifest.class_map)
    corrected, clog = correction.correct(tracked, block_size)
    _write_stack(corrected.frames, out_dir, manifest, corrected.class_map, threads)
    correction.write_log_csv(clog, Path(out_dir) / "corrections.csv")
    correction.write_links_csv(clog, Path(out_dir) / "links.csv")
    return corrected, clog


def run_evaluate(pred_manifest, truth_manifest, out_csv, threads):
    preds = io.load_label_stack(pred_manifest, "predictions", threads=threads)
    if truth_manifest is not None:
        truth = io.load_label_stack(truth_manifest, "predictions", threads=threads)
        truth_classes = truth_manifest.class_map
    else:
        if pred_manifest.ground_truth_paths is None:
            raise UsageError("no ground truth: pass --truth or use a manifest with ground_truth entries")
        truth = io.load_label_stack(pred_manifest, "ground_truth", threads=threads)
        truth_classes = pred_manifest.truth_classes
    report = metrics.score_stack(preds, truth, pred_manifest.class_map, truth_classes)
    if out_csv is not None:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        metrics.write_report_csv(report, out_csv)
    return report


def run_analyze(manifest, out_dir, bins, threads):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = io.load_label_stack(manifest, "predictions", threads=threads)
    vol = volume.assemble_volume(frames, manifest)
    paths = volume.extract_paths(vol)
    contacts = volume.contact_regions(vol)
    dist = volume.area_distribution(vol, bins=bins)
    volume.write_paths_csv(paths, out_dir / "paths.csv")
    volume.write_contacts_csv(contacts, out_dir / "contacts.csv")
    volume.write_areas_csv(dist, out_dir / "areas.csv")
    volume.write_histogram_csv(dist, out_dir / "area_histogram.csv")
    summary = {"n_records": len(dist.records), "mean_um2": dist.mean, "std_um2": dist.std,
               "min_um2": dist.min, "max_um2": dist.max, "n_bins": int(dist.counts.size)}
    (out_dir / "area_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return vol, paths, contacts, dist


def run_export(manifest, out_path, vtk_path, threads):
    frames = io.load_label_stack(manifest, "predictions", threads=threads)
    vol = volume.assemble_volume(frames, manifest)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    volume.export_volume(vol, out_path)
    if vtk_path:
        volume.export_vtk(vol, vtk_path)
    return vol


def _report_dict(report):
    return {"pq_avg": report.pq_avg, "sq_avg": report.sq_avg, "rq_avg": report.rq_avg}


# --- subcommands -------------------------------------------------------------------

def cmd_synth(args):
    spec = synth.WeaveSpec(
        n_weft_layers=args.plies, n_weft_per_layer=args.wefts_per_ply, n_warp=args.warps,
        yarn_half_axes=tuple(args.half_axes), crimp_amplitude=args.crimp_amplitude,
        crimp_wavelength=args.crimp_wavelength, frame_width=args.width, frame_height=args.height,
        n_frames=args.frames, seed=args.seed, size_jitter=args.size_jitter,
        pixel_size_um=args.pixel_size, depth_step_um=args.depth_step,
    )
    err = synth.ErrorSpec(
        fp_count=args.fp, fn_gap_count=args.fn_gaps, fn_gap_length=args.gap_length,
        fn_gap_length_max=args.gap_length_max, jitter_px=args.jitter, seed=args.error_seed,
    )
    preds, truth, manifest = synth.generate_weave(spec)
    preds, injections = synth.inject_errors(truth, err)
    out = Path(args.output)
    threads = _threads(args)
    io.save_label_stack(preds, out / "pred", threads=threads)
    io.save_label_stack(truth, out / "truth", threads=threads)
    manifest.class_map = synth.classes_with_injections(manifest.class_map, injections)
    io.save_manifest(manifest, out / "manifest.txt")
    truth_manifest = io.DatasetManifest(manifest.ground_truth_paths, spec.pixel_size_um,
                                        spec.depth_step_um, dict(manifest.truth_classes))
    io.save_manifest(truth_manifest, out / "truth_manifest.txt")
    synth.write_injection_csv(injections, out / "injections.csv")
    (out / "weave.json").write_text(json.dumps({"weave": asdict(spec), "errors": asdict(err)},
                                               indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(preds)} frames, {spec.n_yarns} yarns, {len(injections)} injections to {out}")
    return EXIT_OK


def cmd_blur(args):
    kernel = build_kernel(args.sigma)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    paths = io.list_images(args.input)
    for p in paths:
        io.write_grey_png(blur_image(io.read_grey_png(p), kernel), out / (p.stem + ".png"))
    print(f"blurred {len(paths)} images with sigma={args.sigma}")
    return EXIT_OK


def cmd_track(args):
    tracked = run_track(io.load_manifest(args.manifest), args.output, args.iou_threshold, _threads(args))
    print(f"tracked {tracked.n_yarns} yarns over {len(tracked.frames)} frames")
    return EXIT_OK


def cmd_correct(args):
    corrected, clog = run_correct(io.load_manifest(args.manifest), args.output, args.block_size,
                                  _threads(args))
    print(f"removed {len(clog.removals)} false positives, filled {len(clog.fills)} frames, "
          f"linked {len(clog.links)} fragments; {corrected.n_yarns} yarns")
    return EXIT_OK


def cmd_evaluate(args):
    truth = io.load_manifest(args.truth) if args.truth else None
    report = run_evaluate(io.load_manifest(args.pred), truth, args.output, _threads(args))
    print(f"PQ_avg={report.pq_avg:.4f} SQ_avg={report.sq_avg:.4f} RQ_avg={report.rq_avg:.4f}")
    return EXIT_OK


def cmd_analyze(args):
    _, paths, contacts, dist = run_analyze(io.load_manifest(args.manifest), args.output, args.bins,
                                           _threads(args))
    print(f"{len(paths)} yarn paths, {len(contacts)} contact pairs, {len(dist.records)} area records")
    return EXIT_OK


def cmd_export(args):
    vol = run_export(io.load_manifest(args.manifest), args.output, args.vtk, _threads(args))
    print(f"exported volume {vol.dims} to {args.output}")
    return EXIT_OK


@contextmanager
def _stage(name, timings):
    t0 = time.perf_counter()
    try:
        yield
    except (DataError, ValueError, OSError) as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = round(time.perf_counter() - t0, 6)


def cmd_pipeline(args):
    manifest = io.load_manifest(args.manifest)
    truth_manifest = io.load_manifest(args.truth) if args.truth else None
    if args.evaluate and truth_manifest is None and manifest.ground_truth_paths is None:
        raise UsageError("--evaluate needs ground truth: add ground_truth entries or pass --truth")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    threads = _threads(args)
    timings, scores = {}, {}
    marker = out / "FAILED"
    if marker.exists():
        marker.unlink()
    try:
        with _stage("track", timings):
            tracked = run_track(manifest, out / "tracked", args.iou_threshold, threads)
        tracked_manifest = io.load_manifest(out / "tracked" / "manifest.txt")
        with _stage("correct", timings):
            corrected, clog = run_correct(tracked_manifest, out / "corrected", args.block_size, threads)
        corrected_manifest = io.load_manifest(out / "corrected" / "manifest.txt")
        if args.evaluate:
            with _stage("evaluate", timings):
                before = run_evaluate(tracked_manifest, truth_manifest, out / "evaluation_tracked.csv", threads)
                after = run_evaluate(corrected_manifest, truth_manifest, out / "evaluation_corrected.csv",
                                     threads)
            scores = {"tracked": _report_dict(before), "corrected": _report_dict(after)}
        with _stage("analyze", timings):
            _, paths, contacts, dist = run_analyze(corrected_manifest, out / "analysis", args.bins, threads)
        with _stage("export", timings):
            vol = run_export(corrected_manifest, out / "volume.lvol",
                             out / "volume.vtk" if args.vtk else None, threads)
    except StageError as exc:
        marker.write_text(f"stage: {exc.stage}\ncause: {exc.cause}\n")
        raise

    summary = {
        "parameters": {"iou_threshold": args.iou_threshold, "block_size": args.block_size,
                       "histogram_bins": args.bins, "threads": threads, "backend": BACKEND},
        "counts": {
            "frames": len(tracked.frames),
            "yarns_tracked": tracked.n_yarns,
            "yarns_corrected": corrected.n_yarns,
            "fp_removed": len(clog.removals),
            "fn_filled": len(clog.fills),
            "fragments_linked": len(clog.links),
            "contact_pairs": len(contacts),
            "area_records": len(dist.records),
            "volume_dims": list(vol.dims),
        },
        "scores": scores,
        "timings_s": timings,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    msg = f"pipeline done: {corrected.n_yarns} yarns"
    if scores:
        msg += (f"; RQ_avg {scores['tracked']['rq_avg']:.3f} -> {scores['corrected']['rq_avg']:.3f}"
                f", PQ_avg {scores['tracked']['pq_avg']:.3f} -> {scores['corrected']['pq_avg']:.3f}")
    print(msg)
    return EXIT_OK


# --- argument parsing --------------------------------------------------------------

def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _threshold(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {text}")
    return v


def _block(text):
    v = int(text)
    if v < 3:
        raise argparse.ArgumentTypeError(f"block size must be at least 3, got {text}")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def build_parser():
    p = argparse.ArgumentParser(
        prog="wovenseg",
        description="Track, correct, score and analyse stacks of instance-labelled yarn frames.",
        epilog="exit codes: 0 ok, 2 bad arguments, 3 invalid data, 4 I/O failure",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, text):
        return sub.add_parser(name, help=text, description=text,
                              formatter_class=argparse.ArgumentDefaultsHelpFormatter)

    def common(sp):
        sp.add_argument("--threads", type=_positive_int, default=None,
                        help=f"worker threads for frame I/O; falls back to ${THREADS_ENV}, then 1")

    s = command("synth", "generate a synthetic plain-weave dataset")
    s.add_argument("--output", required=True)
    s.add_argument("--plies", type=int, default=4)
    s.add_argument("--wefts-per-ply", type=int, default=3)
    s.add_argument("--warps", type=int, default=8)
    s.add_argument("--half-axes", type=float, nargs=2, default=(8.0, 4.0), metavar=("A", "B"))
    s.add_argument("--crimp-amplitude", type=float, default=9.0)
    s.add_argument("--crimp-wavelength", type=float, default=60.0)
    s.add_argument("--width", type=int, default=512)
    s.add_argument("--height", type=int, default=256)
    s.add_argument("--frames", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size-jitter", type=float, default=0.0)
    s.add_argument("--pixel-size", type=_positive_float, default=16.1)
    s.add_argument("--depth-step", type=_positive_float, default=16.1)
    s.add_argument("--fp", type=int, default=0, help="one-frame false positives to inject")
    s.add_argument("--fn-gaps", type=int, default=0, help="dropped-mask gaps to inject")
    s.add_argument("--gap-length", type=int, default=1)
    s.add_argument("--gap-length-max", type=int, default=None)
    s.add_argument("--jitter", type=int, default=0, help="max boundary displacement in px")
    s.add_argument("--error-seed", type=int, default=0)
    common(s)
    s.set_defaults(func=cmd_synth)

    s = command("blur", "Gaussian-blur a directory of greyscale images")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--sigma", type=_positive_float, default=DEFAULT_SIGMA, help="Gaussian sigma in pixels")
    s.set_defaults(func=cmd_blur)

    s = command("track", "IoU-track instances into yarns")
    s.add_argument("--manifest", required=True, help="input dataset manifest")
    s.add_argument("--output", required=True)
    s.add_argument("--iou-threshold", type=_threshold, default=tracking.DEFAULT_IOU_THRESHOLD,
                   help="minimum IoU for an instance to continue a yarn")
    common(s)
    s.set_defaults(func=cmd_track)

    s = command("correct", "remove false positives and fill false negatives")
    s.add_argument("--manifest", required=True, help="input dataset manifest")
    s.add_argument("--output", required=True)
    s.add_argument("--block-size", type=_block, default=correction.DEFAULT_BLOCK_SIZE,
                   help="frames per scanning block")
    common(s)
    s.set_defaults(func=cmd_correct)

    s = command("evaluate", "score predictions with PQ/SQ/RQ")
    s.add_argument("--pred", required=True, help="prediction manifest")
    s.add_argument("--truth", help="ground-truth manifest (default: the prediction manifest's ground_truth)")
    s.add_argument("--output", help="CSV report path")
    common(s)
    s.set_defaults(func=cmd_evaluate)

    s = command("analyze", "yarn paths, contact areas and cross-section areas")
    s.add_argument("--manifest", required=True, help="input dataset manifest")
    s.add_argument("--output", required=True)
    s.add_argument("--bins", type=_positive_int, default=None, help="histogram bins; Sturges' rule if unset")
    common(s)
    s.set_defaults(func=cmd_analyze)

    s = command("export", "write the voxel volume (LVOL, optional legacy VTK)")
    s.add_argument("--manifest", required=True, help="input dataset manifest")
    s.add_argument("--output", required=True)
    s.add_argument("--vtk", help="also write a legacy VTK structured-points file")
    common(s)
    s.set_defaults(func=cmd_export)

    s = command("pipeline", "track, correct, evaluate, analyze and export")
    s.add_argument("--manifest", required=True, help="input dataset manifest")
    s.add_argument("--output", required=True)
    s.add_argument("--truth", help="ground-truth manifest for --evaluate")
    s.add_argument("--evaluate", action="store_true")
    s.add_argument("--iou-threshold", type=_threshold, default=tracking.DEFAULT_IOU_THRESHOLD,
                   help="minimum IoU for an instance to continue a yarn")
    s.add_argument("--block-size", type=_block, default=correction.DEFAULT_BLOCK_SIZE,
                   help="frames per scanning block")
    s.add_argument("--bins", type=_positive_int, default=None, help="histogram bins; Sturges' rule if unset")
    s.add_argument("--vtk", action="store_true", help="also write volume.vtk")
    common(s)
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"wovenseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"wovenseg: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc.cause, OSError) else EXIT_DATA
    except (DataError, ValueError) as exc:
        print(f"wovenseg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"wovenseg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
