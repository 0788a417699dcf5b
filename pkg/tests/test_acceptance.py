"""Acceptance criteria 1-9, one test each.

Each test records a one-line detail; ``conftest.py`` prints a PASS/FAIL line
per criterion in the terminal summary, and each test also prints its line
(visible with ``-s``).
"""
import time
import tracemalloc

import numpy as np
import pytest

from oracles import iou_fraction, match_enumerate, pixel_sets
from wovenseg import blur, correction, io, metrics, synth, tracking, volume
from wovenseg.io import ClassLabel, LabelFrame

SIX_PLY = synth.WeaveSpec(n_weft_layers=6, n_weft_per_layer=3, n_warp=8,
                          frame_width=512, frame_height=256, n_frames=200)


def _report(record_property, ok, detail):
    record_property("detail", detail)
    print(f"{'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def _run_corrupted(spec, err):
    """Track, score, correct and rescore one corrupted weave."""
    _, truth, manifest = synth.generate_weave(spec)
    preds, injections = synth.inject_errors(truth, err)
    classes = synth.classes_with_injections(manifest.class_map, injections)
    tracked = tracking.track(preds, classes)
    before = metrics.score_stack(tracked.frames, truth, tracked.class_map, manifest.truth_classes)
    fixed, log = correction.correct(tracked)
    after = metrics.score_stack(fixed.frames, truth, fixed.class_map, manifest.truth_classes)
    return dict(spec=spec, err=err, truth=truth, injections=injections, tracked=tracked,
                fixed=fixed, log=log, before=before, after=after)


@pytest.fixture(scope="module")
def six_ply_corrupted():
    err = synth.ErrorSpec(fp_count=10, fn_gap_count=5, fn_gap_length=2, fn_gap_length_max=4, seed=7)
    return _run_corrupted(SIX_PLY, err)


@pytest.fixture(scope="module")
def seeded_corpus():
    runs = []
    for seed in range(20):
        spec = synth.WeaveSpec(n_weft_layers=4, n_weft_per_layer=3, n_warp=8, frame_width=256,
                               frame_height=192, n_frames=120, seed=seed, size_jitter=0.1)
        err = synth.ErrorSpec(fp_count=4 + seed % 5, fn_gap_count=2 + seed % 4, fn_gap_length=1,
                              fn_gap_length_max=4, jitter_px=seed % 3, seed=1000 + seed)
        runs.append(_run_corrupted(spec, err))
    return runs


def _random_frame_pair(rng):
    h, w = rng.integers(1, 9, size=2)
    n = int(rng.integers(0, 5))
    truth = rng.integers(0, n + 1, size=(h, w)).astype(np.uint16)
    pred = truth.copy()
    flip = rng.random((h, w)) < rng.uniform(0, 0.5)
    pred[flip] = rng.integers(0, 5, size=int(flip.sum()))
    pc = {i: ClassLabel.WEFT if rng.random() < 0.7 else ClassLabel.WARP for i in range(1, 5)}
    tc = {i: ClassLabel.WEFT if rng.random() < 0.7 else ClassLabel.WARP for i in range(1, 5)}
    return LabelFrame(pred, 0), LabelFrame(truth, 0), pc, tc


def test_criterion_1_pq_identity(record_property, six_ply_corrupted, seeded_corpus):
    scores = []
    for run in [six_ply_corrupted, *seeded_corpus]:
        scores += run["before"].per_frame + run["after"].per_frame
    rng = np.random.default_rng(1)
    for _ in range(2000):
        p, t, pc, tc = _random_frame_pair(rng)
        scores.append(metrics.score_frame(*metrics.match_frame(p, t, pc, tc)))
    worst = max(abs(s.pq - s.sq * s.rq / 100.0) for s in scores)
    anchor = 85.6 * 97.5 / 100.0
    ok = worst <= 1e-9 and round(anchor, 1) == 83.5 and abs(anchor - 83.46) < 1e-9
    _report(record_property, ok,
            f"{len(scores)} frame scores, max |PQ - SQ*RQ/100| = {worst:.2e}; 85.6 x 97.5 / 100 = {anchor:.2f}")


def test_criterion_2_match_oracle(record_property):
    rng = np.random.default_rng(2)
    cases = [_random_frame_pair(rng) for _ in range(1000)]
    t0 = time.perf_counter()
    mismatches = 0
    for p, t, pc, tc in cases:
        matches, fp, fn = metrics.match_frame(p, t, pc, tc)
        exp_m, exp_fp, exp_fn = match_enumerate(p.labels, t.labels, pc, tc)
        got = sorted((m.pred_id, m.truth_id, m.iou) for m in matches)
        if got != [(a, b, float(v)) for a, b, v in exp_m] or fp != exp_fp or fn != exp_fn:
            mismatches += 1
        ps, ts = pixel_sets(p.labels), pixel_sets(t.labels)
        for a in ps.values():
            for b in ts.values():
                if tracking.iou(a, b) != float(iou_fraction(a, b)):
                    mismatches += 1
    elapsed = time.perf_counter() - t0
    _report(record_property, mismatches == 0 and elapsed < 5.0,
            f"1000 random frames, {mismatches} disagreements, {elapsed:.2f} s (< 5 s)")


def test_criterion_3_perfect_recovery(record_property):
    t0 = time.perf_counter()
    preds, truth, manifest = synth.generate_weave(SIX_PLY)
    tracked = tracking.track(preds, manifest.class_map, 0.4)
    report = metrics.score_stack(tracked.frames, truth, tracked.class_map, manifest.truth_classes)
    elapsed = time.perf_counter() - t0
    ok = tracked.n_yarns == 26 and abs(report.pq_avg - 100.0) <= 1e-9 and elapsed < 60.0
    _report(record_property, ok,
            f"{tracked.n_yarns} yarns (want 26), PQ_avg {report.pq_avg:.12g}, {elapsed:.1f} s (< 60 s)")


def test_criterion_4_corrective_efficacy(record_property, six_ply_corrupted):
    run = six_ply_corrupted
    tracked, fixed, log, truth = run["tracked"], run["fixed"], run["log"], run["truth"]
    fps = [r for r in run["injections"] if r.kind == "FP"]
    gaps = [r for r in run["injections"] if r.kind == "FN"]
    removed = {(r.frame, r.yarn) for r in log.removals}
    fp_removed = 0
    for r in fps:
        z = r.frames[0]
        where = truth[z].labels == 0
        ids = set(np.unique(tracked.frames[z].labels[where & (tracked.frames[z].labels != 0)]).tolist())
        # the injected blob is the tracked mask on truth background with the logged pixel count
        hit = [(z, y) for y in ids if (z, y) in removed and
               int((tracked.frames[z].labels == y).sum()) == r.pixels]
        if hit and not (fixed.frames[z].labels[tracked.frames[z].labels == hit[0][1]]).any():
            fp_removed += 1
    gap_frames = [(g.yarn, z) for g in gaps for z in g.frames]
    truth_classes = synth.WeaveLayout(run["spec"]).class_map
    filled = 0
    for yarn, z in gap_frames:
        _, _, fn = metrics.match_frame(fixed.frames[z], truth[z], fixed.class_map, truth_classes)
        filled += yarn not in fn
    before, after = run["before"].rq_avg, run["after"].rq_avg
    ok = (len(fps) == 10 and fp_removed == 10 and len(log.removals) == 10 and len(gaps) == 5
          and all(2 <= len(g.frames) <= 4 for g in gaps) and filled == len(gap_frames)
          and before < after and abs(after - 100.0) <= 0.1)
    _report(record_property, ok,
            f"FPs removed {fp_removed}/10 (log {len(log.removals)}), gap frames filled "
            f"{filled}/{len(gap_frames)}, RQ_avg {before:.3f} -> {after:.3f}")


def test_criterion_5_correction_never_hurts(record_property, seeded_corpus):
    worse, sq_changed = [], 0
    for i, run in enumerate(seeded_corpus):
        if run["after"].pq_avg < run["before"].pq_avg:
            worse.append(i)
        touched = run["log"].modified_frames()
        for b, a in zip(run["before"].per_frame, run["after"].per_frame):
            if b.frame_index not in touched and a.sq != b.sq:
                sq_changed += 1
    gain = np.mean([r["after"].pq_avg - r["before"].pq_avg for r in seeded_corpus])
    _report(record_property, not worse and sq_changed == 0,
            f"{len(seeded_corpus)} seeded weaves, PQ_avg decreased in {len(worse)}, "
            f"SQ changed on {sq_changed} unflagged frames, mean PQ_avg gain {gain:.3f}")


def _shifted_pair(width, a_cols, b_cols):
    f0 = np.zeros((1, width), dtype=np.uint16)
    f1 = np.zeros((1, width), dtype=np.uint16)
    f0[0, a_cols[0]:a_cols[1]] = 1
    f1[0, b_cols[0]:b_cols[1]] = 1
    return [LabelFrame(f0, 0), LabelFrame(f1, 1)]


def test_criterion_6_threshold_boundary(record_property):
    cmap = {1: ClassLabel.WARP}
    brk = _shifted_pair(8, (0, 4), (2, 6))          # |A&B| = 2, |A|B| = 6
    cont = _shifted_pair(20, (0, 14), (5, 20))      # |A&B| = 9, |A|B| = 20
    iou_brk = iou_fraction(*(pixel_sets(f.labels)[1] for f in brk))
    iou_cont = iou_fraction(*(pixel_sets(f.labels)[1] for f in cont))
    y_brk = tracking.track(brk, cmap, 0.4).n_yarns
    y_cont = tracking.track(cont, cmap, 0.4).n_yarns
    ok = float(iou_brk) == 1 / 3 and float(iou_cont) == 0.45 and y_brk == 2 and y_cont == 1
    _report(record_property, ok,
            f"IoU {iou_brk} -> {y_brk} yarns (break), IoU {float(iou_cont)} -> {y_cont} yarn (continues)")


def test_criterion_7_blur_contract(record_property):
    k = blur.build_kernel(1.5)
    total = abs(k.weights.sum() - 1.0)
    const = io.GreyFrame(np.full((40, 50), 0.37))
    c_err = np.abs(blur.blur(const, k).intensities - 0.37).max()
    imp = np.zeros((41, 41))
    imp[20, 20] = 1.0
    out = blur.blur(io.GreyFrame(imp), k).intensities
    r = k.radius
    i_err = np.abs(out[20 - r:21 + r, 20 - r:21 + r] - k.weights).max()
    ok = total <= 1e-9 and c_err <= 1e-9 and i_err <= 1e-9
    _report(record_property, ok,
            f"radius {r}, |sum-1| {total:.1e}, constant err {c_err:.1e}, impulse err {i_err:.1e}")


def test_criterion_8_geometry_vs_generator(record_property):
    _, truth, manifest = synth.generate_weave(SIX_PLY)
    layout = synth.WeaveLayout(SIX_PLY)
    vol = volume.assemble_volume(truth, manifest)
    worst = 0.0
    n_warps = 0
    for path in volume.extract_paths(vol):
        y = layout.by_id(path.yarn)
        if y.cls is not ClassLabel.WARP:
            continue
        n_warps += 1
        expected = layout.warp_center_row(y, np.asarray(path.frames))
        worst = max(worst, float(np.abs(path.points[:, 1] / vol.pixel_size_um - expected).max()))
    pairs = set(volume.contact_regions(vol))
    adjacency = synth.layup_adjacency(SIX_PLY)
    dist = volume.area_distribution(vol)
    counted = sum(r.pixels for r in dist.records)
    nonzero = int(np.count_nonzero(vol.labels))
    ok = n_warps == 8 and worst < 0.5 and pairs == adjacency and counted == nonzero
    _report(record_property, ok,
            f"warp centroid max error {worst:.3f} px over {n_warps} warps, contact pairs "
            f"{len(pairs)} == adjacency {len(adjacency)}: {pairs == adjacency}, "
            f"area pixels {counted} vs voxels {nonzero}")


def test_criterion_9_format_round_trips(record_property, tmp_path):
    rng = np.random.default_rng(9)
    # label stack through 16-bit PNG, full value range
    small = rng.integers(0, 65536, size=(6, 37, 53), dtype=np.uint16)
    small[0, 0, 0] = 65535
    paths = io.save_label_stack(io.frames_from_array(small), tmp_path / "stack")
    m = io.DatasetManifest(paths, 16.1, 16.1, {})
    png_ok = np.array_equal(io.stack_array(io.load_label_stack(m)), small)

    tracemalloc.start()
    t0 = time.perf_counter()
    labels = rng.integers(0, 65536, size=(1024, 194, 500), dtype=np.uint16)
    vol = volume.VoxelVolume(labels, 16.1, 16.1)
    volume.export_volume(vol, tmp_path / "big.lvol")
    back = volume.import_volume(tmp_path / "big.lvol")
    same = back == vol and back.dims == (500, 194, 1024)
    del back, vol, labels
    # the same scale through PNG frames
    big = rng.integers(0, 65536, size=(1024, 194, 500), dtype=np.uint16)
    paths = io.save_label_stack(io.frames_from_array(big), tmp_path / "big")
    loaded = io.load_label_stack(io.DatasetManifest(paths, 16.1, 16.1, {}))
    png_big = all(np.array_equal(f.labels, big[i]) for i, f in enumerate(loaded))
    elapsed = time.perf_counter() - t0
    peak = tracemalloc.get_traced_memory()[1]
    tracemalloc.stop()
    ok = png_ok and same and png_big and elapsed < 120 and peak < 1.5e9
    _report(record_property, ok,
            f"PNG stack exact {png_ok and png_big}, LVOL 500x194x1024 exact {same}, "
            f"{elapsed:.1f} s (< 120 s), peak {peak / 1e9:.2f} GB (< 1.5 GB)")
