"""Panoptic quality (PQ), segmentation quality (SQ) and recognition quality (RQ).

Scores are reported on a 0-100 scale. A prediction matches a ground-truth
instance when both share a class and their IoU is strictly above 0.5, which
makes matches unique on both sides.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .io import ClassLabel
from .tracking import iou_matrix

MATCH_IOU = 0.5


@dataclass(frozen=True)
class Match:
    pred_id: int
    truth_id: int
    iou: float


@dataclass(frozen=True)
class FrameScore:
    frame_index: int
    tp: int
    fp: int
    fn: int
    tp_iou_sum: float
    pq: float
    sq: float
    rq: float


@dataclass(frozen=True)
class PQReport:
    per_frame: tuple[FrameScore, ...]
    pq_avg: float
    sq_avg: float
    rq_avg: float

    def __len__(self):
        return len(self.per_frame)


def _class_vector(ids, class_map, what):
    try:
        return np.array([ClassLabel(class_map[int(i)]) is ClassLabel.WEFT for i in ids], dtype=bool)
    except KeyError as exc:
        raise DataError(f"{what} id {exc.args[0]} has no class") from None


def match_frame(pred, truth, pred_classes, truth_classes=None):
    """Match instances of one predicted frame against its ground truth.

    Returns ``(matches, fp_ids, fn_ids)``.
    """
    truth_classes = pred_classes if truth_classes is None else truth_classes
    if pred.labels.shape != truth.labels.shape:
        raise DataError(f"dimension mismatch at frame {pred.frame_index}: "
                        f"{pred.labels.shape} vs {truth.labels.shape}")
    p_ids, t_ids, m = iou_matrix(pred.labels, truth.labels)
    if p_ids.size and t_ids.size:
        same = _class_vector(p_ids, pred_classes, "prediction")[:, None] == \
            _class_vector(t_ids, truth_classes, "ground-truth")[None, :]
        hit = same & (m > MATCH_IOU)
    else:
        hit = np.zeros((p_ids.size, t_ids.size), dtype=bool)
    pi, ti = np.nonzero(hit)
    matches = [Match(int(p_ids[i]), int(t_ids[j]), float(m[i, j])) for i, j in zip(pi, ti)]
    fp = sorted(set(p_ids.tolist()) - {mt.pred_id for mt in matches})
    fn = sorted(set(t_ids.tolist()) - {mt.truth_id for mt in matches})
    return matches, fp, fn


def score_counts(tp, fp, fn, iou_sum, frame_index=0):
    if tp + fp + fn == 0:
        return FrameScore(frame_index, 0, 0, 0, 0.0, 100.0, 100.0, 100.0)
    denom = tp + 0.5 * fp + fn
    pq = 100.0 * iou_sum / denom
    sq = 100.0 * iou_sum / tp if tp else 0.0
    rq = 100.0 * tp / denom
    return FrameScore(frame_index, tp, fp, fn, float(iou_sum), pq, sq, rq)


def score_frame(matches, fp, fn, frame_index=0):
    """PQ/SQ/RQ from a frame's matches and unmatched ids (or counts)."""
    n_fp = fp if isinstance(fp, int) else len(fp)
    n_fn = fn if isinstance(fn, int) else len(fn)
    # fsum is exactly rounded, so the result does not depend on match order
    iou_sum = math.fsum(m.iou if isinstance(m, Match) else float(m) for m in matches)
    return score_counts(len(matches), n_fp, n_fn, iou_sum, frame_index)


def score_stack(pred_stack, truth_stack, pred_classes, truth_classes=None):
    if len(pred_stack) != len(truth_stack):
        raise DataError(f"length mismatch: {len(pred_stack)} predicted vs {len(truth_stack)} truth frames")
    if not pred_stack:
        raise DataError("empty stack")
    scores = []
    for k, (p, t) in enumerate(zip(pred_stack, truth_stack)):
        matches, fp, fn = match_frame(p, t, pred_classes, truth_classes)
        scores.append(score_frame(matches, fp, fn, frame_index=k))
    return PQReport(
        tuple(scores),
        float(np.mean([s.pq for s in scores])),
        float(np.mean([s.sq for s in scores])),
        float(np.mean([s.rq for s in scores])),
    )


REPORT_COLUMNS = ("frame", "tp", "fp", "fn", "sq", "rq", "pq")


def write_report_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for s in report.per_frame:
            w.writerow([s.frame_index, s.tp, s.fp, s.fn, f"{s.sq:.10g}", f"{s.rq:.10g}", f"{s.pq:.10g}"])
        counts = [np.mean([getattr(s, k) for s in report.per_frame]) for k in ("tp", "fp", "fn")]
        w.writerow(["mean", *(f"{c:.10g}" for c in counts), f"{report.sq_avg:.10g}",
                    f"{report.rq_avg:.10g}", f"{report.pq_avg:.10g}"])
    return path
