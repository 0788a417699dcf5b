import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import match_enumerate, pq_counts
from wovenseg import metrics
from wovenseg.errors import DataError
from wovenseg.io import LabelFrame

from conftest import WARP, WEFT, box, frames_of

grids = arrays(np.uint16, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=st.integers(0, 4))
ALL_WEFT = {i: WEFT for i in range(1, 10)}


def test_identical_frames_all_tp():
    g = box((5, 5), 0, 2, 0, 2, 1)
    box((5, 5), 3, 5, 3, 5, 2, grid=g)
    f = LabelFrame(g, 0)
    matches, fp, fn = metrics.match_frame(f, f, ALL_WEFT)
    assert [m.iou for m in matches] == [1.0, 1.0] and fp == fn == []


def test_iou_exactly_half_is_not_a_match():
    p = LabelFrame(box((1, 4), 0, 1, 0, 2, 1), 0)
    t = LabelFrame(box((1, 4), 0, 1, 0, 4, 1), 0)     # 2 / 4
    matches, fp, fn = metrics.match_frame(p, t, ALL_WEFT)
    assert matches == [] and fp == [1] and fn == [1]
    s = metrics.score_frame(matches, fp, fn)
    assert (s.tp, s.fp, s.fn, s.sq) == (0, 1, 1, 0.0)


def test_wrong_class_is_fp_and_fn():
    f = LabelFrame(box((3, 3), 0, 3, 0, 3, 1), 0)
    matches, fp, fn = metrics.match_frame(f, f, {1: WARP}, {1: WEFT})
    assert matches == [] and fp == [1] and fn == [1]


def test_hand_evaluated_score():
    s = metrics.score_frame([0.8, 0.9], 1, 1)
    assert s.sq == pytest.approx(85.0, abs=1e-12)
    assert s.rq == pytest.approx(100 * 2 / 3.5, abs=1e-12)
    assert s.pq == pytest.approx(48.571428571, abs=1e-8)


def test_reported_row_is_self_consistent():
    assert round(85.6 * 97.5 / 100, 2) == 83.46
    assert round(85.6 * 97.5 / 100, 1) == 83.5


def test_empty_frame_convention():
    s = metrics.score_frame([], 0, 0)
    assert (s.pq, s.sq, s.rq) == (100.0, 100.0, 100.0)


def test_stack_mean_and_self_score():
    a = box((2, 4), 0, 2, 0, 2, 1)
    t = box((2, 4), 0, 2, 0, 2, 1)
    box((2, 4), 0, 2, 2, 4, 2, grid=t)
    # frame 0: perfect; frame 1: one TP and one FN at IoU 1 -> PQ 100/1.5
    rep = metrics.score_stack(frames_of(t, a), frames_of(t, t), ALL_WEFT)
    assert rep.per_frame[1].pq == 50.0
    assert rep.pq_avg == 75.0
    assert len(rep) == 2
    self_rep = metrics.score_stack(frames_of(t, a), frames_of(t, a), ALL_WEFT)
    assert (self_rep.pq_avg, self_rep.sq_avg, self_rep.rq_avg) == (100.0, 100.0, 100.0)


def test_errors():
    with pytest.raises(DataError, match="length mismatch"):
        metrics.score_stack(frames_of(np.zeros((2, 2))), frames_of(np.zeros((2, 2)), np.zeros((2, 2))), {})
    with pytest.raises(DataError, match="dimension mismatch"):
        metrics.match_frame(LabelFrame(np.zeros((2, 2)), 0), LabelFrame(np.zeros((2, 3)), 0), {})


@given(grids, grids, st.lists(st.booleans(), min_size=4, max_size=4),
       st.lists(st.booleans(), min_size=4, max_size=4))
def test_oracle_equivalence(p, t, pw, tw):
    h, w = min(p.shape[0], t.shape[0]), min(p.shape[1], t.shape[1])
    p, t = p[:h, :w], t[:h, :w]
    pc = {i + 1: WEFT if b else WARP for i, b in enumerate(pw)}
    tc = {i + 1: WEFT if b else WARP for i, b in enumerate(tw)}
    matches, fp, fn = metrics.match_frame(LabelFrame(p, 0), LabelFrame(t, 0), pc, tc)
    em, efp, efn = match_enumerate(p, t, pc, tc)
    assert sorted((m.pred_id, m.truth_id, m.iou) for m in matches) == [(a, b, float(v)) for a, b, v in em]
    assert (fp, fn) == (efp, efn)
    s = metrics.score_frame(matches, fp, fn)
    epq, esq, erq = pq_counts([v for *_, v in em], len(efp), len(efn))
    assert s.pq == pytest.approx(epq, abs=1e-9)
    assert s.sq == pytest.approx(esq, abs=1e-9)
    assert s.rq == pytest.approx(erq, abs=1e-9)
    assert abs(s.pq - s.sq * s.rq / 100) <= 1e-9
    assert 0 <= s.pq <= 100 and 0 <= s.sq <= 100 and 0 <= s.rq <= 100
    assert s.tp_iou_sum <= s.tp


@given(grids)
def test_adding_pure_fp_lowers_rq_and_pq(t):
    t = np.pad(t, ((0, 2), (0, 2)))
    if not t.any():
        t[0, 0] = 1
    p = t.copy()
    p[-1, -1] = 9
    cls = ALL_WEFT
    before = metrics.score_frame(*metrics.match_frame(LabelFrame(t, 0), LabelFrame(t, 0), cls))
    after = metrics.score_frame(*metrics.match_frame(LabelFrame(p, 0), LabelFrame(t, 0), cls))
    assert after.rq < before.rq and after.pq < before.pq and after.sq == before.sq


def test_report_csv(tmp_path):
    g = box((2, 2), 0, 1, 0, 1, 1)
    rep = metrics.score_stack(frames_of(g, g), frames_of(g, g), ALL_WEFT)
    rows = list(csv.reader(open(metrics.write_report_csv(rep, tmp_path / "r.csv"))))
    assert rows[0] == ["frame", "tp", "fp", "fn", "sq", "rq", "pq"]
    assert rows[-1][0] == "mean" and float(rows[-1][-1]) == 100.0
    assert len(rows) == 4
