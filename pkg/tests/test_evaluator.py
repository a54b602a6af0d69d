import json
import random

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from published import PUBLISHED_FT, PUBLISHED_RAW
from nightforge.core import Annotation, BoundingBox, write_labels
from nightforge.evaluator import (ClassSchemaError, MetricsRow, MetricsTable, average_precision,
                                  compare, iou, load_corpus, load_table, map_summary, match,
                                  write_comparison, write_report)


def ann(cls, cx, cy, w, h, conf=None):
    return Annotation(cls, BoundingBox(cx, cy, w, h), conf)


def random_corpus(rng: random.Random, max_images=5, max_boxes=6):
    preds, gts = [], []
    for _ in range(rng.randint(1, max_images)):
        g = [ann(rng.randint(0, 1), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                 rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3))
             for _ in range(rng.randint(0, max_boxes))]
        p = []
        for a in g:
            if rng.random() < 0.75:
                cls = a.class_index if rng.random() < 0.85 else 1 - a.class_index
                b = a.box
                p.append(ann(cls, b.cx + rng.uniform(-0.3, 0.3) * b.w,
                             b.cy + rng.uniform(-0.3, 0.3) * b.h,
                             b.w * rng.uniform(0.7, 1.3), b.h * rng.uniform(0.7, 1.3),
                             rng.random()))
        for _ in range(rng.randint(0, 2)):
            p.append(ann(rng.randint(0, 1), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                         rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3), rng.random()))
        rng.shuffle(p)
        preds.append(p[:max_boxes])
        gts.append(g)
    return preds, gts


def table_as_tuples(table: MetricsTable):
    out = {}
    for key, name in ((0, "Sedan"), (1, "SVP_BV"), ("all", "all")):
        row = table.rows[name]
        out[key] = None if row.mAP50 is None else (row.precision, row.recall, row.mAP50,
                                                   row.mAP50_95)
    return out


# --- IoU ---------------------------------------------------------------------------

def test_iou_examples():
    assert iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    assert iou((0, 0, 2, 2), (1, 0, 3, 2)) == pytest.approx(2 / 6)
    assert iou((0, 0, 0, 2), (0, 0, 0, 2)) == 0.0


coords = st.floats(0, 100, allow_nan=False)


@given(coords, coords, coords, coords, coords, coords, coords, coords)
def test_iou_properties(a0, a1, a2, a3, b0, b1, b2, b3):
    a = (min(a0, a2), min(a1, a3), max(a0, a2), max(a1, a3))
    b = (min(b0, b2), min(b1, b3), max(b0, b2), max(b1, b3))
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == iou(b, a)
    assert v == pytest.approx(oracles.shapely_iou(a, b), abs=1e-9)
    if (a[2] - a[0]) * (a[3] - a[1]) > 0:
        assert iou(a, a) == 1.0


# --- matching ------------------------------------------------------------------------

def test_match_single_exact():
    g = [ann(0, 0.5, 0.5, 0.2, 0.2)]
    res = match([ann(0, 0.5, 0.5, 0.2, 0.2, 0.9)], g, 0.5)
    assert res.tp == (True,) and res.unmatched_gt == 0


def test_match_duplicate_prediction_is_fp():
    g = [ann(0, 0.5, 0.5, 0.2, 0.2)]
    p = [ann(0, 0.5, 0.5, 0.2, 0.2, 0.6), ann(0, 0.5, 0.5, 0.2, 0.2, 0.9)]
    assert match(p, g, 0.5).tp == (False, True)


def test_match_requires_same_class():
    g = [ann(1, 0.5, 0.5, 0.2, 0.2)]
    assert match([ann(0, 0.5, 0.5, 0.2, 0.2, 0.9)], g, 0.5).tp == (False,)


def test_match_three_by_three_against_oracle():
    # binary-exact coordinates so the IoU tie below is exact
    gts = [ann(0, 0.25, 0.5, 0.25, 0.25), ann(0, 0.5, 0.5, 0.25, 0.25),
           ann(0, 0.75, 0.25, 0.25, 0.25)]
    preds = [ann(0, 0.375, 0.5, 0.25, 0.25, 0.9), ann(0, 0.5, 0.5, 0.25, 0.25, 0.8),
             ann(0, 0.75, 0.3125, 0.25, 0.25, 0.7)]
    res = match(preds, gts, 0.3)
    assert list(res.tp) == oracles.greedy_flags(preds, gts, 0.3)
    # the top prediction overlaps gts 0 and 1 equally -> lower index wins
    assert res.matched_gt == (0, 1, 2)
    assert match(preds, gts, 0.5).matched_gt == (None, 1, 2)


@given(st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_match_never_reuses_ground_truth(seed):
    preds, gts = random_corpus(random.Random(seed), max_images=1)
    for thr in (0.5, 0.75):
        res = match(preds[0], gts[0], thr)
        taken = [m for m in res.matched_gt if m is not None]
        assert len(taken) == len(set(taken))
        assert list(res.tp) == oracles.greedy_flags(preds[0], gts[0], thr)


# --- average precision -------------------------------------------------------------------

def test_ap_examples():
    g = [[ann(0, 0.5, 0.5, 0.2, 0.2)]]
    assert average_precision([[ann(0, 0.5, 0.5, 0.2, 0.2, 0.9)]], g, 0.5) == 1.0
    assert average_precision([[ann(0, 0.1, 0.1, 0.1, 0.1, 0.9)]], g, 0.5) == 0.0
    assert average_precision([[]], [[]], 0.5) is None
    assert average_precision([[ann(0, 0.1, 0.1, 0.1, 0.1, 0.9)]], [[]], 0.5) == 0.0


def test_ap_hand_case():
    gts = [[ann(0, 0.25, 0.5, 0.2, 0.2), ann(0, 0.75, 0.5, 0.2, 0.2)]]
    preds = [[ann(0, 0.25, 0.5, 0.2, 0.2, 0.9), ann(0, 0.5, 0.1, 0.1, 0.1, 0.8),
              ann(0, 0.75, 0.5, 0.2, 0.2, 0.7)]]
    ap = average_precision(preds, gts, 0.5)
    expected = oracles.ap_101(*oracles.staircase(preds, gts, 0.5))
    assert expected == pytest.approx((51 + 50 * 2 / 3) / 101, abs=1e-12)
    assert ap == pytest.approx(expected, abs=1e-9)
    assert ap == pytest.approx(0.833, abs=0.005)


@given(st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_low_confidence_false_positive_never_helps(seed):
    rng = random.Random(seed)
    preds, gts = random_corpus(rng)
    base = average_precision(preds, gts, 0.5)
    if base is None:
        return
    extra = [list(p) for p in preds]
    extra[0].append(ann(0, 0.05, 0.05, 0.02, 0.02, -1.0))  # below every score, matches nothing
    assert average_precision(extra, gts, 0.5) <= base + 1e-12


# --- summary table -------------------------------------------------------------------------

def test_perfect_corpus_all_ones():
    gts = [[ann(0, 0.3, 0.3, 0.2, 0.2), ann(1, 0.7, 0.7, 0.2, 0.3)], [ann(1, 0.5, 0.5, 0.4, 0.4)]]
    preds = [[Annotation(a.class_index, a.box, 0.9) for a in g] for g in gts]
    table = map_summary(preds, gts)
    for row in table.rows.values():
        assert list(row.values().values()) == [1.0, 1.0, 1.0, 1.0]


def test_empty_corpus_undefined():
    table = map_summary([], [])
    assert all(v is None for row in table.rows.values() for v in row.values().values())


def test_undefined_class_excluded_from_all():
    gts = [[ann(0, 0.5, 0.5, 0.2, 0.2)]]
    table = map_summary([[ann(0, 0.5, 0.5, 0.2, 0.2, 0.9)]], gts)
    assert table.rows["SVP_BV"].mAP50 is None
    assert table.rows["all"].mAP50 == 1.0


@pytest.mark.parametrize("seed", range(25))
def test_summary_matches_bruteforce_oracle(seed):
    preds, gts = random_corpus(random.Random(1000 + seed))
    got = table_as_tuples(map_summary(preds, gts))
    want = oracles.summary(preds, gts)
    for key in (0, 1, "all"):
        if want[key] is None:
            assert got[key] is None
        else:
            assert got[key] == pytest.approx(want[key], abs=1e-9), key


FROZEN_FIVE_IMAGE = {  # computed with tests/oracles.py
    0: (0.5, 0.5, 0.2524752475247525, 0.05099009900990098),
    1: (0.4444444444444444, 0.3333333333333333, 0.2305830583058305, 0.0568976897689769),
    "all": (0.4722222222222222, 0.41666666666666663, 0.24152915291529148, 0.05394389438943894),
}


def test_five_image_fixture_frozen():
    preds, gts = random_corpus(random.Random(5), max_images=5)
    assert len(preds) == 5
    got = table_as_tuples(map_summary(preds, gts))
    for key, want in FROZEN_FIVE_IMAGE.items():
        assert got[key] == pytest.approx(want, abs=1e-9)


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_summary_invariants(seed):
    preds, gts = random_corpus(random.Random(seed))
    table = map_summary(preds, gts)
    doubled = map_summary(preds + preds, gts + gts)
    for name, row in table.rows.items():
        vals = row.values()
        for v in vals.values():
            assert v is None or 0.0 <= v <= 1.0
        if row.mAP50 is not None:
            assert row.mAP50_95 <= row.mAP50 + 1e-12
        for m, v in vals.items():
            w = doubled.rows[name].values()[m]
            assert (v is None and w is None) or v == pytest.approx(w, abs=1e-12)


# --- files and comparison ------------------------------------------------------------------

def test_load_corpus_and_report(tmp_path):
    write_labels(tmp_path / "gt" / "a.txt", [ann(0, 0.5, 0.5, 0.2, 0.2)])
    write_labels(tmp_path / "gt" / "b.txt", [ann(1, 0.5, 0.5, 0.2, 0.2)])
    write_labels(tmp_path / "pred" / "a.txt", [ann(0, 0.5, 0.5, 0.2, 0.2, 0.8)],
                 with_confidence=True)
    stems, preds, gts = load_corpus(tmp_path / "pred", tmp_path / "gt")
    assert stems == ["a", "b"] and preds[1] == []
    table = map_summary(preds, gts)
    path = write_report(table, tmp_path / "out")
    assert load_table(path).to_dict() == json.loads(path.read_text())["rows"]
    assert "Sedan" in (tmp_path / "out" / "metrics.txt").read_text()


def test_compare_identical_tables_zero_deltas():
    comp = compare(PUBLISHED_FT, PUBLISHED_FT)
    assert all(v == 0 for d in comp.deltas().values() for v in d.values())


def test_compare_published_rows(tmp_path):
    comp = compare(PUBLISHED_RAW, PUBLISHED_FT, {"car": "Sedan", "truck": "SVP_BV"})
    d = comp.deltas()
    assert d["all"]["mAP50"] == pytest.approx(0.499, abs=1e-9)
    assert d["all"]["recall"] == pytest.approx(0.637, abs=1e-9)
    path = write_comparison(comp, tmp_path)
    assert json.loads(path.read_text())["deltas"]["all"]["mAP50"] == pytest.approx(0.499)
    text = (tmp_path / "comparison.txt").read_text()
    assert "+0.499" in text and "SVP_BV" in text


def test_compare_class_mismatch_without_mapping():
    with pytest.raises(ClassSchemaError):
        compare(PUBLISHED_RAW, PUBLISHED_FT)
