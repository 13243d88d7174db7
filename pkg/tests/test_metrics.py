from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paeb.metrics import (
    SLICES, FrameOutcome, aggregate_metrics, average_precision, classify_frame, evaluate_requirements,
    histogram_svg, iou, position_error, rolling_window_counts, rolling_window_violation_rate,
    slice_records, summarize_counts, verdict_table,
)
from paeb.sensors import CameraModel, PixelBox

CAM = CameraModel()


@dataclass
class Det:
    pixel_box: PixelBox
    confidence: float


@dataclass
class Rec:
    actor_class: str | None
    actor_distance: float
    actor_speed: float = 1.0
    occluded: bool = False


def _ap_oracle(scored, n_gt):
    # enumerate every confidence cut point, then interpolate precision from the right
    if n_gt == 0:
        return None
    cuts = sorted({c for c, _ in scored}, reverse=True)
    pts = [(0.0, 1.0)]
    for t in cuts:
        kept = [hit for c, hit in scored if c >= t]
        tp = sum(kept)
        pts.append((tp / n_gt, tp / len(kept)))
    ap = 0.0
    for k in range(1, len(pts)):
        r_prev, r = pts[k - 1][0], pts[k][0]
        p_interp = max(p for rr, p in pts[k:] if rr >= r)
        ap += (r - r_prev) * p_interp
    return ap


def _rolling_oracle(seqs, window=5, max_misses=1):
    windows = bad = 0
    for seq in seqs:
        for s in range(len(seq) - window + 1):
            windows += 1
            misses = 0
            for k in range(s, s + window):
                misses += 1 if seq[k] else 0
            bad += misses > max_misses
    return bad / windows


boxes = st.builds(
    lambda x, y, w, h: PixelBox(x, y, x + w, y + h),
    st.floats(0, 700), st.floats(0, 440), st.floats(0.5, 50), st.floats(0.5, 40),
)


# =============================================================================
# IoU and frame outcomes
# =============================================================================


class TestIoU:
    def test_identical(self):
        b = PixelBox(1, 2, 30, 40)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(PixelBox(0, 0, 10, 10), PixelBox(20, 20, 30, 30)) == 0.0

    def test_half_overlap(self):
        assert iou(PixelBox(0, 0, 10, 10), PixelBox(5, 0, 15, 10)) == pytest.approx(1 / 3)

    @settings(max_examples=200, deadline=None)
    @given(a=boxes, b=boxes)
    def test_symmetric_bounded(self, a, b):
        assert iou(a, b) == pytest.approx(iou(b, a))
        assert 0.0 <= iou(a, b) <= 1.0
        assert iou(a, a) == pytest.approx(1.0)


class TestClassify:
    gt = PixelBox(100, 100, 200, 300)

    def test_tp(self):
        d = Det(PixelBox(100, 100, 190, 300), 0.8)  # IoU 0.9
        out = classify_frame(self.gt, [d])
        assert out.kind == "TP" and out.iou == pytest.approx(0.9)

    def test_fp_low_iou(self):
        d = Det(PixelBox(100, 100, 130, 300), 0.8)  # IoU 0.3
        assert classify_frame(self.gt, [d]).kind == "FP"

    def test_fn(self):
        assert classify_frame(self.gt, []).kind == "FN"

    def test_empty(self):
        assert classify_frame(None, []).kind == "EMPTY"

    def test_background_detection(self):
        out = classify_frame(None, [Det(self.gt, 0.4)])
        assert out.kind == "FP" and out.iou is None

    def test_extra_detections_count(self):
        out = classify_frame(self.gt, [Det(self.gt, 0.9), Det(PixelBox(400, 100, 450, 200), 0.5)])
        assert out.kind == "TP" and out.extra_fp == 1 and out.false_positives == 1


# =============================================================================
# Aggregates
# =============================================================================


class TestAggregate:
    def test_all_row(self):
        s = summarize_counts(134948, 711, 191)
        assert round(s.precision, 4) == 0.9948
        assert round(s.recall, 4) == 0.9986
        assert round(s.f1, 4) == 0.9967

    def test_perfect(self):
        s = summarize_counts(50, 0, 0)
        assert s.precision == s.recall == s.f1 == 1.0

    def test_rates(self):
        assert round(summarize_counts(101320, 444, 173, total=105588).tp_rate * 100, 1) == 96.0
        assert round(summarize_counts(0, 444, 0, total=105588).fppi * 100, 2) == 0.42
        assert round(summarize_counts(0, 13, 0, total=105588).fppi * 100, 3) == 0.012
        assert round(173 / 61845 * 100, 2) == 0.28

    def test_from_outcomes(self):
        outs = [FrameOutcome("TP", 0.8, 0.9)] * 3 + [FrameOutcome("FN"), FrameOutcome("EMPTY"),
                                                    FrameOutcome("FP", None, 0.2, 1)]
        s = aggregate_metrics(outs)
        assert (s.tp, s.fn, s.fp, s.total) == (3, 1, 2, 6)
        assert s.tp + s.fn == 4
        assert s.fppi == pytest.approx(2 / 6)


class TestAveragePrecision:
    def test_perfect(self):
        assert average_precision([(1.0, True), (1.0, True)], 2) == 1.0

    def test_hand_curve(self):
        assert average_precision([(0.9, True), (0.8, False), (0.7, True)], 2) == pytest.approx(0.8333, abs=1e-4)

    def test_only_fps(self):
        assert average_precision([(0.5, False), (0.3, False)], 3) == 0.0

    def test_no_gt(self):
        assert average_precision([(0.5, False)], 0) is None

    def test_oracle_many_instances(self):
        rng = np.random.default_rng(1)
        for _ in range(1500):
            n = int(rng.integers(1, 21))
            conf = np.round(rng.random(n), 1)  # coarse grid forces ties
            hits = rng.random(n) < 0.6
            scored = list(zip(conf.tolist(), hits.tolist()))
            n_gt = int(hits.sum()) + int(rng.integers(0, 3))
            if n_gt == 0:
                continue
            assert average_precision(scored, n_gt) == pytest.approx(_ap_oracle(scored, n_gt), abs=1e-12)


class TestRollingWindow:
    def test_no_misses(self):
        assert rolling_window_violation_rate([False] * 10) == 0.0

    def test_hand_example(self):
        assert rolling_window_violation_rate([True, True, False, False, False, False]) == 0.5

    def test_windows_do_not_cross_sequences(self):
        # the joint sequence would hold a 2-miss window across the seam
        seqs = [[False] * 4 + [True], [True] + [False] * 4]
        assert rolling_window_violation_rate(seqs) == 0.0
        assert rolling_window_counts(seqs) == (0, 2)

    def test_too_short(self):
        with pytest.raises(ValueError):
            rolling_window_violation_rate([True, False])

    def test_oracle_many_instances(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            seqs = [(rng.random(int(rng.integers(5, 60))) < rng.random()).tolist()
                    for _ in range(int(rng.integers(1, 4)))]
            assert rolling_window_violation_rate(seqs) == pytest.approx(_rolling_oracle(seqs), abs=1e-12)

    def test_oracle_long(self):
        seq = (np.random.default_rng(3).random(1000) < 0.2).tolist()
        assert rolling_window_violation_rate(seq) == pytest.approx(_rolling_oracle([seq]), abs=1e-12)


class TestPositionError:
    def test_exact_box(self):
        z, y, h = 30.0, 0.7, 1.8
        u0, v0 = CAM.project(y - 0.3, h, z)
        u1, v1 = CAM.project(y + 0.3, 0.0, z)
        assert position_error(PixelBox(u0, v0, u1, v1), CAM, (z, y)) == pytest.approx(0.0, abs=1e-9)

    def test_one_pixel_lateral_at_50m(self):
        z = 50.0
        u0, v0 = CAM.project(-0.3, 1.8, z)
        u1, v1 = CAM.project(0.3, 0.0, z)
        err = position_error(PixelBox(u0 + 1, v0, u1 + 1, v1), CAM, (z, 0.0))
        assert err == pytest.approx(5.6, abs=0.05)

    def test_range_assisted(self):
        box = PixelBox(370, 200, 382, 260)
        assert position_error(box, CAM, (40.0, 0.0), range_m=40.0) == pytest.approx(0.0, abs=1e-9)


# =============================================================================
# Slices and verdicts
# =============================================================================


class TestSlices:
    recs = [(Rec("P1", 20.0, 0.0), None), (Rec("P7", 70.0, 3.0, True), None),
            (Rec("P2", 50.0, 1.0), None), (Rec(None, 0.0), None)]

    def test_s1_identity(self):
        assert slice_records(self.recs, "S1") == self.recs

    def test_distance_partition(self):
        s2, s3 = slice_records(self.recs, "S2"), slice_records(self.recs, "S3")
        peds = [r for r in self.recs if r[0].actor_class]
        assert len(s2) + len(s3) == len(peds)
        assert not {id(r) for r in s2} & {id(r) for r in s3}

    def test_speed_partition(self):
        assert len(slice_records(self.recs, "S4")) == 1
        assert len(slice_records(self.recs, "S5")) == 1

    def test_edge_and_children(self):
        assert slice_records(self.recs, "S6") == [self.recs[1]]
        assert slice_records(self.recs, "S9") == [self.recs[1]]
        assert len(SLICES) == 9


class TestVerdicts:
    def _bands(self, tp=930, total=1000, fn=10, fp=0):
        s = summarize_counts(tp, fp, fn, total=total)
        return {"<=80": s, "<=50": s}

    def test_boundary_pass(self):
        v = evaluate_requirements(self._bands(), (0, 100), [0.0])
        assert v[0].passed and v[0].value == pytest.approx(0.93)

    def test_paper_counts_req3(self):
        fail = summarize_counts(101320, 444, 173, total=105588)
        ok = summarize_counts(101300, 13, 193, total=105588)
        assert not evaluate_requirements({"<=80": fail, "<=50": fail}, (0, 1), [])[2].passed
        assert evaluate_requirements({"<=80": ok, "<=50": ok}, (0, 1), [])[2].passed

    def test_all_zero_errors_pass(self):
        verdicts = evaluate_requirements(self._bands(tp=1000, fn=0), (0, 50), [0.0, 0.0])
        assert all(v.passed for v in verdicts)
        assert "PASS" in verdict_table(verdicts)

    def test_missing_band(self):
        with pytest.raises(ValueError):
            evaluate_requirements({"<=80": summarize_counts(1, 0, 0)}, (0, 1), [])

    @settings(max_examples=100, deadline=None)
    @given(tp=st.integers(0, 1000), extra=st.integers(0, 200))
    def test_req1_monotone_in_tp(self, tp, extra):
        total = tp + extra + 1
        before = evaluate_requirements(self._bands(tp, total), (0, 1), [])[0].passed
        after = evaluate_requirements(self._bands(tp + 1, total + 1), (0, 1), [])[0].passed
        assert after or not before

    def test_svg(self):
        svg = histogram_svg([1.0, 2.0, 2.5], bins=4, title="err")
        assert svg.startswith("<svg") and svg.count("<rect") == 4
