import json

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from paeb.dataset import FrameRecord, generate_campaign, normalize_box
from paeb.datatest import (
    DEMOGRAPHICS, Expectation, check_dataset, demographic_fractions, histogram_sample, intensity_histogram,
    load_expectations, load_reference_histogram, read_records, run_expectations,
)
from paeb.scenarios import enumerate_ood_grid, enumerate_positive_grid
from paeb.sensors import CameraModel, PixelBox
from paeb.world import SimConfig

CAM = CameraModel()


def _record(sid="S", k=0, cls="P1", dist=20.0, box=PixelBox(300, 200, 320, 260)):
    label = normalize_box(box, CAM) if cls and cls.startswith("P") and box else None
    return FrameRecord(sid, k, k / 10, cls, dist, box, label, False, f"x/{sid}/{k}.pgm")


def _by_id(report):
    return {r.id: r for r in report.results}


@pytest.fixture(scope="module")
def campaign(tmp_path_factory):
    grid = enumerate_positive_grid(0.02) + enumerate_ood_grid(0.1)
    picked, count = [], {}
    for s in grid:
        if count.get(s.actor_class, 0) < (3 if s.actor_class.startswith("P") else 1):
            count[s.actor_class] = count.get(s.actor_class, 0) + 1
            picked.append(s)
    return generate_campaign(picked, tmp_path_factory.mktemp("dt"), SimConfig(), CAM, seed=5, frame_stride=10)


# =============================================================================
# Suite definition
# =============================================================================


class TestSuiteFile:
    def test_default_suite_loads(self):
        suite = load_expectations()
        ids = [e.id for e in suite]
        assert len(ids) == len(set(ids))
        assert {e.kind for e in suite} == {"bounds", "coverage", "fraction-band", "histogram-distance"}

    def test_reference_histogram_is_a_distribution(self):
        h = load_reference_histogram()
        assert h.shape == (32,)
        assert h.sum() == pytest.approx(1.0, abs=1e-6)

    def test_missing_parameter_rejected(self):
        with pytest.raises(ValueError, match="lacks"):
            Expectation("x", "", "fraction-band", {"measure": "background"})

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError, match="unknown kind"):
            Expectation("x", "", "regex", {})

    def test_duplicate_ids_rejected(self, tmp_path):
        e = {"id": "a", "kind": "histogram-distance", "params": {"max_l1": 0.1}}
        path = tmp_path / "s.yaml"
        path.write_text(yaml.safe_dump({"expectations": [e, e]}))
        with pytest.raises(ValueError, match="duplicate"):
            load_expectations(path)

    def test_new_check_needs_no_code(self, tmp_path):
        path = tmp_path / "s.yaml"
        path.write_text(yaml.safe_dump({"expectations": [
            {"id": "wide", "kind": "bounds", "params": {"measure": "center_x_std", "min": 0.5}}]}))
        report = run_expectations([_record()], load_expectations(path))
        assert not report.passed


# =============================================================================
# Individual expectations
# =============================================================================


class TestExpectations:
    def test_box_outside_image_listed(self):
        bad = _record("B", 0, box=PixelBox(700, 200, 760, 300))
        good = _record("A", 0)
        suite = [e for e in load_expectations() if e.id == "box-in-image"]
        result = _by_id(run_expectations([good, bad], suite))["box-in-image"]
        assert result.status == "fail"
        assert result.offending == ["B/0"]

    def test_all_at_twenty_meters_misses_nine_bins(self):
        recs = [_record("S", k, dist=20.0) for k in range(50)]
        suite = [e for e in load_expectations() if e.id == "distance-coverage"]
        result = _by_id(run_expectations(recs, suite))["distance-coverage"]
        assert result.status == "fail"
        assert result.measured["empty_bins"] == 8  # 20 m falls in [20, 30)
        recs = [_record("S", k, dist=5.0) for k in range(50)]
        result = _by_id(run_expectations(recs, suite))["distance-coverage"]
        assert result.measured["empty_bins"] == 9

    def test_full_grid_demographics_exact(self):
        recs = [_record(s.id, 0, s.actor_class) for s in enumerate_positive_grid(1.0)]
        fr = demographic_fractions(recs, by="scenarios")
        assert fr == {"children": 0.125, "adult-male": 0.5, "adult-female": 0.375}
        assert demographic_fractions(recs, by="frames") == fr

    def test_skewed_demographics_fail(self):
        recs = [_record(f"S{i}", 0, "P1") for i in range(10)]
        suite = [e for e in load_expectations() if e.id == "demographics"]
        result = _by_id(run_expectations(recs, suite))["demographics"]
        assert result.status == "fail"
        assert set(result.offending) == set(DEMOGRAPHICS)

    def test_campaign_scope_skipped_for_a_split(self):
        suite = [e for e in load_expectations() if e.id == "demographics"]
        result = _by_id(run_expectations([_record()], suite, split="internal-test"))["demographics"]
        assert result.status == "skipped"

    def test_background_share_band(self):
        suite = [e for e in load_expectations() if e.id == "background-share"]
        recs = [_record("S", k, "P2") for k in range(98)] + [_record("E", k, None, 0.0, None) for k in range(2)]
        assert _by_id(run_expectations(recs, suite))["background-share"].status == "pass"
        recs = recs[:90] + [_record("E", k, None, 0.0, None) for k in range(10)]
        assert _by_id(run_expectations(recs, suite))["background-share"].status == "fail"

    def test_histogram_of_constant_frame(self):
        h = intensity_histogram([np.full((4, 4), 10, np.uint8)], bins=4)
        assert h.tolist() == [1.0, 0.0, 0.0, 0.0]
        with pytest.raises(ValueError):
            intensity_histogram([])

    def test_info_failures_do_not_block(self):
        suite = [Expectation("wide", "", "bounds", {"measure": "center_x_std", "min": 0.5}, "info")]
        report = run_expectations([_record()], suite)
        assert report.results[0].status == "fail"
        assert report.passed

    @settings(max_examples=50, deadline=None)
    @given(st.permutations(list(range(12))))
    def test_order_independent(self, order):
        recs = [_record(f"S{i % 4}", i, f"P{1 + i % 8}", 10.0 + 7 * i,
                        PixelBox(10 * i, 200, 10 * i + 20, 260)) for i in range(12)]
        suite = [e for e in load_expectations() if e.kind != "histogram-distance"]
        a = run_expectations(recs, suite).to_dict()
        b = run_expectations([recs[i] for i in order], suite).to_dict()
        assert a == b

    def test_sample_is_order_independent(self):
        recs = [_record("S", k) for k in range(500)]
        assert histogram_sample(recs, 10) == histogram_sample(recs[::-1], 10)


# =============================================================================
# Generated campaign
# =============================================================================


class TestCampaign:
    def test_generated_campaign_passes_structural_checks(self, campaign):
        report = check_dataset(campaign.root)
        by = _by_id(report)
        for name in ("image-size", "box-in-image", "intensity-histogram", "demographics", "background-share"):
            assert by[name].status == "pass", by[name]
        assert not report.errors

    def test_unreadable_records_reported(self, campaign, tmp_path):
        import shutil
        root = tmp_path / "copy"
        shutil.copytree(campaign.root, root)
        records, _ = read_records(campaign)
        victim = records[3]
        (root / victim.image_path).write_bytes(b"garbage")
        entry = campaign.scenarios[-1]
        (root / entry["split"] / entry["id"] / "annotations.jsonl").write_text("{not json\n")
        report = check_dataset(root)
        failed = {e["record"] for e in report.errors}
        assert f"{victim.scenario_id}/{victim.frame_index}" in failed
        assert f"{entry['id']}:1" in failed
        assert not report.passed

    def test_report_serializes(self, campaign):
        report = check_dataset(campaign.root, "verification")
        data = json.loads(report.to_json())
        assert data["split"] == "verification"
        assert "PASS" in report.text() or "FAIL" in report.text()

    def test_wrong_image_size_detected(self, campaign, tmp_path):
        records, _ = read_records(campaign)
        from paeb.sensors import write_pgm
        import shutil
        root = tmp_path / "copy"
        shutil.copytree(campaign.root, root)
        write_pgm(root / records[0].image_path, np.zeros((10, 10), np.uint8))
        result = _by_id(check_dataset(root))["image-size"]
        assert result.status == "fail"
        assert result.offending == [f"{records[0].scenario_id}/{records[0].frame_index}"]
