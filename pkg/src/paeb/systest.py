"""System-level test campaign: operational cases, jittered counterparts and requirement checks."""

from __future__ import annotations

import json
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cage import SafetyCage
from .detector import DetectorModel
from .scenarios import (
    OBJECT_CLASS_SET, PEDESTRIAN_CLASS_SET, Scenario, apply_jitter, generate_pairwise, verify_no_brake,
)
from .sensors import CameraModel
from .simulation import PerceptionPipeline, ScenarioTrace, run_scenario
from .world import SimConfig, is_pedestrian

LATENCY_P99_MS = 100.0
JITTER_ATTEMPTS = 50


class ConfigurationError(RuntimeError):
    pass


def load_pipeline(detector_path: str | Path, cage_path: str | Path | None,
                  camera: CameraModel = CameraModel()) -> PerceptionPipeline:
    for name, path in (("detector model", detector_path), ("safety cage model", cage_path)):
        if path is not None and not Path(path).is_file():
            raise ConfigurationError(f"missing {name}: {path}")
    detector = DetectorModel.load(detector_path)
    cage = None
    if cage_path is not None:
        cage = SafetyCage.load(cage_path, detector.background.astype(np.float64), camera)
        cage.fg_threshold = detector.fg_threshold
    return PerceptionPipeline(detector, cage, camera)


@dataclass(frozen=True)
class TestCase:
    id: str
    scenario: Scenario
    expected: str  # brake | no-brake

    @classmethod
    def of(cls, scenario: Scenario, case_id: str | None = None) -> TestCase:
        expected = "brake" if is_pedestrian(scenario.actor_class) else "no-brake"
        return cls(case_id or scenario.id, scenario, expected)


@dataclass
class TestCaseResult:
    id: str
    scenario_id: str
    actor_class: str | None
    expected: str
    min_dist: float | None = None
    time_trig: float | None = None
    dist_trig: float | None = None
    time_brake: float | None = None
    dist_brake: float | None = None
    coll: bool = False
    coll_speed: float | None = None
    initial_speed: float = 0.0
    verdict: str = "error"  # pass | fail | error
    label: str = ""
    identified_after_trigger: bool | None = None
    shape_identified: bool = False
    latencies_ms: list[float] = field(default_factory=list)

    def to_dict(self, timing: bool = False) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("latencies_ms")
        return d


def evaluate_trace(case: TestCase, trace: ScenarioTrace) -> TestCaseResult:
    m = trace.metrics
    res = TestCaseResult(case.id, trace.scenario_id, trace.actor_class, case.expected, m.min_dist, m.time_trig,
                         m.dist_trig, m.time_brake, m.dist_brake, m.coll, m.coll_speed,
                         case.scenario.ego_speed, latencies_ms=list(trace.latencies_ms))
    triggered = [f for f in trace.frames if f.triggered]
    if case.expected == "brake":
        brake_frames = [f for f in trace.frames if f.braking]
        ok = bool(brake_frames) and brake_frames[0].triggered
        res.verdict = "pass" if ok else "fail"
        res.label = "" if ok else "missed-pedestrian"
        res.identified_after_trigger = (not triggered) or any(f.identified for f in triggered)
    else:
        res.shape_identified = any(f.identified for f in trace.frames)
        res.verdict = "fail" if trace.braked else "pass"
        res.label = "ghost-braking" if trace.braked else ""
    return res


def run_test_case(case: TestCase, pipeline: PerceptionPipeline, config: SimConfig = SimConfig()) -> TestCaseResult:
    return evaluate_trace(case, run_scenario(case.scenario, pipeline, config))


def operational_cases(seed: int = 0, config: SimConfig = SimConfig(),
                      camera: CameraModel = CameraModel()) -> list[TestCase]:
    # only rows that collide unless the system brakes can test braking
    peds = generate_pairwise(PEDESTRIAN_CLASS_SET, seed, config, camera, complete=False)
    objs = generate_pairwise(OBJECT_CLASS_SET, seed, config, camera, first_index=len(peds) + 1, complete=False)
    return [TestCase.of(s) for s in peds + objs]


def jittered_cases(cases: Sequence[TestCase], jitter_seed: int, config: SimConfig = SimConfig(),
                   camera: CameraModel = CameraModel()) -> list[TestCase]:
    """One randomized counterpart per operational case, redrawn until it still forces a collision."""
    out = []
    for n, case in enumerate(cases, start=1):
        for attempt in range(JITTER_ATTEMPTS):
            s = apply_jitter(case.scenario, jitter_seed * 100_000 + n * 100 + attempt)
            collides, trig, visible = verify_no_brake(s, config, camera)
            if collides and trig is not None and visible:
                break
        else:
            s = apply_jitter(case.scenario, jitter_seed * 100_000 + n * 100)
        out.append(TestCase.of(s, f"TC-RAND-{n}"))
    return out


@dataclass
class SuiteReport:
    results: list[TestCaseResult]
    requirement_checks: dict[str, dict]
    ood_enabled: bool

    @property
    def failures(self) -> list[TestCaseResult]:
        return [r for r in self.results if r.verdict != "pass"]

    @property
    def passed(self) -> bool:
        return not self.failures and all(c["passed"] for c in self.requirement_checks.values())

    def to_dict(self, timing: bool = False) -> dict:
        checks = self.requirement_checks
        if not timing:
            checks = {k: {kk: vv for kk, vv in v.items() if kk not in ("p99_ms", "median_ms")}
                      for k, v in checks.items()}
        return {"ood_enabled": self.ood_enabled, "passed": self.passed,
                "results": [r.to_dict(timing) for r in self.results], "requirement_checks": checks}

    def to_json(self, timing: bool = False) -> str:
        return json.dumps(self.to_dict(timing), indent=1, sort_keys=True)

    def table(self) -> str:
        head = (f"{'Test case':<14}{'Class':<6}{'MinDist':>8}{'TimeTrig':>9}{'DistTrig':>9}{'TimeBrake':>10}"
                f"{'DistBrake':>10}{'Coll':>6}{'CollSpeed':>10}  Verdict")
        lines = [head]

        def f(v, fmt="{:.1f}"):
            return "-" if v is None else fmt.format(v)

        for r in self.results:
            lines.append(f"{r.id:<14}{r.actor_class or '-':<6}{f(r.min_dist):>8}{f(r.time_trig):>9}"
                         f"{f(r.dist_trig):>9}{f(r.time_brake):>10}{f(r.dist_brake):>10}{str(r.coll):>6}"
                         f"{f(r.coll_speed, '{:.2f}'):>10}  {r.verdict} {r.label}".rstrip())
        for k, c in self.requirement_checks.items():
            lines.append(f"{k:<14}{'PASS' if c['passed'] else 'FAIL'}  {c['detail']}")
        return "\n".join(lines)


def _requirement_checks(results: Sequence[TestCaseResult]) -> dict[str, dict]:
    peds = [r for r in results if r.expected == "brake" and r.verdict != "error"]
    shapes = [r for r in results if r.expected == "no-brake" and r.verdict != "error"]
    missed = [r.id for r in peds if r.identified_after_trigger is False]
    confused = [r.id for r in shapes if r.shape_identified]
    lat = np.array([x for r in results for x in r.latencies_ms])
    p99 = float(np.percentile(lat, 99)) if len(lat) else 0.0
    med = float(np.median(lat)) if len(lat) else 0.0
    return {
        "TC-RBT-1": {"passed": not missed, "offending": missed,
                     "detail": f"{len(peds) - len(missed)}/{len(peds)} pedestrian triggers identified"},
        "TC-RBT-2": {"passed": not confused, "offending": confused,
                     "detail": f"{len(confused)}/{len(shapes)} shape cases identified as pedestrian"},
        "TC-RBT-3": {"passed": p99 <= LATENCY_P99_MS, "offending": [], "p99_ms": p99, "median_ms": med,
                     "detail": f"{len(lat)} perception frames, p99 within {LATENCY_P99_MS:g} ms"},
    }


def run_suite(cases: Sequence[TestCase], pipeline: PerceptionPipeline, config: SimConfig = SimConfig(),
              jitter_seed: int | None = 0) -> SuiteReport:
    """Operational cases, then their jittered counterparts, then the requirement checks."""
    if not cases:
        raise ValueError("the test suite is empty")
    cases = list(cases)
    if jitter_seed is not None:
        cases += jittered_cases(cases, jitter_seed, config, pipeline.camera)
    results = []
    for case in cases:
        try:
            results.append(run_test_case(case, pipeline, config))
        except Exception as exc:  # a broken case is reported, the campaign goes on
            res = TestCaseResult(case.id, case.scenario.id, case.scenario.actor_class, case.expected,
                                 initial_speed=case.scenario.ego_speed)
            res.label = f"{type(exc).__name__}: {exc}"
            traceback.clear_frames(exc.__traceback__)
            results.append(res)
    return SuiteReport(results, _requirement_checks(results), pipeline.cage is not None and pipeline.cage.ood_enabled)
