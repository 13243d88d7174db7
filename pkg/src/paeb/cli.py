"""Batch command line: one subcommand per pipeline stage, each logged to the run manifest."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import yaml
from filelock import FileLock, Timeout

from .cage import AutoencoderModel, SafetyCage
from .dataset import SPLITS, DatasetManifest, generate_campaign, split_datasets
from .datatest import check_dataset
from .detector import DetectorModel
from .metrics import REQ4_BOUNDS, dumps
from .modeltest import build_report, evaluate_frames
from .safety_case import (
    INVENTORY, STAGES, Registry, argument_text, export_case, instantiate_patterns, load_mapping, load_patterns,
    pattern_graph, register_artifact, to_dot, traceability_matrix, validate_case,
)
from .scenarios import enumerate_ood_grid, enumerate_positive_grid, save_suite
from .systest import ConfigurationError, load_pipeline, operational_cases, run_suite
from .training import calibrate_perception, fit_autoencoder, fit_detector

OUT_ENV = "PAEB_OUT"
DEFAULT_OUT = "paeb-out"
RUN_MANIFEST = "run_manifest.jsonl"
LOCK_FILE = ".paeb.lock"
DEVELOPMENT_COMMANDS = ("train-detector", "train-cage", "calibrate")

DEFAULTS = {
    "seed": 0,
    "scale": 0.05,
    "frame_stride": 10,
    "background_fraction": 0.0198,
    "val_fraction": 0.2,
    "target_fppi": 0.001,
    "margin_factor": 0.5,
    "req4_bound": REQ4_BOUNDS["default"],
    "jitter_seed": 0,
}

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INDEPENDENCE = 0, 1, 2, 3


class CommandError(RuntimeError):
    """A command could not complete; the message is the diagnostic."""


class IndependenceViolation(RuntimeError):
    pass


# =============================================================================
# Run context
# =============================================================================


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


@dataclasses.dataclass
class Run:
    command: str
    out: Path
    config: dict
    machine: bool = False
    inputs: list[str] = dataclasses.field(default_factory=list)
    outputs: list[str] = dataclasses.field(default_factory=list)
    artifacts: dict[str, str] = dataclasses.field(default_factory=dict)
    splits: list[str] = dataclasses.field(default_factory=list)
    summary: dict = dataclasses.field(default_factory=dict)

    @property
    def seed(self) -> int:
        return int(self.config["seed"])

    @property
    def registry_path(self) -> Path:
        return self.out / "case" / "registry.json"

    def path(self, *parts: str) -> Path:
        p = self.out.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def need(self, path: Path, hint: str) -> Path:
        if not path.exists():
            raise CommandError(f"missing {path}; run {hint} first")
        self.inputs.append(str(path))
        return path

    def access(self, *splits: str) -> None:
        self.splits.extend(s for s in splits if s not in self.splits)

    def write(self, path: Path, text: str) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.outputs.append(str(path))
        return path

    def register(self, artifact_id: str, path: Path) -> None:
        reg = Registry.load(self.registry_path)
        register_artifact(reg, artifact_id, path)
        self.registry_path.parent.mkdir(parents=True, exist_ok=True)
        reg.save(self.registry_path)
        self.artifacts[artifact_id] = reg.records[artifact_id].sha256

    def say(self, text: str) -> None:
        if not self.machine:
            print(text)


def read_run_manifest(out: str | Path) -> list[dict]:
    path = Path(out) / RUN_MANIFEST
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def _append_entry(out: Path, entry: dict) -> None:
    with open(out / RUN_MANIFEST, "a") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _dataset(run: Run) -> DatasetManifest:
    return DatasetManifest.load(run.need(run.out / "dataset" / "manifest.json", "gen-data").parent)


def _development_log(run: Run) -> tuple[Path, dict]:
    path = run.out / "logs" / "development_log.json"
    return path, (json.loads(path.read_text()) if path.exists() else {})


def _save_development_log(run: Run, section: str, content: dict) -> None:
    path, log = _development_log(run)
    log[section] = content
    run.write(path, json.dumps(log, indent=1, sort_keys=True))
    run.register("U", path)


def _load_models(run: Run) -> tuple[DetectorModel, SafetyCage]:
    _, log = _development_log(run)
    if "calibration" not in log:
        raise CommandError("models are not calibrated; run calibrate first")
    det_path = run.need(run.out / "models" / "detector.npz", "train-detector")
    cage_path = run.need(run.out / "models" / "cage.npz", "calibrate")
    detector = DetectorModel.load(det_path)
    cage = SafetyCage.load(cage_path, detector.background.astype(float))
    cage.fg_threshold = detector.fg_threshold
    return detector, cage


# =============================================================================
# Commands
# =============================================================================


def cmd_gen_data(run: Run, args: argparse.Namespace) -> int:
    cfg = run.config
    suite = enumerate_positive_grid(cfg["scale"]) + enumerate_ood_grid(cfg["scale"])
    manifest = generate_campaign(suite, run.out, seed=run.seed, frame_stride=int(cfg["frame_stride"]),
                                 background_fraction=cfg["background_fraction"])
    run.outputs.append(str(manifest.root))
    for aid, split in (("N", "development"), ("O", "internal-test"), ("P", "verification")):
        run.register(aid, manifest.root / split)
    run.register("Q", manifest.root / "manifest.json")
    counts = {s: sum(e["frames"] for e in manifest.scenarios if e["split"] == s) for s in SPLITS}
    run.summary = {"scenarios": len(manifest.scenarios), "frames": counts, "dataset_hash": manifest.hash}
    run.say(f"{len(manifest.scenarios)} scenarios written to {manifest.root}")
    for s, n in counts.items():
        run.say(f"  {s:<14}{n:>7} frames")
    return EXIT_OK


def cmd_data_test(run: Run, args: argparse.Namespace) -> int:
    root = _dataset(run).root
    run.access(*([args.split] if args.split else SPLITS))
    report = check_dataset(root, args.split)
    path = run.write(run.path("reports", "data_validation.json"), report.to_json())
    run.register("S", path)
    run.summary = {"passed": report.passed, "split": args.split or "campaign"}
    run.say(report.text())
    return EXIT_OK if report.passed else EXIT_FAIL


def _records(run: Run, manifest: DatasetManifest, split: str, subset: str | None) -> list:
    run.access(split)
    parts = split_datasets(manifest, run.seed, run.config["val_fraction"])
    if split == "development" and subset:
        return parts[split].subset(subset)
    return parts[split].records


def cmd_train_detector(run: Run, args: argparse.Namespace) -> int:
    manifest = _dataset(run)
    if args.split != "development":
        raise CommandError("the detector is fitted on development data only")
    run.access("development")
    detector = fit_detector(manifest, run.seed)
    path = run.path("models", "detector.npz")
    version = detector.save(path)
    run.outputs.append(str(path))
    run.register("V", path.parent)
    _save_development_log(run, "detector", {"dataset_hash": manifest.hash, "seed": run.seed,
                                            "version_hash": version, "params": detector.params(),
                                            "silhouettes_per_bin": detector.counts.tolist()})
    run.summary = {"detector_hash": version}
    run.say(f"detector {version[:16]} saved to {path}")
    return EXIT_OK


def cmd_train_cage(run: Run, args: argparse.Namespace) -> int:
    manifest = _dataset(run)
    if args.split != "development":
        raise CommandError("the autoencoder is fitted on development data only")
    run.access("development")
    detector = DetectorModel.load(run.need(run.out / "models" / "detector.npz", "train-detector"))
    ae, crops = fit_autoencoder(detector, manifest, run.seed)
    path = run.path("models", "autoencoder.npz")
    ae.save(path)
    run.outputs.append(str(path))
    run.register("V", path.parent)
    _save_development_log(run, "autoencoder", {"crops": crops, "config": dataclasses.asdict(ae.config),
                                               "loss_history": ae.loss_history})
    run.summary = {"crops": crops, "final_loss": ae.loss_history[-1]}
    run.say(f"autoencoder trained on {crops} crops, final loss {ae.loss_history[-1]:.6f}")
    return EXIT_OK


def cmd_calibrate(run: Run, args: argparse.Namespace) -> int:
    manifest = _dataset(run)
    records = _records(run, manifest, args.split, "validation")
    detector = DetectorModel.load(run.need(run.out / "models" / "detector.npz", "train-detector"))
    ae, _ = AutoencoderModel.load(run.need(run.out / "models" / "autoencoder.npz", "train-cage"))
    detector, cal, cage, ood = calibrate_perception(detector, ae, records, manifest.frame,
                                                    run.config["target_fppi"], run.config["margin_factor"])
    det_path, cage_path = run.path("models", "detector.npz"), run.path("models", "cage.npz")
    version = detector.save(det_path)
    cage.save(cage_path)
    run.outputs.extend([str(det_path), str(cage_path)])
    run.register("V", det_path.parent)
    _save_development_log(run, "calibration", {"split": args.split, "frames": len(records),
                                               "detector_hash": version, "confidence": cal.to_dict(),
                                               "novelty": ood.to_dict()})
    run.summary = {"threshold": cal.threshold, "theta": ood.theta}
    run.say(f"confidence threshold {cal.threshold:g}, novelty threshold {ood.theta:.6g} "
            f"({ood.rejected_count}/{ood.samples} calibration crops rejected)")
    return EXIT_OK


def _model_test(run: Run, split: str) -> tuple[dict, bool, str]:
    manifest = _dataset(run)
    detector, cage = _load_models(run)
    records = _records(run, manifest, split, None)
    report = build_report(split, evaluate_frames(records, manifest.frame, detector, cage),
                          run.config["req4_bound"])
    passed = all(v.passed for v in report.verdicts["model+ood"])
    return json.loads(dumps(report.to_dict())), passed, report.text()


def cmd_eval_model(run: Run, args: argparse.Namespace) -> int:
    data, passed, text = _model_test(run, "internal-test")
    path = run.write(run.path("reports", "internal_test.json"), json.dumps(data, indent=1, sort_keys=True))
    run.register("X", path)
    run.summary = {"passed": passed}
    run.say(text)
    return EXIT_OK if passed else EXIT_FAIL


def independence_violations(history: Sequence[dict]) -> list[dict]:
    return [e for e in history if e.get("command") in DEVELOPMENT_COMMANDS
            and "verification" in e.get("splits_accessed", ())]


def cmd_verify_model(run: Run, args: argparse.Namespace) -> int:
    history = read_run_manifest(run.out)
    bad = independence_violations(history)
    if bad:
        lines = [f"{e['command']} (started {e['started']})" for e in bad]
        raise IndependenceViolation("independence violation: the verification split was accessed during "
                                    "development by " + "; ".join(lines))
    data, passed, text = _model_test(run, "verification")
    path = run.write(run.path("reports", "verification.json"), json.dumps(data, indent=1, sort_keys=True))
    run.register("Z", path)
    manifest = DatasetManifest.load(run.out / "dataset")
    log = {"split": "verification", "dataset_hash": manifest.hash,
           "verification_scenarios": sorted(e["id"] for e in manifest.scenarios if e["split"] == "verification"),
           "model_sha256": Registry.load(run.registry_path).records["V"].sha256,
           "development_commands_checked": sum(e.get("command") in DEVELOPMENT_COMMANDS for e in history),
           "independence": "no development command accessed the verification split",
           "passed": passed}
    log_path = run.write(run.path("logs", "verification_log.json"), json.dumps(log, indent=1, sort_keys=True))
    run.register("AA", log_path)
    run.summary = {"passed": passed}
    run.say(text)
    return EXIT_OK if passed else EXIT_FAIL


def cmd_system_test(run: Run, args: argparse.Namespace) -> int:
    det = run.need(run.out / "models" / "detector.npz", "train-detector")
    cage_path = run.need(run.out / "models" / "cage.npz", "calibrate")
    try:
        pipeline = load_pipeline(det, cage_path)
    except ConfigurationError as exc:
        raise CommandError(str(exc)) from exc
    if args.no_ood:
        pipeline = dataclasses.replace(pipeline, cage=pipeline.cage.without_ood())
    cases = operational_cases(run.seed)
    suite_path = run.path("scenarios", "operational.json")
    save_suite([c.scenario for c in cases], suite_path)
    run.outputs.append(str(suite_path))
    run.register("EE", suite_path)
    report = run_suite(cases, pipeline, jitter_seed=int(run.config["jitter_seed"]))
    path = run.write(run.path("reports", "system_test.json"), report.to_json(timing=False))
    run.register("FF", path)
    erroneous = {"ood_enabled": report.ood_enabled,
                 "failures": [r.to_dict(False) for r in report.failures],
                 "requirement_offenders": {k: c["offending"] for k, c in report.requirement_checks.items()
                                           if c["offending"]}}
    log_path = run.write(run.path("logs", "erroneous_behaviour.json"), json.dumps(erroneous, indent=1, sort_keys=True))
    run.register("DD", log_path)
    run.summary = {"passed": report.passed, "cases": len(report.results), "failures": len(report.failures)}
    run.say(report.table())
    return EXIT_OK if report.passed else EXIT_FAIL


def _documents(run: Run) -> dict[str, str]:
    static = yaml.safe_load(resources.files("paeb.safety_case").joinpath("data/documents.yaml").read_text())
    docs = {aid: f"# [{aid}] {INVENTORY[aid].title}\n\n" + "".join(f"- {line}\n" for line in lines)
            for aid, lines in static.items()}
    matrix = traceability_matrix(load_mapping())
    docs["J"] = (f"# [J] {INVENTORY['J'].title}\n\n"
                 f"ML requirements without data support: {', '.join(sorted(matrix.unmapped_ml)) or 'none'}\n"
                 f"Declared exemptions: {', '.join(sorted(matrix.exemptions)) or 'none'}\n"
                 f"Exemptions hold: {matrix.exemptions_hold}\n"
                 f"Mapping warnings: {len(matrix.warnings)}\n")
    docs["M"] = f"# [M] {INVENTORY['M'].title}\n\n```\n{matrix.render()}\n```\n"
    return dict(sorted(docs.items()))


def cmd_assemble_case(run: Run, args: argparse.Namespace) -> int:
    for aid, text in _documents(run).items():
        run.register(aid, run.write(run.path("case", "docs", f"{aid}.md"), text))
    patterns, _ = load_patterns()
    for p in patterns:
        path = run.write(run.path("case", "patterns", f"{p.pattern_artifact}.dot"), to_dot(pattern_graph(p)))
        run.register(p.pattern_artifact, path)
    registry = Registry.load(run.registry_path)
    for stage in STAGES:
        p = patterns[stage - 1]
        text = argument_text(instantiate_patterns(registry), registry, stage)
        run.register(p.argument_artifact, run.write(run.path("case", "arguments", f"{p.argument_artifact}.txt"), text))
        registry = Registry.load(run.registry_path)
    graph = instantiate_patterns(registry)
    findings = validate_case(graph, registry)
    run.write(run.path("case", "case.json"), export_case(graph, "json", registry))
    run.write(run.path("case", "case.dot"), export_case(graph, "dot"))
    errors = [f for f in findings if f.severity == "error"]
    run.summary = {"findings": [dataclasses.asdict(f) for f in findings], "errors": len(errors)}
    run.say(f"{len(graph.nodes)} nodes, {len(graph.links)} links, {len(findings)} findings")
    for f in findings:
        run.say(f"  {f.severity}: {f.message}")
    return EXIT_FAIL if errors else EXIT_OK


def cmd_report(run: Run, args: argparse.Namespace) -> int:
    registry = Registry.load(run.registry_path)
    graph = instantiate_patterns(registry)
    findings = validate_case(graph, registry)
    text = export_case(graph, "report", registry, findings)
    run.write(run.path("case", "report.txt"), text)
    run.summary = {"present": sum(registry.present(a) for a in INVENTORY), "findings": len(findings)}
    run.say(text.rstrip("\n"))
    return EXIT_OK


COMMANDS: dict[str, tuple[Callable[[Run, argparse.Namespace], int], str]] = {
    "gen-data": (cmd_gen_data, "generate the frame campaign and its three splits"),
    "data-test": (cmd_data_test, "run the data expectation suite"),
    "train-detector": (cmd_train_detector, "fit the detector on the development training subset"),
    "train-cage": (cmd_train_cage, "fit the novelty autoencoder on development crops"),
    "calibrate": (cmd_calibrate, "calibrate the confidence and novelty thresholds"),
    "eval-model": (cmd_eval_model, "test the models on the internal test split"),
    "verify-model": (cmd_verify_model, "verify the models on the sequestered verification split"),
    "system-test": (cmd_system_test, "run the operational and randomized system suites"),
    "assemble-case": (cmd_assemble_case, "write the case documents, register them and validate the case"),
    "report": (cmd_report, "print the assembled case with artifact hashes"),
}


# =============================================================================
# Entry point
# =============================================================================


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="random seed for every stage")
    common.add_argument("--scale", type=float, help="fraction of the scenario grid to generate")
    common.add_argument("--config", type=Path, help="YAML file overriding the default settings")
    common.add_argument("--out", type=Path, help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("--format", choices=("text", "machine"), default="text")
    parser = argparse.ArgumentParser(prog="paeb", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name in ("train-detector", "train-cage", "calibrate"):
            p.add_argument("--split", choices=SPLITS, default="development", help="data the stage reads")
        if name == "data-test":
            p.add_argument("--split", choices=SPLITS, help="restrict the checks to one split")
        if name == "system-test":
            p.add_argument("--no-ood", action="store_true", help="switch the novelty check off")
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    config = dict(DEFAULTS)
    if args.config is not None:
        loaded = yaml.safe_load(args.config.read_text()) or {}
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise CommandError(f"unknown configuration keys {unknown}; known: {sorted(DEFAULTS)}")
        config.update(loaded)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.scale is not None:
        config["scale"] = args.scale
    return config


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = args.out or Path(os.environ.get(OUT_ENV, DEFAULT_OUT))
    out.mkdir(parents=True, exist_ok=True)
    machine = args.format == "machine"
    try:
        lock = FileLock(str(out / LOCK_FILE), timeout=0)
        lock.acquire()
    except Timeout:
        print(f"error: another command holds {out / LOCK_FILE}", file=sys.stderr)
        return EXIT_FAIL
    try:
        return _execute(args, argv, out, machine)
    finally:
        lock.release()


def _execute(args: argparse.Namespace, argv: list[str], out: Path, machine: bool) -> int:
    started = _now()
    run = Run(args.command, out, dict(DEFAULTS), machine)
    message = ""
    try:
        run.config = resolve_config(args)
        code = COMMANDS[args.command][0](run, args)
    except IndependenceViolation as exc:
        code, message = EXIT_INDEPENDENCE, str(exc)
    except (CommandError, ValueError, OSError, KeyError) as exc:
        code, message = EXIT_FAIL, f"{type(exc).__name__}: {exc}" if not isinstance(exc, CommandError) else str(exc)
    entry = {"command": args.command, "argv": argv, "config": run.config, "config_hash": config_hash(run.config),
             "seed": run.seed, "inputs": run.inputs, "outputs": run.outputs, "artifacts": run.artifacts,
             "splits_accessed": run.splits, "started": started, "finished": _now(), "exit_code": code}
    if message:
        entry["error"] = message
        print(f"error: {message}", file=sys.stderr)
    _append_entry(out, entry)
    if machine:
        print(json.dumps({"command": args.command, "exit_code": code, "artifacts": run.artifacts,
                          "summary": run.summary, **({"error": message} if message else {})}, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
