"""Requirements-to-data traceability matrix and its coverage checks."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml


@dataclass(frozen=True)
class TraceabilityMatrix:
    ml_requirements: tuple[str, ...]
    data_requirements: tuple[str, ...]
    cells: frozenset[tuple[str, str]]  # (data requirement, ML requirement)
    exemptions: frozenset[str]
    warnings: tuple[str, ...]

    @property
    def unmapped_ml(self) -> frozenset[str]:
        mapped = {m for _, m in self.cells}
        return frozenset(m for m in self.ml_requirements if m not in mapped)

    @property
    def exemptions_hold(self) -> bool:
        """The ML requirements without data support are exactly the declared exemptions."""
        return self.unmapped_ml == self.exemptions

    def render(self) -> str:
        width = max(len(d) for d in self.data_requirements) if self.data_requirements else 4
        short = [m.replace("SYS-", "") for m in self.ml_requirements]
        lines = [" " * width + " | " + " ".join(f"{s:>8}" for s in short)]
        for d in self.data_requirements:
            row = " ".join(f"{'x' if (d, m) in self.cells else '.':>8}" for m in self.ml_requirements)
            lines.append(f"{d:<{width}} | {row}")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"ml_requirements": list(self.ml_requirements), "data_requirements": list(self.data_requirements),
                "cells": sorted([d, m] for d, m in self.cells), "exemptions": sorted(self.exemptions),
                "exemptions_hold": self.exemptions_hold, "warnings": list(self.warnings)}


def load_mapping(path: str | Path | None = None) -> dict:
    if path is None:
        text = resources.files("paeb.safety_case").joinpath("data/traceability.yaml").read_text()
    else:
        text = Path(path).read_text()
    return yaml.safe_load(text) or {}


def traceability_matrix(config: dict) -> TraceabilityMatrix:
    """Cells from the mapping; requirement lists default to the packaged ones."""
    defaults = load_mapping()
    ml = tuple(config.get("ml_requirements") or defaults["ml_requirements"])
    data = tuple(config.get("data_requirements") or defaults["data_requirements"])
    exempt = frozenset(config.get("exemptions", ()))
    mapping = config.get("mapping") or {}
    warnings, cells = [], set()
    for d, targets in mapping.items():
        if d not in data:
            warnings.append(f"{d} is not a known data requirement")
            continue
        for m in targets or ():
            if m not in ml:
                warnings.append(f"{d} maps to unknown ML requirement {m}")
            else:
                cells.add((d, m))
    for d in data:
        if not any(c[0] == d for c in cells):
            warnings.append(f"{d} supports no ML requirement")
    for m in ml:
        mapped = any(c[1] == m for c in cells)
        if not mapped and m not in exempt:
            warnings.append(f"{m} is supported by no data requirement")
        if mapped and m in exempt:
            warnings.append(f"{m} is declared exempt but is mapped")
    return TraceabilityMatrix(ml, data, frozenset(cells), exempt, tuple(warnings))
