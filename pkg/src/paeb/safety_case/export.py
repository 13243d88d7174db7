"""Graph-description, machine-readable and human-readable forms of the assembled case."""

from __future__ import annotations

import json

from .gsn import GsnGraph, GsnLink, GsnNode, load_patterns
from .registry import INVENTORY, Registry

FORMATS = ("dot", "json", "report")

_SHAPES = {"goal": "box", "strategy": "parallelogram", "context": "box, style=rounded",
           "justification": "ellipse", "assumption": "ellipse", "solution": "circle"}


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def to_dot(graph: GsnGraph) -> str:
    lines = ["digraph case {", "  rankdir=TB;"]
    for n in graph.nodes.values():
        label = f"{n.id}\\n{n.statement}" + (f"\\n[{', '.join(n.artifacts)}]" if n.artifacts else "")
        extra = ", color=gray, fontcolor=gray" if n.undeveloped else ""
        lines.append(f"  {_quote(n.id)} [shape={_SHAPES[n.kind]}, label={_quote(label)}{extra}];")
    for l in graph.links:
        style = "" if l.type == "supported-by" else " [style=dashed, arrowhead=empty]"
        lines.append(f"  {_quote(l.source)} -> {_quote(l.target)}{style};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_json(graph: GsnGraph, registry: Registry | None = None) -> str:
    data = {"schema": "assurance-case/1",
            "roots": {str(k): v for k, v in sorted(graph.roots.items())},
            "nodes": [{"id": n.id, "kind": n.kind, "statement": n.statement, "stage": n.stage,
                       "artifacts": list(n.artifacts), "undeveloped": n.undeveloped,
                       "original_id": n.original_id, "derived": n.derived} for n in graph.nodes.values()],
            "links": [[l.source, l.target, l.type] for l in graph.links]}
    if registry is not None:
        data["artifacts"] = {aid: ({"title": spec.title, "path": registry.records[aid].path,
                                    "sha256": registry.records[aid].sha256, "present": registry.present(aid)}
                                   if aid in registry.records else {"title": spec.title, "present": False})
                             for aid, spec in INVENTORY.items()}
    return json.dumps(data, indent=1, sort_keys=True)


def from_json(text: str) -> GsnGraph:
    data = json.loads(text)
    nodes = {n["id"]: GsnNode(n["id"], n["kind"], n["statement"], n.get("stage"), tuple(n.get("artifacts", ())),
                              n.get("undeveloped", False), n.get("original_id"), n.get("derived", False))
             for n in data["nodes"]}
    links = [GsnLink(s, t, ty) for s, t, ty in data["links"]]
    return GsnGraph(nodes, links, {int(k): v for k, v in data.get("roots", {}).items()})


def argument_text(graph: GsnGraph, registry: Registry, stage: int) -> str:
    """Boxed argument of one stage: its pattern instantiated through the artifacts it cites."""
    patterns, _ = load_patterns()
    p = next(x for x in patterns if x.stage == stage)
    cited = []
    for n in graph.nodes.values():
        if n.stage == stage:
            cited.extend(a for a in n.artifacts if a not in cited and a != p.argument_artifact)
    lines = [f"[{p.argument_artifact}] {INVENTORY[p.argument_artifact].title}",
             f"Stage {stage} ({p.title}) is argued by instantiating pattern [{p.pattern_artifact}] "
             f"from root {p.root} with the following artifacts:"]
    for aid in cited:
        rec = registry.records.get(aid)
        digest = rec.sha256 if rec is not None and registry.present(aid) else "ABSENT"
        lines.append(f"  [{aid}] {INVENTORY[aid].title}: {digest}")
    return "\n".join(lines) + "\n"


def _tree(graph: GsnGraph, node_id: str, depth: int, stage: int, seen: set[str], out: list[str]) -> None:
    n = graph.nodes[node_id]
    mark = " (undeveloped)" if n.undeveloped else ""
    cites = f" [{', '.join(n.artifacts)}]" if n.artifacts else ""
    out.append(f"{'  ' * depth}{n.id} {n.kind}: {n.statement}{cites}{mark}")
    if node_id in seen:
        return
    seen.add(node_id)
    for c in graph.children(node_id, "in-context-of"):
        _tree(graph, c, depth + 1, stage, seen, out)
    for c in graph.children(node_id):
        if graph.nodes[c].stage == stage:
            _tree(graph, c, depth + 1, stage, seen, out)
        else:
            out.append(f"{'  ' * (depth + 1)}-> {c} (stage {graph.nodes[c].stage})")


def report(graph: GsnGraph, registry: Registry, findings: list | None = None) -> str:
    """Stage-ordered case with each stage's argument text and the hashes of all artifacts."""
    out = ["ASSURANCE CASE", ""]
    for stage in sorted(graph.roots):
        out.append(f"Stage {stage}")
        _tree(graph, graph.roots[stage], 1, stage, set(), out)
        out.append("")
        box = argument_text(graph, registry, stage).rstrip("\n").splitlines()
        width = max(len(x) for x in box)
        out.append("+" + "-" * (width + 2) + "+")
        out.extend(f"| {x:<{width}} |" for x in box)
        out.append("+" + "-" * (width + 2) + "+")
        out.append("")
    out.append("Artifacts")
    for aid, spec in INVENTORY.items():
        rec = registry.records.get(aid)
        state = rec.sha256 if rec is not None and registry.present(aid) else "ABSENT"
        out.append(f"  [{aid}] {spec.title}: {state}")
    if findings is not None:
        out.append("")
        out.append(f"Findings: {len(findings)}")
        out.extend(f"  {f.severity}: {f.message}" for f in findings)
    return "\n".join(out) + "\n"


def export_case(graph: GsnGraph, fmt: str, registry: Registry | None = None, findings: list | None = None) -> str:
    if fmt == "dot":
        return to_dot(graph)
    if fmt == "json":
        return to_json(graph, registry)
    if fmt == "report":
        return report(graph, registry or Registry(), findings)
    raise ValueError(f"unknown export format {fmt!r}; choose from {FORMATS}")
