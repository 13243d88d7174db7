"""Argument patterns as goal-structure graphs, bound to evidence artifacts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources

from .registry import INVENTORY, Registry, normalize_id

KINDS = ("goal", "strategy", "context", "justification", "assumption", "solution")
LINK_TYPES = ("supported-by", "in-context-of")
_PREFIX = (("Sn", "solution"), ("G", "goal"), ("S", "strategy"), ("C", "context"),
           ("J", "justification"), ("A", "assumption"))


def kind_of(node_id: str) -> str:
    for prefix, kind in _PREFIX:
        if node_id.startswith(prefix) and node_id[len(prefix):][:1].isdigit():
            return kind
    raise ValueError(f"node id {node_id!r} follows no known prefix")


@dataclass(frozen=True)
class GsnNode:
    id: str
    kind: str
    statement: str
    stage: int | None = None
    artifacts: tuple[str, ...] = ()
    undeveloped: bool = False
    original_id: str | None = None  # id as printed before correction
    derived: bool = False  # not drawn in the source figure, added to bind a stage input

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"{self.id}: unknown kind {self.kind!r}")
        if kind_of(self.id) != self.kind:
            raise ValueError(f"{self.id}: kind {self.kind} contradicts the id prefix")


@dataclass(frozen=True)
class GsnLink:
    source: str
    target: str
    type: str

    def __post_init__(self) -> None:
        if self.type not in LINK_TYPES:
            raise ValueError(f"unknown link type {self.type!r}")


@dataclass
class GsnGraph:
    nodes: dict[str, GsnNode]
    links: list[GsnLink]
    roots: dict[int, str] = field(default_factory=dict)  # stage -> root goal

    def __post_init__(self) -> None:
        for link in self.links:
            for end in (link.source, link.target):
                if end not in self.nodes:
                    raise ValueError(f"link {link.source} -> {link.target} names missing node {end}")
        cycle = self.support_cycle()
        if cycle:
            raise ValueError(f"supported-by cycle through {' -> '.join(cycle)}")

    def children(self, node_id: str, link_type: str = "supported-by") -> list[str]:
        return [l.target for l in self.links if l.source == node_id and l.type == link_type]

    def parents(self, node_id: str, link_type: str = "supported-by") -> list[str]:
        return [l.source for l in self.links if l.target == node_id and l.type == link_type]

    def support_cycle(self) -> list[str]:
        adj: dict[str, list[str]] = {n: [] for n in self.nodes}
        for l in self.links:
            if l.type == "supported-by":
                adj[l.source].append(l.target)
        state: dict[str, int] = {}
        stack: list[str] = []

        def visit(n: str) -> list[str]:
            state[n] = 1
            stack.append(n)
            for m in adj[n]:
                if state.get(m) == 1:
                    return stack[stack.index(m):] + [m]
                if m not in state:
                    found = visit(m)
                    if found:
                        return found
            stack.pop()
            state[n] = 2
            return []

        for n in self.nodes:
            if n not in state:
                found = visit(n)
                if found:
                    return found
        return []

    def bound_nodes(self, artifact_id: str) -> list[str]:
        key = normalize_id(artifact_id)
        return [n.id for n in self.nodes.values() if key in n.artifacts]

    def solutions(self) -> list[GsnNode]:
        return [n for n in self.nodes.values() if n.kind == "solution"]

    def structure(self) -> tuple[frozenset, frozenset]:
        nodes = frozenset((n.id, n.kind, n.statement, n.stage, n.artifacts, n.undeveloped)
                          for n in self.nodes.values())
        return nodes, frozenset((l.source, l.target, l.type) for l in self.links)


# =============================================================================
# Pattern data
# =============================================================================


def _load(name: str) -> dict:
    return json.loads(resources.files("paeb.safety_case").joinpath(f"data/{name}").read_text())


@dataclass(frozen=True)
class Pattern:
    stage: int
    title: str
    pattern_artifact: str
    argument_artifact: str
    root: str
    nodes: tuple[GsnNode, ...]
    links: tuple[GsnLink, ...]


def load_patterns(corrected: bool = True) -> tuple[list[Pattern], list[GsnLink]]:
    """The six patterns as stored; with corrected=True the id overlay is applied per stage."""
    raw = _load("patterns.json")
    fixes: dict[int, dict[str, str]] = {}
    if corrected:
        for c in _load("corrections.json")["changelog"]:
            fixes.setdefault(c["stage"], {})[c["original"]] = c["corrected"]
    patterns = []
    for p in raw["patterns"]:
        ren = fixes.get(p["stage"], {})
        nodes = []
        for n in p["nodes"]:
            nid = ren.get(n["id"], n["id"])
            nodes.append(GsnNode(nid, n["kind"], n["statement"], p["stage"],
                                 tuple(normalize_id(a) for a in ([n["artifact"]] if "artifact" in n else [])),
                                 n.get("undeveloped", False), n["id"] if nid != n["id"] else None,
                                 n.get("derived", False)))
        root = ren.get(p["root"], p["root"])
        nodes = [replace(n, artifacts=(p["pattern_artifact"], p["argument_artifact"]) + n.artifacts)
                 if n.id == root else n for n in nodes]
        links = tuple(GsnLink(ren.get(s, s), ren.get(t, t), ty) for s, t, ty in p["links"])
        patterns.append(Pattern(p["stage"], p["title"], p["pattern_artifact"], p["argument_artifact"],
                                root, tuple(nodes), links))
    cross = [GsnLink(s, t, ty) for s, t, ty in raw["cross_links"]]
    return patterns, cross


def pattern_graph(p: Pattern) -> GsnGraph:
    ids = [n.id for n in p.nodes]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ValueError(f"stage {p.stage} repeats node ids {dupes}")
    g = GsnGraph({n.id: n for n in p.nodes}, list(p.links), {p.stage: p.root})
    tops = [n for n in ids if not g.parents(n) and not g.parents(n, "in-context-of")]
    if tops != [p.root]:
        raise ValueError(f"stage {p.stage} has tops {tops}, expected the single root {p.root}")
    return g


def instantiate_patterns(registry: Registry | None = None) -> GsnGraph:
    """Union of the six patterns with cross-stage links; nodes whose evidence is absent are undeveloped."""
    registry = registry or Registry()
    patterns, cross = load_patterns()
    nodes: dict[str, GsnNode] = {}
    links: list[GsnLink] = []
    roots = {}
    for p in patterns:
        g = pattern_graph(p)
        clash = set(g.nodes) & set(nodes)
        if clash:
            raise ValueError(f"stage {p.stage} reuses ids {sorted(clash)} from earlier stages")
        for n in g.nodes.values():
            missing = [a for a in n.artifacts if not registry.present(a)]
            nodes[n.id] = replace(n, undeveloped=n.undeveloped or bool(missing))
        links.extend(g.links)
        roots[p.stage] = p.root
    return GsnGraph(nodes, links + cross, roots)


# =============================================================================
# Validation
# =============================================================================


@dataclass(frozen=True)
class Finding:
    kind: str  # undeveloped-solution | absent-artifact | unreferenced-artifact | stage-mismatch
    severity: str  # error | info
    node: str | None
    artifact: str | None
    message: str


def _stage_findings(graph: GsnGraph) -> list[Finding]:
    out = []
    bound: dict[int, set[str]] = {}
    for n in graph.nodes.values():
        if n.stage is not None:
            bound.setdefault(n.stage, set()).update(n.artifacts)
    for stage in sorted(bound):
        for aid, spec in INVENTORY.items():
            if stage in spec.stages and aid not in bound[stage]:
                role = "input to" if stage in spec.input_to else "output from"
                out.append(Finding("stage-mismatch", "error", graph.roots.get(stage), aid,
                                   f"[{aid}] is an {role} stage {stage} but the stage {stage} argument never cites it"))
        for aid in sorted(bound[stage]):
            spec = INVENTORY[aid]
            if stage not in spec.stages and spec.output_from and min(spec.output_from) > stage:
                out.append(Finding("stage-mismatch", "error", graph.roots.get(stage), aid,
                                   f"stage {stage} cites [{aid}], which is only produced in stage "
                                   f"{min(spec.output_from)}"))
    return out


def validate_case(graph: GsnGraph, registry: Registry) -> list[Finding]:
    findings = []
    for n in graph.nodes.values():
        if n.kind == "solution" and not n.artifacts:
            findings.append(Finding("undeveloped-solution", "error", n.id, None,
                                    f"{n.id} binds no evidence artifact"))
        for aid in n.artifacts:
            if not registry.present(aid):
                goals = graph.parents(n.id) if n.kind == "solution" else []
                via = f" (supporting {', '.join(goals)})" if goals else ""
                findings.append(Finding("absent-artifact", "error", n.id, aid,
                                        f"{n.id}{via} cites [{aid}] {INVENTORY[aid].title}, which is absent"))
    cited = {a for n in graph.nodes.values() for a in n.artifacts}
    for aid, spec in INVENTORY.items():
        if aid not in cited:
            orphan = registry.present(aid)
            findings.append(Finding("unreferenced-artifact", "info" if orphan else "error", None, aid,
                                    f"[{aid}] {spec.title} is {'registered but ' if orphan else ''}"
                                    f"never cited by the argument"))
    return findings + _stage_findings(graph)
