import json
import re

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from paeb.safety_case import (
    INVENTORY, GsnGraph, GsnLink, GsnNode, Registry, export_case, from_json, instantiate_patterns, kind_of,
    load_mapping, load_patterns, pattern_graph, register_artifact, to_dot, to_json, traceability_matrix,
    validate_case,
)
from paeb.safety_case.export import argument_text


@pytest.fixture()
def full_registry(tmp_path):
    reg = Registry()
    for aid in INVENTORY:
        path = tmp_path / f"{aid}.txt"
        path.write_text(f"evidence {aid}\n")
        register_artifact(reg, aid, path)
    return reg


def _without(reg, aid):
    return Registry({k: v for k, v in reg.records.items() if k != aid})


# =============================================================================
# Artifact inventory and registry
# =============================================================================


class TestInventory:
    def test_thirty_four_ids(self):
        assert len(INVENTORY) == 34
        assert list(INVENTORY)[:3] == ["A", "B", "C"] and list(INVENTORY)[-2:] == ["GG", "HH"]

    def test_stage_columns(self):
        # a sample of rows written out by hand from the assurance table
        assert INVENTORY["A"].input_to == (1, 6) and INVENTORY["A"].output_from == ()
        assert INVENTORY["E"].input_to == (2,) and INVENTORY["E"].output_from == (1,)
        assert INVENTORY["H"].input_to == (3, 4, 5) and INVENTORY["H"].output_from == (2,)
        assert INVENTORY["V"].input_to == (5, 6) and INVENTORY["V"].output_from == (4,)
        assert INVENTORY["EE"].input_to == (6,) and INVENTORY["EE"].output_from == ()
        assert INVENTORY["FF"].input_to == () and INVENTORY["FF"].output_from == (6,)
        for spec in INVENTORY.values():
            assert spec.stages and spec.stages <= {1, 2, 3, 4, 5, 6}

    def test_patterns_and_arguments_per_stage(self):
        patterns = {a for a, s in INVENTORY.items() if s.title.endswith("Argument Pattern")}
        arguments = {a for a, s in INVENTORY.items() if s.title.endswith("Argument")}
        assert patterns == {"F", "I", "R", "W", "BB", "GG"}
        assert arguments == {"G", "K", "T", "Y", "CC", "HH"}


class TestRegistry:
    def test_register_marks_present(self, tmp_path):
        path = tmp_path / "verification.json"
        path.write_text("{}")
        reg = register_artifact(Registry(), "[Z]", path)
        assert reg.present("Z")
        assert len(reg.records["Z"].sha256) == 64

    def test_unknown_id_lists_valid_ids(self, tmp_path):
        with pytest.raises(KeyError, match=r"\[HH\]"):
            register_artifact(Registry(), "[ZZ]", tmp_path)

    def test_changed_file_keeps_history(self, tmp_path):
        path = tmp_path / "a.txt"
        path.write_text("one")
        reg = register_artifact(Registry(), "A", path)
        first = reg.records["A"].sha256
        path.write_text("two")
        register_artifact(reg, "A", path)
        assert reg.records["A"].sha256 != first
        assert reg.records["A"].history == [{"path": str(path), "sha256": first}]
        register_artifact(reg, "A", path)
        assert len(reg.records["A"].history) == 1

    def test_round_trip(self, full_registry, tmp_path):
        full_registry.save(tmp_path / "registry.json")
        back = Registry.load(tmp_path / "registry.json")
        assert back.records == full_registry.records

    def test_directory_hash_covers_contents(self, tmp_path):
        d = tmp_path / "model"
        d.mkdir()
        (d / "x.bin").write_bytes(b"1")
        reg = register_artifact(Registry(), "V", d)
        before = reg.records["V"].sha256
        (d / "x.bin").write_bytes(b"2")
        assert register_artifact(reg, "V", d).records["V"].sha256 != before

    def test_deleted_file_is_absent(self, tmp_path):
        path = tmp_path / "a.txt"
        path.write_text("x")
        reg = register_artifact(Registry(), "A", path)
        path.unlink()
        assert not reg.present("A")


# =============================================================================
# Patterns
# =============================================================================


class TestPatterns:
    def test_goal_inventory(self):
        g = instantiate_patterns()
        goals = {n for n in g.nodes if kind_of(n) == "goal"}
        want = {"G1.1"} | {f"G2.{i}" for i in range(1, 7)} | {f"G3.{i}" for i in range(1, 8)} \
            | {f"G4.{i}" for i in range(1, 6)} | {f"G5.{i}" for i in range(1, 7)} | {f"G6.{i}" for i in range(1, 9)}
        assert goals == want

    def test_kinds_match_prefixes(self):
        for n in instantiate_patterns().nodes.values():
            assert n.kind == kind_of(n.id)
        with pytest.raises(ValueError):
            GsnNode("G9.1", "solution", "x")

    def test_single_root_per_pattern(self):
        patterns, _ = load_patterns()
        assert [p.stage for p in patterns] == [1, 2, 3, 4, 5, 6]
        for p in patterns:
            assert pattern_graph(p).roots == {p.stage: p.root}

    def test_verbatim_ids_collide_and_overlay_fixes_them(self):
        raw, _ = load_patterns(corrected=False)
        ids = [n.id for p in raw for n in p.nodes]
        assert {i for i in ids if ids.count(i) > 1} == {"S2.1", "S2.2", "J3.1", "C5.1"}
        g = instantiate_patterns()
        assert {(n.stage, n.original_id, n.id) for n in g.nodes.values() if n.original_id} == \
            {(3, "S2.1", "S3.1"), (3, "S2.2", "S3.2"), (4, "J3.1", "J4.1"), (6, "C5.1", "C6.2")}

    def test_acyclic_support(self):
        g = instantiate_patterns()
        assert g.support_cycle() == []
        with pytest.raises(ValueError, match="cycle"):
            GsnGraph({"G1": GsnNode("G1", "goal", "a"), "G2": GsnNode("G2", "goal", "b")},
                     [GsnLink("G1", "G2", "supported-by"), GsnLink("G2", "G1", "supported-by")])

    def test_dangling_link_rejected(self):
        with pytest.raises(ValueError, match="missing node"):
            GsnGraph({"G1": GsnNode("G1", "goal", "a")}, [GsnLink("G1", "Sn1", "supported-by")])

    def test_cross_stage_links(self):
        g = instantiate_patterns()
        assert set(g.children("G2.2")) >= {"G3.1", "G4.1"}
        assert g.children("G2.5") == ["G5.1"] and g.children("G2.6") == ["G5.1"]
        assert set(g.children("S1.1")) == {"G2.1", "G6.1"}

    def test_required_bindings(self):
        g = instantiate_patterns()
        assert "Sn2.2" in g.bound_nodes("J")
        for goal in ("G3.4", "G3.5", "G3.6", "G3.7"):
            assert any("S" in g.nodes[c].artifacts for c in g.children(goal))
        assert any("X" in g.nodes[c].artifacts for c in g.children("G4.2"))
        assert any("Z" in g.nodes[c].artifacts for c in g.children("G5.4"))
        for goal in ("G5.5", "G5.6"):
            assert any("AA" in g.nodes[c].artifacts for c in g.children(goal))
        assert any("FF" in g.nodes[c].artifacts for c in g.children("G6.4"))
        assert any("DD" in g.nodes[c].artifacts for c in g.children("S6.4", "in-context-of"))


# =============================================================================
# Validation
# =============================================================================


class TestValidation:
    def test_full_registry_no_findings(self, full_registry):
        g = instantiate_patterns(full_registry)
        assert validate_case(g, full_registry) == []
        assert not any(n.undeveloped for n in g.solutions())

    def test_empty_registry_all_solutions_undeveloped(self):
        g = instantiate_patterns(Registry())
        assert all(n.undeveloped for n in g.solutions())

    def test_missing_z_names_g54(self, full_registry):
        reg = _without(full_registry, "Z")
        findings = validate_case(instantiate_patterns(reg), reg)
        assert len(findings) == 1
        assert findings[0].artifact == "Z" and "G5.4" in findings[0].message

    @pytest.mark.parametrize("aid", list(INVENTORY))
    def test_each_deletion_names_exactly_its_nodes(self, full_registry, aid):
        reg = _without(full_registry, aid)
        findings = validate_case(instantiate_patterns(reg), reg)
        nodes = instantiate_patterns().bound_nodes(aid)
        assert nodes
        assert sorted(f.node for f in findings) == sorted(nodes)
        assert {f.artifact for f in findings} == {aid}

    def test_orphaned_artifact_is_informational(self, full_registry):
        g = instantiate_patterns(full_registry)
        g.nodes["Sn2.2"] = GsnNode("Sn2.2", "solution", "x", 2)  # drops the only citation of [J]
        findings = validate_case(g, full_registry)
        kinds = {(f.kind, f.severity, f.artifact) for f in findings}
        assert ("unreferenced-artifact", "info", "J") in kinds
        assert ("undeveloped-solution", "error", None) in kinds

    def test_stage_mismatch_detected(self, full_registry):
        g = instantiate_patterns(full_registry)
        g.nodes["C1.1"] = GsnNode("C1.1", "context", "x", 1, ("FF",))
        messages = [f.message for f in validate_case(g, full_registry) if f.kind == "stage-mismatch"]
        assert any("[C]" in m and "stage 1" in m for m in messages)
        assert any("[FF]" in m and "stage 6" in m for m in messages)

    @settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(st.sets(st.sampled_from(list(INVENTORY)), max_size=34))
    def test_findings_empty_iff_everything_present(self, full_registry, dropped):
        reg = Registry({k: v for k, v in full_registry.records.items() if k not in dropped})
        g = instantiate_patterns(reg)
        findings = validate_case(g, reg)
        assert (findings == []) == (not dropped)
        assert {f.artifact for f in findings} == set(dropped)


# =============================================================================
# Traceability
# =============================================================================


class TestTraceability:
    def test_default_mapping_exempts_exactly_two(self):
        m = traceability_matrix(load_mapping())
        assert m.exemptions_hold
        assert m.unmapped_ml == {"SYS-PER-REQ4", "SYS-PER-REQ6"}
        assert m.warnings == ()

    def test_empty_mapping_warns_for_every_requirement(self):
        m = traceability_matrix({"mapping": {}})
        assert len(m.warnings) == 20 + 12
        assert not m.exemptions_hold

    def test_single_cell(self):
        cfg = load_mapping()
        cfg["mapping"] = {"DAT-REL-REQ5": ["SYS-ML-REQ1"]}
        m = traceability_matrix(cfg)
        assert ("DAT-REL-REQ5", "SYS-ML-REQ1") in m.cells
        assert not any("DAT-REL-REQ5" in w for w in m.warnings)
        row = next(line for line in m.render().splitlines() if line.startswith("DAT-REL-REQ5"))
        assert row.split("|")[1].split()[0] == "x"

    def test_exempt_but_mapped_warns(self):
        cfg = load_mapping()
        cfg["mapping"]["DAT-COM-REQ6"] = ["SYS-PER-REQ4"]
        m = traceability_matrix(cfg)
        assert any("declared exempt" in w for w in m.warnings)


# =============================================================================
# Export
# =============================================================================


class TestExport:
    def test_two_node_dot(self):
        g = GsnGraph({"G1": GsnNode("G1", "goal", "top"), "Sn1": GsnNode("Sn1", "solution", "ev")},
                     [GsnLink("G1", "Sn1", "supported-by")])
        dot = to_dot(g)
        assert len(re.findall(r"^\s+\"\w+\" \[shape", dot, re.M)) == 2
        assert len(re.findall(r"->", dot)) == 1

    def test_json_round_trip(self, full_registry):
        g = instantiate_patterns(full_registry)
        back = from_json(to_json(g, full_registry))
        assert back.structure() == g.structure()
        assert back.roots == g.roots

    def test_report_references_every_hash(self, full_registry):
        g = instantiate_patterns(full_registry)
        doc = export_case(g, "report", full_registry)
        for rec in full_registry.records.values():
            assert rec.sha256 in doc
        machine = json.loads(export_case(g, "json", full_registry))
        assert {a["sha256"] for a in machine["artifacts"].values()} == \
            {r.sha256 for r in full_registry.records.values()}

    def test_report_ordered_by_stage(self, full_registry):
        doc = export_case(instantiate_patterns(full_registry), "report", full_registry)
        positions = [doc.index(f"Stage {k}\n") for k in range(1, 7)]
        assert positions == sorted(positions)
        for aid in ("G", "K", "T", "Y", "CC", "HH"):
            assert f"| [{aid}] " in doc

    def test_argument_text_marks_absent(self, full_registry):
        reg = _without(full_registry, "FF")
        text = argument_text(instantiate_patterns(reg), reg, 6)
        assert "[FF] Integration Testing Results: ABSENT" in text

    def test_unknown_format(self):
        with pytest.raises(ValueError, match="format"):
            export_case(instantiate_patterns(), "pdf")
