"""Assurance-case assembly: artifact registry, argument patterns, traceability, export."""

from .export import FORMATS, argument_text, export_case, from_json, to_dot, to_json
from .gsn import (
    Finding, GsnGraph, GsnLink, GsnNode, Pattern, instantiate_patterns, kind_of, load_patterns, pattern_graph,
    validate_case,
)
from .registry import (
    INVENTORY, STAGES, ArtifactRecord, ArtifactSpec, Registry, content_hash, normalize_id, register_artifact,
)
from .traceability import TraceabilityMatrix, load_mapping, traceability_matrix
