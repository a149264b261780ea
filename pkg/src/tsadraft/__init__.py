"""Evidence-grounded drafting of target safety assessment reports.

The pipeline runs eight section agents in a fixed order, stores every tool
result in an append-only evidence store, verifies each draft against that
store before accepting it, and leaves behind an assessment directory that
can be resumed, refined section by section, and scored.
"""

from .backend import (
    Budget,
    Cassette,
    HttpBackend,
    ModelRequest,
    ModelTurn,
    RecordingBackend,
    ReplayBackend,
    fingerprint,
)
from .config import load_config
from .domain import (
    Domain,
    Report,
    SectionDraft,
    SectionStatus,
    TargetQuery,
    normalize_target_identifier,
    parse_markdown_report,
    report_to_markdown,
)
from .drafting import ScriptedBackend
from .errors import TsaError
from .evaluation import EvaluationReport, evaluate_all
from .evidence import EvidenceRecord, EvidenceStore, Provenance
from .gateway import ToolGateway, ToolResult, ToolSchema
from .grounding import SectionVerification, extract_claims, verify_section
from .memory import CompressedSection, DependencyGraph, compress, inject_for
from .orchestrator import Assessment, PipelinePlan, export, plan, resume, run
from .refinement import RefinementAction, apply, capture_preferences, staleness
from .servers import FixtureServer

__version__ = "0.1.0"

__all__ = [
    "Assessment",
    "Budget",
    "Cassette",
    "CompressedSection",
    "DependencyGraph",
    "Domain",
    "EvaluationReport",
    "EvidenceRecord",
    "EvidenceStore",
    "FixtureServer",
    "HttpBackend",
    "ModelRequest",
    "ModelTurn",
    "PipelinePlan",
    "Provenance",
    "RecordingBackend",
    "RefinementAction",
    "ReplayBackend",
    "Report",
    "ScriptedBackend",
    "SectionDraft",
    "SectionStatus",
    "SectionVerification",
    "TargetQuery",
    "ToolGateway",
    "ToolResult",
    "ToolSchema",
    "TsaError",
    "apply",
    "capture_preferences",
    "compress",
    "evaluate_all",
    "export",
    "extract_claims",
    "fingerprint",
    "inject_for",
    "load_config",
    "normalize_target_identifier",
    "parse_markdown_report",
    "plan",
    "report_to_markdown",
    "resume",
    "run",
    "staleness",
    "verify_section",
]
