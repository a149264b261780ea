"""Error taxonomy shared across the pipeline.

Every error carries a stable machine-readable ``code`` so the HTTP layer,
the CLI, and hook traces can surface module failures verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class TsaError(Exception):
    """Base class; ``code`` is the stable identifier used on every surface."""

    code = "internal-error"

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def __str__(self) -> str:
        return f"[{self.code}] {self.message}"


class InvalidArgument(TsaError):
    code = "invalid-argument"


class SkillNotFound(TsaError):
    code = "skill-not-found"


class ParseError(TsaError):
    code = "parse-error"


class LayerInvalid(TsaError):
    code = "layer-invalid"


class StorageError(TsaError):
    code = "storage-error"


class NotFound(TsaError):
    code = "not-found"


class InvalidProvenance(TsaError):
    code = "invalid-provenance"


class ProvenanceImmutable(TsaError):
    code = "provenance-immutable"


class StateCorrupt(TsaError):
    code = "state-corrupt"


class CompressionError(TsaError):
    code = "compression-error"


class DependencyUnsatisfied(TsaError):
    code = "dependency-unsatisfied"


class GraphInvalid(TsaError):
    code = "graph-invalid"


class BudgetExceeded(TsaError):
    code = "budget-exceeded"


class CassetteMiss(TsaError):
    code = "cassette-miss"


class BackendUnavailable(TsaError):
    code = "backend-unavailable"


class ToolNotFound(TsaError):
    code = "tool-not-found"


class InvalidArguments(TsaError):
    code = "invalid-arguments"


class ToolForbidden(TsaError):
    code = "tool-forbidden"


class ToolUnavailable(TsaError):
    code = "tool-unavailable"


class ConfigurationError(TsaError):
    code = "configuration-error"


class SequentialViolation(TsaError):
    code = "sequential-violation"


class UnsupportedMedia(TsaError):
    code = "unsupported-media"


class AssessmentIncomplete(TsaError):
    code = "assessment-incomplete"


class SectionFailed(TsaError):
    """Pipeline halted at a section; ``cause_code`` names the blocking violation."""

    code = "section-failed"

    def __init__(self, message: str, cause_code: str, **details):
        super().__init__(message, cause_code=cause_code, **details)
        self.cause_code = cause_code


@dataclass(frozen=True)
class Violation:
    """One concrete rule violation reported by validators and hooks."""

    code: str
    message: str
    location: str = ""
    severity: str = "error"

    def to_dict(self) -> dict:
        return {
            "code": self.code,
            "message": self.message,
            "location": self.location,
            "severity": self.severity,
        }


@dataclass
class Diagnostics:
    """Accumulates non-fatal notes (handshake failures, skipped servers)."""

    notes: list = field(default_factory=list)

    def add(self, note: str) -> None:
        self.notes.append(note)
