"""Three-layer instruction architecture with strict top-down precedence.

Layer 1 (system) carries target-agnostic coordination text, layer 2 is a
per-domain skill module curated in a flat file, layer 3 holds runtime user
instructions. When the same directive key appears at several levels the
highest level wins; conflicts inside one layer are an error, never
last-wins, so every effective value has an auditable single origin.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

from .domain import Domain, SectionId, RESEARCH_DOMAINS
from .errors import InvalidArgument, LayerInvalid, ParseError, SkillNotFound, Violation

Scalar = str | int | float | bool


class Level(IntEnum):
    SYSTEM = 1
    SKILL = 2
    USER = 3


class DirectiveKind:
    CONSTRAINT = "constraint"
    GUIDANCE = "guidance"
    PROSE = "prose"


@dataclass(frozen=True)
class Directive:
    key: str
    value: Scalar
    kind: str = DirectiveKind.CONSTRAINT

    def __post_init__(self):
        if self.kind == DirectiveKind.CONSTRAINT and isinstance(self.value, str) and "\n" in self.value:
            raise InvalidArgument(f"constraint {self.key!r} must be a scalar, got a text block")


@dataclass(frozen=True)
class InstructionLayer:
    level: Level
    directives: tuple[Directive, ...]
    provenance: str = "runtime"

    def __post_init__(self):
        if self.level is not Level.USER and not self.directives:
            raise InvalidArgument(f"layer {self.level.name} may not be empty")


@dataclass(frozen=True)
class SkillModule:
    domain: Domain
    version: str
    directives: tuple[Directive, ...]
    required_subsections: tuple[str, ...]
    writing_guidelines: str
    source_path: str = ""

    def __post_init__(self):
        if not self.version:
            raise InvalidArgument("skill version must be non-empty")
        if self.domain in RESEARCH_DOMAINS and not self.required_subsections:
            raise InvalidArgument(
                f"research skill {self.domain.value} needs required_subsections"
            )

    def directive_value(self, key: str, default=None):
        for d in self.directives:
            if d.key == key:
                return d.value
        return default


@dataclass(frozen=True)
class ComposedPrompt:
    section_id: SectionId
    system_text: str
    effective_directives: dict[str, tuple[Scalar, int]]
    rendered: str
    injected_memory: str | None = None

    def with_memory(self, memory_text: str) -> "ComposedPrompt":
        """Hooks attach the injected digest bundle here, after composition."""
        from dataclasses import replace

        return replace(self, injected_memory=memory_text)

    @property
    def full_text(self) -> str:
        if self.injected_memory:
            return self.rendered + "\n" + self.injected_memory
        return self.rendered


KNOWN_NAMESPACES = frozenset(
    {"system", "skill", "user", "retrieval", "style", "length", "evidence", "output", "compression"}
)

SKILL_SUFFIX = ".skill"


def _parse_scalar(raw: str) -> Scalar:
    text = raw.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def load_skill(domain: Domain | str, skills_root: Path | str) -> SkillModule:
    """Parse the flat skill file for ``domain`` from the skills directory.

    File layout (one file per domain, ``<domain>.skill``): header lines
    (``domain:``, ``version:``, repeatable ``subsection:`` and
    ``directive: key = value``) up to a ``---`` separator, then free-text
    writing guidelines. Parse failures name the offending line.
    """
    domain = Domain(domain)
    root = Path(skills_root)
    path = root / f"{domain.value}{SKILL_SUFFIX}"
    if not path.is_file():
        raise SkillNotFound(f"no skill module for {domain.value} under {root}")
    header: dict[str, str] = {}
    subsections: list[str] = []
    directives: list[Directive] = []
    guidelines_lines: list[str] = []
    in_header = True
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if in_header:
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if stripped == "---":
                in_header = False
                continue
            if ":" not in stripped:
                raise ParseError(f"{path}:{lineno}: expected 'key: value'", line=lineno)
            key, _, value = stripped.partition(":")
            key, value = key.strip(), value.strip()
            if key == "subsection":
                subsections.append(value)
            elif key == "directive":
                if "=" not in value:
                    raise ParseError(
                        f"{path}:{lineno}: directive needs 'key = value'", line=lineno
                    )
                dkey, _, dval = value.partition("=")
                directives.append(Directive(dkey.strip(), _parse_scalar(dval)))
            elif key in ("domain", "version"):
                header[key] = value
            else:
                raise ParseError(f"{path}:{lineno}: unknown header key {key!r}", line=lineno)
        else:
            guidelines_lines.append(line)
    if in_header:
        raise ParseError(f"{path}: missing '---' guidelines separator")
    if header.get("domain") != domain.value:
        raise ParseError(
            f"{path}: header domain {header.get('domain')!r} does not match file {domain.value!r}"
        )
    if not header.get("version"):
        raise ParseError(f"{path}: missing version header")
    return SkillModule(
        domain=domain,
        version=header["version"],
        directives=tuple(directives),
        required_subsections=tuple(subsections),
        writing_guidelines="\n".join(guidelines_lines).strip(),
        source_path=str(path),
    )


def load_all_skills(skills_root: Path | str) -> dict[Domain, SkillModule]:
    return {d: load_skill(d, skills_root) for d in Domain}


def system_layer(prompt_text: str, directives: tuple[Directive, ...] = ()) -> InstructionLayer:
    prose = Directive("system.prompt", prompt_text, DirectiveKind.PROSE)
    return InstructionLayer(Level.SYSTEM, (prose,) + tuple(directives), provenance="builtin")


def skill_layer(skill: SkillModule) -> InstructionLayer:
    prose = Directive("skill.guidelines", skill.writing_guidelines, DirectiveKind.PROSE)
    return InstructionLayer(
        Level.SKILL, tuple(skill.directives) + (prose,), provenance=skill.source_path or "skill"
    )


def user_layer(
    instructions_text: str = "", overrides: dict[str, Scalar] | None = None
) -> InstructionLayer:
    directives: list[Directive] = []
    if instructions_text:
        directives.append(Directive("user.instructions", instructions_text, DirectiveKind.PROSE))
    for key, value in (overrides or {}).items():
        directives.append(Directive(key, value))
    return InstructionLayer(Level.USER, tuple(directives))


def validate_layer(layer: InstructionLayer) -> list[Violation]:
    """Report duplicate keys, empty values, and unknown namespaces (warning)."""
    violations: list[Violation] = []
    seen: set[str] = set()
    for d in layer.directives:
        if not d.key:
            violations.append(Violation("empty-key", "directive key is empty"))
            continue
        if d.key in seen:
            violations.append(
                Violation("duplicate-key", f"key {d.key!r} defined twice in layer {layer.level.name}")
            )
        seen.add(d.key)
        if d.kind == DirectiveKind.CONSTRAINT and (d.value is None or d.value == ""):
            violations.append(Violation("empty-value", f"constraint {d.key!r} has empty value"))
        namespace = d.key.split(".", 1)[0]
        if namespace not in KNOWN_NAMESPACES:
            violations.append(
                Violation(
                    "unknown-namespace",
                    f"key {d.key!r} uses unknown namespace {namespace!r}",
                    severity="warning",
                )
            )
    return violations


def _layer_map(layer: InstructionLayer) -> dict[str, Scalar]:
    out: dict[str, Scalar] = {}
    for d in layer.directives:
        if d.key in out:
            raise LayerInvalid(
                f"duplicate directive key {d.key!r} within layer {layer.level.name}"
            )
        out[d.key] = d.value
    return out


def compose(
    system: InstructionLayer, skill: SkillModule, user: InstructionLayer
) -> ComposedPrompt:
    """Merge the three layers; the highest level defining a key wins."""
    if system.level is not Level.SYSTEM or user.level is not Level.USER:
        raise LayerInvalid("compose requires a level-1 system layer and a level-3 user layer")
    layers = [(Level.SYSTEM, _layer_map(system)), (Level.SKILL, _layer_map(skill_layer(skill))),
              (Level.USER, _layer_map(user))]
    effective: dict[str, tuple[Scalar, int]] = {}
    for level, mapping in layers:
        for key, value in mapping.items():
            effective[key] = (value, int(level))

    system_text = str(layers[0][1].get("system.prompt", ""))
    user_text = str(layers[2][1].get("user.instructions", ""))
    section_id = SectionId.of(skill.domain)

    lines = [
        "=== LAYER 1: SYSTEM ===",
        system_text,
        "",
        f"=== LAYER 2: SKILL ({skill.domain.value} v{skill.version}) ===",
        f"Section: {skill.domain.value}",
    ]
    if skill.required_subsections:
        lines.append("Required subsections: " + "; ".join(skill.required_subsections))
    lines.append(skill.writing_guidelines)
    lines.append("")
    lines.append("=== LAYER 3: USER ===")
    lines.append(user_text if user_text else "(no runtime instructions)")
    lines.append("")
    lines.append("=== EFFECTIVE DIRECTIVES ===")
    for key in sorted(effective):
        value, level = effective[key]
        if key in ("system.prompt", "skill.guidelines", "user.instructions"):
            continue
        lines.append(f"{key} = {value}  [layer {level}]")
    rendered = "\n".join(lines)
    return ComposedPrompt(
        section_id=section_id,
        system_text=system_text,
        effective_directives=effective,
        rendered=rendered,
    )


DEFAULT_SYSTEM_PROMPT = """\
You are a drafting subagent inside a target safety assessment pipeline.
You produce exactly one report section, grounded in retrieved evidence.
Rules:
- Cite evidence inline using [ev:N] markers, where N is an evidence id
  returned by a tool call in this conversation. Never invent ids.
- Include every required subsection heading named by the skill layer.
- State quantitative findings with their numbers and units.
- Use hedging language where evidence is indirect or conflicting.
- Do not speculate beyond retrieved evidence.
"""
