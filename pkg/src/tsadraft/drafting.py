"""Deterministic offline drafting model.

A scripted backend that satisfies the ModelBackend contract without any
network: given a composed section prompt it issues a fixed per-domain tool
call sequence, then writes the section body from the returned records'
summary fields, citing the evidence ids the gateway assigned. Synthesis
sections write from the injected digest bundle instead of tools. The same
backend answers compression prompts with an extractive FACT/TABLE/RISK
digest.

Everything here is a pure function of the request (prompt + conversation),
which is what makes recorded cassettes stable across machines.
"""

from __future__ import annotations

import re

from .backend import FINAL_TEXT, TOOL_CALL, ModelRequest, ModelTurn, _check_budget
from .numerics import extract_numeric_tokens, split_sentences

RISK_TERMS = ("risk", "toxic", "adverse", "safety", "lethal", "caution", "liability")
SEVERITY_LABELS = ("high", "moderate", "low", "severe", "mild")

_SECTION_RE = re.compile(r"^Section: (\S+)$", re.MULTILINE)
_TARGET_RE = re.compile(r"^Target: (\S+)$", re.MULTILINE)
_SUBSECTIONS_RE = re.compile(r"^Required subsections: (.+)$", re.MULTILINE)
_REVISION_RE = re.compile(r"^Revision instruction: (.+)$", re.MULTILINE)
_FACT_LINE_RE = re.compile(r"^- (.+)$")
_DIGEST_HEAD_RE = re.compile(r"^--- Digest: (\S+) \(revision \d+\) ---$")

_COMPRESS_MARK = "Task: compress section"
_SOURCE_START = "--- SOURCE ---"
_SOURCE_END = "--- END SOURCE ---"


def _script(domain: str, target: str) -> list[tuple[str, dict | str]]:
    """Tool call sequence per research domain. The sentinel string
    "OWN_FIRST_ID" resolves at call time to the section's first indexed id."""
    if domain == "genetic":
        return [
            ("pubmed_search", {"query": f"{target} genetic association"}),
            ("gwas_associations", {"gene": target}),
            ("mouse_phenotypes", {"gene": target}),
        ]
    if domain == "transcriptomic":
        return [("expression_profile", {"gene": target})]
    if domain == "homology":
        return [
            ("ensembl_gene", {"symbol": target}),
            ("uniprot_entry", {"gene": target}),
        ]
    if domain == "pharmacological":
        return [
            ("known_drugs", {"target": target}),
            ("pubmed_search", {"query": f"{target} pharmacology"}),
        ]
    if domain == "clinical":
        return [
            ("clinical_trials", {"target": target}),
            ("evidence_lookup", "OWN_FIRST_ID"),
        ]
    return []


def _tool_results(conversation) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for entry in conversation:
        if entry.get("kind") == "tool_result":
            out[entry.get("tool_name", "")] = entry.get("content") or {}
    return out


def _pairs(result: dict) -> list[tuple[dict, int]]:
    records = result.get("records") or []
    ids = result.get("evidence_ids") or []
    return list(zip(records, ids))


def _cite(record: dict, evidence_id: int) -> str:
    summary = str(record.get("summary", "")).rstrip(".")
    return f"{summary} [ev:{evidence_id}]."


def _digest_facts(prompt: str) -> list[tuple[str, str]]:
    """(source domain, fact text) pairs parsed from the injected bundle."""
    facts: list[tuple[str, str]] = []
    current = None
    in_facts = False
    for line in prompt.splitlines():
        head = _DIGEST_HEAD_RE.match(line.strip())
        if head:
            current = head.group(1)
            in_facts = False
            continue
        stripped = line.strip()
        if current is None:
            continue
        if stripped == "Facts:":
            in_facts = True
            continue
        if stripped.startswith(("Tables:", "Risk classifications:", "Data points:", "--- End digest")):
            in_facts = False
            continue
        if in_facts:
            m = _FACT_LINE_RE.match(stripped)
            if m:
                facts.append((current, m.group(1)))
    return facts


def _numeric_facts(facts: list[tuple[str, str]], domain: str) -> list[str]:
    return [text for d, text in facts if d == domain and extract_numeric_tokens(text)]


class ScriptedBackend:
    """Offline drafting model; see module docstring."""

    def complete(self, request: ModelRequest) -> ModelTurn:
        _check_budget(request)
        if _COMPRESS_MARK in request.prompt:
            return ModelTurn(kind=FINAL_TEXT, text=self._compress(request.prompt))
        domain = _group(_SECTION_RE, request.prompt)
        target = _group(_TARGET_RE, request.prompt) or "TARGET"
        if not domain:
            return ModelTurn(kind=FINAL_TEXT, text="No section requested.")
        script = _script(domain, target)
        calls_made = sum(1 for e in request.conversation if e.get("kind") == TOOL_CALL)
        results = _tool_results(request.conversation)
        if calls_made < len(script):
            tool_name, arguments = script[calls_made]
            if arguments == "OWN_FIRST_ID":
                first = 1
                for result in results.values():
                    ids = result.get("evidence_ids") or []
                    if ids:
                        first = ids[0]
                        break
                arguments = {"id": first}
            return ModelTurn(kind=TOOL_CALL, tool_name=tool_name, arguments=arguments)
        body = self._body(domain, target, request.prompt, results)
        return ModelTurn(kind=FINAL_TEXT, text=body)

    # -- section bodies ---------------------------------------------------

    def _body(self, domain: str, target: str, prompt: str, results: dict) -> str:
        subsections = _subsections(prompt)
        builder = {
            "genetic": self._genetic,
            "transcriptomic": self._transcriptomic,
            "homology": self._homology,
            "pharmacological": self._pharmacological,
            "clinical": self._clinical,
            "species_translatability": self._species,
            "integrated_risk": self._integrated,
            "executive_summary": self._executive,
        }.get(domain)
        if builder is None:
            return f"### {subsections[0] if subsections else 'Summary'}\nNothing to report."
        lines = builder(target, subsections, results, prompt)
        instruction = _group(_REVISION_RE, prompt)
        if instruction:
            lines = _apply_revision(lines, subsections, results, instruction)
        return "\n".join(lines).strip() + "\n"

    def _genetic(self, target, subsections, results, prompt):
        gwas = _pairs(results.get("gwas_associations", {}))
        pubmed = _pairs(results.get("pubmed_search", {}))
        mouse = _pairs(results.get("mouse_phenotypes", {}))
        lines = [f"Genetic findings for {target} are summarized from association, burden,"
                 f" knockout, and carrier evidence."]
        lines += ["", f"### {subsections[0]}"]
        for record, ev in gwas[:3]:
            lines.append(_cite(record, ev))
        for record, ev in gwas:
            if record.get("note"):
                lines.append(f"Annotation note: {record['note']} [ev:{ev}].")
                break
        lines += ["", f"### {subsections[1]}"]
        if pubmed:
            lines.append(_cite(*pubmed[0]))
        lines += ["", f"### {subsections[2]}"]
        for record, ev in mouse[:2]:
            lines.append(_cite(record, ev))
        lines += ["", f"### {subsections[3]}"]
        if len(pubmed) > 1:
            lines.append(_cite(*pubmed[1]))
        lines.append("Broader cohorts may refine these penetrance estimates.")
        return lines

    def _transcriptomic(self, target, subsections, results, prompt):
        rows = _pairs(results.get("expression_profile", {}))
        lines = [f"Expression of {target} is profiled across baseline tissues."]
        lines += ["", f"### {subsections[0]}"]
        for record, ev in rows:
            lines.append(_cite(record, ev))
        lines += ["", f"### {subsections[1]}"]
        if rows:
            top_record, top_ev = max(
                rows, key=lambda pair: (pair[0].get("level") or 0, -pair[1])
            )
            lines.append(
                f"The highest signal is in {top_record.get('tissue')} at"
                f" {top_record.get('level')} {top_record.get('unit', '')}".rstrip()
                + f" [ev:{top_ev}]."
            )
        lines.append("Enrichment may differ in disease tissue.")
        return lines

    def _homology(self, target, subsections, results, prompt):
        ensembl = _pairs(results.get("ensembl_gene", {}))
        uniprot = _pairs(results.get("uniprot_entry", {}))
        human = [(r, e) for r, e in ensembl if r.get("species") == "human"]
        others = [(r, e) for r, e in ensembl if r.get("species") != "human"]
        lines = []
        lines += [f"### {subsections[0]}"]
        if human:
            lines.append(_cite(*human[0]))
        lines += ["", "| Species | Ortholog | Identity |", "| --- | --- | --- |"]
        for record, _ in others:
            lines.append(
                f"| {record.get('species')} | {record.get('ortholog_symbol')} |"
                f" {record.get('identity_pct')} |"
            )
        lines.append("")
        for record, ev in others:
            lines.append(_cite(record, ev))
        lines += ["", f"### {subsections[1]}"]
        for record, ev in uniprot:
            lines.append(_cite(record, ev))
        return lines

    def _pharmacological(self, target, subsections, results, prompt):
        drugs = _pairs(results.get("known_drugs", {}))
        pubmed = _pairs(results.get("pubmed_search", {}))
        lines = [f"### {subsections[0]}"]
        for record, ev in drugs:
            lines.append(_cite(record, ev))
        lines += ["", f"### {subsections[1]}"]
        for record, ev in pubmed[:1]:
            lines.append(_cite(record, ev))
        lines.append("Class effects may extend beyond the tissues studied so far.")
        return lines

    def _clinical(self, target, subsections, results, prompt):
        trials = _pairs(results.get("clinical_trials", {}))
        lines = [f"### {subsections[0]}"]
        for record, ev in trials:
            lines.append(_cite(record, ev))
        lines += ["", f"### {subsections[1]}"]
        safety = [
            (r, e) for r, e in trials if "adverse" in str(r.get("summary", "")).lower()
        ]
        for record, ev in safety[:1]:
            lines.append(_cite(record, ev))
        lines.append("Longer follow-up may reveal additional safety signals.")
        return lines

    def _species(self, target, subsections, results, prompt):
        facts = _digest_facts(prompt)
        lines = [f"### {subsections[0]}"]
        lines += _numeric_facts(facts, "homology")[:2]
        lines += _numeric_facts(facts, "genetic")[:1]
        lines.append("Mouse models may overstate pathway redundancy.")
        lines += ["", f"### {subsections[1]}"]
        homology_rest = _numeric_facts(facts, "homology")[2:3]
        lines += homology_rest
        lines.append("Divergence in lower-identity models warrants caution.")
        return lines

    def _integrated(self, target, subsections, results, prompt):
        facts = _digest_facts(prompt)
        lines = [f"### {subsections[0]}"]
        lines.append("<!-- block:clinical -->")
        lines += _numeric_facts(facts, "clinical")[:2]
        lines += _numeric_facts(facts, "pharmacological")[:1]
        lines.append("<!-- /block -->")
        lines.append("<!-- block:preclinical -->")
        lines += _numeric_facts(facts, "genetic")[:2]
        lines += _numeric_facts(facts, "transcriptomic")[:1]
        lines.append("<!-- /block -->")
        lines += ["", f"### {subsections[1]}"]
        lines.append(
            f"The integrated view suggests a moderate overall safety risk for {target},"
            f" with uncertainty concentrated in clinical translation."
        )
        return lines

    def _executive(self, target, subsections, results, prompt):
        facts = _digest_facts(prompt)
        lines = [f"### {subsections[0]}"]
        lines.append("<!-- block:clinical -->")
        lines += _numeric_facts(facts, "clinical")[:1]
        lines.append("<!-- /block -->")
        lines.append("<!-- block:preclinical -->")
        lines += _numeric_facts(facts, "genetic")[:1]
        lines += _numeric_facts(facts, "homology")[:1]
        lines.append("<!-- /block -->")
        lines += ["", f"### {subsections[1]}"]
        lines.append(
            f"Advancing {target} appears feasible; haematological monitoring is warranted"
            f" and residual uncertainty may narrow with longer follow-up."
        )
        return lines

    # -- compression -------------------------------------------------------------

    def _compress(self, prompt: str) -> str:
        source = _between(prompt, _SOURCE_START, _SOURCE_END)
        lines = []
        tables = _table_blocks(source)
        flat = re.sub(r"\|[^\n]*\|", " ", source)  # keep prose; tables go verbatim
        for start, end in split_sentences(flat):
            sentence = " ".join(flat[start:end].split())
            if not sentence or sentence.startswith("#"):
                continue
            lowered = sentence.lower()
            interesting = (
                "[ev:" in sentence
                or extract_numeric_tokens(sentence)
                or any(term in lowered for term in RISK_TERMS)
            )
            if not interesting:
                continue
            lines.append(f"FACT: {sentence}")
            severity = next((s for s in SEVERITY_LABELS if s in lowered.split()), None)
            if severity and any(term in lowered for term in RISK_TERMS):
                ids = ",".join(re.findall(r"\[ev:(\d+)\]", sentence))
                liability = " ".join(sentence.split()[:6])
                lines.append(f"RISK: {liability} | {severity} | {ids}")
        for block in tables:
            lines.append("TABLE:")
            lines.extend(block)
        return "\n".join(lines) + "\n"


def _apply_revision(lines: list[str], subsections: list[str], results: dict,
                    instruction: str) -> list[str]:
    """Append a revision sentence under the subsection the instruction names."""
    wanted = None
    lowered = instruction.lower()
    for name in subsections:
        if name.split()[0].lower() in lowered:
            wanted = name
            break
    wanted = wanted or (subsections[0] if subsections else "")
    out = []
    appended = False
    i = 0
    while i < len(lines):
        out.append(lines[i])
        if not appended and lines[i] == f"### {wanted}":
            # copy the subsection, then add the revision sentence at its end
            j = i + 1
            while j < len(lines) and not lines[j].startswith("#"):
                out.append(lines[j])
                j += 1
            sentence = _revision_sentence(results, wanted)
            if sentence:
                while out and out[-1] == "":
                    out.pop()
                out.append(sentence)
                out.append("")
            appended = True
            i = j
            continue
        i += 1
    return out


def _revision_sentence(results: dict, subsection: str) -> str:
    lowered = subsection.lower()
    preferred = None
    if "knockout" in lowered:
        preferred = "mouse_phenotypes"
    for tool in ([preferred] if preferred else []) + sorted(results):
        pairs = _pairs(results.get(tool) or {})
        if pairs:
            record, ev = pairs[0]
            summary = str(record.get("summary", "")).rstrip(".")
            return f"Revised emphasis: {summary} [ev:{ev}]."
    return ""


def _subsections(prompt: str) -> list[str]:
    raw = _group(_SUBSECTIONS_RE, prompt)
    if not raw:
        return ["Summary"]
    return [part.strip() for part in raw.split(";") if part.strip()]


def _group(pattern: re.Pattern, prompt: str) -> str | None:
    match = pattern.search(prompt)
    return match.group(1).strip() if match else None


def _between(text: str, start: str, end: str) -> str:
    i = text.find(start)
    j = text.find(end)
    if i == -1 or j == -1 or j < i:
        return ""
    return text[i + len(start):j]


def _table_blocks(text: str) -> list[list[str]]:
    blocks: list[list[str]] = []
    current: list[str] = []
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("|") and stripped.endswith("|"):
            current.append(stripped)
        elif current:
            blocks.append(current)
            current = []
    if current:
        blocks.append(current)
    return blocks
