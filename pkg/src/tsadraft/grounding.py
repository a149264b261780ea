"""Citation markers, claim extraction, and claim-vs-evidence verification.

Markers use the inline grammar "[ev:N]" where N is a numeric evidence id.
A claim is a filtered sentence: segmentation is abbreviation-safe, and
headings, list labels, table rows, comment lines, and fragments under four
words are excluded. Verification is deterministic by default (numeric-token
containment plus content-word overlap against the cited payloads) with an
optional model judge for claims the heuristic cannot settle.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .backend import FINAL_TEXT, Budget, ModelRequest
from .domain import Claim, SectionDraft
from .errors import NotFound, TsaError, Violation
from .evidence import EvidenceStore, payload_text
from .numerics import (
    CITATION_RE,
    content_words,
    extract_numeric_tokens,
    quantity_index,
    split_sentences,
    strip_citations,
    word_count,
)

DEFAULT_TAU = 0.5

# "[ev:" not followed by digits-and-bracket is a malformed marker
_MALFORMED = "[ev:"


class Category(str, Enum):
    SUPPORTED = "supported"
    UNSUPPORTED = "unsupported"
    CONTRADICTED = "contradicted"
    HALLUCINATED = "hallucinated"
    CITING_INVALIDATED = "citing_invalidated"


@dataclass(frozen=True)
class CitationMarker:
    evidence_id: int
    span: tuple[int, int]


@dataclass(frozen=True)
class VerificationVerdict:
    category: Category
    rationale: str
    judge: str = "heuristic"

    def to_dict(self) -> dict:
        return {"category": self.category.value, "rationale": self.rationale,
                "judge": self.judge}


def parse_citations(body: str, violations: list[Violation] | None = None) -> list[CitationMarker]:
    markers = [
        CitationMarker(evidence_id=int(m.group(1)), span=(m.start(), m.end()))
        for m in CITATION_RE.finditer(body)
    ]
    if violations is not None:
        well_formed = {m.span[0] for m in markers}
        search = 0
        while True:
            at = body.find(_MALFORMED, search)
            if at == -1:
                break
            if at not in well_formed:
                violations.append(
                    Violation(
                        code="malformed-citation",
                        message=f"malformed citation marker at offset {at}",
                        location=f"offset {at}",
                        severity="warning",
                    )
                )
            search = at + 1
    return markers


_EXCLUDED_PREFIXES = ("#", "|", "<!--", "- ", "* ", "+ ")


def _is_prose_line(line: str) -> bool:
    stripped = line.lstrip()
    if not stripped:
        return False
    if stripped.startswith(_EXCLUDED_PREFIXES):
        return False
    # numbered list labels: "1. item"
    head = stripped.split(" ", 1)[0]
    if head.rstrip(".").isdigit() and head.endswith("."):
        return False
    return True


def extract_claims(body: str) -> list[Claim]:
    claims: list[Claim] = []
    offset = 0
    for line in body.splitlines(keepends=True):
        stripped_len = len(line.rstrip("\n"))
        if _is_prose_line(line):
            _claims_from_block(body, offset, offset + stripped_len, claims)
        offset += len(line)
    return claims


def _claims_from_block(body: str, start: int, end: int, claims: list[Claim]) -> None:
    block = body[start:end]
    for s, e in split_sentences(block):
        text = block[s:e].strip()
        if not text:
            continue
        if word_count(strip_citations(text)) < 4:
            continue
        abs_start = start + s + (len(block[s:e]) - len(block[s:e].lstrip()))
        abs_end = abs_start + len(text)
        ids = tuple(
            int(m.group(1)) for m in CITATION_RE.finditer(text)
        )
        claims.append(Claim(text=text, citation_ids=ids, span=(abs_start, abs_end)))


JUDGE_PROMPT = """Task: judge entailment.
Claim: {claim}
Evidence: {evidence}
Answer with one word: entailed, contradicted, or neutral.
"""


def verify_claim(claim: Claim, store: EvidenceStore, judge=None,
                 tau: float = DEFAULT_TAU) -> VerificationVerdict:
    if not claim.citation_ids:
        return VerificationVerdict(
            category=Category.UNSUPPORTED, rationale="claim has no citation"
        )
    payloads = []
    missing = []
    invalidated = []
    for cid in claim.citation_ids:
        try:
            record = store.get(cid)
        except NotFound:
            missing.append(cid)
            continue
        if record.invalidated:
            invalidated.append(cid)
        payloads.append(payload_text(record.payload))
    if missing:
        return VerificationVerdict(
            category=Category.HALLUCINATED,
            rationale=f"cited evidence id(s) {missing} do not exist",
        )
    if invalidated:
        return VerificationVerdict(
            category=Category.CITING_INVALIDATED,
            rationale=f"cited evidence id(s) {invalidated} were invalidated",
        )
    combined = " ".join(payloads)
    clean = strip_citations(claim.text)
    claim_tokens = extract_numeric_tokens(clean)
    payload_tokens = extract_numeric_tokens(combined)
    numbers_ok = claim_tokens <= payload_tokens
    claim_words = content_words(clean)
    overlap = 1.0
    if claim_words:
        payload_words = content_words(combined)
        overlap = len(claim_words & payload_words) / len(claim_words)
    if numbers_ok and overlap >= tau:
        return VerificationVerdict(
            category=Category.SUPPORTED,
            rationale=(
                f"all {len(claim_tokens)} numeric token(s) found in cited payloads;"
                f" content-word overlap {overlap:.2f} >= tau={tau}"
            ),
        )
    claim_quantities = quantity_index(clean)
    payload_quantities = quantity_index(combined)
    for key in sorted(set(claim_quantities) & set(payload_quantities)):
        claim_values = claim_quantities[key]
        payload_values = payload_quantities[key]
        if claim_values and payload_values and not (claim_values & payload_values):
            return VerificationVerdict(
                category=Category.CONTRADICTED,
                rationale=(
                    f"quantity {key} differs: claim says {sorted(claim_values)},"
                    f" cited payload says {sorted(payload_values)}"
                ),
            )
    if judge is not None:
        verdict = _ask_judge(claim, combined, judge, tau)
        if verdict is not None:
            return verdict
        judge_note = "; judge backend failed, falling back to heuristic"
    else:
        judge_note = ""
    reason = []
    if not numbers_ok:
        missing_tokens = sorted(claim_tokens - payload_tokens)
        reason.append(f"numeric token(s) {missing_tokens} absent from cited payloads")
    if overlap < tau:
        reason.append(f"content-word overlap {overlap:.2f} < tau={tau}")
    return VerificationVerdict(
        category=Category.UNSUPPORTED,
        rationale="; ".join(reason) + judge_note if reason else
        "heuristic inconclusive" + judge_note,
    )


def _ask_judge(claim: Claim, evidence_text: str, judge,
               tau: float) -> VerificationVerdict | None:
    prompt = JUDGE_PROMPT.format(
        claim=strip_citations(claim.text), evidence=evidence_text[:2000]
    )
    request = ModelRequest(prompt=prompt, budget=Budget(max_turns=1, max_tool_calls=0))
    try:
        turn = judge.complete(request)
    except TsaError:
        return None
    if turn.kind != FINAL_TEXT:
        return None
    answer = (turn.text or "").strip().lower()
    if answer.startswith("entailed"):
        return VerificationVerdict(Category.SUPPORTED, "judge: entailed", judge="model")
    if answer.startswith("contradicted"):
        return VerificationVerdict(Category.CONTRADICTED, "judge: contradicted",
                                   judge="model")
    if answer.startswith("neutral"):
        return VerificationVerdict(
            Category.UNSUPPORTED, "judge: neutral (mapped to unsupported)", judge="model"
        )
    return None


@dataclass(frozen=True)
class SectionVerification:
    results: tuple[tuple[Claim, VerificationVerdict], ...]
    counts: dict

    @property
    def hallucinated_ids(self) -> list[int]:
        out: list[int] = []
        for claim, verdict in self.results:
            if verdict.category is Category.HALLUCINATED:
                out.extend(claim.citation_ids)
        return sorted(set(out))

    def to_dict(self) -> dict:
        return {
            "counts": dict(self.counts),
            "claims": [
                {
                    "text": claim.text,
                    "citation_ids": list(claim.citation_ids),
                    "span": list(claim.span),
                    "verdict": verdict.to_dict(),
                }
                for claim, verdict in self.results
            ],
        }


def verify_section(section: SectionDraft, store: EvidenceStore, judge=None,
                   tau: float = DEFAULT_TAU) -> SectionVerification:
    results = []
    counts = {category.value: 0 for category in Category}
    for claim in extract_claims(section.body):
        verdict = verify_claim(claim, store, judge=judge, tau=tau)
        counts[verdict.category.value] += 1
        results.append((claim, verdict))
    return SectionVerification(results=tuple(results), counts=counts)
