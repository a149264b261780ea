"""Report quality scoring along four dimensions, plus workflow counters.

- D1 factual consistency: claim-level verification verdicts; the ratio is
  supported / total claims, and citing-invalidated verdicts count as
  contradicted so the four-way taxonomy stays intact.
- D2 evidence completeness: per-domain sub-topic checklists. The genetic
  checklist is fixed (GWAS signals, rare variant burden, knockout
  phenotype, loss-of-function carriers); other domains take their skill
  module's required subsections.
- D3 structural alignment: canonical section order (inversion-penalized),
  required-heading coverage, clinical-before-preclinical block ordering,
  and an advisory hedging-language presence score.
- D4 evidence traceability: claims backed by at least one resolvable,
  non-invalidated citation; aggregator records with an empty
  primary_source field do not count.

Everything here is a pure function of the assessment directory plus
configuration; no model judge is consulted, so two evaluations of the same
directory are identical.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

from .domain import Report, canonical_section_order
from .errors import AssessmentIncomplete, ConfigurationError
from .evidence import EvidenceStore
from .grounding import Category, extract_claims, verify_claim
from .instructions import SkillModule, load_all_skills
from .numerics import word_count

GENETIC_CHECKLIST = (
    "GWAS signals",
    "Rare variant burden",
    "Knockout phenotype",
    "Loss-of-function carriers",
)

CLINICAL_BLOCK = "<!-- block:clinical -->"
PRECLINICAL_BLOCK = "<!-- block:preclinical -->"

_CATEGORY_ORDER = ("supported", "unsupported", "contradicted", "hallucinated")


def _heading_present(body: str, name: str) -> bool:
    pattern = re.compile(rf"^#{{1,6}}\s*{re.escape(name)}\s*$",
                         re.IGNORECASE | re.MULTILINE)
    return bool(pattern.search(body))


def _sections_of(report) -> list[tuple[str, str]]:
    """Accepts a Report or an already-ordered list of (domain, body)."""
    if isinstance(report, Report):
        return [(s.section_id.domain.value, s.body) for s in report.sections]
    return [(domain, body) for domain, body in report]


# -- D1 -------------------------------------------------------------------------------


def evaluate_d1(report, store: EvidenceStore, tau: float = 0.5) -> dict:
    per_section = {}
    totals = {c: 0 for c in _CATEGORY_ORDER}
    citing_invalidated = 0
    total = 0
    supported = 0
    for domain, body in _sections_of(report):
        counts = {c: 0 for c in _CATEGORY_ORDER}
        local_invalidated = 0
        for claim in extract_claims(body):
            verdict = verify_claim(claim, store, judge=None, tau=tau)
            category = verdict.category
            if category is Category.CITING_INVALIDATED:
                counts["contradicted"] += 1
                local_invalidated += 1
            else:
                counts[category.value] += 1
            total += 1
        supported += counts["supported"]
        citing_invalidated += local_invalidated
        for c in _CATEGORY_ORDER:
            totals[c] += counts[c]
        claim_count = sum(counts.values())
        per_section[domain] = {
            "counts": counts,
            "citing_invalidated": local_invalidated,
            "claims": claim_count,
            "ratio": counts["supported"] / claim_count if claim_count else 1.0,
        }
    return {
        "per_section": per_section,
        "counts": totals,
        "citing_invalidated": citing_invalidated,
        "claims": total,
        "ratio": supported / total if total else 1.0,
    }


# -- D2 -------------------------------------------------------------------------------


def build_checklists(skills: dict[str, SkillModule]) -> dict[str, tuple[str, ...]]:
    checklists: dict[str, tuple[str, ...]] = {}
    for domain, skill in skills.items():
        if skill.required_subsections:
            checklists[domain] = tuple(skill.required_subsections)
    checklists["genetic"] = GENETIC_CHECKLIST
    return checklists


def evaluate_d2(report, checklists: dict[str, tuple[str, ...]]) -> dict:
    sections = dict(_sections_of(report))
    per_domain = {}
    research = [s.domain.value for s in canonical_section_order()
                if s.domain.value in checklists]
    for domain in research:
        expected = checklists.get(domain)
        if not expected:
            raise ConfigurationError(f"no evidence checklist for domain {domain}")
        body = sections.get(domain)
        if body is None:
            per_domain[domain] = {"coverage": 0.0, "matched": [], "expected": list(expected)}
            continue
        lowered = body.lower()
        matched = [
            item
            for item in expected
            if _heading_present(body, item) or item.lower() in lowered
        ]
        per_domain[domain] = {
            "coverage": len(matched) / len(expected),
            "matched": matched,
            "expected": list(expected),
        }
    coverages = [v["coverage"] for v in per_domain.values()]
    return {
        "per_domain": per_domain,
        "mean_coverage": sum(coverages) / len(coverages) if coverages else 1.0,
    }


# -- D3 -------------------------------------------------------------------------------


def _count_inversions(order: list[int]) -> int:
    return sum(
        1
        for i in range(len(order))
        for j in range(i + 1, len(order))
        if order[i] > order[j]
    )


def build_template(skills: dict[str, SkillModule]) -> dict:
    headings = {d: tuple(s.required_subsections) for d, s in skills.items()}
    lengths = {}
    for domain, skill in skills.items():
        lengths[domain] = (
            skill.directive_value("length.min_words"),
            skill.directive_value("length.max_words"),
        )
    return {
        "order": [s.domain.value for s in canonical_section_order()],
        "headings": headings,
        "lengths": lengths,
    }


def evaluate_d3(report, template: dict, hedging_lexicon: tuple[str, ...] = ()) -> dict:
    sections = _sections_of(report)
    canonical = template["order"]
    rank = {domain: i for i, domain in enumerate(canonical)}
    present_order = [rank[d] for d, _ in sections if d in rank]
    n = len(present_order)
    max_inversions = n * (n - 1) // 2
    inversions = _count_inversions(present_order)
    order_factor = 1.0 - (inversions / max_inversions if max_inversions else 0.0)

    heading_fractions = []
    priority: dict[str, bool] = {}
    hedging: dict[str, bool] = {}
    lengths_ok: dict[str, bool] = {}
    for domain, body in sections:
        required = template["headings"].get(domain) or ()
        if required:
            present = sum(1 for h in required if _heading_present(body, h))
            heading_fractions.append(present / len(required))
        else:
            heading_fractions.append(1.0)
        clinical_at = body.find(CLINICAL_BLOCK)
        preclinical_at = body.find(PRECLINICAL_BLOCK)
        if clinical_at != -1 and preclinical_at != -1:
            priority[domain] = clinical_at < preclinical_at
        if hedging_lexicon:
            lowered = body.lower()
            hedging[domain] = any(term in lowered for term in hedging_lexicon)
        bounds = template.get("lengths", {}).get(domain)
        if bounds:
            low, high = bounds
            wc = word_count(body)
            ok = True
            if isinstance(low, int) and wc < low:
                ok = False
            if isinstance(high, int) and wc > high:
                ok = False
            lengths_ok[domain] = ok
    mean_headings = (
        sum(heading_fractions) / len(heading_fractions) if heading_fractions else 1.0
    )
    result = {
        "order_factor": order_factor,
        "inversions": inversions,
        "heading_fraction": mean_headings,
        "conformance": order_factor * mean_headings,
        "priority": priority,
        "priority_pass": all(priority.values()) if priority else True,
        "lengths_ok": lengths_ok,
    }
    if hedging_lexicon:
        result["hedging_advisory"] = {
            "per_section": hedging,
            "score": sum(hedging.values()) / len(hedging) if hedging else 1.0,
        }
    return result


# -- D4 -------------------------------------------------------------------------------


def _traceable(record) -> bool:
    if record.invalidated:
        return False
    payload = record.payload
    if isinstance(payload, dict) and "primary_source" in payload:
        return bool(payload["primary_source"])
    return True


def evaluate_d4(report, store: EvidenceStore) -> dict:
    per_section = {}
    total = 0
    traceable_total = 0
    for domain, body in _sections_of(report):
        claims = extract_claims(body)
        traceable = 0
        for claim in claims:
            for cid in claim.citation_ids:
                try:
                    record = store.get(cid)
                except Exception:
                    continue
                if _traceable(record):
                    traceable += 1
                    break
        per_section[domain] = {
            "claims": len(claims),
            "traceable": traceable,
            "ratio": traceable / len(claims) if claims else 1.0,
        }
        total += len(claims)
        traceable_total += traceable
    return {
        "per_section": per_section,
        "claims": total,
        "traceable": traceable_total,
        "ratio": traceable_total / total if total else 1.0,
    }


# -- efficiency -----------------------------------------------------------------------


def efficiency_counters(journal_path: Path) -> dict:
    sections: dict[str, dict] = {}
    for line in journal_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        event = json.loads(line)
        kind = event.get("kind")
        domain = event.get("section")
        if kind not in ("section_completed", "refinement_applied") or not domain:
            continue
        meta = sections.setdefault(
            domain, {"revisions": 0, "iterations": 0, "wall_seconds": 0.0}
        )
        meta["revisions"] = max(meta["revisions"], event.get("revision", 0))
        meta["iterations"] += 1
        meta["wall_seconds"] = round(
            meta["wall_seconds"] + event.get("wall_seconds", 0.0), 3
        )
    return {
        "sections": sections,
        "total_wall_seconds": round(
            sum(m["wall_seconds"] for m in sections.values()), 3
        ),
    }


# -- the whole thing ------------------------------------------------------------------

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class EvaluationReport:
    assessment_id: str
    d1: dict
    d2: dict
    d3: dict
    d4: dict
    efficiency: dict

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "assessment_id": self.assessment_id,
            "d1": self.d1,
            "d2": self.d2,
            "d3": self.d3,
            "d4": self.d4,
            "efficiency": self.efficiency,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvaluationReport":
        return cls(
            assessment_id=data["assessment_id"],
            d1=data["d1"],
            d2=data["d2"],
            d3=data["d3"],
            d4=data["d4"],
            efficiency=data["efficiency"],
        )

    def render_text(self) -> str:
        lines = [
            f"Evaluation of {self.assessment_id}",
            "",
            f"D1 factual consistency   {self.d1['ratio']:.3f}"
            f"  ({self.d1['counts']['supported']}/{self.d1['claims']} supported)",
            f"D2 evidence completeness {self.d2['mean_coverage']:.3f}",
            f"D3 structural alignment  {self.d3['conformance']:.3f}"
            f"  (order {self.d3['order_factor']:.3f},"
            f" priority {'pass' if self.d3['priority_pass'] else 'FAIL'})",
            f"D4 evidence traceability {self.d4['ratio']:.3f}"
            f"  ({self.d4['traceable']}/{self.d4['claims']} traceable)",
            "",
            "Per-section D1/D4:",
        ]
        for domain, d1 in self.d1["per_section"].items():
            d4 = self.d4["per_section"].get(domain, {})
            lines.append(
                f"  {domain:<24} consistency {d1['ratio']:.3f}"
                f"  traceability {d4.get('ratio', 1.0):.3f}"
                f"  claims {d1['claims']}"
            )
        eff = self.efficiency.get("sections", {})
        if eff:
            lines.append("")
            lines.append("Efficiency:")
            for domain, meta in eff.items():
                lines.append(
                    f"  {domain:<24} revisions {meta['revisions']}"
                    f"  wall {meta['wall_seconds']:.3f}s"
                )
        return "\n".join(lines) + "\n"


def load_hedging_lexicon(path: Path | str | None) -> tuple[str, ...]:
    if not path or not Path(path).exists():
        return ()
    terms = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip().lower()
        if line and not line.startswith("#"):
            terms.append(line)
    return tuple(terms)


def evaluate_all(assessment_dir: Path | str) -> EvaluationReport:
    directory = Path(assessment_dir)
    required = {
        "state.json": directory / "state.json",
        "state journal": directory / "state.journal",
        "report": directory / "report.json",
        "evidence journal": directory / "evidence.journal",
    }
    missing = [name for name, path in required.items() if not path.exists()]
    if missing:
        raise AssessmentIncomplete(
            f"assessment directory {directory} is missing: {', '.join(missing)}"
        )
    snapshot = json.loads((directory / "config.json").read_text(encoding="utf-8"))
    config = snapshot.get("config", {})
    report = Report.from_dict(
        json.loads(required["report"].read_text(encoding="utf-8"))
    )
    skills = {
        d.value: s for d, s in load_all_skills(config["skills_root"]).items()
    }
    tau = config.get("tau", 0.5)
    hedging = load_hedging_lexicon(config.get("hedging_lexicon"))
    with EvidenceStore(directory, report.assessment_id) as store:
        d1 = evaluate_d1(report, store, tau=tau)
        d4 = evaluate_d4(report, store)
    d2 = evaluate_d2(report, build_checklists(skills))
    d3 = evaluate_d3(report, build_template(skills), hedging_lexicon=hedging)
    eff = efficiency_counters(required["state journal"])
    return EvaluationReport(
        assessment_id=report.assessment_id,
        d1=d1,
        d2=d2,
        d3=d3,
        d4=d4,
        efficiency=eff,
    )
