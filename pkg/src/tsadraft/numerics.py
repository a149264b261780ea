"""Deterministic text extraction shared by compression, grounding, and hooks.

A single extractor feeds three features (digest preservation checks,
claim-vs-evidence contradiction detection, cross-section numeric
consistency) so their notions of "a number" and "what it measures" can
never drift apart. Everything here is pure string processing: no models,
no randomness.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

CITATION_RE = re.compile(r"\[ev:(\d+)\]")

# Number with optional thousands separators, decimals, scientific notation,
# and an attached percent sign. Lookbehind keeps digits inside identifiers
# (ENSG00000141510, rs1042522) from matching.
NUMBER_RE = re.compile(
    r"(?<![\w.])(\d+(?:,\d{3})*(?:\.\d+)?(?:[eE][-+]?\d+)?)(\s?%)?"
)

_STOPWORDS = frozenset(
    """a an the of in on at to for and or is are was were with by from as that
    this these those it its than per all any both each which when where who
    whom been being be have has had do does did will would could should may
    might about above after again against between into through during before
    over under only same so very can just but if while""".split()
)

_UNIT_WORDS = frozenset(
    "mg kg g ml l nm um mm cm fold days weeks months years hours".split()
)

_ABBREVIATIONS = frozenset(
    "e.g i.e al etc vs ca cf approx fig figs dr no resp incl spp".split()
)

_SENT_END = re.compile(r"[.!?]+(?=\s|$)")
_WORD_RE = re.compile(r"[A-Za-z][A-Za-z0-9_'-]*")
_SYMBOL_RE = re.compile(r"\b[A-Z][A-Z0-9]{1,9}\b")


@dataclass(frozen=True)
class QuantityMention:
    """A number tied to the thing it measures: ('TP53', 'tissues', 14.0)."""

    entity: str
    key: str
    token: str
    value: float


def strip_citations(text: str) -> str:
    return CITATION_RE.sub(" ", text)


def extract_numeric_tokens(text: str) -> set[str]:
    """All numeric tokens in ``text``, percent signs attached, markers ignored."""
    tokens = set()
    for m in NUMBER_RE.finditer(strip_citations(text)):
        tok = m.group(1)
        if m.group(2):
            tok += "%"
        tokens.add(tok)
    return tokens


def _parse_value(token: str) -> float:
    return float(token.rstrip("%").replace(",", ""))


def extract_quantity_mentions(text: str) -> list[QuantityMention]:
    """Pair each number with its nearest measured noun, per sentence.

    The key is the first non-stopword, non-unit word after the number
    (skipping 'of'/'per'); if none follows, the nearest preceding content
    word is used. The entity is the first all-caps symbol in the sentence,
    falling back to "target".
    """
    mentions = []
    clean = strip_citations(text)
    for start, end in split_sentences(clean):
        sentence = clean[start:end]
        sym = _SYMBOL_RE.search(sentence)
        entity = sym.group(0) if sym else "target"
        for m in NUMBER_RE.finditer(sentence):
            token = m.group(1) + ("%" if m.group(2) else "")
            key = _find_key(sentence, m.end())
            if key is None:
                key = _find_key_backward(sentence, m.start())
            if key is None:
                continue
            mentions.append(
                QuantityMention(entity=entity, key=key, token=token, value=_parse_value(token))
            )
    return mentions


def _find_key(sentence: str, pos: int) -> str | None:
    words = _WORD_RE.finditer(sentence, pos)
    for i, w in enumerate(words):
        if i >= 4:
            break
        word = w.group(0).lower()
        if word in _STOPWORDS or word in _UNIT_WORDS:
            continue
        return word
    return None


def _find_key_backward(sentence: str, pos: int) -> str | None:
    words = list(_WORD_RE.finditer(sentence, 0, pos))
    for w in reversed(words[-3:]):
        word = w.group(0).lower()
        if word in _STOPWORDS and word not in _UNIT_WORDS:
            continue
        return word
    return None


def quantity_index(text: str) -> dict[tuple[str, str], set[float]]:
    """Map (entity, quantity-key) to the set of values stated for it."""
    index: dict[tuple[str, str], set[float]] = {}
    for m in extract_quantity_mentions(text):
        index.setdefault((m.entity, m.key), set()).add(m.value)
    return index


def extract_table_cells(text: str) -> list[str]:
    """Cells of every markdown table row, verbatim, separator rows skipped."""
    cells = []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped.startswith("|"):
            continue
        row = [c.strip() for c in stripped.strip("|").split("|")]
        if all(re.fullmatch(r":?-{2,}:?", c) for c in row if c):
            continue
        cells.extend(c for c in row if c)
    return cells


def extract_table_rows(text: str) -> list[list[str]]:
    """Markdown table rows (separator rows skipped), cell text verbatim."""
    rows = []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped.startswith("|"):
            continue
        row = [c.strip() for c in stripped.strip("|").split("|")]
        if all(re.fullmatch(r":?-{2,}:?", c) for c in row if c):
            continue
        rows.append(row)
    return rows


def content_words(text: str) -> set[str]:
    """Lowercased non-stopword words, citation markers excluded."""
    return {
        w.group(0).lower()
        for w in _WORD_RE.finditer(strip_citations(text))
        if w.group(0).lower() not in _STOPWORDS
    }


def word_count(text: str) -> int:
    return len(_WORD_RE.findall(strip_citations(text)))


def estimate_tokens(text: str) -> int:
    """Rough LLM token estimate: four tokens per three words."""
    return (word_count(text) * 4 + 2) // 3


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Abbreviation-safe sentence spans over ``text``.

    Boundaries are terminal punctuation followed by whitespace or EOL,
    except after known abbreviations and single-letter initials. A final
    unterminated tail becomes its own span.
    """
    spans = []
    start = 0
    for m in _SENT_END.finditer(text):
        prev = text[start : m.start()]
        tail = re.search(r"([A-Za-z.]+)$", prev)
        word = tail.group(1).lower().strip(".") if tail else ""
        if word in _ABBREVIATIONS or (len(word) == 1 and word.isalpha()):
            continue
        spans.append((start, m.end()))
        start = m.end()
        while start < len(text) and text[start] in " \t\n":
            start += 1
    if start < len(text) and text[start:].strip():
        end = len(text)
        while end > start and text[end - 1] in " \t\n":
            end -= 1
        spans.append((start, end))
    return spans
