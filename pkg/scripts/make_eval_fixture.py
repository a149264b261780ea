#!/usr/bin/env python3
"""Freeze the golden evaluation scores for the hand-labelled fixture.

Rebuilds the fixture assessment in a temporary directory (the builder
lives with the tests and asserts its own hand labels), evaluates it, and
writes the full evaluation dict as the frozen comparison target.
"""

import json
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))
sys.path.insert(0, str(ROOT / "tests"))

from eval_fixture import ASSESSMENT_ID, build  # noqa: E402

from tsadraft.evaluation import evaluate_all  # noqa: E402

GOLDEN_PATH = ROOT / "fixtures" / "golden" / "evaluation.json"


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        directory = build(Path(tmp) / ASSESSMENT_ID)
        report = evaluate_all(directory)
    GOLDEN_PATH.parent.mkdir(exist_ok=True)
    GOLDEN_PATH.write_text(
        json.dumps(report.to_dict(), indent=1, ensure_ascii=False, sort_keys=True)
        + "\n",
        encoding="utf-8",
    )
    print(f"wrote {GOLDEN_PATH}")
    print(f"D1 {report.d1['ratio']}  D4 {report.d4['ratio']}")


if __name__ == "__main__":
    main()
