#!/usr/bin/env python3
"""Record the golden cassette and golden report for the acceptance suite.

Runs the full pipeline against the bundled fixture corpora with the
deterministic scripted backend wrapped in a recorder, then copies the
byte-stable report next to the cassette. Rerunning overwrites both.
"""

import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from tsadraft.backend import RecordingBackend  # noqa: E402
from tsadraft.config import load_config  # noqa: E402
from tsadraft.domain import normalize_target_identifier  # noqa: E402
from tsadraft.drafting import ScriptedBackend  # noqa: E402
from tsadraft.orchestrator import plan, run  # noqa: E402

GOLDEN_DIR = ROOT / "fixtures" / "golden"
ASSESSMENT_ID = "tsa-golden-tp53"


def main() -> None:
    GOLDEN_DIR.mkdir(exist_ok=True)
    cassette_path = GOLDEN_DIR / "golden.cassette"
    if cassette_path.exists():
        cassette_path.unlink()
    config = load_config(
        ROOT / "fixtures" / "config.yaml",
        overrides={"assessment_id": ASSESSMENT_ID},
    )
    with tempfile.TemporaryDirectory() as tmp:
        directory = Path(tmp) / ASSESSMENT_ID
        backend = RecordingBackend(ScriptedBackend(), cassette_path)
        run(plan(normalize_target_identifier("TP53"), config), directory, backend)
        shutil.copy(directory / "report.md", GOLDEN_DIR / "report.md")
    print(f"wrote {cassette_path}")
    print(f"wrote {GOLDEN_DIR / 'report.md'}")


if __name__ == "__main__":
    main()
