import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"
GOLDEN = FIXTURES / "golden"

if str(ROOT / "tests") not in sys.path:
    sys.path.insert(0, str(ROOT / "tests"))


@pytest.fixture(scope="session")
def repo_root() -> Path:
    return ROOT


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    return GOLDEN


@pytest.fixture(scope="session")
def config():
    from tsadraft.config import load_config

    return load_config(FIXTURES / "config.yaml")


@pytest.fixture(scope="session")
def skills(config):
    from tsadraft.instructions import load_all_skills

    return load_all_skills(config["skills_root"])


@pytest.fixture(scope="session")
def completed_run(tmp_path_factory):
    """One full scripted pipeline run, shared by read-only tests."""
    from tsadraft.config import load_config
    from tsadraft.domain import normalize_target_identifier
    from tsadraft.drafting import ScriptedBackend
    from tsadraft.orchestrator import plan, run

    directory = tmp_path_factory.mktemp("completed") / "tsa-shared-tp53"
    config = load_config(
        FIXTURES / "config.yaml", overrides={"assessment_id": "tsa-shared-tp53"}
    )
    plan_ = plan(normalize_target_identifier("TP53"), config)
    report = run(plan_, directory, ScriptedBackend())
    return {"directory": directory, "report": report, "config": config}
