"""Runtime configuration: one YAML file, merged over documented defaults.

Keys:

- skills_root, denylist, hedging_lexicon, system_prompt: paths, resolved
  against the config file's directory.
- clock: "wall" or "logical". The logical clock stamps deterministic
  timestamps (1-second steps from a fixed epoch) so replayed runs are
  byte-stable; it is the right choice whenever a cassette is involved.
- tau: content-word overlap threshold for claim verification.
- judge: "none" (heuristic only) or "replay" with judge_cassette set.
- budgets.max_turns / budgets.max_tool_calls: per-section agent limits.
- compression.ratio / compression.floor_tokens: digest budget knobs.
- graph: optional dependency-edge override, domain -> [upstream...].
- servers: tool server registry; each entry needs transport stdio|http|inproc
  plus command/url/corpus_dir respectively, and optionally name, tools,
  domain_tags.
- assessment_id: pin the generated id (otherwise random), used for
  reproducible fixture runs.
- user_instructions / user_overrides: the Layer-3 defaults.
- preferences_root / actor: where accepted preference deltas live; they
  merge under user_overrides at plan time.
"""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .errors import ConfigurationError

DEFAULTS: dict = {
    "skills_root": "fixtures/skills",
    "denylist": "fixtures/denylist.txt",
    "hedging_lexicon": "fixtures/hedging.txt",
    "system_prompt": None,
    "clock": "wall",
    "tau": 0.5,
    "judge": "none",
    "judge_cassette": None,
    "budgets": {"max_turns": 12, "max_tool_calls": 24},
    "compression": {"ratio": 0.4, "floor_tokens": 200},
    "graph": None,
    "servers": [],
    "assessment_id": None,
    "user_instructions": "",
    "user_overrides": {},
    "preferences_root": None,
    "actor": "reviewer",
}

_PATH_KEYS = ("skills_root", "denylist", "hedging_lexicon", "system_prompt",
              "judge_cassette", "preferences_root")
_SERVER_PATH_KEYS = ("corpus_dir",)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = {**base[key], **value}
        else:
            out[key] = copy.deepcopy(value)
    return out


def _absolutize(data: dict, base_dir: Path) -> dict:
    for key in _PATH_KEYS:
        value = data.get(key)
        if isinstance(value, str):
            data[key] = str((base_dir / value).resolve())
    for entry in data.get("servers") or []:
        for key in _SERVER_PATH_KEYS:
            value = entry.get(key)
            if isinstance(value, str):
                entry[key] = str((base_dir / value).resolve())
    return data


def load_config(path: Path | str | None = None,
                overrides: dict | None = None) -> dict:
    """Defaults, then the YAML file, then explicit overrides; paths become
    absolute so the snapshot frozen into an assessment survives relocation."""
    data = copy.deepcopy(DEFAULTS)
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}")
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config file {path} is not valid YAML: {exc}")
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigurationError("config file must contain a mapping")
        data = _merge(data, loaded)
        base_dir = path.parent.resolve()
    if overrides:
        data = _merge(data, overrides)
    _validate(data)
    return _absolutize(data, base_dir)


def merge_overrides(config: dict, overrides: dict) -> dict:
    """Apply overrides to an already-loaded config and re-validate."""
    if not overrides:
        return copy.deepcopy(config)
    data = _merge(config, overrides)
    _validate(data)
    return data


def _validate(data: dict) -> None:
    if data["clock"] not in ("wall", "logical"):
        raise ConfigurationError(f"clock must be wall or logical, got {data['clock']!r}")
    if data["judge"] not in ("none", "replay"):
        raise ConfigurationError(f"judge must be none or replay, got {data['judge']!r}")
    tau = data["tau"]
    if not isinstance(tau, (int, float)) or not 0 <= tau <= 1:
        raise ConfigurationError(f"tau must be a number in [0,1], got {tau!r}")
    budgets = data["budgets"]
    for key in ("max_turns", "max_tool_calls"):
        if not isinstance(budgets.get(key), int) or budgets[key] < 0:
            raise ConfigurationError(f"budgets.{key} must be a non-negative integer")
    compression = data["compression"]
    ratio = compression.get("ratio")
    if not isinstance(ratio, (int, float)) or not 0 < ratio <= 1:
        raise ConfigurationError("compression.ratio must be in (0,1]")
    if not isinstance(compression.get("floor_tokens"), int):
        raise ConfigurationError("compression.floor_tokens must be an integer")
    if not isinstance(data["servers"], list):
        raise ConfigurationError("servers must be a list of registry entries")
    for entry in data["servers"]:
        if not isinstance(entry, dict) or "transport" not in entry:
            raise ConfigurationError("each server entry needs a transport key")


def build_registry(config: dict) -> list[dict]:
    """Materialize gateway-ready registry entries; inproc entries get a live
    fixture server built from their corpus directory."""
    from .servers import FixtureServer

    registry = []
    for entry in config.get("servers") or []:
        entry = dict(entry)
        if entry.get("transport") == "inproc":
            corpus_dir = entry.get("corpus_dir")
            if not corpus_dir:
                raise ConfigurationError("inproc server entry needs corpus_dir")
            tools = entry.get("tools")
            entry["server"] = FixtureServer(
                corpus_dir, tools=tuple(tools) if tools else None,
                name=entry.get("name", "fixture"),
            )
        registry.append(entry)
    return registry
