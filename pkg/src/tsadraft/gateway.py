"""Tool layer: discovery and invocation of tool servers over JSON-RPC 2.0.

The gateway speaks the MCP method names (initialize, tools/list, tools/call)
over two transports, newline-delimited JSON on a child process's stdio and
plain HTTP POST, treating both uniformly. Every record a tool returns is
auto-indexed into the evidence store with full provenance before the caller
sees it, so nothing reaches an agent without an audit trail.

A third in-process transport binds a server object directly; it exists for
unit tests and uses the same dispatch path as the wire transports.
"""

from __future__ import annotations

import json
import subprocess
import threading
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .errors import (
    ConfigurationError,
    InvalidArguments,
    ToolForbidden,
    ToolNotFound,
    ToolUnavailable,
)

if TYPE_CHECKING:
    from .evidence import EvidenceStore

PROTOCOL_VERSION = "2024-11-05"

# section domains allowed to call each tool, keyed by tool name; "all" is a
# wildcard. Servers do not know about report domains, so this lives here.
DEFAULT_DOMAIN_TAGS: dict[str, tuple[str, ...]] = {
    "pubmed_search": ("all",),
    "ensembl_gene": ("genetic", "homology"),
    "uniprot_entry": ("genetic", "homology"),
    "gwas_associations": ("genetic",),
    "mouse_phenotypes": ("genetic",),
    "expression_profile": ("transcriptomic",),
    "known_drugs": ("pharmacological",),
    "clinical_trials": ("clinical",),
    "evidence_lookup": ("all",),
}

_PARAM_TYPES = {"string", "integer", "number", "boolean"}


@dataclass(frozen=True)
class ToolParam:
    name: str
    type: str
    description: str = ""
    required: bool = True

    def __post_init__(self):
        if self.type not in _PARAM_TYPES:
            raise ConfigurationError(f"unknown parameter type {self.type!r}")


@dataclass(frozen=True)
class ToolSchema:
    name: str
    description: str
    parameters: tuple[ToolParam, ...] = ()
    domain_tags: tuple[str, ...] = ("all",)

    def json_parameters(self) -> dict:
        properties = {}
        required = []
        for param in self.parameters:
            properties[param.name] = {"type": param.type, "description": param.description}
            if param.required:
                required.append(param.name)
        schema = {"type": "object", "properties": properties}
        if required:
            schema["required"] = required
        return schema

    def to_wire(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "inputSchema": self.json_parameters(),
        }

    @classmethod
    def from_wire(cls, data: dict, domain_tags: tuple[str, ...] | None = None) -> "ToolSchema":
        params = []
        input_schema = data.get("inputSchema") or {}
        required = set(input_schema.get("required") or [])
        for name, prop in (input_schema.get("properties") or {}).items():
            params.append(
                ToolParam(
                    name=name,
                    type=prop.get("type", "string"),
                    description=prop.get("description", ""),
                    required=name in required,
                )
            )
        params.sort(key=lambda p: p.name)
        tags = domain_tags or DEFAULT_DOMAIN_TAGS.get(data["name"], ("all",))
        return cls(
            name=data["name"],
            description=data.get("description", ""),
            parameters=tuple(params),
            domain_tags=tags,
        )

    def permits(self, caller_domain: str) -> bool:
        return "all" in self.domain_tags or caller_domain in self.domain_tags


@dataclass(frozen=True)
class ToolResult:
    records: tuple
    evidence_ids: tuple
    diagnostics: dict
    content: dict  # what the calling agent sees

    def __post_init__(self):
        if len(self.records) != len(self.evidence_ids):
            raise ConfigurationError("one evidence id per indexed record")


def validate_arguments(schema: ToolSchema, arguments: dict) -> None:
    if not isinstance(arguments, dict):
        raise InvalidArguments("arguments must be an object")
    known = {p.name: p for p in schema.parameters}
    for name in arguments:
        if name not in known:
            raise InvalidArguments(f"unknown argument {name!r} for {schema.name}")
    for param in schema.parameters:
        if param.name not in arguments:
            if param.required:
                raise InvalidArguments(f"{schema.name} requires argument {param.name!r}")
            continue
        value = arguments[param.name]
        ok = {
            "string": lambda v: isinstance(v, str),
            "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
            "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
            "boolean": lambda v: isinstance(v, bool),
        }[param.type](value)
        if not ok:
            raise InvalidArguments(
                f"argument {param.name!r} of {schema.name} must be {param.type}"
            )


# -- processing pipeline steps -------------------------------------------------


def run_pipeline_steps(raw_records: list[dict], steps: list[dict]) -> tuple[list[dict], dict]:
    """Apply filter/dedupe/cross_reference/aggregate steps in config order.

    Diagnostics account for every dropped record: for step-free pipelines
    input = output; otherwise input = output + filtered + deduplicated
    + aggregated (records collapsed into group rows).
    """
    records = [dict(r) for r in raw_records]
    diagnostics = {
        "input": len(records),
        "filtered": 0,
        "deduplicated": 0,
        "cross_referenced": 0,
        "aggregated": 0,
        "steps": [],
    }
    for step in steps:
        kind = step.get("step")
        before = len(records)
        if kind == "filter":
            records = [r for r in records if _filter_keep(r, step)]
            removed = before - len(records)
            diagnostics["filtered"] += removed
            trace = {"step": "filter", "input": before, "output": len(records), "removed": removed}
        elif kind == "dedupe":
            key_fields = step.get("key") or []
            if not key_fields:
                raise ConfigurationError("dedupe step needs a key")
            seen = set()
            kept = []
            for r in records:
                key = tuple(json.dumps(r.get(f), sort_keys=True, default=str) for f in key_fields)
                if key in seen:
                    continue
                seen.add(key)
                kept.append(r)
            removed = before - len(kept)
            records = kept
            diagnostics["deduplicated"] += removed
            trace = {"step": "dedupe", "input": before, "output": len(records), "removed": removed}
        elif kind == "cross_reference":
            key = step.get("key")
            companions = step.get("companion") or []
            annotate = step.get("annotate", "cross_reference")
            if not key:
                raise ConfigurationError("cross_reference step needs a key")
            by_key = {}
            for companion in companions:
                by_key.setdefault(companion.get(key), []).append(companion)
            hits = 0
            for r in records:
                matches = by_key.get(r.get(key))
                if matches:
                    r[annotate] = matches[0]
                    hits += 1
            diagnostics["cross_referenced"] += hits
            trace = {"step": "cross_reference", "input": before, "output": before, "annotated": hits}
        elif kind == "aggregate":
            group_by = step.get("group_by")
            value_field = step.get("value_field")
            reducer = step.get("reducer", "count")
            if not group_by:
                raise ConfigurationError("aggregate step needs group_by")
            groups: dict = {}
            order: list = []
            for r in records:
                key = r.get(group_by)
                if key not in groups:
                    groups[key] = []
                    order.append(key)
                groups[key].append(r)
            out = []
            for key in order:
                members = groups[key]
                row = {group_by: key, "n": len(members)}
                if value_field:
                    values = [
                        m[value_field]
                        for m in members
                        if isinstance(m.get(value_field), (int, float))
                    ]
                    row[value_field] = _reduce(reducer, values)
                for carry_field in step.get("carry") or []:
                    if carry_field in members[0]:
                        row[carry_field] = members[0][carry_field]
                out.append(row)
            collapsed = before - len(out)
            records = out
            diagnostics["aggregated"] += collapsed
            trace = {"step": "aggregate", "input": before, "output": len(out), "groups": len(out)}
        else:
            raise ConfigurationError(f"unknown pipeline step {kind!r}")
        diagnostics["steps"].append(trace)
    diagnostics["output"] = len(records)
    return records, diagnostics


def _filter_keep(record: dict, step: dict) -> bool:
    field = step.get("field")
    if field is None:
        raise ConfigurationError("filter step needs a field")
    value = record.get(field)
    if "equals" in step:
        return value == step["equals"]
    if "min" in step:
        return isinstance(value, (int, float)) and value >= step["min"]
    if "max" in step:
        return isinstance(value, (int, float)) and value <= step["max"]
    if step.get("non_empty"):
        return bool(value)
    raise ConfigurationError("filter step needs equals/min/max/non_empty")


def _reduce(reducer: str, values: list) -> float | int | None:
    if not values:
        return None
    if reducer == "max":
        return max(values)
    if reducer == "min":
        return min(values)
    if reducer == "count":
        return len(values)
    if reducer == "mean":
        return round(sum(values) / len(values), 6)
    raise ConfigurationError(f"unknown reducer {reducer!r}")


# -- transports ------------------------------------------------------------------


class WireError(Exception):
    """Transport or framing failure; surfaced to callers as tool-unavailable."""


class StdioConnection:
    """Child-process server speaking newline-delimited JSON-RPC on stdio."""

    def __init__(self, command: list[str], name: str = ""):
        self.name = name or command[0]
        try:
            self._proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise WireError(f"cannot start {command!r}: {exc}") from exc
        self._next_id = 1
        self._lock = threading.Lock()

    def request(self, method: str, params: dict) -> dict:
        with self._lock:
            rid = self._next_id
            self._next_id += 1
            frame = {"jsonrpc": "2.0", "id": rid, "method": method, "params": params}
            try:
                self._proc.stdin.write(json.dumps(frame, ensure_ascii=False) + "\n")
                self._proc.stdin.flush()
                line = self._proc.stdout.readline()
            except (OSError, ValueError, BrokenPipeError) as exc:
                raise WireError(f"stdio transport failure: {exc}") from exc
        if not line:
            raise WireError(f"server {self.name} closed its stdout")
        return _parse_response(line, rid, self.name)

    def close(self) -> None:
        try:
            self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.terminate()
            self._proc.wait(timeout=5)
        except (OSError, subprocess.TimeoutExpired):
            self._proc.kill()


class HttpConnection:
    """Server behind a URL accepting JSON-RPC 2.0 request bodies via POST."""

    def __init__(self, url: str, name: str = "", timeout: float = 30.0):
        self.url = url
        self.name = name or url
        self.timeout = timeout
        self._next_id = 1
        self._lock = threading.Lock()

    def request(self, method: str, params: dict) -> dict:
        import httpx

        with self._lock:
            rid = self._next_id
            self._next_id += 1
        frame = {"jsonrpc": "2.0", "id": rid, "method": method, "params": params}
        try:
            response = httpx.post(self.url, json=frame, timeout=self.timeout)
            response.raise_for_status()
            body = response.text
        except Exception as exc:  # httpx errors and connection failures alike
            raise WireError(f"http transport failure: {exc}") from exc
        return _parse_response(body, rid, self.name)

    def close(self) -> None:
        pass


class InProcConnection:
    """Direct binding to a server object; same dispatch as the wire paths."""

    def __init__(self, server, name: str = ""):
        self._server = server
        self.name = name or getattr(server, "name", "inproc")
        self._next_id = 1

    def request(self, method: str, params: dict) -> dict:
        rid = self._next_id
        self._next_id += 1
        frame = {"jsonrpc": "2.0", "id": rid, "method": method, "params": params}
        raw = self._server.handle_frame(json.dumps(frame))
        return _parse_response(raw, rid, self.name)

    def close(self) -> None:
        pass


def _parse_response(raw: str, expect_id: int, server_name: str) -> dict:
    try:
        frame = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise WireError(f"malformed frame from {server_name}: {exc}") from None
    if not isinstance(frame, dict) or frame.get("jsonrpc") != "2.0":
        raise WireError(f"malformed frame from {server_name}: not a JSON-RPC 2.0 response")
    if frame.get("id") != expect_id:
        raise WireError(f"response id mismatch from {server_name}")
    if "error" in frame:
        err = frame["error"] or {}
        raise WireError(
            f"server {server_name} error {err.get('code')}: {err.get('message')}"
        )
    if "result" not in frame:
        raise WireError(f"malformed frame from {server_name}: neither result nor error")
    return frame["result"]


def open_connection(entry: dict):
    transport = entry.get("transport", "stdio")
    name = entry.get("name", "")
    if transport == "stdio":
        command = entry.get("command")
        if not command:
            raise ConfigurationError("stdio server entry needs a command")
        if isinstance(command, str):
            command = command.split()
        return StdioConnection(command, name=name)
    if transport == "http":
        url = entry.get("url")
        if not url:
            raise ConfigurationError("http server entry needs a url")
        return HttpConnection(url, name=name)
    if transport == "inproc":
        server = entry.get("server")
        if server is None:
            raise ConfigurationError("inproc server entry needs a server object")
        return InProcConnection(server, name=name)
    raise ConfigurationError(f"unknown transport {transport!r}")


# -- the gateway -------------------------------------------------------------------


class ToolGateway:
    """Routes tool calls to connected servers and indexes every result."""

    def __init__(self, store: "EvidenceStore", clock=None):
        from .evidence import wall_clock_now

        self.store = store
        self._clock = clock or wall_clock_now
        self._connections: dict[str, object] = {}  # tool name → connection
        self._schemas: dict[str, ToolSchema] = {}
        self._lock = threading.Lock()
        self.connect_diagnostics: list[str] = []
        self._register_builtin()

    def _register_builtin(self) -> None:
        schema = self.store.as_tool_descriptor()
        self._schemas[schema.name] = schema

    def connect(self, registry: list[dict]) -> None:
        """Connect servers from config entries; handshake failures are noted
        in connect_diagnostics and do not take down the other servers."""
        for entry in registry:
            label = entry.get("name") or entry.get("url") or str(entry.get("command"))
            try:
                conn = open_connection(entry)
            except WireError as exc:
                self.connect_diagnostics.append(f"{label}: {exc}")
                continue
            try:
                conn.request("initialize", {"protocolVersion": PROTOCOL_VERSION,
                                            "clientInfo": {"name": "tsadraft"}})
                listing = conn.request("tools/list", {})
                tools = listing.get("tools") or []
            except WireError as exc:
                self.connect_diagnostics.append(f"{label}: handshake failed: {exc}")
                conn.close()
                continue
            tags_config = entry.get("domain_tags") or {}
            for wire in tools:
                name = wire.get("name")
                if not name:
                    self.connect_diagnostics.append(f"{label}: tool without a name skipped")
                    continue
                if name in self._schemas:
                    raise ConfigurationError(
                        f"duplicate tool name {name!r} offered by {label}"
                    )
                tags = tuple(tags_config.get(name, ())) or None
                self._schemas[name] = ToolSchema.from_wire(wire, domain_tags=tags)
                self._connections[name] = conn

    def list_tools(self) -> list[ToolSchema]:
        return sorted(self._schemas.values(), key=lambda s: s.name)

    def schema(self, tool_name: str) -> ToolSchema:
        schema = self._schemas.get(tool_name)
        if schema is None:
            raise ToolNotFound(f"no tool named {tool_name!r}")
        return schema

    def invoke(self, tool_name: str, arguments: dict, caller: str, stage: str) -> ToolResult:
        schema = self.schema(tool_name)
        validate_arguments(schema, arguments)
        if not schema.permits(caller):
            raise ToolForbidden(
                f"tool {tool_name!r} is not available to the {caller} section",
                domain_tags=list(schema.domain_tags),
            )
        with self._lock:
            if tool_name == "evidence_lookup":
                content = self.store.lookup_tool_result(arguments.get("id"))
                diagnostics = {"input": 1, "filtered": 0, "deduplicated": 0,
                               "cross_referenced": 0, "aggregated": 0, "output": 1, "steps": []}
                return ToolResult(records=(), evidence_ids=(), diagnostics=diagnostics,
                                  content=content)
            conn = self._connections[tool_name]
            try:
                result = conn.request("tools/call", {"name": tool_name, "arguments": arguments})
            except WireError as exc:
                raise ToolUnavailable(str(exc), tool=tool_name, retryable=True) from exc
            if not isinstance(result, dict) or not isinstance(result.get("records"), list):
                raise ToolUnavailable(
                    f"tool {tool_name!r} returned a malformed result", tool=tool_name
                )
            records = result["records"]
            diagnostics = result.get("diagnostics") or {
                "input": len(records), "filtered": 0, "deduplicated": 0,
                "cross_referenced": 0, "aggregated": 0, "output": len(records), "steps": [],
            }
            source_db = result.get("source_database") or "unspecified"
            evidence_ids = []
            from .evidence import Provenance

            for record in records:
                prov = Provenance(
                    invoking_agent=caller,
                    tool_name=tool_name,
                    query=arguments,
                    pipeline_stage=stage,
                    source_database=record.get("source_database") or source_db,
                    retrieved_at=self._clock(),
                )
                evidence_ids.append(self.store.put(prov, record).id)
            content = {
                "records": records,
                "evidence_ids": evidence_ids,
                "diagnostics": diagnostics,
            }
            return ToolResult(
                records=tuple(records),
                evidence_ids=tuple(evidence_ids),
                diagnostics=diagnostics,
                content=content,
            )

    def close(self) -> None:
        seen: dict[int, object] = {}
        for conn in self._connections.values():
            seen[id(conn)] = conn
        for conn in seen.values():
            conn.close()
        self._connections.clear()
