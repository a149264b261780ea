"""Fixture-backed tool servers emulating the biomedical sources.

Each server is a pure function of (corpus, arguments): corpora are static
JSON files holding hand-curated slices for a few well-known genes, and every
call runs the tool's embedded processing pipeline (filter, dedupe,
cross-reference, aggregate) before returning records. Dispatch speaks
JSON-RPC 2.0 with the MCP method names; runners exist for newline-delimited
stdio and for plain HTTP POST.

Run standalone:
    python -m tsadraft.servers stdio --corpus fixtures/corpora
    python -m tsadraft.servers http --corpus fixtures/corpora --port 8765
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .errors import ConfigurationError
from .gateway import PROTOCOL_VERSION, run_pipeline_steps

# wire schemas served by tools/list; thresholds are optional arguments with
# the documented defaults applied server-side when absent
TOOL_DEFINITIONS: dict[str, dict] = {
    "pubmed_search": {
        "description": "Search literature abstracts; returns matching citations with snippets.",
        "parameters": {"query": {"type": "string", "required": True,
                                 "description": "free-text query; gene symbol selects the slice"}},
    },
    "ensembl_gene": {
        "description": "Gene and ortholog annotation rows for a symbol, one row per species.",
        "parameters": {"symbol": {"type": "string", "required": True,
                                  "description": "gene symbol"}},
    },
    "uniprot_entry": {
        "description": "Protein entries for a gene: accession, length, isoforms, domains.",
        "parameters": {"gene": {"type": "string", "required": True,
                                "description": "gene symbol"}},
    },
    "gwas_associations": {
        "description": "Genome-wide association rows for a gene region.",
        "parameters": {
            "gene": {"type": "string", "required": True, "description": "gene symbol"},
            "p_value_max": {"type": "number", "required": False,
                            "description": "association p-value threshold (default 1e-5)"},
        },
    },
    "expression_profile": {
        "description": "Tissue expression rows, aggregated to per-tissue maxima.",
        "parameters": {
            "gene": {"type": "string", "required": True, "description": "gene symbol"},
            "min_level": {"type": "number", "required": False,
                          "description": "minimum expression level kept (default 0)"},
        },
    },
    "known_drugs": {
        "description": "Drugs and clinical candidates directed at the target.",
        "parameters": {"target": {"type": "string", "required": True,
                                  "description": "gene symbol"}},
    },
    "clinical_trials": {
        "description": "Registered interventional trials involving the target.",
        "parameters": {"target": {"type": "string", "required": True,
                                  "description": "gene symbol"}},
    },
    "mouse_phenotypes": {
        "description": "Knockout and mutant phenotype rows from mouse screens.",
        "parameters": {
            "gene": {"type": "string", "required": True, "description": "gene symbol"},
            "p_value_max": {"type": "number", "required": False,
                            "description": "phenotype significance threshold (default 1e-3)"},
        },
    },
}

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
INTERNAL_ERROR = -32603


def _wire_schema(name: str) -> dict:
    definition = TOOL_DEFINITIONS[name]
    properties = {}
    required = []
    for pname, spec in definition["parameters"].items():
        properties[pname] = {"type": spec["type"], "description": spec.get("description", "")}
        if spec.get("required"):
            required.append(pname)
    schema: dict = {"type": "object", "properties": properties}
    if required:
        schema["required"] = required
    return {"name": name, "description": definition["description"], "inputSchema": schema}


class FixtureServer:
    """Serves a subset of the fixture tools from a corpus directory."""

    def __init__(self, corpus_dir: Path | str, tools: list[str] | None = None,
                 name: str = "fixture-biomed"):
        self.name = name
        self.corpus_dir = Path(corpus_dir)
        wanted = tools or sorted(TOOL_DEFINITIONS)
        unknown = [t for t in wanted if t not in TOOL_DEFINITIONS]
        if unknown:
            raise ConfigurationError(f"no fixture corpus defined for tools {unknown}")
        self._corpora: dict[str, dict] = {}
        for tool in wanted:
            path = self.corpus_dir / f"{tool}.json"
            if not path.is_file():
                raise ConfigurationError(f"missing corpus file {path}")
            self._corpora[tool] = json.loads(path.read_text(encoding="utf-8"))

    # -- tool logic ------------------------------------------------------

    def list_tools(self) -> list[dict]:
        return [_wire_schema(name) for name in sorted(self._corpora)]

    def call(self, tool: str, arguments: dict) -> dict:
        corpus = self._corpora.get(tool)
        if corpus is None:
            raise KeyError(tool)
        key_argument = corpus["key_argument"]
        raw_key = arguments.get(key_argument)
        if not isinstance(raw_key, str) or not raw_key:
            raise ValueError(f"{tool} needs a non-empty {key_argument!r} string")
        rows = self._select_rows(corpus, raw_key)
        steps = []
        threshold = corpus.get("threshold")
        if threshold:
            value = arguments.get(threshold["argument"], threshold["default"])
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ValueError(f"{threshold['argument']} must be a number")
            steps.append({"step": "filter", "field": threshold["field"],
                          threshold["kind"]: value})
        steps.extend(corpus.get("pipeline") or [])
        records, diagnostics = run_pipeline_steps(rows, steps)
        return {
            "records": records,
            "diagnostics": diagnostics,
            "source_database": corpus["source_database"],
        }

    def _select_rows(self, corpus: dict, raw_key: str) -> list[dict]:
        entries = corpus.get("entries") or {}
        if corpus.get("match") == "substring":
            needle = raw_key.lower()
            rows = []
            for key in sorted(entries):
                if key.lower() in needle:
                    rows.extend(entries[key])
            return copy.deepcopy(rows)
        for key, value in entries.items():
            if key.lower() == raw_key.lower():
                return copy.deepcopy(value)
        return []

    # -- JSON-RPC dispatch --------------------------------------------------

    def handle_frame(self, raw: str) -> str:
        rid = None
        try:
            frame = json.loads(raw)
        except json.JSONDecodeError:
            return _error_frame(None, PARSE_ERROR, "parse error")
        if not isinstance(frame, dict):
            return _error_frame(None, INVALID_REQUEST, "request must be an object")
        rid = frame.get("id")
        if frame.get("jsonrpc") != "2.0" or not isinstance(frame.get("method"), str):
            return _error_frame(rid, INVALID_REQUEST, "not a JSON-RPC 2.0 request")
        method = frame["method"]
        params = frame.get("params")
        if params is None:
            params = {}
        if not isinstance(params, dict):
            return _error_frame(rid, INVALID_PARAMS, "params must be an object")
        try:
            if method == "initialize":
                result = {
                    "protocolVersion": PROTOCOL_VERSION,
                    "serverInfo": {"name": self.name},
                    "capabilities": {"tools": {}},
                }
            elif method == "tools/list":
                result = {"tools": self.list_tools()}
            elif method == "tools/call":
                name = params.get("name")
                arguments = params.get("arguments")
                if not isinstance(name, str) or not isinstance(arguments, dict):
                    return _error_frame(rid, INVALID_PARAMS,
                                        "tools/call needs name and arguments")
                try:
                    result = self.call(name, arguments)
                except KeyError:
                    return _error_frame(rid, INVALID_PARAMS, f"unknown tool {name!r}")
                except ValueError as exc:
                    return _error_frame(rid, INVALID_PARAMS, str(exc))
            else:
                return _error_frame(rid, METHOD_NOT_FOUND, f"unknown method {method!r}")
        except Exception as exc:  # corpus bugs must not kill the server loop
            return _error_frame(rid, INTERNAL_ERROR, f"internal error: {exc}")
        return json.dumps({"jsonrpc": "2.0", "id": rid, "result": result},
                          ensure_ascii=False)


def _error_frame(rid, code: int, message: str) -> str:
    return json.dumps(
        {"jsonrpc": "2.0", "id": rid, "error": {"code": code, "message": message}},
        ensure_ascii=False,
    )


# -- runners ---------------------------------------------------------------------


def serve_stdio(server: FixtureServer, stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        stdout.write(server.handle_frame(line) + "\n")
        stdout.flush()


class _RpcHandler(BaseHTTPRequestHandler):
    server_version = "tsadraft-fixture"

    def do_POST(self):  # noqa: N802 (http.server API)
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length).decode("utf-8", errors="replace")
        body = self.server.fixture_server.handle_frame(raw).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


class FixtureHttpServer(ThreadingHTTPServer):
    def __init__(self, address, server: FixtureServer):
        super().__init__(address, _RpcHandler)
        self.fixture_server = server


def serve_http(server: FixtureServer, host: str = "127.0.0.1", port: int = 0,
               ready_event: threading.Event | None = None) -> FixtureHttpServer:
    httpd = FixtureHttpServer((host, port), server)
    if ready_event is not None:
        ready_event.set()
    return httpd


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="tsadraft-servers",
                                     description="fixture tool servers")
    parser.add_argument("mode", choices=["stdio", "http"])
    parser.add_argument("--corpus", required=True, help="corpus directory")
    parser.add_argument("--tools", default="", help="comma-separated tool subset")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8765)
    args = parser.parse_args(argv)
    tools = [t for t in args.tools.split(",") if t] or None
    server = FixtureServer(args.corpus, tools=tools)
    if args.mode == "stdio":
        serve_stdio(server)
        return 0
    httpd = serve_http(server, host=args.host, port=args.port)
    sys.stderr.write(f"serving on {httpd.server_address[0]}:{httpd.server_address[1]}\n")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
