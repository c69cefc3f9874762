from __future__ import annotations

import json
import random
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from typing import Callable

import pytest

from trajreuse.core import Metadata, Pattern, Query, Trajectory, WorkflowNode
from trajreuse.embedding import embed

ACCEPTANCE_LINES: list[str] = []

TOOLS = ["t_alpha", "t_beta", "t_gamma", "t_delta", "t_eps", "t_zeta"]


def make_traj(
    tid: str,
    text: str,
    tools: list[str],
    params: list[dict] | None = None,
    variable: list[bool] | None = None,
    pattern: Pattern = Pattern.SEQUENTIAL,
    outcome=None,
    deps: list[tuple[str, ...]] | None = None,
) -> Trajectory:
    params = params or [{} for _ in tools]
    variable = variable or [False for _ in tools]
    nodes = []
    for i, tool in enumerate(tools):
        if deps is not None:
            d = deps[i]
        else:
            d = (f"n{i - 1}",) if i else ()
        nodes.append(WorkflowNode(f"n{i}", tool, dict(params[i]), variable[i], False, (), d))
    meta = Metadata() if outcome is None else Metadata(outcome=outcome)
    return Trajectory(tid, Query(text, tid), embed(text), tuple(nodes), pattern, {}, meta)


def random_traj(rng: random.Random, tid: str, n_nodes: int | None = None) -> Trajectory:
    n = n_nodes or rng.randint(1, 5)
    tools = [rng.choice(TOOLS) for _ in range(n)]
    params = [{"k": rng.randint(0, 9), "w": rng.choice(["x", "y", "z"])} for _ in range(n)]
    variable = [rng.random() < 0.4 for _ in range(n)]
    words = " ".join(rng.choice(["red", "blue", "green", "gold", "grey", "pink", "teal", "navy"]) for _ in range(4))
    return make_traj(tid, f"{tid} {words}", tools, params, variable)


@pytest.fixture
def rng() -> random.Random:
    return random.Random(1234)


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


class _Handler(BaseHTTPRequestHandler):
    responder: Callable[[dict], tuple[int, object]]

    def do_POST(self):  # noqa: N802
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        status, payload = self.responder(body)
        raw = payload.encode() if isinstance(payload, str) else json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_stub():
    """Start a local JSON endpoint; call with a responder, get back its URL."""
    servers = []

    def start(responder: Callable[[dict], tuple[int, object]]) -> str:
        handler = type("H", (_Handler,), {"responder": staticmethod(responder)})
        server = HTTPServer(("127.0.0.1", 0), handler)
        threading.Thread(target=server.serve_forever, daemon=True).start()
        servers.append(server)
        return f"http://127.0.0.1:{server.server_port}/"

    yield start
    for s in servers:
        s.shutdown()
        s.server_close()
