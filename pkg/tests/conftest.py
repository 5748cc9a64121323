from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from ragloop.bm25 import build_index
from ragloop.corpus import ingest_corpus
from ragloop.llm import make_scripted
from ragloop.prompts import load_registry

# ---------------------------------------------------------------------------
# Canonical single-hop replay fixture (one search).

RUSSERT_QUESTION = "What highway was renamed in honor of Tim Russert?"
RUSSERT_THOUGHT = ("The first step is to use the search_engine tool to find "
                   "which highway was renamed in honor of Tim Russert.")
RUSSERT_QUERY = "highway renamed in honor of Tim Russert"
RUSSERT_EVIDENCE = ("On July 23, 2008, U.S. Route 20A leading to the Buffalo "
                    "Bills' Ralph Wilson Stadium in Orchard Park, New York was "
                    "renamed the 'Timothy J. Russert Highway' in honor of Tim "
                    "Russert.")
RUSSERT_ANSWER = ("U.S. Route 20A was renamed the 'Timothy J. Russert Highway' "
                  "in honor of Tim Russert.")

# Canonical multi-hop replay fixture (two searches).

CONTRAST_QUESTION = ("How do Jerry Falwell's beliefs about the Antichrist as a "
                     "specific person contrast with Martin Wight's "
                     "interpretation of the Antichrist concept after World "
                     "War II?")
CONTRAST_STEPS = [
    ("Understand Jerry Falwell's beliefs about the Antichrist as a specific person.",
     "Jerry Falwell beliefs about the Antichrist",
     "In 1999, Jerry Falwell professed that the Antichrist would likely emerge "
     "within a decade, with the prediction that this figure would be Jewish, "
     "which led to allegations of anti-Semitism and an ensuing apology from "
     "Falwell. He believed the Antichrist and Christ would share many attributes."),
    ("Explore Martin Wight's interpretation of the Antichrist concept after "
     "World War II to contrast with Falwell's views.",
     "Martin Wight interpretation of the Antichrist concept after World War II.",
     "Post-World War II, Christian and political theorist Martin Wight "
     "interpreted the Antichrist not as an individual, but as a symbol of "
     "'demonic concentrations of power' recurring over time."),
]
CONTRAST_ANSWER = (
    "Jerry Falwell's beliefs about the Antichrist focused on the idea that the "
    "Antichrist would be a specific individual, with Falwell predicting in 1999 "
    "that this person would likely emerge within a decade and possess "
    "similarities to Christ. In contrast, Martin Wight's post-World War II "
    "interpretation of the Antichrist was symbolic, referring to it as 'demonic "
    "concentrations of power' that recur throughout history, rather than an "
    "individual figure.")


def search_turn(thought: str, query: str) -> str:
    return f"### Thought: {thought}\n### Action - Search Input: {query}"


def terminal_turn(answer: str | None = None) -> str:
    text = "### Thought: I have the final answer"
    if answer is not None:
        text += f"\n### Action - Final Answer: {answer}"
    return text


def singlehop_script():
    """Planner/reflector/final responses reproducing the one-search run."""
    return [
        search_turn(RUSSERT_THOUGHT, RUSSERT_QUERY),
        RUSSERT_EVIDENCE,
        terminal_turn(),
        RUSSERT_ANSWER,
    ]


def multihop_script():
    script = []
    for thought, query, evidence in CONTRAST_STEPS:
        script.append(search_turn(thought, query))
        script.append(evidence)
    script.append(terminal_turn())
    script.append(CONTRAST_ANSWER)
    return script


@pytest.fixture
def registry():
    return load_registry()


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


TOY_PASSAGES = [
    {"id": "russert", "title": "Tim Russert",
     "text": RUSSERT_EVIDENCE},
    {"id": "falwell", "title": "Jerry Falwell",
     "text": "Jerry Falwell shared his beliefs about the Antichrist in 1999, "
             "professing the figure would emerge within a decade."},
    {"id": "wight", "title": "Martin Wight",
     "text": "After World War II, Martin Wight offered an interpretation of "
             "the Antichrist concept as demonic concentrations of power."},
]


@pytest.fixture
def toy_corpus(tmp_path):
    path = write_jsonl(tmp_path / "toy.jsonl", TOY_PASSAGES)
    return ingest_corpus(path)


@pytest.fixture
def toy_index(toy_corpus):
    return build_index(toy_corpus)


@pytest.fixture
def singlehop_backend():
    return make_scripted(singlehop_script())


@pytest.fixture
def multihop_backend():
    return make_scripted(multihop_script())


# ---------------------------------------------------------------------------
# Minimal HTTP stub speaking the chat-completions and embeddings shapes.


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length) or b"{}")
        server: StubServer = self.server  # type: ignore[assignment]
        with server.lock:
            server.requests.append(
                {"path": self.path, "payload": payload,
                 "headers": dict(self.headers)})
            if server.responses:
                status, body = server.responses.pop(0)
            else:
                status, body = 500, {"error": "stub exhausted"}
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):  # keep pytest output clean
        pass


class StubServer(ThreadingHTTPServer):
    def __init__(self):
        super().__init__(("127.0.0.1", 0), _StubHandler)
        self.responses: list[tuple[int, dict]] = []
        self.requests: list[dict] = []
        self.lock = threading.Lock()

    @property
    def base_url(self) -> str:
        return f"http://127.0.0.1:{self.server_address[1]}"

    def queue_chat(self, content: str, status: int = 200):
        self.responses.append(
            (status, {"choices": [{"message": {"content": content}}]}))

    def queue_raw(self, status: int, body: dict):
        self.responses.append((status, body))


@pytest.fixture
def stub_server():
    server = StubServer()
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    server.server_close()
