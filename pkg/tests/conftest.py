import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from agentic_qpp.retrieval import build_lexical_index
from agentic_qpp.types import Document

# Three-document corpus for hand-checked BM25 scores.
CAT_DOG_DOCS = [
    Document("d1", "", "cat cat"),
    Document("d2", "", "cat dog"),
    Document("d3", "", "dog"),
]

# Protocol replay: a generator answering a succession question in two
# search iterations followed by an answer.
REPLAY_QUESTION = "who will take the throne after the queen dies?"
REPLAY_ANSWER = "Charles, Prince of Wales"
REPLAY_OUTPUTS = [
    "<think>I need to find out who will take the throne after the queen dies. "
    "I'll search for it.</think> <search> who will take the throne after the queen dies </search>",
    "<think>I found out that after the queen dies, her heir apparent will take the throne. "
    "I need to find out who the heir apparent is for Queen Elizabeth II.</think> "
    "<search> heir apparent to Queen Elizabeth II </search>",
    "<think>I found out that the heir apparent to Queen Elizabeth II is her eldest son, "
    "Charles, Prince of Wales. Now I can provide the answer.</think> "
    "<answer> Charles, Prince of Wales </answer>",
]

SUCCESSION_DOCS = [
    Document(
        "succession-throne",
        "Succession to the British throne",
        "The order of succession determines who will take the throne after the queen "
        "dies. The line of succession is regulated both by descent and by statute.",
    ),
    Document(
        "heir-apparent",
        "Heir apparent",
        "An heir apparent is first in the order of succession and cannot be displaced. "
        "The heir apparent to Queen Elizabeth II is her eldest son, Charles, Prince of Wales.",
    ),
    Document(
        "crown-act",
        "Succession to the Crown Act",
        "The act altered the rules of succession so that an elder daughter ranks ahead "
        "of her younger brothers in the line to the throne.",
    ),
    Document(
        "monarchy",
        "Monarchy of the United Kingdom",
        "The monarch of the United Kingdom is the head of state. On the death of the "
        "queen, the throne passes immediately to the heir.",
    ),
    Document(
        "beijing",
        "Beijing",
        "Beijing is the capital of China and one of the most populous cities in the world.",
    ),
    Document(
        "coronation",
        "Coronation",
        "A coronation marks the formal investiture of a monarch with regal power, "
        "often following accession to the throne.",
    ),
]


@pytest.fixture(scope="session")
def cat_dog_index():
    return build_lexical_index(CAT_DOG_DOCS)


@pytest.fixture(scope="session")
def succession_index():
    return build_lexical_index(SUCCESSION_DOCS)


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length)) if length else {}
        self.server.seen.append(
            {"path": self.path, "payload": payload, "headers": dict(self.headers)}
        )
        route = self.server.routes.get(self.path)
        if route is None:
            self.send_response(404)
            self.end_headers()
            return
        status, body = route(payload)
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


class StubServer:
    """Local HTTP stub; tests register routes as path -> payload -> (status, body)."""

    def __init__(self):
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
        self._server.routes = {}
        self._server.seen = []
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def routes(self):
        return self._server.routes

    @property
    def seen(self):
        return self._server.seen

    def url(self, path: str) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}{path}"

    def close(self):
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture()
def stub_server():
    server = StubServer()
    yield server
    server.close()


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record) + "\n")
    return path


def corpus_jsonl(path, docs):
    return write_jsonl(
        path, [{"docno": d.docno, "title": d.title, "text": d.text} for d in docs]
    )
