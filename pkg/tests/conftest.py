import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from ragmark.corpus import WhitespacePunctCounter
from ragmark.embed import LocalHashEmbedder


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length) or b"{}")
        status, body = self.server.app(self.path, payload)
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_stub():
    """Factory for throwaway local HTTP endpoints.

    The app callable gets (path, json_payload) and returns (status, json_body).
    """
    servers = []

    def make(app):
        server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
        server.app = app
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        servers.append(server)
        return f"http://127.0.0.1:{server.server_port}"

    yield make
    for server in servers:
        server.shutdown()
        server.server_close()


@pytest.fixture
def counter():
    return WhitespacePunctCounter()


@pytest.fixture
def embedder():
    return LocalHashEmbedder(dim=64)
