import hashlib
import json
import random
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

CLASSES = ("A", "B", "C")


def synth(seed, n=300):
    """Three 2-D Gaussian classes: A at (-5,0) and C at (5,0) with sd 1, B at (0,0) with sd 2."""
    rng = np.random.default_rng(seed)
    A = rng.normal([-5.0, 0.0], 1.0, (n, 2))
    B = rng.normal([0.0, 0.0], 2.0, (n, 2))
    C = rng.normal([5.0, 0.0], 1.0, (n, 2))
    X = np.vstack([A, B, C])
    labels = ["A"] * n + ["B"] * n + ["C"] * n
    return X, labels


def synth_split(seed, n=300):
    X, labels = synth(seed, n)
    rng = np.random.default_rng(seed + 100)
    splits = np.where(rng.random(len(labels)) < 2 / 3, "train", "test").tolist()
    return X, labels, splits


def lift(X2, dim=50, seed=1):
    """Embed 2-D points into ``dim`` dimensions with a seeded orthonormal map."""
    Q = np.linalg.qr(np.random.default_rng(seed).normal(size=(dim, X2.shape[1])))[0]
    return X2 @ Q.T


def text_vector(text, dim=8):
    h = hashlib.sha256(text.encode("utf-8")).digest()
    return [((b / 255.0) - 0.5) for b in h[:dim]]


class MockEmbeddingServer:
    """OpenAI-style /v1/embeddings endpoint with random per-request delays.

    Each request sleeps a random amount so concurrent batches finish out of
    order, and the ``data`` list is returned reversed so clients must use
    ``index``.
    """

    def __init__(self, dim=8, max_delay=0.05, seed=0, fail_first=0, status=200, dims=None):
        self.dim = dim
        self.requests = []
        self.auth_headers = []
        self.fail_first = fail_first
        self.status = status
        self.dims = list(dims) if dims else None
        self._lock = threading.Lock()
        self._rng = random.Random(seed)
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                with server._lock:
                    server.requests.append(body)
                    server.auth_headers.append(self.headers.get("Authorization"))
                    n_req = len(server.requests)
                    delay = server._rng.uniform(0, max_delay)
                    dim = server.dims[(n_req - 1) % len(server.dims)] if server.dims else server.dim
                time.sleep(delay)
                if n_req <= server.fail_first or server.status != 200:
                    code = server.status if server.status != 200 else 503
                    self.send_response(code)
                    self.send_header("Content-Length", "0")
                    self.end_headers()
                    return
                data = [
                    {"object": "embedding", "index": i, "embedding": text_vector(t, dim)}
                    for i, t in enumerate(body["input"])
                ]
                payload = json.dumps({"object": "list", "data": data[::-1]}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def mock_server():
    with MockEmbeddingServer() as srv:
        yield srv


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
    return path
