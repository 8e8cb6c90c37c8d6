"""Shared builders for the test suite."""

from datetime import datetime
from pathlib import Path

from embedhar.model import ActivityWindow, HomeLayout, SensorEvent

DATA_DIR = Path(__file__).parent / "data"


def make_window(layout: HomeLayout, events, window_id="w", ground_truth=None):
    """Build a window from (iso_timestamp, sensor_id, value) triples.

    Modality comes from the layout lookup so unknown sensors take the
    prefix-inferred fallback, same as ingestion does.
    """
    built = [
        SensorEvent(
            timestamp=datetime.fromisoformat(ts),
            sensor_id=sid,
            modality=layout.lookup(sid).modality,
            value=value,
        )
        for ts, sid, value in events
    ]
    return ActivityWindow.from_events(built, window_id=window_id, ground_truth=ground_truth)


# The hermetic end-to-end corpus: four windows with distinct activities.
FIXTURE_WINDOWS = [
    (
        "fx-000001",
        "CookBreakfast",
        [
            ("2010-11-04T06:12:00", "M012", "ON"),
            ("2010-11-04T06:13:00", "M012", "OFF"),
            ("2010-11-04T06:14:00", "M012", "ON"),
            ("2010-11-04T06:15:10", "M019", "ON"),
            ("2010-11-04T06:20:00", "M021", "ON"),
            ("2010-11-04T06:58:00", "M012", "OFF"),
        ],
    ),
    (
        "fx-000002",
        "NightToilet",
        [
            ("2010-11-04T00:05:00", "M003", "ON"),
            ("2010-11-04T00:05:07", "M003", "OFF"),
        ],
    ),
    (
        "fx-000003",
        "DineLunch",
        [
            ("2010-11-04T11:00:00", "M021", "ON"),
            ("2010-11-04T12:00:00", "M021", "ON"),
            ("2010-11-04T13:40:00", "M021", "OFF"),
        ],
    ),
    (
        "fx-000004",
        "EnterHome",
        [
            ("2010-11-04T09:00:00", "D001", "OPEN"),
            ("2010-11-04T09:00:05", "D001", "CLOSE"),
            ("2010-11-04T09:00:30", "M012", "ON"),
        ],
    ),
]


def fixture_corpus(layout: HomeLayout):
    return [
        make_window(layout, events, window_id=wid, ground_truth=label)
        for wid, label, events in FIXTURE_WINDOWS
    ]


# --- In-process embedding service for HTTP backend tests -----------------


class EmbeddingServer:
    """Tiny JSON embedding service bound to a random localhost port.

    Serves hash-test-embedder vectors scaled by ``scale`` (the client must
    normalize); the first ``fail_first`` requests get a 500 so retry paths
    can be exercised. ``response_dim`` forces a header dim different from
    the vectors actually produced, for mismatch tests.
    """

    def __init__(self, dim=32, fail_first=0, response_dim=None, scale=1.0):
        import threading
        from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

        self.dim = dim
        self.fail_first = fail_first
        self.response_dim = response_dim
        self.scale = scale
        self.requests = []
        self.lock = threading.Lock()
        owner = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                import json

                from embedhar import embedding

                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length))
                with owner.lock:
                    owner.requests.append(payload)
                    n = len(owner.requests)
                if n <= owner.fail_first:
                    self.send_response(500)
                    self.end_headers()
                    self.wfile.write(b"transient failure")
                    return
                dim = owner.response_dim or owner.dim
                vectors = [
                    [float(x) * owner.scale for x in embedding.test_embed(t, dim).vector]
                    for t in payload["texts"]
                ]
                body = json.dumps({"dim": dim, "vectors": vectors}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        self.endpoint = f"http://127.0.0.1:{self._server.server_address[1]}/embed"

    def close(self):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
