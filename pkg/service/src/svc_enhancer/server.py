"""HTTP server: /healthz and the multipart /enhance endpoint."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .codecs import CodecError, decode_pfm, decode_png, encode_png
from .config import ServiceConfig
from .modes import build_mode
from .multipart import MultipartError, parse_multipart

REQUIRED_PARTS = ("rgb", "depth", "uncertainty", "meta")


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):
        pass

    def _reply(self, status: int, body: bytes, content_type: str = "text/plain") -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/healthz":
            self._reply(200, b"ok")
        else:
            self._reply(404, b"not found")

    def do_POST(self):
        if self.path != "/enhance":
            self._reply(404, b"not found")
            return
        server: EnhancerServer = self.server  # type: ignore[assignment]
        with server.slots:
            try:
                length = int(self.headers.get("Content-Length", "0"))
                body = self.rfile.read(length)
                parts = parse_multipart(body, self.headers.get("Content-Type", ""))
            except (MultipartError, ValueError) as exc:
                self._reply(400, f"malformed multipart body: {exc}".encode())
                return
            missing = [p for p in REQUIRED_PARTS if p not in parts]
            if missing:
                self._reply(400, f"missing parts: {missing}".encode())
                return
            try:
                rgb = decode_png(parts["rgb"])
                depth = decode_pfm(parts["depth"])
                uncertainty = decode_pfm(parts["uncertainty"])
                meta = json.loads(parts["meta"].decode("utf-8"))
            except (CodecError, UnicodeDecodeError, json.JSONDecodeError) as exc:
                self._reply(400, f"undecodable part: {exc}".encode())
                return
            hw = rgb.shape[:2]
            if depth.shape != hw or uncertainty.shape != hw:
                self._reply(400, b"depth/uncertainty resolution does not match rgb")
                return
            try:
                out = server.mode(rgb, depth, uncertainty, meta)
                if out.shape[:2] != hw:  # models with fixed input sizes resize back
                    raise RuntimeError(f"backend returned {out.shape[:2]}, expected {hw}")
                payload = encode_png(out)
            except Exception as exc:  # internal model failure
                self._reply(500, f"enhancement failed: {exc}".encode())
                return
            self._reply(200, payload, content_type="image/png")


class EnhancerServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, config: ServiceConfig):
        super().__init__((config.host, config.port), _Handler)
        self.config = config
        self.mode = build_mode(config)  # loads models up front; may raise
        self.slots = threading.BoundedSemaphore(config.max_concurrent)

    @property
    def endpoint(self) -> str:
        return f"http://{self.server_address[0]}:{self.server_address[1]}"


def start_server(config: ServiceConfig) -> EnhancerServer:
    """Bind and serve on a background thread; returns the running server."""
    server = EnhancerServer(config)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


def serve(config: ServiceConfig) -> None:
    """Blocking entry point used by the CLI."""
    server = EnhancerServer(config)
    print(f"svc-enhancer [{config.mode}] listening on {server.endpoint}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
