"""Local HTTP service backing the browser annotation tool.

Endpoints (JSON unless noted):

* ``GET /api/images``               names of annotatable images
* ``GET /api/image/<name>``         raw image bytes
* ``GET /api/labels``               required label sequence with guide text
* ``GET /api/annotations``          image ids that already have annotations
* ``GET /api/annotation/<id>``      one stored annotation as a UI payload
* ``POST /api/annotations``         submit a payload; 400 carries the
  validation detail; writes are serialized by a process-wide lock
* ``GET /`` and asset paths          static UI bundle when configured,
  otherwise a built-in placeholder page

Binds to loopback by default: this is a desk utility, not a public
service.
"""

from __future__ import annotations

import errno
import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from earmatch.annotations import (
    REF_LABELS,
    AnnotationDocument,
    label_guide,
    list_annotated,
    read_annotation,
    write_annotation,
)
from earmatch.errors import AnnotationFormatError, EarmatchError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

_ASSET_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9._-]*")
_ASSET_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
}

_PLACEHOLDER_PAGE = """<!doctype html>
<html><head><meta charset="utf-8"><title>earmatch annotation service</title></head>
<body>
<h1>earmatch annotation service</h1>
<p>No UI bundle is configured (set <code>ui_dir</code> to a built frontend).
The JSON API is live: <code>/api/images</code>, <code>/api/labels</code>,
<code>/api/annotations</code>.</p>
</body></html>
"""


class AnnotateServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, images_dir, annotations_dir, ui_dir=None):
        self.images_dir = Path(images_dir)
        self.annotations_dir = Path(annotations_dir)
        self.ui_dir = Path(ui_dir) if ui_dir else None
        self.write_lock = threading.Lock()
        self.quiet = True
        try:
            super().__init__(tuple(address), _Handler)
        except OSError as exc:
            if exc.errno in (errno.EADDRINUSE, errno.EACCES):
                raise EarmatchError(
                    f"cannot bind {address[0]}:{address[1]}: {exc.strerror}"
                    " (is another annotation service running?)"
                ) from exc
            raise

    @property
    def port(self) -> int:
        return self.server_address[1]

    def image_names(self) -> list[str]:
        names = [
            p.name
            for p in self.images_dir.iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
        ]
        return sorted(names)


class _Handler(BaseHTTPRequestHandler):
    server: AnnotateServer
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        if not self.server.quiet:
            super().log_message(fmt, *args)

    # -- reply helpers ------------------------------------------------

    def _reply(self, status: int, body: bytes, content_type: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _reply_json(self, status: int, document) -> None:
        body = json.dumps(document).encode("utf-8")
        self._reply(status, body, "application/json")

    def _reply_error(self, status: int, message: str) -> None:
        self._reply_json(status, {"error": message})

    # -- routing ------------------------------------------------------

    def do_GET(self):  # noqa: N802 (http.server API)
        path = self.path.split("?", 1)[0]
        try:
            if path == "/api/images":
                self._reply_json(200, {"images": self.server.image_names()})
            elif path.startswith("/api/image/"):
                self._send_image(path.removeprefix("/api/image/"))
            elif path == "/api/labels":
                self._reply_json(
                    200, {"labels": label_guide(), "ref_labels": list(REF_LABELS)}
                )
            elif path == "/api/annotations":
                annotated = (
                    list_annotated(self.server.annotations_dir)
                    if self.server.annotations_dir.is_dir()
                    else []
                )
                self._reply_json(200, {"annotated": annotated})
            elif path.startswith("/api/annotation/"):
                self._send_annotation(path.removeprefix("/api/annotation/"))
            else:
                self._send_asset(path)
        except BrokenPipeError:
            pass
        except Exception as exc:  # pragma: no cover - last-resort guard
            self._reply_error(500, f"{type(exc).__name__}: {exc}")

    def do_POST(self):  # noqa: N802 (http.server API)
        path = self.path.split("?", 1)[0]
        if path != "/api/annotations":
            self._reply_error(404, f"no such endpoint: {path}")
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            self._reply_error(400, f"body is not valid JSON: {exc}")
            return
        try:
            doc = AnnotationDocument.from_payload(payload)
        except AnnotationFormatError as exc:
            self._reply_error(400, str(exc))
            return
        with self.server.write_lock:
            written = write_annotation(doc, self.server.annotations_dir)
        self._reply_json(
            201, {"image_id": doc.image_id, "written": [p.name for p in written]}
        )

    # -- endpoint bodies ------------------------------------------------

    def _send_image(self, name: str) -> None:
        if name not in self.server.image_names():
            self._reply_error(404, f"unknown image {name!r}")
            return
        data = (self.server.images_dir / name).read_bytes()
        suffix = Path(name).suffix.lower()
        kind = "image/png" if suffix == ".png" else "image/jpeg"
        self._reply(200, data, kind)

    def _send_annotation(self, image_id: str) -> None:
        try:
            doc = read_annotation(self.server.annotations_dir, image_id)
        except AnnotationFormatError as exc:
            self._reply_error(404, str(exc))
            return
        self._reply_json(200, doc.to_payload())

    def _send_asset(self, path: str) -> None:
        name = "index.html" if path == "/" else path.lstrip("/")
        ui_dir = self.server.ui_dir
        if ui_dir is None or not ui_dir.is_dir():
            if name == "index.html":
                self._reply(200, _PLACEHOLDER_PAGE.encode("utf-8"), _ASSET_TYPES[".html"])
            else:
                self._reply_error(404, f"no UI bundle configured; {path} unavailable")
            return
        if not _ASSET_RE.fullmatch(name):
            self._reply_error(404, f"no such asset: {path}")
            return
        asset = ui_dir / name
        if not asset.is_file():
            self._reply_error(404, f"no such asset: {path}")
            return
        kind = _ASSET_TYPES.get(asset.suffix.lower(), "application/octet-stream")
        self._reply(200, asset.read_bytes(), kind)


def create_server(config) -> AnnotateServer:
    return AnnotateServer(
        (config.host, config.port),
        images_dir=config.images_dir,
        annotations_dir=config.annotations_dir,
        ui_dir=config.ui_dir or None,
    )
