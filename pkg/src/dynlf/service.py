"""HTTP render service over loaded checkpoints.

GET /meta                         -> JSON {"checkpoints": [{id, variant, ...}]}
GET /render?ckpt=&t=&w=&h=&cam=&alpha=  -> PNG bytes + X-Render-Millis
GET /masks?...                    -> multipart mask images (controllable only)

Stateless per request: parameters are read-only after load, renders are
deterministic, and malformed queries answer 400 with a JSON error body.
"""

from __future__ import annotations

import base64
import json
import os
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from . import metrics
from . import rays as rg
from .controllable import ControllableLightField
from .lightfield import load_any_checkpoint


class BadRequest(ValueError):
    pass


MAX_SIDE = 1024


def camera_for(model, spec, width, height):
    """Camera from a preset name ('front', 'orbit:<degrees>'), a JSON dict,
    or base64-encoded JSON."""
    meta = model.meta or {}
    center = np.asarray(meta.get("scene_center", (0.0, 0.0, 0.0)), dtype=np.float64)
    dist = float(meta.get("cam_distance", 3.0))
    if spec is None or spec == "front":
        return rg.orbit_camera(center, dist, 0.0, size=(width, height))
    if spec.startswith("orbit:"):
        try:
            degrees = float(spec.split(":", 1)[1])
        except ValueError as exc:
            raise BadRequest(f"bad orbit angle in {spec!r}") from exc
        return rg.orbit_camera(center, dist, degrees, size=(width, height))
    if spec.lstrip().startswith("{"):
        doc = spec
    else:
        try:
            doc = base64.urlsafe_b64decode(spec.encode("ascii")).decode("utf-8")
        except Exception as exc:
            raise BadRequest("cam must be a preset, JSON, or base64 JSON") from exc
    try:
        doc = json.loads(doc)
        doc.setdefault("width", width)
        doc.setdefault("height", height)
        doc["width"], doc["height"] = width, height
        return rg.Camera.from_json(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise BadRequest(f"bad camera JSON: {exc}") from exc


class RenderService:
    """Holds the loaded checkpoints and turns requests into frames."""

    def __init__(self, checkpoints, workers=None):
        if not checkpoints:
            raise ValueError("need at least one checkpoint")
        self.models = {}
        for path in checkpoints:
            name = os.path.splitext(os.path.basename(str(path)))[0]
            self.models[name] = load_any_checkpoint(path)
        self._gate = threading.BoundedSemaphore(workers or os.cpu_count() or 2)

    def meta(self):
        out = []
        for name, model in sorted(self.models.items()):
            entry = {"id": name,
                     "variant": getattr(model.config, "variant", "full"),
                     "config": model.config.to_json()}
            if isinstance(model, ControllableLightField):
                entry["n_attr"] = model.n_attr
            out.append(entry)
        return {"checkpoints": out}

    def _parse_common(self, q):
        ckpt = q.get("ckpt", [None])[0]
        if ckpt is None:
            raise BadRequest("missing ckpt parameter")
        if ckpt not in self.models:
            raise KeyError(ckpt)
        model = self.models[ckpt]
        clamped = []
        try:
            t = float(q.get("t", ["0"])[0])
        except ValueError as exc:
            raise BadRequest("t must be a number") from exc
        if not np.isfinite(t):
            raise BadRequest("t must be finite")
        if t < 0.0 or t > 1.0:
            t = min(1.0, max(0.0, t))
            clamped.append("t")
        try:
            w = int(q.get("w", ["64"])[0])
            h = int(q.get("h", ["64"])[0])
        except ValueError as exc:
            raise BadRequest("w and h must be integers") from exc
        if not (1 <= w <= MAX_SIDE and 1 <= h <= MAX_SIDE):
            raise BadRequest(f"size must be within 1..{MAX_SIDE}")
        alpha = None
        alpha_raw = q.get("alpha", [None])[0]
        n_attr = model.n_attr
        if alpha_raw not in (None, ""):
            try:
                alpha = np.array([float(x) for x in alpha_raw.split(",")])
            except ValueError as exc:
                raise BadRequest("alpha must be comma-separated numbers") from exc
            if alpha.shape[0] != n_attr:
                raise BadRequest(
                    f"checkpoint {ckpt} takes {n_attr} attributes, got {alpha.shape[0]}")
            if np.abs(alpha).max(initial=0.0) > 1.0:
                alpha = np.clip(alpha, -1.0, 1.0)
                clamped.append("alpha")
        elif n_attr:
            alpha = np.zeros(n_attr)
        cam = camera_for(model, q.get("cam", [None])[0], w, h)
        return model, t, cam, alpha, clamped

    def render(self, q):
        model, t, cam, alpha, clamped = self._parse_common(q)
        with self._gate:
            t0 = time.perf_counter()
            if isinstance(model, ControllableLightField):
                img = model.render_frame(cam, t, alpha=alpha)
            else:
                img = model.render_frame(cam, t)
            millis = (time.perf_counter() - t0) * 1000.0
        return metrics.encode_png(img), millis, clamped

    def masks(self, q):
        model, t, cam, alpha, clamped = self._parse_common(q)
        if not isinstance(model, ControllableLightField):
            raise BadRequest("masks are only available for controllable checkpoints")
        with self._gate:
            t0 = time.perf_counter()
            _, masks = model.render_with_masks(cam, t, alpha=alpha)
            millis = (time.perf_counter() - t0) * 1000.0
        parts = [metrics.encode_png_gray(masks[:, :, i])
                 for i in range(masks.shape[2])]
        return parts, millis, clamped


class _Handler(BaseHTTPRequestHandler):
    service: RenderService = None  # injected by make_server

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, code, body, content_type, extra=None):
        self.send_response(code)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        for k, v in (extra or {}).items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, code, doc, extra=None):
        self._send(code, json.dumps(doc).encode("utf-8"), "application/json", extra)

    def do_GET(self):
        try:
            url = urlparse(self.path)
            q = parse_qs(url.query)
            if url.path == "/meta":
                self._send_json(200, self.service.meta())
            elif url.path == "/render":
                png, millis, clamped = self.service.render(q)
                extra = {"X-Render-Millis": f"{millis:.1f}",
                         "Access-Control-Allow-Origin": "*"}
                if clamped:
                    extra["X-Clamped"] = ",".join(clamped)
                self._send(200, png, "image/png", extra)
            elif url.path == "/masks":
                parts, millis, clamped = self.service.masks(q)
                boundary = "maskframe"
                chunks = []
                for i, png in enumerate(parts):
                    chunks.append(
                        (f"--{boundary}\r\n"
                         f'Content-Disposition: form-data; name="mask{i}"; '
                         f'filename="mask{i}.png"\r\n'
                         f"Content-Type: image/png\r\n\r\n").encode("ascii"))
                    chunks.append(png)
                    chunks.append(b"\r\n")
                chunks.append(f"--{boundary}--\r\n".encode("ascii"))
                body = b"".join(chunks)
                extra = {"X-Render-Millis": f"{millis:.1f}",
                         "Access-Control-Allow-Origin": "*"}
                if clamped:
                    extra["X-Clamped"] = ",".join(clamped)
                self._send(200, body,
                           f"multipart/form-data; boundary={boundary}", extra)
            else:
                self._send_json(404, {"error": f"no such endpoint {url.path}"})
        except BadRequest as exc:
            self._send_json(400, {"error": str(exc)})
        except KeyError as exc:
            self._send_json(404, {"error": f"unknown checkpoint {exc}"})
        except Exception as exc:  # per-request errors must not kill the server
            self._send_json(500, {"error": f"{type(exc).__name__}: {exc}"})


def make_server(checkpoints, port=0, workers=None):
    """ThreadingHTTPServer bound to 127.0.0.1:port (0 picks a free port)."""
    service = RenderService(checkpoints, workers=workers)
    handler = type("Handler", (_Handler,), {"service": service})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve(checkpoints, port, workers=None):
    httpd = make_server(checkpoints, port, workers=workers)
    host, actual = httpd.server_address[:2]
    print(f"serving {len(httpd.RequestHandlerClass.service.models)} checkpoint(s) "
          f"on http://{host}:{actual}")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
    return 0
