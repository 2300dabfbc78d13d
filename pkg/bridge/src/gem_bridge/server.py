"""NDJSON protocol endpoint over the model backends.

Framing matches the toolkit's synthetic providers exactly: requests are
``{"id": int, "method": ..., "payload": ..., "params": ...}`` lines, every
request gets exactly one ``{"id", "ok", "result" | "error"}`` response, a
malformed line is answered with id -1, and an unknown method with
``"unknown method"``. Requests are handled FIFO, one at a time; results
additionally carry the serving backend's identifier.
"""

from __future__ import annotations

import base64
import json
import socket
import sys

import numpy as np

from gem_bridge.gemt import from_bytes, read_file, to_bytes

METHODS = ("features", "flow", "depth", "aesthetic", "detections", "pose")


def _decode_tensor(obj) -> np.ndarray:
    if not isinstance(obj, dict):
        raise ValueError("tensor payload must be an object with gemt_b64 or path")
    if "gemt_b64" in obj:
        return from_bytes(base64.b64decode(obj["gemt_b64"]))
    if "path" in obj:
        return read_file(obj["path"])
    raise ValueError("tensor payload needs gemt_b64 or path")


def _encode_tensor(arr: np.ndarray) -> dict:
    return {"gemt_b64": base64.b64encode(to_bytes(arr)).decode("ascii")}


class BridgeServer:
    def __init__(self, backends: dict):
        self.backends = backends

    def handle_line(self, line: str) -> dict:
        try:
            req = json.loads(line)
            if not isinstance(req, dict):
                raise ValueError("request must be a JSON object")
            req_id = req["id"]
            if not isinstance(req_id, int):
                raise ValueError("id must be an integer")
        except Exception as exc:  # noqa: BLE001
            return {"id": -1, "ok": False, "error": f"malformed request: {exc}"}
        method = req.get("method")
        if method not in METHODS:
            return {"id": req_id, "ok": False, "error": "unknown method"}
        backend = self.backends.get(method)
        if backend is None:
            return {"id": req_id, "ok": False, "error": f"method {method} disabled"}
        try:
            result = self._dispatch(method, backend, req.get("payload") or {}, req.get("params") or {})
            result["backend"] = backend.identifier
            return {"id": req_id, "ok": True, "result": result}
        except Exception as exc:  # noqa: BLE001
            return {"id": req_id, "ok": False, "error": str(exc)}

    def _dispatch(self, method: str, backend, payload: dict, params: dict) -> dict:
        if method == "features":
            want_dim = params.get("dim")
            if want_dim is not None and want_dim != backend.dim:
                raise ValueError(f"feature dim is fixed at {backend.dim} by the backend")
            want_stride = params.get("patch_stride")
            if want_stride is not None and want_stride != backend.patch_stride:
                raise ValueError(f"patch stride is fixed at {backend.patch_stride} by the backend")
            grid = backend(_decode_tensor(payload["image"]))
            return {"features": _encode_tensor(grid), "patch_stride": backend.patch_stride}
        if method == "flow":
            flow = backend(_decode_tensor(payload["a"]), _decode_tensor(payload["b"]))
            return {"flow": _encode_tensor(flow)}
        if method == "depth":
            return {"depth": _encode_tensor(backend(_decode_tensor(payload["image"])))}
        if method == "aesthetic":
            return {"score": backend(_decode_tensor(payload["image"]))}
        if method == "detections":
            return {"detections": backend(_decode_tensor(payload["image"]))}
        if method == "pose":
            return {"people": backend(_decode_tensor(payload["image"]))}
        raise ValueError(f"unhandled method {method}")

    def serve(self, rfile, wfile) -> None:
        for line in rfile:
            if isinstance(line, bytes):
                line = line.decode("utf-8", errors="replace")
            if not line.strip():
                continue
            wfile.write(json.dumps(self.handle_line(line)) + "\n")
            wfile.flush()

    def serve_stdio(self) -> None:
        self.serve(sys.stdin, sys.stdout)

    def serve_tcp(self, port: int, host: str = "127.0.0.1") -> None:
        with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as srv:
            srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            srv.bind((host, port))
            srv.listen(1)
            while True:
                conn, _ = srv.accept()
                with conn, conn.makefile("r") as rfile, conn.makefile("w") as wfile:
                    self.serve(rfile, wfile)
