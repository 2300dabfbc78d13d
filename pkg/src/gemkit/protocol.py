"""Newline-delimited JSON provider protocol over stdio or TCP.

Requests are ``{"id": int, "method": str, "payload": {...}, "params": {...}}``
with methods features / flow / depth / aesthetic / detections / pose. Tensors
travel as ``{"gemt_b64": ...}`` (inline GEMT bytes) or ``{"path": ...}`` file
references. Responses echo the request id and may arrive out of order; a
malformed request line is answered with id -1. One response per request,
always.
"""

from __future__ import annotations

import base64
import json
import os
import select
import shlex
import socket
import subprocess
import sys
import time
from typing import Optional

import numpy as np

from gemkit.control import FeatureMap, FlowField
from gemkit.errors import ProviderError, ValidationError
from gemkit.gemt import tensor_from_bytes, tensor_read, tensor_to_bytes
from gemkit.providers import SyntheticProviderSet

METHODS = ("features", "flow", "depth", "aesthetic", "detections", "pose")
DEFAULT_TIMEOUT = 60.0


def encode_tensor(arr: np.ndarray) -> dict:
    return {"gemt_b64": base64.b64encode(tensor_to_bytes(arr)).decode("ascii")}


def decode_tensor(obj) -> np.ndarray:
    if not isinstance(obj, dict):
        raise ValidationError("tensor payload must be an object with gemt_b64 or path")
    if "gemt_b64" in obj:
        return tensor_from_bytes(base64.b64decode(obj["gemt_b64"]))
    if "path" in obj:
        return tensor_read(obj["path"])
    raise ValidationError("tensor payload needs gemt_b64 or path")


class ProtocolServer:
    """Dispatches protocol requests to a provider set (synthetic or real)."""

    def __init__(self, providers: SyntheticProviderSet):
        self.providers = providers

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
        try:
            result = self._dispatch(method, req.get("payload") or {}, req.get("params") or {})
            return {"id": req_id, "ok": True, "result": result}
        except Exception as exc:  # noqa: BLE001
            return {"id": req_id, "ok": False, "error": str(exc)}

    def _dispatch(self, method: str, payload: dict, params: dict) -> dict:
        p = self.providers
        if method == "features":
            fm = p.features(
                decode_tensor(payload["image"]),
                dim=params.get("dim"),
                patch_stride=params.get("patch_stride"),
            )
            return {"features": encode_tensor(fm.grid), "patch_stride": fm.patch_stride}
        if method == "flow":
            fl = p.flow(decode_tensor(payload["a"]), decode_tensor(payload["b"]))
            return {"flow": encode_tensor(fl.grid)}
        if method == "depth":
            return {"depth": encode_tensor(p.depth(decode_tensor(payload["image"])))}
        if method == "aesthetic":
            return {"score": p.aesthetic(decode_tensor(payload["image"]))}
        if method == "detections":
            return {"detections": p.detections(int(payload["frame_index"]))}
        if method == "pose":
            return {"people": p.pose(int(payload["frame_index"]))}
        raise ProviderError(f"unhandled method {method}")

    def serve(self, rfile, wfile) -> None:
        """Answer requests line by line until EOF."""
        for line in rfile:
            if isinstance(line, bytes):
                line = line.decode("utf-8", errors="replace")
            if not line.strip():
                continue
            resp = self.handle_line(line)
            wfile.write(json.dumps(resp) + "\n")
            wfile.flush()


# ---------------------------------------------------------------------------
# transports


class LoopbackTransport:
    """In-memory transport over a ProtocolServer, used in tests.

    Buffers outgoing requests; on the first recv after a batch of sends,
    answers all of them at once, optionally shuffling the response order to
    exercise out-of-order correlation."""

    def __init__(self, server: ProtocolServer, shuffle_rng: Optional[np.random.Generator] = None):
        self.server = server
        self.shuffle_rng = shuffle_rng
        self._outbox: list[str] = []
        self._inbox: list[str] = []

    def send_line(self, line: str) -> None:
        self._outbox.append(line)

    def recv_line(self, timeout: float = DEFAULT_TIMEOUT) -> str:
        if not self._inbox and self._outbox:
            responses = [json.dumps(self.server.handle_line(l)) for l in self._outbox]
            self._outbox.clear()
            if self.shuffle_rng is not None:
                order = self.shuffle_rng.permutation(len(responses))
                responses = [responses[i] for i in order]
            self._inbox.extend(responses)
        if not self._inbox:
            raise ProviderError("timeout: no response available")
        return self._inbox.pop(0)

    def close(self) -> None:
        pass


class _LineBuffer:
    """Accumulates raw bytes and hands out complete lines.

    Reading must buffer explicitly: selecting on the raw fd while a buffered
    reader holds already-consumed bytes deadlocks once two responses coalesce
    into one read."""

    def __init__(self):
        self._buf = b""

    def has_line(self) -> bool:
        return b"\n" in self._buf

    def feed(self, chunk: bytes) -> None:
        self._buf += chunk

    def pop_line(self) -> str:
        line, _, self._buf = self._buf.partition(b"\n")
        return line.decode("utf-8", errors="replace")


class StdioTransport:
    """Child process speaking the protocol on its stdin/stdout."""

    def __init__(self, argv: list[str]):
        try:
            self.proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL,
                bufsize=0,
            )
        except OSError as exc:
            raise ProviderError(f"cannot start provider process {argv!r}: {exc}") from exc
        self._lines = _LineBuffer()

    def send_line(self, line: str) -> None:
        if self.proc.poll() is not None:
            raise ProviderError("provider process exited")
        self.proc.stdin.write(line.encode("utf-8") + b"\n")
        self.proc.stdin.flush()

    def recv_line(self, timeout: float = DEFAULT_TIMEOUT) -> str:
        deadline = time.monotonic() + timeout
        while not self._lines.has_line():
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ProviderError(f"timeout after {timeout}s waiting for provider response")
            ready, _, _ = select.select([self.proc.stdout], [], [], remaining)
            if not ready:
                raise ProviderError(f"timeout after {timeout}s waiting for provider response")
            chunk = self.proc.stdout.read(65536)
            if not chunk:
                raise ProviderError("provider process closed its stdout")
            self._lines.feed(chunk)
        return self._lines.pop_line()

    def close(self) -> None:
        try:
            self.proc.stdin.close()
            self.proc.wait(timeout=5)
        except Exception:  # noqa: BLE001
            self.proc.kill()


class TcpTransport:
    def __init__(self, host: str, port: int, timeout: float = DEFAULT_TIMEOUT):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ProviderError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._lines = _LineBuffer()

    def send_line(self, line: str) -> None:
        self.sock.sendall(line.encode("utf-8") + b"\n")

    def recv_line(self, timeout: float = DEFAULT_TIMEOUT) -> str:
        deadline = time.monotonic() + timeout
        while not self._lines.has_line():
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ProviderError(f"timeout after {timeout}s waiting for provider response")
            self.sock.settimeout(remaining)
            try:
                chunk = self.sock.recv(65536)
            except socket.timeout as exc:
                raise ProviderError(f"timeout after {timeout}s waiting for provider response") from exc
            if not chunk:
                raise ProviderError("provider closed the connection")
            self._lines.feed(chunk)
        return self._lines.pop_line()

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class ProtocolClient:
    """Pipelining client: single writer, single reader, correlation by id."""

    def __init__(self, transport, timeout: float = DEFAULT_TIMEOUT):
        self.transport = transport
        self.timeout = timeout
        self._next_id = 1
        self._pending: set[int] = set()
        self._parked: dict[int, dict] = {}

    def submit(self, method: str, payload: Optional[dict] = None, params: Optional[dict] = None) -> int:
        req_id = self._next_id
        self._next_id += 1
        line = json.dumps({"id": req_id, "method": method, "payload": payload or {}, "params": params or {}})
        self.transport.send_line(line)
        self._pending.add(req_id)
        return req_id

    def result(self, req_id: int) -> dict:
        """Block until the response for req_id arrives, parking others."""
        if req_id not in self._pending and req_id not in self._parked:
            raise ProviderError(f"no request with id {req_id} in flight")
        while req_id not in self._parked:
            line = self.transport.recv_line(self.timeout)
            try:
                resp = json.loads(line)
                rid = resp["id"]
            except Exception as exc:  # noqa: BLE001
                raise ProviderError(f"malformed response line: {exc}") from exc
            if rid == -1:
                raise ProviderError(f"provider rejected a request: {resp.get('error')}")
            if rid not in self._pending:
                raise ProviderError(f"unsolicited response id {rid}")
            self._pending.discard(rid)
            self._parked[rid] = resp
        return self._parked.pop(req_id)

    def request(self, method: str, payload: Optional[dict] = None, params: Optional[dict] = None) -> dict:
        resp = self.result(self.submit(method, payload, params))
        if not resp.get("ok"):
            raise ProviderError(f"{method} failed: {resp.get('error')}")
        return resp["result"]

    @property
    def pending_count(self) -> int:
        return len(self._pending)

    def close(self) -> None:
        self.transport.close()


class RemoteProviderSet:
    """Adapts the in-process provider API onto a protocol client."""

    def __init__(self, client: ProtocolClient):
        self.client = client

    def features(self, image, dim=None, patch_stride=None) -> FeatureMap:
        params = {}
        if dim is not None:
            params["dim"] = dim
        if patch_stride is not None:
            params["patch_stride"] = patch_stride
        res = self.client.request("features", {"image": encode_tensor(np.asarray(image))}, params)
        return FeatureMap(decode_tensor(res["features"]), patch_stride=int(res["patch_stride"]))

    def flow(self, frame_a, frame_b) -> FlowField:
        res = self.client.request(
            "flow", {"a": encode_tensor(np.asarray(frame_a)), "b": encode_tensor(np.asarray(frame_b))}
        )
        return FlowField(decode_tensor(res["flow"]))

    def depth(self, image) -> np.ndarray:
        res = self.client.request("depth", {"image": encode_tensor(np.asarray(image))})
        return decode_tensor(res["depth"])

    def aesthetic(self, image) -> float:
        return float(self.client.request("aesthetic", {"image": encode_tensor(np.asarray(image))})["score"])

    def detections(self, frame_index: int) -> list:
        return self.client.request("detections", {"frame_index": int(frame_index)})["detections"]

    def pose(self, frame_index: int) -> list:
        return self.client.request("pose", {"frame_index": int(frame_index)})["people"]


def resolve_provider(spec: Optional[str] = None, synthetic_config: Optional[dict] = None):
    """Build a provider set from a CLI spec: ``synthetic`` or
    ``bridge:tcp:HOST:PORT`` / ``bridge:<command line>``. The GEM_PROVIDER
    environment variable overrides an unset spec."""
    spec = spec or os.environ.get("GEM_PROVIDER") or "synthetic"
    if spec == "synthetic":
        return SyntheticProviderSet.from_config(synthetic_config or {})
    if spec.startswith("bridge:"):
        endpoint = spec[len("bridge:") :]
        if endpoint.startswith("tcp:"):
            _, host, port = endpoint.split(":")
            transport = TcpTransport(host, int(port))
        else:
            transport = StdioTransport(shlex.split(endpoint))
        return RemoteProviderSet(ProtocolClient(transport))
    raise ValidationError(f"unknown provider spec {spec!r}")


def serve_stdio(providers: SyntheticProviderSet) -> None:
    ProtocolServer(providers).serve(sys.stdin, sys.stdout)


def serve_tcp(providers: SyntheticProviderSet, port: int, host: str = "127.0.0.1") -> None:
    """Accept one connection at a time and answer requests until it closes."""
    server = ProtocolServer(providers)
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as srv:
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((host, port))
        srv.listen(1)
        while True:
            conn, _ = srv.accept()
            with conn, conn.makefile("r") as rfile, conn.makefile("w") as wfile:
                server.serve(rfile, wfile)
