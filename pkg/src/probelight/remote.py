"""Remote denoiser client: newline-delimited JSON over TCP or stdio.

Protocol version 1. Frames (one JSON object per line):

    -> {"v":1,"op":"hello"}
    <- {"v":1,"capabilities":["denoise","encode","decode"],"latent_shape":[c,h,w]}
    -> {"v":1,"op":"denoise","t":int,"shape":[c,h,w],"z":b64,"ev":f,"ev_min":f,
        "guidance":f,"lora":{"name":str,"scale":f},"seed":u64}
    <- {"v":1,"eps":b64,"shape":[c,h,w]}
    -> {"v":1,"op":"encode","shape":[3,H,W],"image":b64}   (optional capability)
    <- {"v":1,"z":b64,"shape":[c,h,w]}
    -> {"v":1,"op":"decode","shape":[c,h,w],"z":b64}       (optional capability)
    <- {"v":1,"image":b64,"shape":[3,H,W]}
    <- {"v":1,"error":str} on any failure

Payloads are base64 of raw little-endian float32, row-major, no compression.
When encode/decode are not advertised the client falls back to the identity
codec. One request is in flight at a time per client; concurrent callers are
serialized on an internal lock. The NFE counter increments at send time, so
a call that later fails is still counted.
"""

from __future__ import annotations

import base64
import json
import select
import shlex
import socket
import subprocess
import threading

import numpy as np

from .denoisers import Denoiser, DenoiserCall, NfeCounter
from .errors import ProtocolError
from .tensor import Tensor

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 120.0


def encode_f32(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def decode_f32(payload: str, shape) -> np.ndarray:
    try:
        raw = base64.b64decode(payload, validate=True)
    except Exception as e:
        raise ProtocolError(f"bad base64 payload: {e}")
    count = int(np.prod(shape))
    if len(raw) != 4 * count:
        raise ProtocolError(f"payload length {len(raw)} != 4 * prod{tuple(shape)}")
    return np.frombuffer(raw, dtype="<f4").reshape(tuple(int(s) for s in shape)).copy()


class _TcpTransport:
    def __init__(self, host: str, port: int, timeout: float):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.settimeout(timeout)
        self._rfile = self.sock.makefile("rb")

    def send_line(self, line: bytes) -> None:
        self.sock.sendall(line)

    def recv_line(self) -> bytes:
        line = self._rfile.readline()
        if not line:
            raise ProtocolError("connection closed by peer")
        return line

    def close(self) -> None:
        try:
            self._rfile.close()
        finally:
            self.sock.close()


class _StdioTransport:
    """Runs the peer as a subprocess and frames over its stdin/stdout."""

    def __init__(self, cmd: str, timeout: float):
        self.timeout = timeout
        self.proc = subprocess.Popen(shlex.split(cmd), stdin=subprocess.PIPE,
                                     stdout=subprocess.PIPE)
        self._buf = b""

    def send_line(self, line: bytes) -> None:
        self.proc.stdin.write(line)
        self.proc.stdin.flush()

    def recv_line(self) -> bytes:
        fd = self.proc.stdout.fileno()
        while b"\n" not in self._buf:
            ready, _, _ = select.select([fd], [], [], self.timeout)
            if not ready:
                raise ProtocolError(f"timeout after {self.timeout}s waiting for peer")
            chunk = self.proc.stdout.read1(65536)
            if not chunk:
                raise ProtocolError("peer process closed its stdout")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line + b"\n"

    def close(self) -> None:
        try:
            self.proc.stdin.close()
        except Exception:
            pass
        self.proc.terminate()
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()


def _open_transport(endpoint: str, timeout: float):
    try:
        if endpoint.startswith("stdio:"):
            return _StdioTransport(endpoint[len("stdio:"):], timeout)
        host, sep, port = endpoint.rpartition(":")
        if not sep or not port.isdigit():
            raise ProtocolError(f"bad endpoint {endpoint!r}; expected HOST:PORT or stdio:CMD")
        return _TcpTransport(host, int(port), timeout)
    except OSError as e:
        raise ProtocolError(f"cannot reach denoiser at {endpoint!r}: {e}")


class RemoteDenoiser(Denoiser):
    """Client side of the wire protocol; performs the hello handshake on
    construction and exposes the peer's capabilities."""

    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT,
                 lora_scales: "dict[str, float] | None" = None,
                 default_lora_scale: float = 0.75,
                 counter: "NfeCounter | None" = None):
        self.endpoint = endpoint
        self.lora_scales = dict(lora_scales or {})
        self.default_lora_scale = float(default_lora_scale)
        self.counter = counter if counter is not None else NfeCounter()
        self._lock = threading.Lock()
        self._transport = _open_transport(endpoint, timeout)
        hello = self._roundtrip({"v": PROTOCOL_VERSION, "op": "hello"})
        if hello.get("v") != PROTOCOL_VERSION:
            raise ProtocolError(f"protocol version mismatch: {hello.get('v')!r}")
        self.capabilities = tuple(hello.get("capabilities", ()))
        if "denoise" not in self.capabilities:
            raise ProtocolError("peer does not advertise the denoise capability")
        self.latent_shape = tuple(hello.get("latent_shape", ()))

    def _roundtrip(self, msg: dict) -> dict:
        line = json.dumps(msg, separators=(",", ":")).encode() + b"\n"
        with self._lock:
            self._transport.send_line(line)
            reply = self._transport.recv_line()
        try:
            obj = json.loads(reply)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"peer sent malformed JSON: {e}")
        if not isinstance(obj, dict):
            raise ProtocolError("peer reply is not a JSON object")
        if "error" in obj:
            raise ProtocolError(f"peer error: {obj['error']}")
        return obj

    def _lora_scale(self, name: "str | None") -> float:
        return self.lora_scales.get(name, self.default_lora_scale)

    def denoise(self, call: DenoiserCall) -> Tensor:
        self.counter.add(call.active_lora)
        msg = {
            "v": PROTOCOL_VERSION,
            "op": "denoise",
            "t": int(call.t),
            "shape": [int(s) for s in call.z.shape],
            "z": encode_f32(call.z),
            "ev": float(call.cond.ev),
            "ev_min": float(call.cond.ev_min),
            "guidance": float(call.cond.guidance_scale),
            "lora": {"name": call.active_lora or "", "scale": self._lora_scale(call.active_lora)},
            "seed": int(call.run_seed),
        }
        reply = self._roundtrip(msg)
        shape = reply.get("shape")
        if tuple(shape or ()) != tuple(call.z.shape):
            raise ProtocolError(f"response shape {shape} != request shape {list(call.z.shape)}")
        return decode_f32(reply.get("eps", ""), shape)

    def encode(self, image: Tensor) -> Tensor:
        if "encode" not in self.capabilities:
            return image
        reply = self._roundtrip({"v": PROTOCOL_VERSION, "op": "encode",
                                 "shape": [int(s) for s in image.shape],
                                 "image": encode_f32(image)})
        return decode_f32(reply.get("z", ""), reply.get("shape", ()))

    def decode(self, z: Tensor) -> Tensor:
        if "decode" not in self.capabilities:
            return z
        reply = self._roundtrip({"v": PROTOCOL_VERSION, "op": "decode",
                                 "shape": [int(s) for s in z.shape],
                                 "z": encode_f32(z)})
        return decode_f32(reply.get("image", ""), reply.get("shape", ()))

    def close(self) -> None:
        self._transport.close()
