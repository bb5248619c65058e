"""Denoiser service: echo mode and optional real-model mode.

Echo mode answers every request statelessly with no ML dependencies: the
predicted noise is the request latent, and encode/decode are the identity,
so a client exercising the full protocol sees byte-equal payloads round trip.
Protocol errors are answered with an error frame and the connection stays
open; only transport failures drop a connection. One request is in flight
per connection; connections are served concurrently.
"""

from __future__ import annotations

import socket
import sys
import threading
from dataclasses import dataclass

from .protocol import (PROTOCOL_VERSION, ProtocolViolation, check_payload_length,
                       dump_frame, error_frame, parse_frame)

CAPABILITIES = ("denoise", "encode", "decode")


@dataclass
class AdapterConfig:
    mode: str = "echo"  # echo | model
    listen: str = "127.0.0.1:7071"  # HOST:PORT or "stdio"
    latent_shape: tuple[int, int, int] = (4, 128, 128)
    # model mode only:
    base_model: str | None = None
    controlnet: str | None = None
    exposure_lora: str | None = None
    turbo_lora: str | None = None
    control_image: str | None = None
    device: str = "cuda"
    dtype: str = "float16"

    def __post_init__(self):
        if self.mode not in ("echo", "model"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "echo" and self.base_model:
            raise ValueError("echo mode takes no model paths")
        if self.mode == "model" and not self.base_model:
            raise ValueError("model mode requires --base-model")


class EchoBackend:
    """eps := z; identity codec."""

    def hello(self, msg: dict, config: AdapterConfig) -> dict:
        return {"v": PROTOCOL_VERSION, "capabilities": list(CAPABILITIES),
                "latent_shape": list(config.latent_shape)}

    def denoise(self, msg: dict) -> dict:
        shape = msg.get("shape")
        z = msg.get("z", "")
        if not isinstance(shape, list) or not shape:
            raise ProtocolViolation("denoise needs a shape list")
        check_payload_length(z, shape)
        return {"v": PROTOCOL_VERSION, "eps": z, "shape": shape}

    def encode(self, msg: dict) -> dict:
        shape = msg.get("shape")
        image = msg.get("image", "")
        check_payload_length(image, shape)
        return {"v": PROTOCOL_VERSION, "z": image, "shape": shape}

    def decode(self, msg: dict) -> dict:
        shape = msg.get("shape")
        z = msg.get("z", "")
        check_payload_length(z, shape)
        return {"v": PROTOCOL_VERSION, "image": z, "shape": shape}


def make_backend(config: AdapterConfig):
    if config.mode == "echo":
        return EchoBackend()
    from .model_backend import ModelBackend  # heavyweight import, model mode only
    return ModelBackend(config)


def handle_line(line: bytes, backend, config: AdapterConfig) -> bytes:
    """One request frame -> one response frame; never raises on bad input."""
    try:
        msg = parse_frame(line)
        if msg.get("v") != PROTOCOL_VERSION:
            raise ProtocolViolation(f"unsupported protocol version {msg.get('v')!r}")
        op = msg.get("op")
        if op == "hello":
            return dump_frame(backend.hello(msg, config))
        if op == "denoise":
            return dump_frame(backend.denoise(msg))
        if op == "encode":
            return dump_frame(backend.encode(msg))
        if op == "decode":
            return dump_frame(backend.decode(msg))
        raise ProtocolViolation(f"unknown op {op!r}")
    except ProtocolViolation as e:
        return error_frame(str(e))
    except Exception as e:  # model-mode surprises: keep the connection alive
        return error_frame(f"internal error: {e}")


def _serve_connection(conn: socket.socket, backend, config: AdapterConfig) -> None:
    f = conn.makefile("rb")
    try:
        for line in f:
            conn.sendall(handle_line(line, backend, config))
    except OSError:
        pass
    finally:
        conn.close()


def serve(config: AdapterConfig, *, ready_callback=None) -> None:
    """Run until interrupted. Model-load failures abort before listening."""
    backend = make_backend(config)
    if config.listen == "stdio":
        stdin = sys.stdin.buffer
        stdout = sys.stdout.buffer
        if ready_callback:
            ready_callback(None)
        for line in stdin:
            stdout.write(handle_line(line, backend, config))
            stdout.flush()
        return
    host, _, port = config.listen.rpartition(":")
    sock = socket.socket()
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, int(port)))
    sock.listen(16)
    if ready_callback:
        ready_callback(sock.getsockname()[1])
    try:
        while True:
            conn, _ = sock.accept()
            threading.Thread(target=_serve_connection, args=(conn, backend, config),
                             daemon=True).start()
    finally:
        sock.close()
