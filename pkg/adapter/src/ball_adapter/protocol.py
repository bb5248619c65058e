"""Wire protocol v1 helpers: newline-delimited JSON frames, f32 payloads.

Frames are single-line JSON objects. Payload fields carry base64 of raw
little-endian float32, row-major. Responses are serialized with compact
separators and insertion-ordered keys, so a given request always yields a
byte-identical response line (golden transcripts rely on this).
"""

from __future__ import annotations

import base64
import json

import numpy as np

PROTOCOL_VERSION = 1


class ProtocolViolation(Exception):
    pass


def encode_f32(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def decode_f32(payload: str, shape) -> np.ndarray:
    try:
        raw = base64.b64decode(payload, validate=True)
    except Exception as e:
        raise ProtocolViolation(f"bad base64 payload: {e}")
    count = 1
    for s in shape:
        count *= int(s)
    if len(raw) != 4 * count:
        raise ProtocolViolation(f"payload length {len(raw)} != 4 * prod{tuple(shape)}")
    return np.frombuffer(raw, dtype="<f4").reshape(tuple(int(s) for s in shape)).copy()


def check_payload_length(payload: str, shape) -> None:
    decode_f32(payload, shape)


def dump_frame(obj: dict) -> bytes:
    return json.dumps(obj, separators=(",", ":")).encode() + b"\n"


def error_frame(message: str) -> bytes:
    return dump_frame({"v": PROTOCOL_VERSION, "error": message})


def parse_frame(line: bytes) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolViolation(f"malformed JSON: {e}")
    if not isinstance(obj, dict):
        raise ProtocolViolation("frame is not a JSON object")
    return obj
