import json
import socket
import subprocess
import sys
import threading
import time

import numpy as np
import pytest

from ball_adapter.protocol import decode_f32, encode_f32
from ball_adapter.server import AdapterConfig, EchoBackend, handle_line, serve


@pytest.fixture()
def config():
    return AdapterConfig(mode="echo", latent_shape=(3, 8, 8))


@pytest.fixture()
def backend():
    return EchoBackend()


def req(obj):
    return json.dumps(obj, separators=(",", ":")).encode() + b"\n"


def reply(line, backend, config):
    return json.loads(handle_line(line, backend, config))


def test_hello_advertises_v1_and_capabilities(backend, config):
    out = reply(req({"v": 1, "op": "hello"}), backend, config)
    assert out["v"] == 1
    assert out["capabilities"] == ["denoise", "encode", "decode"]
    assert out["latent_shape"] == [3, 8, 8]


def test_denoise_echoes_payload_byte_equal(backend, config):
    z = np.random.RandomState(0).randn(3, 8, 8).astype(np.float32)
    payload = encode_f32(z)
    out = reply(req({"v": 1, "op": "denoise", "t": 500, "shape": [3, 8, 8],
                     "z": payload, "ev": 0.0, "ev_min": -5.0, "guidance": 5.0,
                     "lora": {"name": "turbo", "scale": 0.75}, "seed": 1}),
                backend, config)
    assert out["eps"] == payload
    assert np.array_equal(decode_f32(out["eps"], out["shape"]), z)


def test_encode_decode_identity(backend, config):
    img = np.random.RandomState(1).rand(3, 8, 8).astype(np.float32)
    payload = encode_f32(img)
    enc = reply(req({"v": 1, "op": "encode", "shape": [3, 8, 8], "image": payload}),
                backend, config)
    assert enc["z"] == payload
    dec = reply(req({"v": 1, "op": "decode", "shape": [3, 8, 8], "z": enc["z"]}),
                backend, config)
    assert dec["image"] == payload


def test_malformed_json_answered_next_request_served(backend, config):
    bad = reply(b"{{{ nope\n", backend, config)
    assert "error" in bad
    good = reply(req({"v": 1, "op": "hello"}), backend, config)
    assert "capabilities" in good


def test_error_paths(backend, config):
    assert "error" in reply(req({"v": 1, "op": "warp"}), backend, config)
    assert "error" in reply(req({"v": 3, "op": "hello"}), backend, config)
    assert "error" in reply(req({"v": 1, "op": "denoise", "shape": [3, 8, 8],
                                 "z": "AAAA"}), backend, config)
    assert "error" in reply(req({"v": 1, "op": "denoise", "z": "AAAA"}),
                            backend, config)


def test_thousand_sequential_requests_well_formed(backend, config):
    r = np.random.RandomState(2)
    for i in range(1000):
        shape = [3, int(r.randint(2, 6)), int(r.randint(2, 6))]
        z = r.randn(*shape).astype(np.float32)
        out = reply(req({"v": 1, "op": "denoise", "t": i % 1000 + 1, "shape": shape,
                         "z": encode_f32(z), "ev": 0.0, "ev_min": -5.0,
                         "guidance": 5.0, "lora": {"name": "", "scale": 1.0},
                         "seed": i}), backend, config)
        assert out["v"] == 1
        assert out["shape"] == shape
        assert np.array_equal(decode_f32(out["eps"], shape), z)


def test_config_validation():
    with pytest.raises(ValueError):
        AdapterConfig(mode="hybrid")
    with pytest.raises(ValueError):
        AdapterConfig(mode="echo", base_model="some/path")
    with pytest.raises(ValueError):
        AdapterConfig(mode="model")  # no base model


@pytest.fixture()
def tcp_server():
    config = AdapterConfig(mode="echo", listen="127.0.0.1:0", latent_shape=(3, 4, 4))
    ready = threading.Event()
    box = {}

    def announce(port):
        box["port"] = port
        ready.set()

    thread = threading.Thread(target=serve, args=(config,),
                              kwargs={"ready_callback": announce}, daemon=True)
    thread.start()
    assert ready.wait(5.0)
    return box["port"]


def test_tcp_multiple_connections(tcp_server):
    def one_session(seed):
        with socket.create_connection(("127.0.0.1", tcp_server), timeout=5) as s:
            f = s.makefile("rb")
            s.sendall(req({"v": 1, "op": "hello"}))
            hello = json.loads(f.readline())
            assert hello["v"] == 1
            z = np.random.RandomState(seed).randn(3, 4, 4).astype(np.float32)
            s.sendall(req({"v": 1, "op": "denoise", "t": 5, "shape": [3, 4, 4],
                           "z": encode_f32(z)}))
            out = json.loads(f.readline())
            assert np.array_equal(decode_f32(out["eps"], [3, 4, 4]), z)

    threads = [threading.Thread(target=one_session, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()


def test_stdio_mode_subprocess():
    proc = subprocess.Popen([sys.executable, "-m", "ball_adapter", "--mode", "echo",
                             "--listen", "stdio", "--latent-shape", "3,4,4"],
                            stdin=subprocess.PIPE, stdout=subprocess.PIPE)
    try:
        proc.stdin.write(req({"v": 1, "op": "hello"}))
        proc.stdin.flush()
        hello = json.loads(proc.stdout.readline())
        assert hello["capabilities"] == ["denoise", "encode", "decode"]
        z = np.arange(12, dtype=np.float32).reshape(3, 2, 2)
        proc.stdin.write(req({"v": 1, "op": "denoise", "t": 7, "shape": [3, 2, 2],
                              "z": encode_f32(z)}))
        proc.stdin.flush()
        out = json.loads(proc.stdout.readline())
        assert np.array_equal(decode_f32(out["eps"], [3, 2, 2]), z)
    finally:
        proc.stdin.close()
        proc.wait(timeout=5)


def test_model_mode_aborts_on_bad_path():
    proc = subprocess.run([sys.executable, "-m", "ball_adapter", "--mode", "model",
                           "--base-model", "/nonexistent/model", "--listen",
                           "127.0.0.1:0", "--device", "cpu", "--dtype", "float32"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode != 0
    assert "model" in (proc.stderr + proc.stdout).lower()
