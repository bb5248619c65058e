"""Acceptance: protocol conformance between the estimation client and this
service (hello + 100 denoise calls with byte-equal echo payloads, plus the
golden transcript replay in test_golden_transcript.py)."""

import sys
import threading

import numpy as np
import pytest

pytest.importorskip("probelight", reason="primary package not installed")

from probelight.denoisers import Conditioning, DenoiserCall
from probelight.remote import RemoteDenoiser

from ball_adapter.server import AdapterConfig, serve


@pytest.fixture()
def echo_port():
    config = AdapterConfig(mode="echo", listen="127.0.0.1:0", latent_shape=(3, 8, 8))
    ready = threading.Event()
    box = {}

    def announce(port):
        box["port"] = port
        ready.set()

    threading.Thread(target=serve, args=(config,),
                     kwargs={"ready_callback": announce}, daemon=True).start()
    assert ready.wait(5.0)
    return box["port"]


def test_criterion_11_protocol_conformance(echo_port):
    client = RemoteDenoiser(f"127.0.0.1:{echo_port}", timeout=15.0)
    assert client.capabilities == ("denoise", "encode", "decode")
    assert client.latent_shape == (3, 8, 8)
    r = np.random.RandomState(11)
    for i in range(100):
        z = r.randn(3, 8, 8).astype(np.float32)
        eps = client.denoise(DenoiserCall(z=z, t=i % 1000 + 1,
                                          cond=Conditioning(ev=-2.5),
                                          run_seed=i, active_lora="exposure"))
        assert eps.tobytes() == z.tobytes(), i
    assert client.counter.total == 100
    client.close()
    print("\n[ACCEPTANCE] criterion 11 (protocol conformance: hello + 100 "
          "byte-equal echo calls): PASS")


def test_client_over_stdio_transport():
    cmd = f"{sys.executable} -m ball_adapter --mode echo --listen stdio --latent-shape 3,4,4"
    client = RemoteDenoiser(f"stdio:{cmd}", timeout=30.0)
    assert client.capabilities == ("denoise", "encode", "decode")
    z = np.arange(48, dtype=np.float32).reshape(3, 4, 4) / 48.0
    eps = client.denoise(DenoiserCall(z=z, t=793, cond=Conditioning()))
    assert eps.tobytes() == z.tobytes()
    assert client.encode(z).tobytes() == z.tobytes()
    client.close()


def test_stdio_frames_larger_than_a_pipe_buffer():
    # 3x64x64 float32 is ~65 KB of base64, beyond the default pipe capacity,
    # so request and reply must survive chunked reads on both sides
    cmd = f"{sys.executable} -m ball_adapter --mode echo --listen stdio"
    client = RemoteDenoiser(f"stdio:{cmd}", timeout=30.0)
    z = np.random.RandomState(3).randn(3, 64, 64).astype(np.float32)
    for _ in range(3):
        eps = client.denoise(DenoiserCall(z=z, t=500, cond=Conditioning()))
        assert eps.tobytes() == z.tobytes()
    client.close()


def test_estimation_pipeline_through_the_wire(echo_port, tmp_path):
    # a full toy run where every denoiser call crosses the protocol
    from probelight.pipelines import InpaintConfig, PipelineSpec, run_estimate
    from probelight.schedule import make_schedule

    sched = make_schedule(n_steps=8)
    image = np.random.RandomState(0).rand(3, 12, 12).astype(np.float32)
    depth = np.random.RandomState(1).rand(1, 12, 12).astype(np.float32)
    spec = PipelineSpec(kind="turbo-swap", evs=(0.0,),
                        inpaint=InpaintConfig(eta=0.8, k=1, n_balls=1, n_steps=8),
                        ball_diameter=6, crop_size=8, env_size=(8, 16))
    client = RemoteDenoiser(f"127.0.0.1:{echo_port}", timeout=15.0)
    result = run_estimate(image, depth, spec, sched, client, master_seed=1)
    client.close()
    assert result.nfe["total"] == 8
    assert np.all(np.isfinite(result.env_map))
