"""Real-model backend: a latent-diffusion inpainting model behind the wire.

Wraps a pretrained depth-conditioned inpainting pipeline with the two
low-rank adapters. Each denoise request selects the adapter named in the
message at the given scale and conditions on the exposure-interpolated
prompt embedding; classifier-free guidance uses the request's guidance
value. The heavyweight libraries are imported lazily; any load failure
aborts startup (the service never comes up half-configured).

The wire protocol carries no per-request image or depth, so the control
image is fixed at startup via config. This backend is exercised only where
model weights are available; the test suite covers echo mode.
"""

from __future__ import annotations

import threading

import numpy as np

from .protocol import PROTOCOL_VERSION, ProtocolViolation, decode_f32, encode_f32

PROMPT = "a perfect mirrored reflective chrome ball sphere"
PROMPT_DARK = "a perfect black dark mirrored reflective chrome ball sphere"
NEGATIVE_PROMPT = "matte, diffuse, flat, dull"


class ModelBackend:
    def __init__(self, config):
        self.config = config
        try:
            import torch
            from diffusers import ControlNetModel, StableDiffusionXLControlNetInpaintPipeline
        except ImportError as e:
            raise SystemExit(f"model mode needs torch+diffusers installed: {e}")
        self.torch = torch
        dtype = getattr(torch, config.dtype)
        try:
            controlnet = None
            if config.controlnet:
                controlnet = ControlNetModel.from_pretrained(config.controlnet,
                                                             torch_dtype=dtype)
            self.pipe = StableDiffusionXLControlNetInpaintPipeline.from_pretrained(
                config.base_model, controlnet=controlnet, torch_dtype=dtype)
            self.pipe.to(config.device)
            if config.turbo_lora:
                self.pipe.load_lora_weights(config.turbo_lora, adapter_name="turbo")
            if config.exposure_lora:
                self.pipe.load_lora_weights(config.exposure_lora, adapter_name="exposure")
        except Exception as e:
            raise SystemExit(f"model load failed: {e}")
        self._lock = threading.Lock()
        self._active = (None, None)
        with torch.no_grad():
            self._embed_o = self.pipe.encode_prompt(PROMPT)
            self._embed_d = self.pipe.encode_prompt(PROMPT_DARK)
            self._embed_neg = self.pipe.encode_prompt(NEGATIVE_PROMPT)

    def hello(self, msg, config):
        c = self.pipe.unet.config.in_channels
        s = self.pipe.unet.config.sample_size
        return {"v": PROTOCOL_VERSION, "capabilities": ["denoise", "encode", "decode"],
                "latent_shape": [c, s, s]}

    def _apply_lora(self, name: str, scale: float) -> None:
        if (name, scale) == self._active:
            return
        self.pipe.unfuse_lora()
        if name:
            self.pipe.set_adapters(name)
            self.pipe.fuse_lora(lora_scale=scale)
        self._active = (name, scale)

    def _embeddings(self, ev: float, ev_min: float):
        w = ev / ev_min if ev_min else 0.0
        prompt = self._embed_o[0] + w * (self._embed_d[0] - self._embed_o[0])
        pooled = self._embed_o[2] + w * (self._embed_d[2] - self._embed_o[2])
        return prompt, pooled

    def denoise(self, msg):
        torch = self.torch
        shape = msg.get("shape")
        if not isinstance(shape, list) or len(shape) != 3:
            raise ProtocolViolation("denoise needs a [c,h,w] shape")
        z = decode_f32(msg.get("z", ""), shape)
        lora = msg.get("lora") or {}
        with self._lock:  # one model call at a time on the device
            self._apply_lora(lora.get("name") or None, float(lora.get("scale", 1.0)))
            prompt, pooled = self._embeddings(float(msg.get("ev", 0.0)),
                                              float(msg.get("ev_min", -5.0)))
            guidance = float(msg.get("guidance", 5.0))
            t = torch.tensor([int(msg["t"])], device=self.config.device)
            latents = torch.from_numpy(z[None]).to(self.config.device,
                                                   dtype=self.pipe.unet.dtype)
            with torch.no_grad():
                uncond = self.pipe.unet(latents, t,
                                        encoder_hidden_states=self._embed_neg[0],
                                        added_cond_kwargs={"text_embeds": self._embed_neg[2],
                                                           "time_ids": self._time_ids()}).sample
                cond = self.pipe.unet(latents, t, encoder_hidden_states=prompt,
                                      added_cond_kwargs={"text_embeds": pooled,
                                                         "time_ids": self._time_ids()}).sample
            eps = uncond + guidance * (cond - uncond)
            arr = eps[0].float().cpu().numpy().astype(np.float32)
        return {"v": PROTOCOL_VERSION, "eps": encode_f32(arr), "shape": shape}

    def _time_ids(self):
        torch = self.torch
        size = self.pipe.unet.config.sample_size * self.pipe.vae_scale_factor
        ids = torch.tensor([[size, size, 0, 0, size, size]],
                           device=self.config.device, dtype=self.pipe.unet.dtype)
        return ids

    def encode(self, msg):
        torch = self.torch
        shape = msg.get("shape")
        image = decode_f32(msg.get("image", ""), shape)
        with self._lock, torch.no_grad():
            x = torch.from_numpy(image[None] * 2.0 - 1.0).to(self.config.device,
                                                             dtype=self.pipe.vae.dtype)
            z = self.pipe.vae.encode(x).latent_dist.mode() * self.pipe.vae.config.scaling_factor
            arr = z[0].float().cpu().numpy().astype(np.float32)
        return {"v": PROTOCOL_VERSION, "z": encode_f32(arr), "shape": list(arr.shape)}

    def decode(self, msg):
        torch = self.torch
        shape = msg.get("shape")
        z = decode_f32(msg.get("z", ""), shape)
        with self._lock, torch.no_grad():
            latents = torch.from_numpy(z[None]).to(self.config.device,
                                                   dtype=self.pipe.vae.dtype)
            x = self.pipe.vae.decode(latents / self.pipe.vae.config.scaling_factor).sample
            arr = ((x[0].float().cpu().numpy() + 1.0) / 2.0).astype(np.float32)
        return {"v": PROTOCOL_VERSION, "image": encode_f32(arr), "shape": list(arr.shape)}
