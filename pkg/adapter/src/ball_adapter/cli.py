"""Service entry point: `adapter --mode echo --listen 127.0.0.1:7071`."""

import argparse
import sys

from .server import AdapterConfig, serve


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adapter",
                                description="chrome-ball denoiser service")
    p.add_argument("--mode", default="echo", choices=("echo", "model"),
                   help="echo answers eps := z with no ML deps (default: %(default)s)")
    p.add_argument("--listen", default="127.0.0.1:7071",
                   help="HOST:PORT or 'stdio' (default: %(default)s)")
    p.add_argument("--latent-shape", default="4,128,128",
                   help="advertised latent shape c,h,w (default: %(default)s)")
    p.add_argument("--base-model", default=None, help="model mode: base weights")
    p.add_argument("--controlnet", default=None, help="model mode: depth control weights")
    p.add_argument("--exposure-lora", default=None)
    p.add_argument("--turbo-lora", default=None)
    p.add_argument("--control-image", default=None,
                   help="model mode: fixed depth control image")
    p.add_argument("--device", default="cuda")
    p.add_argument("--dtype", default="float16")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        shape = tuple(int(s) for s in args.latent_shape.split(","))
        config = AdapterConfig(mode=args.mode, listen=args.listen, latent_shape=shape,
                               base_model=args.base_model, controlnet=args.controlnet,
                               exposure_lora=args.exposure_lora, turbo_lora=args.turbo_lora,
                               control_image=args.control_image, device=args.device,
                               dtype=args.dtype)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    def announce(port):
        if port is not None:
            print(f"listening on port {port}", file=sys.stderr, flush=True)

    try:
        serve(config, ready_callback=announce)
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
