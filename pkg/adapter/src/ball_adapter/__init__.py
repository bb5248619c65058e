"""Reference denoiser service for the chrome-ball wire protocol."""

from .protocol import PROTOCOL_VERSION, decode_f32, encode_f32
from .server import AdapterConfig, EchoBackend, handle_line, serve

__version__ = "0.1.0"
