"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DenoiserError and
ProtocolError -> 3, ImageFormatError and OSError -> 4.
"""


class ProbelightError(Exception):
    pass


class ConfigError(ProbelightError):
    """Invalid user-supplied configuration or arguments."""


class DenoiserError(ProbelightError):
    """A denoiser implementation failed to produce a prediction."""


class ProtocolError(DenoiserError):
    """Remote denoiser wire-protocol violation (bad frame, version, shape)."""


class ImageFormatError(ProbelightError):
    """Unreadable, corrupt or unsupported image file."""
