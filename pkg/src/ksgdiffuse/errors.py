"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`KsgError`
and carries the process exit code the CLI should use for it.
"""


class KsgError(Exception):
    exit_code = 1


class InvalidArgumentError(KsgError, ValueError):
    exit_code = 2


class FormatError(KsgError):
    """Malformed CIM1/MSK1/sidecar file."""

    exit_code = 3


class NumericalError(KsgError):
    """Non-finite state detected inside a sampling chain."""

    exit_code = 5


class PluginError(KsgError):
    exit_code = 4


class PluginProtocolError(PluginError):
    """Bad magic, unexpected opcode or rejected handshake."""


class PluginHandshakeRejected(PluginProtocolError):
    pass


class PluginShapeError(PluginError):
    pass


class PluginTimeoutError(PluginError):
    pass


class PluginTransportError(PluginError):
    """Stream closed or failed, possibly in the middle of a frame."""


class PluginPayloadError(PluginError):
    """Response frame decoded but contained NaN or Inf."""
