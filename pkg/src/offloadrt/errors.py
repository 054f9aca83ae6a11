"""Error taxonomy shared by every runtime module.

Local (in-process) failures keep distinct exception types. When an error
crosses the parcel transport it is flattened to one of the five wire codes
and reconstructed on the other side; types that share a code keep their
message but come back as the code's canonical type.
"""

from __future__ import annotations


class OffloadError(Exception):
    """Base class for all runtime errors."""


class UnknownGidError(OffloadError):
    """A global id did not resolve to a live object."""


class BadArgsError(OffloadError):
    """Arguments rejected: arity, kind, range, or precondition violation."""


class CompileError(OffloadError):
    """Kernel source rejected; carries a line:col diagnostic."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class OobAccessError(OffloadError):
    """Byte range or kernel buffer index outside [0, size)."""


class InternalError(OffloadError):
    """Unexpected failure inside a backend or daemon."""


class NotBuiltError(OffloadError):
    """run() named a kernel that build() has not produced."""


class LaunchConfigError(OffloadError):
    """Grid/block dimensions violate the launch invariants."""


class OutOfMemoryError(OffloadError):
    """Allocation would exceed the device's configured memory."""


class BrokenPromiseError(OffloadError):
    """The producer of a token was dropped before fulfilling it."""


class AlreadyCompletedError(OffloadError):
    """A promise was fulfilled more than once."""


class TransportLostError(OffloadError):
    """Connection to a remote locality failed with requests in flight."""


class ValidationFailedError(OffloadError):
    """Benchmark output disagreed with its sequential oracle."""


class WireFormatError(OffloadError):
    """Base class for parcel decode failures."""


class BadMagicError(WireFormatError):
    pass


class TruncatedFrameError(WireFormatError):
    pass


class UnknownOpcodeError(WireFormatError):
    pass


class LengthMismatchError(WireFormatError):
    pass


# REPLY_ERR wire codes. Types without their own code are sent as BAD_ARGS
# with the message preserved.
ERR_UNKNOWN_GID = 1
ERR_BAD_ARGS = 2
ERR_COMPILE = 3
ERR_OOB_ACCESS = 4
ERR_INTERNAL = 5

_CODE_TO_TYPE = {
    ERR_UNKNOWN_GID: UnknownGidError,
    ERR_BAD_ARGS: BadArgsError,
    ERR_OOB_ACCESS: OobAccessError,
    ERR_INTERNAL: InternalError,
}


def error_to_wire(exc: Exception) -> tuple[int, str]:
    """Flatten an exception to a (code, message) pair for REPLY_ERR."""
    if isinstance(exc, UnknownGidError):
        return ERR_UNKNOWN_GID, str(exc)
    if isinstance(exc, CompileError):
        return ERR_COMPILE, str(exc)
    if isinstance(exc, OobAccessError):
        return ERR_OOB_ACCESS, str(exc)
    if isinstance(exc, (BadArgsError, NotBuiltError, LaunchConfigError, OutOfMemoryError)):
        return ERR_BAD_ARGS, str(exc)
    if isinstance(exc, OffloadError):
        return ERR_INTERNAL, str(exc)
    return ERR_INTERNAL, f"{type(exc).__name__}: {exc}"


def error_from_wire(code: int, message: str) -> OffloadError:
    """Reconstruct the canonical exception for a REPLY_ERR code."""
    if code == ERR_COMPILE:
        # Diagnostic text already carries line:col; keep it verbatim.
        err = CompileError(message)
        err.args = (message,)
        return err
    return _CODE_TO_TYPE.get(code, InternalError)(message)
