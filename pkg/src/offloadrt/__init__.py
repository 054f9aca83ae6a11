"""offloadrt: a futurized heterogeneous-offload runtime.

Everything asynchronous returns a CompletionToken; devices, buffers, and
programs are named by location-transparent global ids, reachable locally or
through the parcel daemon (`offloadd`). The bench harness (`offload-bench`)
drives the four reference workloads against either backend.
"""

from .device import DeviceInfo, EventRecord, SimProfile, parse_fixture, parse_sim_profile
from .errors import (
    BadArgsError,
    BrokenPromiseError,
    CompileError,
    InternalError,
    LaunchConfigError,
    NotBuiltError,
    OffloadError,
    OobAccessError,
    OutOfMemoryError,
    TransportLostError,
    UnknownGidError,
    ValidationFailedError,
)
from .futures import CompletionToken, Promise, get, make_failed, make_ready, when_all
from .handles import BufferHandle, DeviceHandle, ProgramHandle, copy
from .program import Dim3
from .registry import GlobalId, LocalityInfo, ObjectKind, Registry
from .runtime import Runtime

__version__ = "0.1.0"

__all__ = [
    "BadArgsError",
    "BrokenPromiseError",
    "BufferHandle",
    "CompileError",
    "CompletionToken",
    "DeviceHandle",
    "DeviceInfo",
    "Dim3",
    "EventRecord",
    "GlobalId",
    "InternalError",
    "LaunchConfigError",
    "LocalityInfo",
    "NotBuiltError",
    "ObjectKind",
    "OffloadError",
    "OobAccessError",
    "OutOfMemoryError",
    "ProgramHandle",
    "Promise",
    "Registry",
    "Runtime",
    "SimProfile",
    "TransportLostError",
    "UnknownGidError",
    "ValidationFailedError",
    "copy",
    "get",
    "make_failed",
    "make_ready",
    "parse_fixture",
    "parse_sim_profile",
    "when_all",
]
