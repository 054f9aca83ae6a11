"""Parcel framing.

Frame layout (all integers little-endian):

    offset  size  field
    0       4     magic "PCL1"
    4       8     request_id : u64
    12      1     opcode     : u8
    13      17    target gid : u32 locality + u8 kind + u64 sequence + u32 nonce
    30      4     payload_len: u32
    34      ...   payload

Header is exactly 34 bytes; a full frame is 34 + payload_len. Replies echo
the request_id of the request they answer. ``decode`` is total: malformed
input yields a structured WireFormatError, never a crash. The framing layer
does not judge gid kind bytes; a nonsense kind simply fails to resolve at
dispatch time.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

from ..errors import (
    BadArgsError,
    BadMagicError,
    LengthMismatchError,
    TruncatedFrameError,
    UnknownOpcodeError,
)
from ..registry import GlobalId, ObjectKind

MAGIC = b"PCL1"
HEADER_SIZE = 34
MAX_PAYLOAD = 2**31

_HEADER = struct.Struct("<4sQBIBQII")
_GID = struct.Struct("<IBQI")


class Opcode(IntEnum):
    DISCOVER = 1
    CREATE_BUFFER = 2
    WRITE = 3
    READ = 4
    CREATE_PROGRAM = 5
    BUILD = 6
    RUN = 7
    DEVICE_INFO = 8
    UNREGISTER = 9
    REPLY_OK = 128
    REPLY_ERR = 129


_VALID_OPCODES = {int(op) for op in Opcode}


def _mk_kind(raw: int):
    return ObjectKind(raw) if raw in (1, 2, 3) else raw


NULL_GID = GlobalId(0, ObjectKind.DEVICE, 0, 0)


@dataclass(frozen=True)
class Parcel:
    opcode: Opcode
    request_id: int
    target: GlobalId = NULL_GID
    payload: bytes = field(default=b"")


def encode_gid(gid: GlobalId) -> bytes:
    return _GID.pack(gid.locality_id, int(gid.kind), gid.sequence, gid.nonce)


def decode_gid(buf: bytes, offset: int = 0) -> GlobalId:
    locality, kind, seq, nonce = _GID.unpack_from(buf, offset)
    return GlobalId(locality, _mk_kind(kind), seq, nonce)


def encode(parcel: Parcel) -> bytes:
    """Deterministic frame bytes for a valid parcel."""
    if len(parcel.payload) > MAX_PAYLOAD:
        raise BadArgsError(f"payload of {len(parcel.payload)} bytes exceeds 2^31")
    g = parcel.target
    return _HEADER.pack(
        MAGIC,
        parcel.request_id,
        int(parcel.opcode),
        g.locality_id,
        int(g.kind),
        g.sequence,
        g.nonce,
        len(parcel.payload),
    ) + parcel.payload


def decode(buf: bytes) -> Parcel:
    """Parse exactly one frame. Raises BadMagicError, TruncatedFrameError,
    UnknownOpcodeError, or LengthMismatchError on malformed input."""
    buf = bytes(buf)
    if buf[:4] != MAGIC:
        if len(buf) < 4 and MAGIC.startswith(buf):
            raise TruncatedFrameError(f"frame of {len(buf)} bytes is shorter than the header")
        raise BadMagicError("frame does not start with PCL1")
    if len(buf) < HEADER_SIZE:
        raise TruncatedFrameError(f"frame of {len(buf)} bytes is shorter than the header")
    _, request_id, opcode, loc, kind, seq, nonce, payload_len = _HEADER.unpack_from(buf, 0)
    if opcode not in _VALID_OPCODES:
        raise UnknownOpcodeError(f"opcode {opcode} is not defined")
    total = HEADER_SIZE + payload_len
    if len(buf) < total:
        raise TruncatedFrameError(
            f"payload_len={payload_len} but only {len(buf) - HEADER_SIZE} payload bytes present"
        )
    if len(buf) > total:
        raise LengthMismatchError(f"{len(buf) - total} trailing bytes after frame")
    return Parcel(
        opcode=Opcode(opcode),
        request_id=request_id,
        target=GlobalId(loc, _mk_kind(kind), seq, nonce),
        payload=buf[HEADER_SIZE:total],
    )


# -- per-opcode payload helpers ------------------------------------------
#
# Requests:
#   DISCOVER        : u32 major + u32 minor
#   CREATE_BUFFER   : u64 size                       (target = device)
#   WRITE           : u64 offset + u32 stream + data (target = buffer)
#   READ            : u64 offset + u64 size + u32 stream
#   CREATE_PROGRAM  : utf-8 source                   (target = device)
#   BUILD           : utf-8 kernel name              (target = program)
#   RUN             : name + grid + block + stream + args
#   DEVICE_INFO     : empty                          (target = device)
#   UNREGISTER      : empty
# Replies:
#   REPLY_OK        : opcode-specific result bytes
#   REPLY_ERR       : u8 code + utf-8 message

_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_F64 = struct.Struct("<d")


def pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return _U32.pack(len(raw)) + raw


def unpack_str(buf: bytes, offset: int) -> tuple[str, int]:
    (n,) = _U32.unpack_from(buf, offset)
    offset += 4
    if offset + n > len(buf):
        raise BadArgsError("string extends past payload")
    return buf[offset : offset + n].decode("utf-8"), offset + n


def pack_device_info(info) -> bytes:
    return (
        pack_str(info.name)
        + _U32.pack(info.capability[0])
        + _U32.pack(info.capability[1])
        + _U64.pack(info.memory_bytes)
        + _U32.pack(info.compute_units)
    )


def unpack_device_info(buf: bytes, offset: int):
    from ..device import DeviceInfo

    name, offset = unpack_str(buf, offset)
    (major,) = _U32.unpack_from(buf, offset)
    (minor,) = _U32.unpack_from(buf, offset + 4)
    (memory,) = _U64.unpack_from(buf, offset + 8)
    (units,) = _U32.unpack_from(buf, offset + 16)
    return DeviceInfo(name, (major, minor), memory, units), offset + 20


def pack_discover_reply(locality_id: int, devices) -> bytes:
    out = [_U32.pack(locality_id), _U32.pack(len(devices))]
    for gid, info in devices:
        out.append(encode_gid(gid))
        out.append(pack_device_info(info))
    return b"".join(out)


def unpack_discover_reply(buf: bytes):
    (locality_id,) = _U32.unpack_from(buf, 0)
    (count,) = _U32.unpack_from(buf, 4)
    offset = 8
    devices = []
    for _ in range(count):
        gid = decode_gid(buf, offset)
        offset += 17
        info, offset = unpack_device_info(buf, offset)
        devices.append((gid, info))
    return locality_id, devices


def pack_run_args(name: str, grid, block, stream: int, args) -> bytes:
    """args: sequence of ('buffer', gid) | ('f64', float) | ('u32', int)."""
    out = [pack_str(name)]
    out.append(struct.pack("<6I", grid[0], grid[1], grid[2], block[0], block[1], block[2]))
    out.append(_U32.pack(stream))
    out.append(_U32.pack(len(args)))
    for tag, value in args:
        if tag == "buffer":
            out.append(b"\x00" + encode_gid(value))
        elif tag == "f64":
            out.append(b"\x01" + _F64.pack(value))
        elif tag == "u32":
            out.append(b"\x02" + _U32.pack(value))
        else:
            raise BadArgsError(f"unknown kernel argument tag {tag!r}")
    return b"".join(out)


def unpack_run_args(buf: bytes):
    name, offset = unpack_str(buf, 0)
    gx, gy, gz, bx, by, bz = struct.unpack_from("<6I", buf, offset)
    offset += 24
    (stream,) = _U32.unpack_from(buf, offset)
    offset += 4
    (count,) = _U32.unpack_from(buf, offset)
    offset += 4
    args = []
    for _ in range(count):
        tag = buf[offset]
        offset += 1
        if tag == 0:
            args.append(("buffer", decode_gid(buf, offset)))
            offset += 17
        elif tag == 1:
            args.append(("f64", _F64.unpack_from(buf, offset)[0]))
            offset += 8
        elif tag == 2:
            args.append(("u32", _U32.unpack_from(buf, offset)[0]))
            offset += 4
        else:
            raise BadArgsError(f"unknown kernel argument tag {tag}")
    return name, (gx, gy, gz), (bx, by, bz), stream, args


def pack_error(code: int, message: str) -> bytes:
    return bytes([code]) + message.encode("utf-8")


def unpack_error(buf: bytes) -> tuple[int, str]:
    if not buf:
        return 5, "empty error reply"
    return buf[0], buf[1:].decode("utf-8", errors="replace")
