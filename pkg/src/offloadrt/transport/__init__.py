from .wire import Opcode, Parcel, encode, decode
from .client import connect, RemoteLocality
from .daemon import serve, Daemon

__all__ = ["Opcode", "Parcel", "encode", "decode", "connect", "RemoteLocality", "serve", "Daemon"]
