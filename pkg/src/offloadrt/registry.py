"""Global object directory.

Every runtime object (device, buffer, program) is named by a GlobalId that
carries its owning locality in-band, so resolution is a local table lookup:
ids minted here dispatch straight to the object, ids owned by a connected
remote locality dispatch to that locality's transport proxy. No distributed
lookup service exists or is needed for the client/daemon topology.
"""

from __future__ import annotations

import random
import threading
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Optional

from .errors import UnknownGidError


class ObjectKind(IntEnum):
    DEVICE = 1
    BUFFER = 2
    PROGRAM = 3


@dataclass(frozen=True)
class GlobalId:
    """128-bit object name: (locality, kind, sequence, nonce)."""

    locality_id: int
    kind: ObjectKind
    sequence: int
    nonce: int

    def __str__(self) -> str:
        return f"gid({self.locality_id}:{self.kind.name.lower()}:{self.sequence}:{self.nonce:08x})"


@dataclass
class LocalityInfo:
    """One process in the runtime. Locality 0 is the application process;
    daemons carry nonzero ids."""

    locality_id: int
    address: str = "local"
    connected: bool = field(default=True)


class Registry:
    """Thread-safe gid allocator and dispatch table.

    ``resolve`` never blocks on ``register``: reads go through plain dict
    lookups, writes are serialized by a lock.
    """

    def __init__(self, self_locality_id: int = 0):
        self._self_id = self_locality_id
        self._lock = threading.Lock()
        self._seq = 0
        self._rng = random.Random()
        self._local: dict[GlobalId, Any] = {}
        self._localities: dict[int, LocalityInfo] = {
            self_locality_id: LocalityInfo(self_locality_id, "local")
        }
        self._proxies: dict[int, Any] = {}

    @property
    def self_locality_id(self) -> int:
        return self._self_id

    def register(self, kind: ObjectKind, obj: Any) -> GlobalId:
        """Mint a fresh gid owned by this locality and bind it to obj."""
        with self._lock:
            self._seq += 1
            gid = GlobalId(self._self_id, kind, self._seq, self._rng.getrandbits(32))
            self._local[gid] = obj
        return gid

    def resolve(self, gid: GlobalId) -> tuple[LocalityInfo, Any]:
        """Dispatch target for gid: (locality, local object) or
        (locality, transport proxy). Raises UnknownGidError for stale or
        foreign ids."""
        if gid.locality_id == self._self_id:
            obj = self._local.get(gid)
            if obj is None:
                raise UnknownGidError(f"{gid} is not registered here")
            return self._localities[self._self_id], obj
        proxy = self._proxies.get(gid.locality_id)
        if proxy is None:
            raise UnknownGidError(f"{gid} names an unknown locality")
        return self._localities[gid.locality_id], proxy

    def resolve_local(self, gid: GlobalId, kind: Optional[ObjectKind] = None) -> Any:
        """Local object for gid; UnknownGidError if remote, stale, or of the
        wrong kind."""
        if gid.locality_id != self._self_id:
            raise UnknownGidError(f"{gid} is not local")
        obj = self._local.get(gid)
        if obj is None or (kind is not None and gid.kind != kind):
            raise UnknownGidError(f"{gid} is not registered here")
        return obj

    def unregister(self, gid: GlobalId) -> None:
        """Drop the binding. In-flight operations hold their own reference to
        the object, so they complete before it is actually destroyed."""
        with self._lock:
            if self._local.pop(gid, None) is None:
                raise UnknownGidError(f"{gid} is not registered here")

    # -- remote localities -------------------------------------------------

    def add_locality(self, info: LocalityInfo, proxy: Any) -> None:
        with self._lock:
            if info.locality_id in self._localities:
                raise ValueError(f"locality {info.locality_id} already known")
            self._localities[info.locality_id] = info
            self._proxies[info.locality_id] = proxy

    def drop_locality(self, locality_id: int) -> None:
        with self._lock:
            info = self._localities.get(locality_id)
            if info is not None:
                info.connected = False
            self._proxies.pop(locality_id, None)

    def locality(self, locality_id: int) -> LocalityInfo:
        info = self._localities.get(locality_id)
        if info is None:
            raise UnknownGidError(f"unknown locality {locality_id}")
        return info

    def localities(self) -> list[LocalityInfo]:
        with self._lock:
            return list(self._localities.values())

    def local_objects(self, kind: ObjectKind) -> list[tuple[GlobalId, Any]]:
        with self._lock:
            return [(g, o) for g, o in self._local.items() if g.kind == kind]
