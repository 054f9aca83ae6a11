"""One-shot completion tokens and the combinators the rest of the runtime
composes execution graphs from.

A token transitions exactly once, pending -> ready(value) or
pending -> failed(error). Continuations registered before the transition all
run after it, exactly once, in registration order. By default a continuation
runs inline on whichever thread completed the token (or immediately on the
caller if the token is already terminal); pass ``on_pool=True`` to reschedule
it onto the shared task pool instead.

``get`` blocks the calling thread. Backend stream workers must never call
``get`` on a token they may themselves complete; that is a deadlock, not a
recoverable error.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Generic, Iterable, Optional, TypeVar

from .errors import AlreadyCompletedError, BrokenPromiseError

V = TypeVar("V")
W = TypeVar("W")

_PENDING = 0
_READY = 1
_FAILED = 2

_pool: Optional[ThreadPoolExecutor] = None
_pool_lock = threading.Lock()


def task_pool() -> ThreadPoolExecutor:
    """Shared pool for rescheduled continuations and background work."""
    global _pool
    with _pool_lock:
        if _pool is None:
            _pool = ThreadPoolExecutor(thread_name_prefix="offloadrt-pool")
        return _pool


class CompletionToken(Generic[V]):
    """Handle to a value (or error) that may not exist yet."""

    __slots__ = ("_lock", "_state", "_value", "_error", "_callbacks")

    def __init__(self):
        self._lock = threading.Lock()
        self._state = _PENDING
        self._value: Any = None
        self._error: Optional[BaseException] = None
        self._callbacks: list[Callable[[CompletionToken[V]], None]] = []

    # -- state inspection ------------------------------------------------

    def is_pending(self) -> bool:
        return self._state == _PENDING

    def is_ready(self) -> bool:
        return self._state == _READY

    def is_failed(self) -> bool:
        return self._state == _FAILED

    def done(self) -> bool:
        return self._state != _PENDING

    def error(self) -> Optional[BaseException]:
        """The stored error, or None. Does not block."""
        return self._error if self._state == _FAILED else None

    # -- completion (internal; Promise is the public producer side) ------

    def _try_complete(self, value: Any = None, error: Optional[BaseException] = None) -> bool:
        with self._lock:
            if self._state != _PENDING:
                return False
            if error is not None:
                self._state = _FAILED
                self._error = error
            else:
                self._state = _READY
                self._value = value
            callbacks, self._callbacks = self._callbacks, []
        for cb in callbacks:
            cb(self)
        return True

    # -- consumption ------------------------------------------------------

    def get(self, timeout: Optional[float] = None) -> V:
        """Block until the transition; return the value or re-raise the error."""
        if self._state == _PENDING:
            done = threading.Event()
            self._on_done(lambda _t: done.set())
            if not done.wait(timeout):
                raise TimeoutError("token still pending after timeout")
        if self._state == _FAILED:
            raise self._error
        return self._value

    def _on_done(self, cb: Callable[[CompletionToken[V]], None]) -> None:
        """Run cb(self) after the transition (immediately if already done)."""
        with self._lock:
            if self._state == _PENDING:
                self._callbacks.append(cb)
                return
        cb(self)

    def then(self, fn: Callable[[V], W], on_pool: bool = False) -> "CompletionToken[W]":
        """Token for fn(value). Failure propagates without invoking fn;
        an exception from fn fails the result token."""
        result: CompletionToken[W] = CompletionToken()

        def fire(token: CompletionToken[V]) -> None:
            if token._state == _FAILED:
                result._try_complete(error=token._error)
                return
            try:
                result._try_complete(value=fn(token._value))
            except BaseException as exc:  # noqa: BLE001 - stored, not swallowed
                result._try_complete(error=exc)

        if on_pool:
            self._on_done(lambda t: task_pool().submit(fire, t))
        else:
            self._on_done(fire)
        return result


class Promise(Generic[V]):
    """Producer side of a token. Fulfilling twice raises; dropping an
    unfulfilled promise fails the token with a broken-promise error."""

    __slots__ = ("_token", "_fulfilled")

    def __init__(self):
        self._token: CompletionToken[V] = CompletionToken()
        self._fulfilled = False

    @property
    def token(self) -> CompletionToken[V]:
        return self._token

    def set_value(self, value: V = None) -> None:
        if not self._token._try_complete(value=value):
            raise AlreadyCompletedError("token already completed")
        self._fulfilled = True

    def set_error(self, error: BaseException) -> None:
        if not self._token._try_complete(error=error):
            raise AlreadyCompletedError("token already completed")
        self._fulfilled = True

    def try_set_value(self, value: V = None) -> bool:
        won = self._token._try_complete(value=value)
        self._fulfilled = self._fulfilled or won
        return won

    def try_set_error(self, error: BaseException) -> bool:
        won = self._token._try_complete(error=error)
        self._fulfilled = self._fulfilled or won
        return won

    def __del__(self):
        try:
            if not self._fulfilled:
                self._token._try_complete(
                    error=BrokenPromiseError("promise dropped before fulfillment")
                )
        except Exception:
            pass  # interpreter teardown


def make_ready(value: V = None) -> CompletionToken[V]:
    token: CompletionToken[V] = CompletionToken()
    token._try_complete(value=value)
    return token


def make_failed(error: BaseException) -> CompletionToken[Any]:
    token: CompletionToken[Any] = CompletionToken()
    token._try_complete(error=error)
    return token


def when_all(tokens: Iterable[CompletionToken[Any]]) -> CompletionToken[None]:
    """Ready once every input is ready; failed with the first error to arrive.

    An empty sequence yields an immediately ready token. A failure completes
    the aggregate at once but cancels nothing: remaining inputs still run.
    """
    tokens = list(tokens)
    result: CompletionToken[None] = CompletionToken()
    if not tokens:
        result._try_complete(value=None)
        return result

    lock = threading.Lock()
    remaining = [len(tokens)]

    def arrived(token: CompletionToken[Any]) -> None:
        if token._state == _FAILED:
            result._try_complete(error=token._error)
            return
        with lock:
            remaining[0] -= 1
            last = remaining[0] == 0
        if last:
            result._try_complete(value=None)

    for t in tokens:
        t._on_done(arrived)
    return result


def get(token: CompletionToken[V], timeout: Optional[float] = None) -> V:
    return token.get(timeout)
