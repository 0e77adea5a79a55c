"""In-process driver: queue-backed connections with TCP-identical semantics.

Frames cross the channel as encoded bytes and are decoded on receive, so the
validation path is exactly the one the TCP driver exercises.
"""

from __future__ import annotations

import queue
import threading
from typing import Optional

from .connection import ConnectError, Connection, PeerClosed, RecvTimeout
from .frame import Frame, decode_frame, encode_frame

_CLOSE = object()

_registry_lock = threading.Lock()
_listeners: dict = {}


class InprocConnection(Connection):
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue):
        super().__init__()
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False

    def send(self, frame: Frame) -> None:
        if self._closed:
            raise PeerClosed("connection closed locally")
        self._outbox.put(encode_frame(frame))

    def recv(self, timeout: Optional[float] = None) -> Frame:
        if self._closed:
            raise PeerClosed("connection closed locally")
        try:
            item = self._inbox.get(
                timeout=timeout if timeout is None or timeout > 0 else 1e-4)
        except queue.Empty:
            raise RecvTimeout("recv timed out")
        if item is _CLOSE:
            self._inbox.put(_CLOSE)  # keep signalling future receivers
            raise PeerClosed("peer closed connection")
        return decode_frame(item)

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(_CLOSE)

    @property
    def closed(self) -> bool:
        return self._closed


def inproc_pair(name: str = "") -> tuple:
    """Two connection halves; duplicate registered names are rejected."""
    a_to_b: queue.Queue = queue.Queue()
    b_to_a: queue.Queue = queue.Queue()
    return (InprocConnection(b_to_a, a_to_b), InprocConnection(a_to_b, b_to_a))


class InprocListener:
    def __init__(self, name: str):
        with _registry_lock:
            if name in _listeners:
                raise ConnectError(f"inproc channel {name!r} already registered")
            _listeners[name] = self
        self.name = name
        self._pending: queue.Queue = queue.Queue()
        self._closed = False

    def accept(self, timeout: Optional[float] = None) -> InprocConnection:
        try:
            conn = self._pending.get(timeout=timeout)
        except queue.Empty:
            raise RecvTimeout("accept timed out")
        if conn is _CLOSE:
            raise PeerClosed("listener closed")
        return conn

    def close(self) -> None:
        self._closed = True
        with _registry_lock:
            _listeners.pop(self.name, None)
        self._pending.put(_CLOSE)

    @property
    def closed(self) -> bool:
        return self._closed


def inproc_connect(name: str) -> InprocConnection:
    with _registry_lock:
        listener = _listeners.get(name)
    if listener is None or listener.closed:
        raise ConnectError(f"refused: no inproc listener {name!r}")
    ours, theirs = inproc_pair()
    listener._pending.put(theirs)
    return ours
