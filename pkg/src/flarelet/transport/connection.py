"""Connection contract shared by the TCP and in-process drivers.

A connection delivers whole frames in FIFO order.  One reader and one writer
may operate concurrently; receive timeouts leave the connection usable.
"""

from __future__ import annotations

from typing import Optional

from .frame import Frame


class TransportError(Exception):
    pass


class ConnectError(TransportError):
    """Connection could not be established (refused / unreachable)."""


class AuthError(TransportError):
    """Mutual authentication failed."""


class RecvTimeout(TransportError):
    """No frame arrived within the timeout; the connection is still usable."""


class PeerClosed(TransportError):
    """The peer closed the connection."""


class Connection:
    """Abstract frame pipe; subclasses implement _send_bytes/_recv_frame."""

    def __init__(self):
        self.peer_identity: Optional[str] = None
        self.peer_org: Optional[str] = None
        self.peer_role: Optional[str] = None

    def send(self, frame: Frame) -> None:
        raise NotImplementedError

    def recv(self, timeout: Optional[float] = None) -> Frame:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError

    @property
    def closed(self) -> bool:
        raise NotImplementedError

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
