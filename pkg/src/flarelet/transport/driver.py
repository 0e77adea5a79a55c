"""Endpoint parsing and the scheme-dispatching listen/connect entry points."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .connection import ConnectError
from .inproc import InprocListener, inproc_connect
from .tcp import TcpListener, tcp_connect


@dataclass(frozen=True)
class DriverEndpoint:
    scheme: str  # "tcp" or "inproc"
    address: str  # host:port or channel name

    def __str__(self) -> str:
        return f"{self.scheme}://{self.address}"


def parse_endpoint(url: str) -> DriverEndpoint:
    if "://" in url:
        scheme, address = url.split("://", 1)
    else:
        scheme, address = "tcp", url
    if scheme not in ("tcp", "inproc"):
        raise ConnectError(f"unknown endpoint scheme {scheme!r}")
    if not address:
        raise ConnectError(f"empty address in endpoint {url!r}")
    return DriverEndpoint(scheme, address)


def _split_hostport(address: str) -> tuple:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ConnectError(f"bad tcp address {address!r}, want host:port")
    return host, int(port)


def driver_listen(endpoint) -> object:
    ep = parse_endpoint(endpoint) if isinstance(endpoint, str) else endpoint
    if ep.scheme == "tcp":
        host, port = _split_hostport(ep.address)
        return TcpListener(host, port)
    return InprocListener(ep.address)


def driver_connect_raw(endpoint, timeout: Optional[float] = None):
    """Connect without the authentication handshake (transport tests, PSI pipes)."""
    ep = parse_endpoint(endpoint) if isinstance(endpoint, str) else endpoint
    if ep.scheme == "tcp":
        host, port = _split_hostport(ep.address)
        return tcp_connect(host, port, timeout=timeout or 10.0)
    return inproc_connect(ep.address)
