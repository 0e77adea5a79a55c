"""Framed TCP driver: clients connect out, only servers listen."""

from __future__ import annotations

import socket
import threading
from typing import Optional

from .connection import ConnectError, Connection, PeerClosed, RecvTimeout
from .frame import PREFIX_LEN, Frame, decode_prefix, assemble_frame, encode_frame

CONNECT_TIMEOUT_S = 10.0


class TcpConnection(Connection):
    def __init__(self, sock: socket.socket):
        super().__init__()
        self._sock = sock
        self._send_lock = threading.Lock()
        self._recv_lock = threading.Lock()
        self._closed = False
        sock.settimeout(None)

    def send(self, frame: Frame) -> None:
        buf = encode_frame(frame)
        with self._send_lock:
            if self._closed:
                raise PeerClosed("connection closed locally")
            try:
                self._sock.sendall(buf)
            except OSError as exc:
                raise PeerClosed(f"send failed: {exc}")

    def _read_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining > 0:
            try:
                chunk = self._sock.recv(min(remaining, 1 << 20))
            except socket.timeout:
                raise RecvTimeout("recv timed out")
            except OSError as exc:
                raise PeerClosed(f"recv failed: {exc}")
            if not chunk:
                raise PeerClosed("peer closed connection")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def recv(self, timeout: Optional[float] = None) -> Frame:
        with self._recv_lock:
            if self._closed:
                raise PeerClosed("connection closed locally")
            # A timeout mid-frame would desynchronize the stream, so the
            # timeout applies only before the first byte; after that the
            # rest of the frame reads untimed.
            self._sock.settimeout(timeout if timeout is None or timeout > 0
                                  else 1e-4)
            try:
                first = self._sock.recv(1)
            except socket.timeout:
                raise RecvTimeout("recv timed out")
            except OSError as exc:
                raise PeerClosed(f"recv failed: {exc}")
            finally:
                try:
                    self._sock.settimeout(None)
                except OSError:
                    pass
            if not first:
                raise PeerClosed("peer closed connection")
            prefix = first + self._read_exact(PREFIX_LEN - 1)
            msg_type, flags, header_len, payload_len = decode_prefix(prefix)
            header_raw = self._read_exact(header_len) if header_len else b""
            payload = self._read_exact(payload_len) if payload_len else b""
            return assemble_frame(msg_type, flags, header_raw, payload)

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()

    @property
    def closed(self) -> bool:
        return self._closed


class TcpListener:
    def __init__(self, host: str, port: int):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(64)
        self.address = self._sock.getsockname()
        self._closed = False

    @property
    def port(self) -> int:
        return self.address[1]

    def accept(self, timeout: Optional[float] = None) -> TcpConnection:
        self._sock.settimeout(timeout)
        try:
            sock, _ = self._sock.accept()
        except socket.timeout:
            raise RecvTimeout("accept timed out")
        except OSError as exc:
            raise PeerClosed(f"listener closed: {exc}")
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return TcpConnection(sock)

    def close(self) -> None:
        self._closed = True
        self._sock.close()

    @property
    def closed(self) -> bool:
        return self._closed


def tcp_connect(host: str, port: int,
                timeout: float = CONNECT_TIMEOUT_S) -> TcpConnection:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except ConnectionRefusedError as exc:
        raise ConnectError(f"refused: {host}:{port}") from exc
    except (socket.timeout, OSError) as exc:
        raise ConnectError(f"connect to {host}:{port} failed: {exc}") from exc
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return TcpConnection(sock)
