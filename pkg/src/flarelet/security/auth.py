"""Mutual authentication: certificate exchange plus challenge-response.

Three HELLO messages over an established connection:

    1. initiator -> acceptor  {cert, nonce_i}
    2. acceptor  -> initiator {cert, nonce_a, sig over nonce_i || H(m1)}
    3. initiator -> acceptor  {sig over nonce_a || H(m1 || m2)}

Each side verifies the peer certificate against the project root, then the
peer's signature over its own fresh nonce and the running transcript hash.
Fresh nonces make recorded transcripts unreplayable.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from typing import Optional

from cryptography.exceptions import InvalidSignature

from ..transport.connection import AuthError, Connection
from ..transport.frame import Frame, MsgType
from .provision import Certificate, ProvisionError, StartupKit, canonical

HANDSHAKE_TIMEOUT_S = 10.0
NONCE_BYTES = 32


@dataclass(frozen=True)
class PeerIdentity:
    name: str
    org: str
    role: str
    party_type: str


def _fail(conn: Connection, reason: str) -> AuthError:
    try:
        conn.send(Frame(MsgType.ERROR, {"error": "auth", "reason": reason}))
    except Exception:
        pass
    conn.close()
    return AuthError(reason)


def _verify_cert(conn: Connection, kit: StartupKit, raw) -> Certificate:
    if not isinstance(raw, dict):
        raise _fail(conn, "missing certificate")
    try:
        cert = Certificate.from_dict(raw)
        cert.verify(kit.root_public)
    except (ProvisionError, KeyError, TypeError) as exc:
        raise _fail(conn, f"certificate rejected: {exc}")
    return cert


def _verify_sig(conn: Connection, cert: Certificate, sig_hex, message: bytes,
                what: str) -> None:
    try:
        cert.public_key().verify(bytes.fromhex(sig_hex), message)
    except (InvalidSignature, ValueError, TypeError):
        raise _fail(conn, f"bad {what} signature from {cert.name!r}")


def _recv_hello(conn: Connection, timeout: float) -> Frame:
    try:
        frame = conn.recv(timeout=timeout)
    except Exception as exc:
        conn.close()
        raise AuthError(f"handshake aborted: {exc}")
    if frame.msg_type == MsgType.ERROR:
        conn.close()
        raise AuthError(f"peer rejected handshake: {frame.header.get('reason')}")
    if frame.msg_type != MsgType.HELLO:
        raise _fail(conn, f"expected HELLO, got {frame.msg_type.name}")
    return frame


def _identity(cert: Certificate) -> PeerIdentity:
    return PeerIdentity(name=cert.name, org=cert.org, role=cert.role,
                        party_type=cert.party_type)


def _attach(conn: Connection, peer: PeerIdentity) -> None:
    conn.peer_identity = peer.name
    conn.peer_org = peer.org
    conn.peer_role = peer.role


def authenticate_outbound(conn: Connection, kit: StartupKit,
                          timeout: float = HANDSHAKE_TIMEOUT_S) -> PeerIdentity:
    """Run the initiator side; returns verified peer identity or raises AuthError."""
    nonce_i = os.urandom(NONCE_BYTES)
    m1 = {"cert": kit.cert.to_dict(), "nonce": nonce_i.hex()}
    conn.send(Frame(MsgType.HELLO, m1))
    h1 = hashlib.sha256(canonical(m1)).digest()

    reply = _recv_hello(conn, timeout)
    peer_cert = _verify_cert(conn, kit, reply.header.get("cert"))
    nonce_a_hex = reply.header.get("nonce", "")
    _verify_sig(conn, peer_cert, reply.header.get("sig"), nonce_i + h1, "acceptor")

    m2 = {"cert": reply.header.get("cert"), "nonce": nonce_a_hex,
          "sig": reply.header.get("sig")}
    h2 = hashlib.sha256(canonical(m1) + canonical(m2)).digest()
    try:
        nonce_a = bytes.fromhex(nonce_a_hex)
    except ValueError:
        raise _fail(conn, "malformed acceptor nonce")
    conn.send(Frame(MsgType.HELLO, {"sig": kit.sign(nonce_a + h2).hex()}))

    peer = _identity(peer_cert)
    _attach(conn, peer)
    return peer


def authenticate_inbound(conn: Connection, kit: StartupKit,
                         seen_nonces: Optional[set] = None,
                         timeout: float = HANDSHAKE_TIMEOUT_S) -> PeerIdentity:
    """Run the acceptor side; returns verified peer identity or raises AuthError."""
    hello = _recv_hello(conn, timeout)
    peer_cert = _verify_cert(conn, kit, hello.header.get("cert"))
    nonce_i_hex = hello.header.get("nonce", "")
    try:
        nonce_i = bytes.fromhex(nonce_i_hex)
    except ValueError:
        raise _fail(conn, "malformed initiator nonce")
    if len(nonce_i) != NONCE_BYTES:
        raise _fail(conn, "initiator nonce has wrong length")
    if seen_nonces is not None:
        if nonce_i_hex in seen_nonces:
            raise _fail(conn, "initiator nonce reuse (replay?)")
        seen_nonces.add(nonce_i_hex)

    m1 = {"cert": hello.header.get("cert"), "nonce": nonce_i_hex}
    h1 = hashlib.sha256(canonical(m1)).digest()
    nonce_a = os.urandom(NONCE_BYTES)
    m2 = {"cert": kit.cert.to_dict(), "nonce": nonce_a.hex(),
          "sig": kit.sign(nonce_i + h1).hex()}
    conn.send(Frame(MsgType.HELLO, m2))

    fin = _recv_hello(conn, timeout)
    h2 = hashlib.sha256(canonical(m1) + canonical(m2)).digest()
    _verify_sig(conn, peer_cert, fin.header.get("sig"), nonce_a + h2, "initiator")

    peer = _identity(peer_cert)
    _attach(conn, peer)
    return peer
