"""Bearer tokens for the HTTP status plane, minted from an admin startup kit."""

from __future__ import annotations

import base64
import json
import time
from typing import Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from .auth import PeerIdentity
from .provision import Certificate, ProvisionError, StartupKit, canonical

DEFAULT_TTL_S = 12 * 3600


class TokenError(ValueError):
    pass


def mint_token(kit: StartupKit, ttl_s: float = DEFAULT_TTL_S) -> str:
    body = {"sub": kit.name, "exp": time.time() + ttl_s}
    envelope = {
        "cert": kit.cert.to_dict(),
        "body": body,
        "sig": kit.sign(canonical(body)).hex(),
    }
    return base64.urlsafe_b64encode(canonical(envelope)).decode("ascii")


def verify_token(token: str, root_public: Ed25519PublicKey,
                 now: Optional[float] = None) -> PeerIdentity:
    try:
        envelope = json.loads(base64.urlsafe_b64decode(token.encode("ascii")))
        cert = Certificate.from_dict(envelope["cert"])
        body = envelope["body"]
        sig = bytes.fromhex(envelope["sig"])
    except (ValueError, KeyError, TypeError) as exc:
        raise TokenError(f"malformed token: {exc}")
    cert.verify(root_public, now=now)
    try:
        cert.public_key().verify(sig, canonical(body))
    except InvalidSignature:
        raise TokenError("token signature invalid")
    if body.get("sub") != cert.name:
        raise TokenError("token subject does not match certificate")
    now = time.time() if now is None else now
    if body.get("exp", 0) < now:
        raise TokenError("token expired")
    return PeerIdentity(name=cert.name, org=cert.org, role=cert.role,
                        party_type=cert.party_type)
