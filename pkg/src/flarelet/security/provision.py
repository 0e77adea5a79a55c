"""Provisioning: generate the startup kit every party needs to join.

A kit directory holds cert.json (root-signed claim), key.secret (the party's
private key), root.pub, and endpoints.json.  The root private key exists only
while provisioning runs and is never written into any kit.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey, Ed25519PublicKey)

DEFAULT_VALIDITY_S = 365 * 24 * 3600

ROLES = ("project_admin", "org_admin", "lead", "member")
PARTY_TYPES = ("server", "client", "admin", "overseer")


class ProvisionError(ValueError):
    pass


def canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass
class Certificate:
    claim: dict
    signature: str  # hex of root signature over canonical(claim)

    @property
    def name(self) -> str:
        return self.claim["name"]

    @property
    def org(self) -> str:
        return self.claim["org"]

    @property
    def role(self) -> str:
        return self.claim.get("role", "")

    @property
    def party_type(self) -> str:
        return self.claim["party_type"]

    def public_key(self) -> Ed25519PublicKey:
        return Ed25519PublicKey.from_public_bytes(
            bytes.fromhex(self.claim["public_key"]))

    def verify(self, root_public: Ed25519PublicKey, now: Optional[float] = None) -> None:
        """Raise ProvisionError unless root-signed and inside the validity window."""
        try:
            root_public.verify(bytes.fromhex(self.signature), canonical(self.claim))
        except (InvalidSignature, ValueError):
            raise ProvisionError(f"certificate for {self.claim.get('name')!r} "
                                 "does not verify against the project root")
        now = time.time() if now is None else now
        if not self.claim["not_before"] <= now <= self.claim["not_after"]:
            raise ProvisionError(f"certificate for {self.name!r} outside validity window")

    def to_dict(self) -> dict:
        return {"claim": self.claim, "signature": self.signature}

    @classmethod
    def from_dict(cls, raw: dict) -> "Certificate":
        return cls(claim=raw["claim"], signature=raw["signature"])


@dataclass
class StartupKit:
    cert: Certificate
    private_key: Ed25519PrivateKey
    root_public: Ed25519PublicKey
    endpoints: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.cert.name

    @property
    def org(self) -> str:
        return self.cert.org

    @property
    def role(self) -> str:
        return self.cert.role

    def sign(self, message: bytes) -> bytes:
        return self.private_key.sign(message)

    def save(self, kit_dir) -> Path:
        kit_dir = Path(kit_dir)
        kit_dir.mkdir(parents=True, exist_ok=True)
        (kit_dir / "cert.json").write_text(json.dumps(self.cert.to_dict(), indent=2))
        (kit_dir / "key.secret").write_text(
            self.private_key.private_bytes_raw().hex())
        (kit_dir / "root.pub").write_text(
            self.root_public.public_bytes_raw().hex())
        (kit_dir / "endpoints.json").write_text(json.dumps(self.endpoints, indent=2))
        return kit_dir

    @classmethod
    def load(cls, kit_dir) -> "StartupKit":
        kit_dir = Path(kit_dir)
        try:
            cert = Certificate.from_dict(
                json.loads((kit_dir / "cert.json").read_text()))
            key = Ed25519PrivateKey.from_private_bytes(
                bytes.fromhex((kit_dir / "key.secret").read_text().strip()))
            root = Ed25519PublicKey.from_public_bytes(
                bytes.fromhex((kit_dir / "root.pub").read_text().strip()))
            endpoints = json.loads((kit_dir / "endpoints.json").read_text())
        except (OSError, ValueError, KeyError) as exc:
            raise ProvisionError(f"cannot load startup kit from {kit_dir}: {exc}")
        return cls(cert=cert, private_key=key, root_public=root,
                   endpoints=endpoints)


def provision(project_spec: dict, out_dir=None, now: Optional[float] = None) -> dict:
    """Generate kits for every party in the project spec.

    Spec shape: {"name": ..., "parties": [{"name", "org", "party_type",
    "role"?}], "endpoints": {"overseer"?, "servers": [...]},
    "validity_s"?}.  Returns {party name: StartupKit}; kits are also written
    under out_dir/<party> when out_dir is given.
    """
    parties = project_spec.get("parties", [])
    if not parties:
        raise ProvisionError("project spec lists no parties")
    names = [p["name"] for p in parties]
    if len(set(names)) != len(names):
        raise ProvisionError("duplicate party names in project spec")

    now = time.time() if now is None else now
    validity = project_spec.get("validity_s", DEFAULT_VALIDITY_S)
    endpoints = project_spec.get("endpoints", {})

    root_private = Ed25519PrivateKey.generate()
    root_public = root_private.public_key()

    kits = {}
    for party in parties:
        party_type = party.get("party_type", "client")
        if party_type not in PARTY_TYPES:
            raise ProvisionError(f"unknown party type {party_type!r}")
        role = party.get("role", "")
        if party_type == "admin" and role not in ROLES:
            raise ProvisionError(f"admin {party['name']!r} needs a role from {ROLES}")
        key = Ed25519PrivateKey.generate()
        claim = {
            "name": party["name"],
            "org": party.get("org", ""),
            "role": role,
            "party_type": party_type,
            "public_key": key.public_key().public_bytes_raw().hex(),
            "not_before": now - 60,
            "not_after": now + validity,
        }
        cert = Certificate(claim=claim,
                           signature=root_private.sign(canonical(claim)).hex())
        kits[party["name"]] = StartupKit(cert=cert, private_key=key,
                                         root_public=root_public,
                                         endpoints=dict(endpoints))

    if out_dir is not None:
        for name, kit in kits.items():
            kit.save(Path(out_dir) / name)
    return kits
