"""Private set intersection via commutative exponentiation.

Items hash through SHA-256 into the quadratic-residue subgroup of a fixed
1536-bit safe-prime MODP group, where E_a(E_b(x)) == E_b(E_a(x)).  Both
parties learn the intersection and nothing else.  Demo-grade construction:
fine for aligning sample ids between consenting parties, not hardened against
malicious participants.
"""

from __future__ import annotations

import hashlib
import secrets
from typing import Optional

import gmpy2

# 1536-bit MODP group (RFC 3526, group 5); a safe prime, so the QR subgroup
# has prime order (p - 1) / 2.
GROUP_PRIME = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
    "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
    "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
    "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
    "9ED529077096966D670C354E4ABC9804F1746C08CA237327FFFFFFFFFFFFFFFF", 16)

_SUBGROUP_ORDER = (GROUP_PRIME - 1) // 2


def _embed(item: str) -> int:
    digest = hashlib.sha256(item.encode("utf-8")).digest()
    value = int.from_bytes(digest, "big") % GROUP_PRIME
    return int(gmpy2.powmod(value, 2, GROUP_PRIME))  # land in the QR subgroup


class PsiKey:
    """Secret exponent in [2, (p-1)/2 - 1]; commutative with any other key."""

    def __init__(self, exponent: Optional[int] = None):
        if exponent is None:
            exponent = 2 + secrets.randbelow(_SUBGROUP_ORDER - 3)
        if not 2 <= exponent <= _SUBGROUP_ORDER - 1:
            raise ValueError("exponent outside [2, (p-1)/2 - 1]")
        self._exponent = exponent

    def encrypt_item(self, item: str) -> int:
        return int(gmpy2.powmod(_embed(item), self._exponent, GROUP_PRIME))

    def encrypt_value(self, value: int) -> int:
        return int(gmpy2.powmod(value, self._exponent, GROUP_PRIME))

    def encrypt_items(self, items) -> list:
        return [self.encrypt_item(item) for item in items]

    def encrypt_values(self, values) -> list:
        return [self.encrypt_value(v) for v in values]


class PsiInitiator:
    """Party A: learns the intersection first, then shares it with B."""

    def __init__(self, items, key: Optional[PsiKey] = None):
        self.items = list(items)
        if len(set(self.items)) != len(self.items):
            raise ValueError("duplicate ids in PSI input")
        self.key = key or PsiKey()

    def round1(self) -> list:
        """E_a over own items, order-aligned with self.items."""
        return self.key.encrypt_items(self.items)

    def finish(self, peer_encrypted: list, own_double: list) -> list:
        """Intersect E_b(E_a(A)) against E_a(E_b(B)); returns sorted ids."""
        double_peer = set(self.key.encrypt_values(peer_encrypted))
        common = [self.items[i] for i, value in enumerate(own_double)
                  if value in double_peer]
        return sorted(common)


class PsiResponder:
    """Party B: re-encrypts A's items and sends its own encrypted set."""

    def __init__(self, items, key: Optional[PsiKey] = None):
        self.items = list(items)
        if len(set(self.items)) != len(self.items):
            raise ValueError("duplicate ids in PSI input")
        self.key = key or PsiKey()

    def round2(self, initiator_encrypted: list) -> tuple:
        """(E_b over own items, E_b over A's encrypted items, A-ordered)."""
        return (self.key.encrypt_items(self.items),
                self.key.encrypt_values(initiator_encrypted))


def psi_intersect(set_a, set_b) -> list:
    """Run the whole protocol in memory; returns the sorted intersection."""
    a = PsiInitiator(set_a)
    b = PsiResponder(set_b)
    ea = a.round1()
    eb, eab = b.round2(ea)
    return a.finish(eb, eab)
