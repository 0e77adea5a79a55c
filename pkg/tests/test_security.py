import json
import threading
import time

import pytest

from flarelet.security import (AuditLog, AuthzPolicy, ProvisionError,
                               StartupKit, authenticate_inbound,
                               authenticate_outbound, authorize,
                               client_accepts_job, mint_token, provision,
                               verify_token)
from flarelet.security.provision import Certificate
from flarelet.security.tokens import TokenError
from flarelet.transport import AuthError, Frame, MsgType, inproc_pair


def small_project(**overrides):
    spec = {
        "name": "proj",
        "parties": [
            {"name": "server-1", "org": "hq", "party_type": "server"},
            {"name": "site-a", "org": "org-a", "party_type": "client"},
            {"name": "site-b", "org": "org-b", "party_type": "client"},
            {"name": "alice", "org": "org-a", "party_type": "admin", "role": "lead"},
            {"name": "overseer", "org": "hq", "party_type": "overseer"},
        ],
        "endpoints": {"servers": ["tcp://127.0.0.1:0"]},
    }
    spec.update(overrides)
    return spec


@pytest.fixture(scope="module")
def kits():
    return provision(small_project())


# ---------------------------------------------------------------------------
# Provisioning


def test_provision_writes_kits_that_verify(tmp_path, kits):
    for kit in kits.values():
        kit.cert.verify(kit.root_public)
    kits["site-a"].save(tmp_path / "site-a")
    loaded = StartupKit.load(tmp_path / "site-a")
    assert loaded.name == "site-a"
    loaded.cert.verify(loaded.root_public)
    files = {p.name for p in (tmp_path / "site-a").iterdir()}
    assert files == {"cert.json", "key.secret", "root.pub", "endpoints.json"}


def test_root_private_key_not_in_kits(tmp_path):
    provision(small_project(), out_dir=tmp_path)
    for path in tmp_path.rglob("*"):
        if path.is_file():
            assert "root.key" not in path.name
    # key.secret holds only the party key, which differs from the root public
    kit = StartupKit.load(tmp_path / "server-1")
    assert kit.private_key.public_key().public_bytes_raw() != \
        kit.root_public.public_bytes_raw()


def test_duplicate_party_names_rejected():
    spec = small_project()
    spec["parties"].append({"name": "site-a", "org": "x", "party_type": "client"})
    with pytest.raises(ProvisionError):
        provision(spec)


def test_tampered_certificate_fails_verification(kits):
    kit = kits["site-a"]
    tampered = json.loads(json.dumps(kit.cert.to_dict()))
    tampered["claim"]["org"] = "evil"
    with pytest.raises(ProvisionError):
        Certificate.from_dict(tampered).verify(kit.root_public)


# ---------------------------------------------------------------------------
# Mutual authentication


def handshake(server_kit, client_kit, seen=None):
    server_conn, client_conn = inproc_pair()
    result = {}

    def acceptor():
        try:
            result["server_saw"] = authenticate_inbound(server_conn, server_kit,
                                                        seen_nonces=seen)
        except AuthError as exc:
            result["server_err"] = exc

    thread = threading.Thread(target=acceptor)
    thread.start()
    try:
        result["client_saw"] = authenticate_outbound(client_conn, client_kit)
    except AuthError as exc:
        result["client_err"] = exc
    thread.join(timeout=5)
    return result, server_conn, client_conn


def test_mutual_auth_happy_path(kits):
    result, server_conn, _ = handshake(kits["server-1"], kits["site-a"])
    assert result["server_saw"].name == "site-a"
    assert result["server_saw"].org == "org-a"
    assert result["client_saw"].name == "server-1"
    assert server_conn.peer_identity == "site-a"


def test_foreign_root_credentials_rejected(kits):
    foreign = provision(small_project())  # different root keypair
    result, _, _ = handshake(kits["server-1"], foreign["site-a"])
    assert "server_err" in result
    assert "client_saw" not in result or "client_err" in result


def test_expired_certificate_rejected(kits):
    old = provision(small_project(validity_s=-3600))
    # same project root though: rebuild with the real root is impossible, so
    # check the window directly plus a full handshake against its own root
    result, _, _ = handshake(old["server-1"], old["site-a"])
    assert "server_err" in result or "client_err" in result


def test_replayed_hello_rejected(kits):
    seen = set()
    result, _, _ = handshake(kits["server-1"], kits["site-a"], seen=seen)
    assert "server_saw" in result
    nonce = next(iter(seen))

    # Replay the same initiator nonce wholesale.
    server_conn, attacker = inproc_pair()
    def acceptor():
        with pytest.raises(AuthError):
            authenticate_inbound(server_conn, kits["server-1"], seen_nonces=seen)
    thread = threading.Thread(target=acceptor)
    thread.start()
    attacker.send(Frame(MsgType.HELLO, {"cert": kits["site-a"].cert.to_dict(),
                                        "nonce": nonce}))
    thread.join(timeout=5)
    assert not thread.is_alive()


def test_impersonation_with_other_partys_name_fails(kits):
    # site-b's key with site-a's certificate: signature checks must fail
    forged = StartupKit(cert=kits["site-a"].cert,
                        private_key=kits["site-b"].private_key,
                        root_public=kits["site-b"].root_public)
    result, _, _ = handshake(kits["server-1"], forged)
    assert "server_err" in result


def test_adversarial_handshakes_all_fail(kits):
    # 100 randomized corruptions of certificate or signature material
    import random
    rng = random.Random(41)
    failures = 0
    for trial in range(100):
        kit = kits["site-a"]
        cert_dict = json.loads(json.dumps(kit.cert.to_dict()))
        mode = trial % 3
        if mode == 0:  # corrupt claim
            cert_dict["claim"]["name"] = f"mallory-{trial}"
        elif mode == 1:  # corrupt signature
            sig = list(cert_dict["signature"])
            pos = rng.randrange(len(sig))
            sig[pos] = "0" if sig[pos] != "0" else "1"
            cert_dict["signature"] = "".join(sig)
        else:  # self-signed by a foreign root
            foreign = provision(small_project())
            cert_dict = foreign["site-a"].cert.to_dict()
        forged = StartupKit(cert=Certificate.from_dict(cert_dict),
                            private_key=kit.private_key,
                            root_public=kit.root_public)
        result, _, _ = handshake(kits["server-1"], forged)
        if "server_err" in result:
            failures += 1
    assert failures == 100


# ---------------------------------------------------------------------------
# Authorization


def test_member_denied_submit_lead_allowed():
    assert not authorize("member", "submit_job")
    assert authorize("lead", "submit_job")


def test_project_admin_shutdown_allowed():
    assert authorize("project_admin", "shutdown_system")
    assert not authorize("lead", "shutdown_system")


def test_unknown_command_and_role_denied():
    assert not authorize("lead", "rm_rf")
    assert not authorize("intern", "list_jobs")
    assert not authorize("", "list_jobs")


def test_same_org_client_policy():
    policy = AuthzPolicy(job_acceptance={"lead": "same_org"})
    assert client_accepts_job("org-a", "lead", "org-a", policy)
    assert not client_accepts_job("org-b", "lead", "org-a", policy)
    assert not client_accepts_job("org-a", "member", "org-a", policy)


# ---------------------------------------------------------------------------
# Audit chain


def test_empty_log_verifies(tmp_path):
    log = AuditLog(tmp_path / "audit.jsonl")
    assert log.verify() is None


def test_append_100_then_verify(tmp_path):
    log = AuditLog(tmp_path / "audit.jsonl")
    for i in range(100):
        log.append("tester", "action", ref=f"r{i}")
    assert log.verify() is None
    assert log.count() == 100


def test_tampered_record_reported_by_seq(tmp_path):
    path = tmp_path / "audit.jsonl"
    log = AuditLog(path)
    for i in range(60):
        log.append("tester", "act", ref=f"r{i}")
    lines = path.read_text().splitlines()
    record = json.loads(lines[42])
    record["actor"] = "mallory"
    lines[42] = json.dumps(record, sort_keys=True)
    path.write_text("\n".join(lines) + "\n")
    assert AuditLog(path).verify() == 42


def test_single_byte_flip_detected(tmp_path):
    path = tmp_path / "audit.jsonl"
    log = AuditLog(path)
    for i in range(10):
        log.append("tester", "act", ref=f"ref-number-{i}")
    raw = bytearray(path.read_bytes())
    # flip one byte inside record 4's line
    lines = path.read_text().splitlines(keepends=True)
    offset = sum(len(l) for l in lines[:4]) + lines[4].index("ref-number") + 4
    raw[offset] ^= 0x01
    path.write_bytes(bytes(raw))
    assert AuditLog(path).verify() == 4


# ---------------------------------------------------------------------------
# Tokens


def test_token_roundtrip(kits):
    token = mint_token(kits["alice"])
    identity = verify_token(token, kits["alice"].root_public)
    assert identity.name == "alice" and identity.role == "lead"


def test_expired_token_rejected(kits):
    token = mint_token(kits["alice"], ttl_s=-10)
    with pytest.raises(TokenError):
        verify_token(token, kits["alice"].root_public)


def test_garbage_token_rejected(kits):
    with pytest.raises(TokenError):
        verify_token("bm90LWEtdG9rZW4=", kits["alice"].root_public)
