"""Two-party split-learning session over frame connections.

The label holder drives: per step it requests a batch, receives the cut
activations, updates its layer, and returns the gradient at the cut.  Either
the two parties share a direct connection (one hop per message) or both talk
to a relay on the server (two hops per message); the math is identical, only
hop counts differ.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core.dxo import Dxo, DxoKind, dxo_decode, dxo_encode
from ..transport.connection import Connection, PeerClosed, RecvTimeout
from ..transport.frame import Frame, MsgType
from .model import (FeatureParty, LabelParty, ProtocolStateError,
                    composed_params)
from .psi import PsiInitiator, PsiResponder

DEFAULT_TIMEOUT_S = 30.0


@dataclass
class SplitConfig:
    epochs: int = 5
    batch_size: int = 64
    lr: float = 0.1
    hidden: int = 16
    classes: int = 10
    seed: int = 0
    path: str = "P2P"  # or "ROUTED"


def planned_step_count(num_samples: int, batch_size: int, epochs: int) -> int:
    """Steps the controller schedules: per-epoch batches, short tail included."""
    return math.ceil(num_samples / batch_size) * epochs


def stream_step_count(num_samples: int, batch_size: int, epochs: int) -> int:
    """Communication rounds counted over the concatenated sample stream.

    This is the arithmetic behind "N samples at batch B for E epochs", exact
    when B divides N * E; it differs from planned_step_count only through the
    per-epoch tail batch.
    """
    return (num_samples * epochs) // batch_size


class SplitChannel:
    """One party's half of the session pipe, with a sent-frame counter."""

    def __init__(self, conn: Connection):
        self.conn = conn
        self.sent = 0
        self.payload_log: list = []

    def send(self, kind: str, step: int = -1, payload: bytes = b"") -> None:
        header = {"kind": kind}
        if step >= 0:
            header["step"] = step
        self.conn.send(Frame(MsgType.P2P_DATA, header, payload))
        self.sent += 1
        self.payload_log.append(payload)

    def recv(self, timeout: float = DEFAULT_TIMEOUT_S) -> tuple:
        frame = self.conn.recv(timeout=timeout)
        if frame.msg_type != MsgType.P2P_DATA:
            raise ProtocolStateError(f"unexpected frame {frame.msg_type.name}")
        return frame.header.get("kind"), frame.header.get("step", -1), frame.payload

    def close(self) -> None:
        self.conn.close()


def run_relay(conn_a: Connection, conn_b: Connection) -> dict:
    """Forward frames both ways until either side closes; counts forwards.

    Returns a live dict {"forwarded": n}; run in a thread by the caller.
    """
    counter = {"forwarded": 0}
    lock = threading.Lock()

    def pump(src, dst):
        while True:
            try:
                frame = src.recv(timeout=60.0)
            except (PeerClosed, RecvTimeout):
                dst.close()
                return
            with lock:
                counter["forwarded"] += 1
            try:
                dst.send(frame)
            except PeerClosed:
                return

    for src, dst in ((conn_a, conn_b), (conn_b, conn_a)):
        threading.Thread(target=pump, args=(src, dst), daemon=True).start()
    return counter


# ---------------------------------------------------------------------------
# PSI over the channel


def psi_over_channel_initiator(channel: SplitChannel, items) -> list:
    party = PsiInitiator(items)
    channel.send("psi1", payload=json.dumps(
        [hex(v) for v in party.round1()]).encode())
    kind, _, payload = channel.recv()
    if kind != "psi2":
        raise ProtocolStateError(f"expected psi2, got {kind}")
    doc = json.loads(payload)
    intersection = party.finish([int(v, 16) for v in doc["peer"]],
                                [int(v, 16) for v in doc["double"]])
    channel.send("psi_result", payload=json.dumps(intersection).encode())
    return intersection


def psi_over_channel_responder(channel: SplitChannel, items) -> list:
    party = PsiResponder(items)
    kind, _, payload = channel.recv()
    if kind != "psi1":
        raise ProtocolStateError(f"expected psi1, got {kind}")
    encrypted = [int(v, 16) for v in json.loads(payload)]
    own, double = party.round2(encrypted)
    channel.send("psi2", payload=json.dumps(
        {"peer": [hex(v) for v in own],
         "double": [hex(v) for v in double]}).encode())
    kind, _, payload = channel.recv()
    if kind != "psi_result":
        raise ProtocolStateError(f"expected psi_result, got {kind}")
    return json.loads(payload)


# ---------------------------------------------------------------------------
# Training session


def _batches(n: int, cfg: SplitConfig):
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            yield order[start:start + cfg.batch_size]


def _cut_dxo(matrix: np.ndarray, positions: np.ndarray) -> bytes:
    dxo = Dxo(DxoKind.WEIGHTS, data={
        "cut": np.asarray(matrix, dtype=np.float64),
        "positions": np.asarray(positions, dtype=np.int64)})
    return dxo_encode(dxo)


def run_label_side(channel: SplitChannel, party: LabelParty, intersection,
                   cfg: SplitConfig) -> list:
    """Drive the session; returns the per-step loss curve."""
    losses = []
    step = 0
    for batch in _batches(len(intersection), cfg):
        ids = [intersection[i] for i in batch]
        channel.send("request", step, _cut_dxo(np.zeros((0, 0)), batch))
        kind, got_step, payload = channel.recv()
        if kind != "activations" or got_step != step:
            raise ProtocolStateError(
                f"expected activations for step {step}, got {kind}@{got_step}")
        dxo = dxo_decode(payload)
        activations = np.asarray(dxo.data["cut"])
        if activations.shape[0] != len(ids):
            raise ProtocolStateError("activation batch size mismatch")
        loss, grad = party.step(activations, ids, cfg.lr)
        losses.append(loss)
        channel.send("gradient", step, _cut_dxo(grad, batch))
        step += 1
    channel.send("done", step)
    return losses


def run_feature_side(channel: SplitChannel, party: FeatureParty, intersection,
                     cfg: SplitConfig) -> int:
    """Serve forward/backward requests until done; returns steps served."""
    served = 0
    last_step = -1
    while True:
        kind, step, payload = channel.recv()
        if kind == "done":
            return served
        if kind == "request":
            if step <= last_step:
                raise ProtocolStateError(f"stale step index {step}")
            last_step = step
            positions = np.asarray(dxo_decode(payload).data["positions"])
            ids = [intersection[i] for i in positions]
            activations = party.forward(ids, step)
            channel.send("activations", step, _cut_dxo(activations, positions))
        elif kind == "gradient":
            if step != last_step:
                raise ProtocolStateError(
                    f"gradient for step {step}, expected {last_step}")
            grad = np.asarray(dxo_decode(payload).data["cut"])
            party.backward(grad, step, cfg.lr)
            served += 1
        else:
            raise ProtocolStateError(f"unexpected message kind {kind!r}")


@dataclass
class SplitResult:
    params: dict
    losses: list
    intersection: list
    steps: int
    hops: int
    feature_sent: int = 0
    label_sent: int = 0
    payloads: list = field(default_factory=list)


def run_split_session(conn_features: Connection, conn_labels: Connection,
                      features: dict, labels: dict, cfg: SplitConfig,
                      relay_counter: Optional[dict] = None) -> SplitResult:
    """Run PSI then training between two live connections.

    ``relay_counter`` is the dict returned by run_relay when the connections
    go through a server; leave None for a direct pipe.
    """
    chan_f = SplitChannel(conn_features)
    chan_l = SplitChannel(conn_labels)
    dim = len(next(iter(features.values())))
    feature_party = FeatureParty(features, dim, cfg.hidden, cfg.classes, cfg.seed)
    label_party = LabelParty(labels, dim, cfg.hidden, cfg.classes, cfg.seed)

    state: dict = {}

    def feature_main():
        intersection = psi_over_channel_responder(chan_f, list(features))
        state["served"] = run_feature_side(chan_f, feature_party, intersection,
                                           cfg)

    thread = threading.Thread(target=feature_main, daemon=True)
    thread.start()
    intersection = psi_over_channel_initiator(chan_l, list(labels))
    losses = run_label_side(chan_l, label_party, intersection, cfg)
    thread.join(timeout=60.0)
    if thread.is_alive():
        raise ProtocolStateError("feature party did not finish")
    chan_f.close()
    chan_l.close()

    hops = chan_f.sent + chan_l.sent
    if relay_counter is not None:
        hops += relay_counter["forwarded"]
    return SplitResult(
        params=composed_params(feature_party, label_party),
        losses=losses,
        intersection=intersection,
        steps=state.get("served", 0),
        hops=hops,
        feature_sent=chan_f.sent,
        label_sent=chan_l.sent,
        payloads=chan_f.payload_log + chan_l.payload_log,
    )
