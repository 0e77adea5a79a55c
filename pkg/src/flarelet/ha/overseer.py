"""Overseer: heartbeat-driven designation of the active server.

Every party beats the overseer; servers carry their serving endpoint.  A
server missing three consecutive beats is DEAD.  When the ACTIVE dies, the
lowest-index healthy standby is promoted and the generation counter bumps,
which is what lets everyone reject stale servers.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional

from ..core.clock import SystemClock
from ..security.auth import authenticate_inbound
from ..security.provision import StartupKit
from ..transport.connection import AuthError, PeerClosed, RecvTimeout
from ..transport.driver import driver_listen
from ..transport.frame import Frame, MsgType

HEARTBEAT_INTERVAL_S = 5.0
MISSED_BEATS_DEAD = 3

ACTIVE = "ACTIVE"
STANDBY = "STANDBY"
DEAD = "DEAD"


@dataclass
class ServerEntry:
    endpoint: str
    index: int
    state: str = STANDBY
    last_beat: Optional[float] = None


class Overseer:
    """The provider table plus promotion rules; transport-free."""

    def __init__(self, expected_servers: Optional[list] = None, clock=None,
                 heartbeat_interval_s: float = HEARTBEAT_INTERVAL_S):
        self.clock = clock or SystemClock()
        self.interval = heartbeat_interval_s
        self.dead_after = MISSED_BEATS_DEAD * heartbeat_interval_s
        self._lock = threading.Lock()
        self._servers: dict = {}  # endpoint -> ServerEntry
        self._expected = list(expected_servers or [])
        for index, endpoint in enumerate(self._expected):
            self._servers[endpoint] = ServerEntry(endpoint, index)
        self.generation = 0
        self._beats: dict = {}  # party -> last beat time

    def heartbeat(self, party: str, role: str,
                  endpoint: Optional[str] = None) -> dict:
        """Record a beat and return the authoritative view."""
        now = self.clock.now()
        with self._lock:
            self._beats[party] = now
            if role == "server" and endpoint:
                entry = self._servers.get(endpoint)
                if entry is None:
                    entry = ServerEntry(endpoint, index=len(self._servers))
                    self._servers[endpoint] = entry
                if entry.state == DEAD:
                    entry.state = STANDBY  # revived server rejoins as standby
                entry.last_beat = now
            self._refresh_locked(now)
            active = self._active_locked()
            return {"active": active.endpoint if active else None,
                    "gen": self.generation}

    def view(self) -> dict:
        with self._lock:
            self._refresh_locked(self.clock.now())
            active = self._active_locked()
            return {"active": active.endpoint if active else None,
                    "gen": self.generation,
                    "servers": {e.endpoint: e.state
                                for e in self._servers.values()}}

    def _active_locked(self) -> Optional[ServerEntry]:
        for entry in self._servers.values():
            if entry.state == ACTIVE:
                return entry
        return None

    def _refresh_locked(self, now: float) -> None:
        for entry in self._servers.values():
            if entry.last_beat is not None and \
                    now - entry.last_beat > self.dead_after:
                entry.state = DEAD
        active = self._active_locked()
        if active is not None and active.state == ACTIVE:
            return
        # promotion: lowest-index healthy standby wins, generation bumps
        healthy = [e for e in self._servers.values()
                   if e.state == STANDBY and e.last_beat is not None
                   and now - e.last_beat <= self.dead_after]
        if not healthy:
            return
        chosen = min(healthy, key=lambda e: e.index)
        chosen.state = ACTIVE
        self.generation += 1


class OverseerServer:
    """Frame-protocol front end for the overseer table."""

    def __init__(self, kit: StartupKit, endpoint: str,
                 overseer: Optional[Overseer] = None, clock=None,
                 heartbeat_interval_s: float = HEARTBEAT_INTERVAL_S):
        self.kit = kit
        self.endpoint = endpoint
        self.overseer = overseer or Overseer(
            clock=clock, heartbeat_interval_s=heartbeat_interval_s)
        self._listener = None
        self._stop = threading.Event()
        self._seen_nonces: set = set()

    def start(self) -> None:
        self._listener = driver_listen(self.endpoint)
        threading.Thread(target=self._accept_loop, daemon=True,
                         name="overseer-accept").start()

    @property
    def port(self) -> int:
        return getattr(self._listener, "port", 0)

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            self._listener.close()

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn = self._listener.accept(timeout=0.5)
            except RecvTimeout:
                continue
            except PeerClosed:
                return
            threading.Thread(target=self._serve, args=(conn,),
                             daemon=True).start()

    def _serve(self, conn) -> None:
        try:
            peer = authenticate_inbound(conn, self.kit,
                                        seen_nonces=self._seen_nonces)
        except AuthError:
            return
        while not self._stop.is_set():
            try:
                frame = conn.recv(timeout=30.0)
            except RecvTimeout:
                continue
            except PeerClosed:
                return
            if frame.msg_type != MsgType.HEARTBEAT:
                conn.send(Frame(MsgType.ERROR, {"error": "unexpected"}))
                continue
            view = self.overseer.heartbeat(
                frame.header.get("party", peer.name),
                frame.header.get("role", peer.party_type),
                frame.header.get("endpoint"))
            if view["active"] is None:
                reply = {"active": None, "gen": view["gen"],
                         "status": "NO_ACTIVE"}
            else:
                reply = {"active": view["active"], "gen": view["gen"]}
            try:
                conn.send(Frame(MsgType.ACK, reply))
            except PeerClosed:
                return
