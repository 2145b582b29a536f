"""AODV neighbor and route tables with the gateway extension.

Only the parts needed at group scale are modeled: hello-based neighbor
sensing, per-node sequence numbers with newest-wins updates, route lifetime,
and reply bookkeeping for a discovery that may be answered by gateways.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..graph import NodeId


@dataclass(frozen=True)
class AodvParams:
    hello_interval: float = 1.0
    hellos_to_neighbor: int = 3
    allowed_hello_loss: int = 2
    rreq_timeout: float = 4.0
    rreq_retries: int = 2
    rrep_ack_timeout: float = 0.05
    active_route_timeout: float = 10.0

    @property
    def neighbor_timeout(self) -> float:
        return self.allowed_hello_loss * self.hello_interval


@dataclass
class NeighborEntry:
    consecutive: int
    last_heard: float
    missed: int = 0
    established: bool = False
    role: str = "messaging"
    gateway: bool = False  # sender advertised cellular connectivity in its last hello


class NeighborTable:
    """Consecutive-hello counting; a neighbor counts only after enough hellos in a row."""

    # a hello counts as consecutive if it follows the previous one within this many intervals
    STREAK_SLACK = 1.5

    def __init__(self, params: AodvParams = AodvParams()):
        self.params = params
        self.entries: dict = {}

    def process_hello(self, sender: NodeId, t: float, role: str = "messaging") -> str | None:
        """Update on a hello from ``sender`` at ``t``.

        Returns ``"established"`` when the sender just became a neighbor and
        ``"alert"`` for a self-rescue sender (which never enters the table).
        """
        if role == "self-rescue":
            return "alert"
        p = self.params
        e = self.entries.get(sender)
        if e is None or t - e.last_heard > self.STREAK_SLACK * p.hello_interval and not e.established:
            self.entries[sender] = NeighborEntry(1, t, role=role)
            e = self.entries[sender]
        else:
            e.consecutive += 1
            e.last_heard = t
            e.missed = 0
        if not e.established and e.consecutive >= p.hellos_to_neighbor:
            e.established = True
            return "established"
        return None

    def expire(self, t: float) -> list:
        """Drop neighbors silent for the allowed hello loss; returns the established ones dropped."""
        dropped = []
        limit = self.params.neighbor_timeout
        for u in sorted(self.entries):
            e = self.entries[u]
            silent = t - e.last_heard
            e.missed = int(silent // self.params.hello_interval)
            if silent >= limit - 1e-9:
                if e.established:
                    dropped.append(u)
                del self.entries[u]
        return dropped

    def is_established(self, u: NodeId) -> bool:
        e = self.entries.get(u)
        return e is not None and e.established

    def established(self) -> list:
        return sorted(u for u, e in self.entries.items() if e.established)


@dataclass
class RouteEntry:
    next_hop: NodeId
    hops: int
    expiry: float
    seq: int = 0
    gateway: NodeId | None = None  # set when the route ends at a gateway rather than the destination

    @property
    def is_gateway_route(self) -> bool:
        return self.gateway is not None


class RouteTable:
    """Routes keyed by destination.

    ``last_seq`` outlives the routes themselves: a broken route bumps its
    destination's number, so later discoveries ask for something fresher and
    stale replies (which could point back through the breaking node) are
    refused.
    """

    def __init__(self, params: AodvParams = AodvParams()):
        self.params = params
        self.entries: dict = {}
        self.last_seq: dict = {}

    def lookup(self, dest: NodeId, t: float) -> RouteEntry | None:
        e = self.entries.get(dest)
        if e is None or e.expiry <= t:
            return None
        return e

    def wanted_seq(self, dest: NodeId) -> int:
        return self.last_seq.get(dest, 0)

    def update(self, dest, next_hop, hops, t, seq=0, gateway=None) -> bool:
        """Install a route if it is newer, or as new and shorter, or the old one expired.

        Routes older than the last known sequence number are never installed.
        """
        if seq < self.wanted_seq(dest):
            return False
        old = self.entries.get(dest)
        fresh = (
            old is None
            or old.expiry <= t
            or seq > old.seq
            or (seq == old.seq and hops < old.hops)
            or (seq == old.seq and hops == old.hops and old.gateway is not None and gateway is None)
        )
        if fresh:
            self.entries[dest] = RouteEntry(next_hop, hops, t + self.params.active_route_timeout, seq, gateway)
            self.last_seq[dest] = seq
        return fresh

    def refresh(self, dest, t) -> None:
        e = self.entries.get(dest)
        if e is not None and e.expiry > t:
            e.expiry = t + self.params.active_route_timeout

    def invalidate(self, dest) -> None:
        """Forget the route and require a fresher one; also used for broken neighbor links."""
        e = self.entries.pop(dest, None)
        self.last_seq[dest] = max(self.wanted_seq(dest), e.seq if e is not None else 0) + 1

    def invalidate_via(self, next_hop) -> list:
        gone = sorted(d for d, e in self.entries.items() if e.next_hop == next_hop)
        for d in gone:
            self.invalidate(d)
        return gone


@dataclass(frozen=True)
class RouteRequest:
    request_id: int
    origin: NodeId
    origin_seq: int
    target: NodeId
    hop_count: int = 0
    dest_seq: int = 0  # freshness an intermediate node's route must reach to answer

    def forwarded(self) -> "RouteRequest":
        return RouteRequest(self.request_id, self.origin, self.origin_seq, self.target, self.hop_count + 1,
                            self.dest_seq)


@dataclass(frozen=True)
class RouteReply:
    request_id: int
    origin: NodeId
    target: NodeId
    responder: NodeId
    gateway_flag: bool
    hop_count: int
    seq: int = 0

    def forwarded(self) -> "RouteReply":
        return RouteReply(self.request_id, self.origin, self.target, self.responder, self.gateway_flag,
                          self.hop_count + 1, self.seq)


@dataclass
class Discovery:
    """A source's pending route discovery."""

    target: NodeId
    attempt: int
    request_id: int
    max_attempts: int
    started_at: float
    gateway_replies: dict = field(default_factory=dict)  # gateway -> (hops, next_hop, seq)
    decided: bool = False

    def best_gateway(self):
        if not self.gateway_replies:
            return None
        g = min(self.gateway_replies, key=lambda k: (self.gateway_replies[k][0], k))
        return g, *self.gateway_replies[g]
