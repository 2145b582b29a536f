"""Messaging nodes: routing-effort ladder, gateway relay, command-center
mailbox, and static/flood opportunistic forwarding.

Every node is a state machine driven by the kernel through a small network
facade (``net``) that owns time, links, latency and the event log.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..graph import NodeId
from .aodv import AodvParams, Discovery, NeighborTable, RouteReply, RouteRequest, RouteTable

POLICIES = ("full", "adhoc-only", "static", "flood")
COMMAND_CENTER_POLL_S = 10.0


@dataclass(frozen=True)
class DataMessage:
    id: str
    source: NodeId
    destination: NodeId
    kind: str  # general | emergency
    payload_bytes: int = 0
    created_at: float = 0.0
    gateway: NodeId | None = None  # encapsulation target; inner destination unchanged
    path: tuple = ()

    def __post_init__(self):
        if self.kind not in ("general", "emergency"):
            raise ValueError(f"unknown message kind {self.kind!r}")

    def encapsulated(self, gateway: NodeId) -> "DataMessage":
        return replace(self, gateway=gateway)

    def decapsulated(self) -> "DataMessage":
        return replace(self, gateway=None)

    def visit(self, node: NodeId) -> "DataMessage":
        return replace(self, path=self.path + (node,))

    def stamped(self, node: NodeId) -> "DataMessage":
        """``visit`` unless ``node`` is already the last hop on the path."""
        return self if self.path and self.path[-1] == node else self.visit(node)

    @property
    def next_target(self) -> NodeId:
        return self.gateway if self.gateway is not None else self.destination


@dataclass
class Carried:
    message: DataMessage
    mode: str  # static | flood


@dataclass
class MessageStore:
    carried: dict = field(default_factory=dict)  # msg id -> Carried
    seen: set = field(default_factory=set)  # every id ever held, for duplicate suppression

    def hold(self, msg: DataMessage, mode: str) -> bool:
        fresh = msg.id not in self.seen
        self.seen.add(msg.id)
        cur = self.carried.get(msg.id)
        if cur is None or (cur.mode == "static" and mode == "flood"):
            self.carried[msg.id] = Carried(msg.decapsulated(), mode)
        return fresh

    def drop(self, msg_id: str) -> None:
        self.carried.pop(msg_id, None)


class CommandCenterMailbox:
    def __init__(self):
        self.queued: dict = {}  # destination -> {msg id: message}

    def store(self, msg: DataMessage) -> bool:
        box = self.queued.setdefault(msg.destination, {})
        fresh = msg.id not in box
        box[msg.id] = msg
        return fresh

    def fetch(self, destination: NodeId) -> list:
        box = self.queued.pop(destination, {})
        return [box[k] for k in sorted(box)]

    def holds(self, msg_id: str) -> bool:
        return any(msg_id in box for box in self.queued.values())


class MessagingNode:
    def __init__(self, node: NodeId, net, role: str = "messaging", params: AodvParams = AodvParams()):
        self.id = node
        self.net = net
        self.role = role
        self.params = params
        self.neighbors = NeighborTable(params)
        self.routes = RouteTable(params)
        self.store = MessageStore()
        self.seq = 0
        self.rreq_counter = 0
        self.seen_rreq: set = set()
        self.discoveries: dict = {}  # target -> Discovery
        self.waiting: dict = {}  # target -> [DataMessage]
        self.delivered: set = set()
        self.notices: set = set()
        self.gateway_mode = False
        self.cellular_up = False
        self.mailbox = CommandCenterMailbox() if role == "command-center" else None
        self.alerted: set = set()

    # --- neighbor sensing ------------------------------------------------

    def hello_tick(self) -> None:
        """Periodic work at each hello: refresh gateway mode, drop silent neighbors, send a hello."""
        now = self.net.now
        self.cellular_changed()
        for u in self.neighbors.expire(now):
            self._contact_end(u)
        self.net.broadcast_hello(self.id, self.role, self.gateway_mode)

    def cellular_changed(self) -> None:
        """Re-read the cellular interface; a messaging node in coverage acts as a gateway."""
        cell = self.net.cellular(self.id)
        up = cell and self.role == "messaging"
        if up != self.gateway_mode:
            self.gateway_mode = up
            self.net.emit("gateway-config", node=self.id, gateway=up)
        if cell and not self.cellular_up:
            self.cellular_up = True
            self.on_cellular_up()
        self.cellular_up = cell

    def link_broken(self, peer) -> None:
        """Link-layer feedback: a unicast to ``peer`` went unconfirmed."""
        e = self.neighbors.entries.pop(peer, None)
        if e is not None and e.established:
            self._contact_end(peer)

    def process_hello(self, sender: NodeId, role: str, gateway: bool = False) -> None:
        event = self.neighbors.process_hello(sender, self.net.now, role)
        if event == "alert":
            if sender not in self.alerted:
                self.alerted.add(sender)
                self.net.emit("rescue-alert", node=self.id, rescue_node=sender)
            self.net.request_emergency(sender, self.id)
            return
        entry = self.neighbors.entries[sender]
        entry.gateway = gateway
        deadline = self.params.neighbor_timeout + 1e-3
        last = entry.last_heard
        self.net.after(deadline, lambda: self._check_neighbor(sender, last), "timer")
        if event == "established":
            self.net.emit("contact-begin", node=self.id, peer=sender)
            self.opportunistic_exchange(sender)

    def _check_neighbor(self, u, heard_at) -> None:
        e = self.neighbors.entries.get(u)
        if e is None or e.last_heard != heard_at:
            return
        for v in self.neighbors.expire(self.net.now):
            self._contact_end(v)

    def _contact_end(self, u) -> None:
        self.net.emit("contact-end", node=self.id, peer=u)
        self.routes.invalidate(u)
        self.routes.invalidate_via(u)

    def is_neighbor(self, u) -> bool:
        return self.neighbors.is_established(u)

    # --- sending ----------------------------------------------------------

    def originate(self, msg: DataMessage) -> None:
        self.net.emit("originate", node=self.id, msg_id=msg.id, src=msg.source, dst=msg.destination, kind=msg.kind)
        self.store.seen.add(msg.id)
        if msg.kind == "emergency":
            self.send_emergency(msg)
        else:
            self.send_general(msg)

    def _policy(self) -> str:
        return self.net.policy

    def _opportunistic_mode(self, msg: DataMessage) -> str:
        policy = self._policy()
        if msg.kind == "emergency":
            return "flood"  # never downgraded to static forwarding
        if policy in ("static", "flood"):
            return policy
        return self.net.general_mode

    def _cellular_ok(self) -> bool:
        return self._policy() != "adhoc-only" and self.net.cellular(self.id)

    def send_general(self, msg: DataMessage) -> None:
        """Ladder: direct cellular, then ad-hoc (with gateways and the command center), then carry."""
        if msg.destination == self.id:
            self._deliver(msg)
            return
        if self._cellular_ok() and self.net.cellular_reachable(msg.destination):
            self._cellular_forward(msg)
            return
        self._adhoc(msg)

    def send_emergency(self, msg: DataMessage) -> None:
        """Straight to the command center if possible, else one discovery and then replicate."""
        if msg.destination == self.id:
            self._deliver(msg)
            return
        if self._cellular_ok() and self.net.cellular_reachable(msg.destination):
            self._cellular_forward(msg)
            return
        self._adhoc(msg)

    def _adhoc(self, msg: DataMessage) -> None:
        route = self._route_for(msg.destination)
        if route is not None and not route.is_gateway_route:
            self._forward(msg, route.next_hop)
            return
        self.waiting.setdefault(msg.destination, []).append(msg)
        if msg.destination not in self.discoveries:
            attempts = 1 if msg.kind == "emergency" and self._policy() != "adhoc-only" else 1 + self.params.rreq_retries
            self._start_discovery(msg.destination, attempts)

    def _route_for(self, dest):
        if self.is_neighbor(dest):
            return _NeighborRoute(dest)
        return self.routes.lookup(dest, self.net.now)

    # --- route discovery ----------------------------------------------------

    def _start_discovery(self, target, attempts: int, attempt: int = 1) -> None:
        self.rreq_counter += 1
        self.seq += 1
        d = Discovery(target, attempt, self.rreq_counter, attempts, self.net.now)
        self.discoveries[target] = d
        req = RouteRequest(d.request_id, self.id, self.seq, target, dest_seq=self.routes.wanted_seq(target))
        self.seen_rreq.add((self.id, d.request_id))
        self.net.emit("rreq", node=self.id, origin=self.id, target=target, request_id=d.request_id, hops=0,
                      attempt=attempt)
        self.net.broadcast_control(self.id, lambda v, r=req: self.net.agent(v).receive_rreq(self.id, r))
        self.net.after(self.params.rreq_timeout, lambda: self._discovery_timeout(target, d.request_id), "timer")

    def receive_rreq(self, sender, req: RouteRequest) -> None:
        key = (req.origin, req.request_id)
        if key in self.seen_rreq:
            return
        self.seen_rreq.add(key)
        hops = req.hop_count + 1
        self.routes.update(req.origin, sender, hops, self.net.now, req.origin_seq)
        if self.role == "command-center" and req.target != self.id:
            return
        if req.target == self.id:
            self.seq = max(self.seq + 1, req.dest_seq)
            self._send_rrep(RouteReply(req.request_id, req.origin, req.target, self.id, False, 0, self.seq))
            return
        active = self.routes.lookup(req.target, self.net.now)
        if self.is_neighbor(req.target):
            # a live hello stream is as fresh as anything the requester can know
            self._send_rrep(RouteReply(req.request_id, req.origin, req.target, self.id, False, 1, req.dest_seq))
            return
        if active is not None and not active.is_gateway_route and active.seq >= req.dest_seq:
            self._send_rrep(RouteReply(req.request_id, req.origin, req.target, self.id, False, active.hops, active.seq))
            return
        if self.gateway_mode and self._policy() != "adhoc-only":
            self.seq += 1
            self._send_rrep(RouteReply(req.request_id, req.origin, req.target, self.id, True, 0, self.seq))
        fwd = req.forwarded()
        self.net.emit("rreq", node=self.id, origin=req.origin, target=req.target, request_id=req.request_id, hops=fwd.hop_count)
        self.net.broadcast_control(self.id, lambda v, r=fwd: self.net.agent(v).receive_rreq(self.id, r), exclude=sender)

    def _send_rrep(self, rep: RouteReply) -> None:
        self.net.emit("rrep", node=self.id, origin=rep.origin, target=rep.target, responder=rep.responder,
                      gateway_flag=rep.gateway_flag, hops=rep.hop_count, request_id=rep.request_id)
        self._relay_rrep(rep)

    def _relay_rrep(self, rep: RouteReply) -> None:
        back = self.routes.lookup(rep.origin, self.net.now)
        if back is None:
            self.net.emit("control-drop", node=self.id, what="rrep", reason="no reverse route")
            return
        nxt = back.next_hop
        self.net.send_control(self.id, nxt, lambda r=rep.forwarded(): self.net.agent(nxt).receive_rrep(self.id, r))

    def receive_rrep(self, sender, rep: RouteReply) -> None:
        now = self.net.now
        dest = rep.responder if rep.gateway_flag else rep.target
        self.routes.update(dest, sender, rep.hop_count, now, rep.seq)
        if rep.seq < self.routes.wanted_seq(dest):
            self.net.emit("control-drop", node=self.id, what="rrep", reason="stale sequence number")
            return
        if rep.origin != self.id:
            self._relay_rrep(rep)
            return
        d = self.discoveries.get(rep.target)
        if d is None or d.decided or d.request_id != rep.request_id and rep.gateway_flag:
            return
        if rep.gateway_flag:
            prev = d.gateway_replies.get(rep.responder)
            if prev is None or rep.hop_count < prev[0]:
                d.gateway_replies[rep.responder] = (rep.hop_count, sender, rep.seq)
            return
        # an ad-hoc path wins immediately; gateway replies are ignored
        d.decided = True
        del self.discoveries[rep.target]
        self.net.emit("route-found", node=self.id, target=rep.target, hops=rep.hop_count, via_gateway=False,
                      next_hop=sender)
        self._flush(rep.target)

    def _discovery_timeout(self, target, request_id) -> None:
        d = self.discoveries.get(target)
        if d is None or d.decided or d.request_id != request_id:
            return
        best = d.best_gateway()
        if best is not None:
            g, hops, nxt, seq = best
            d.decided = True
            del self.discoveries[target]
            self.routes.update(g, nxt, hops, self.net.now, seq)
            self.net.emit("route-found", node=self.id, target=target, hops=hops, via_gateway=True, gateway=g,
                          next_hop=nxt)
            for msg in self.waiting.pop(target, []):
                self.net.emit("encapsulate", node=self.id, msg_id=msg.id, gateway=g)
                self._forward(msg.encapsulated(g), nxt)
            return
        if d.attempt < d.max_attempts:
            self._start_discovery(target, d.max_attempts, d.attempt + 1)
            return
        del self.discoveries[target]
        self.net.emit("unreachable", node=self.id, target=target, attempts=d.attempt)
        for msg in self.waiting.pop(target, []):
            self._after_adhoc_failure(msg)

    def _flush(self, target) -> None:
        for msg in self.waiting.pop(target, []):
            route = self._route_for(target)
            if route is None:
                self._adhoc(msg)
            else:
                self._forward(msg, route.next_hop)

    def _after_adhoc_failure(self, msg: DataMessage) -> None:
        policy = self._policy()
        if policy == "adhoc-only":
            # keep re-running route discovery until a path appears
            self.waiting.setdefault(msg.destination, []).append(msg)
            if msg.destination not in self.discoveries:
                self._start_discovery(msg.destination, 1 + self.params.rreq_retries)
            return
        if self.net.cellular(self.id):
            self._store_at_cc(msg)
            return
        self._carry(msg, self._opportunistic_mode(msg))

    # --- data plane ---------------------------------------------------------

    def _forward(self, msg: DataMessage, next_hop) -> None:
        target = msg.next_target
        route = self._route_for(target)
        expiry = None if route is None or isinstance(route, _NeighborRoute) else route.expiry
        if route is not None and not isinstance(route, _NeighborRoute):
            self.routes.refresh(target, self.net.now)
        self.store.seen.add(msg.id)
        out = msg.stamped(self.id)
        self.net.emit("data-forward", node=self.id, peer=next_hop, msg_id=msg.id, hops=len(out.path),
                      route_expiry=expiry, gateway=msg.gateway)

        def arrived(m=out):
            self.net.agent(next_hop).receive_data(self.id, m)

        def failed():
            self.net.emit("forward-failed", node=self.id, peer=next_hop, msg_id=msg.id)
            self.link_broken(next_hop)
            self.routes.invalidate(target)
            self.routes.invalidate_via(next_hop)
            self._reenter(msg.decapsulated() if msg.gateway is not None else msg)

        self.net.send_data(self.id, next_hop, arrived, failed, msg.id)

    def _reenter(self, msg: DataMessage) -> None:
        if msg.kind == "emergency":
            self.send_emergency(msg)
        else:
            self.send_general(msg)

    def receive_data(self, sender, msg: DataMessage) -> None:
        msg = msg.stamped(self.id)
        if msg.gateway == self.id:
            self.net.emit("decapsulate", node=self.id, msg_id=msg.id)
            self.gateway_relay(msg.decapsulated())
            return
        if msg.destination == self.id:
            self._deliver(msg)
            return
        target = msg.next_target
        route = self._route_for(target)
        if route is None:
            self._reenter(msg.decapsulated() if msg.gateway is not None else msg)
            return
        self._forward(msg, route.next_hop)

    def gateway_relay(self, msg: DataMessage) -> None:
        """Hand an inner message to the cellular side, or back to the ladder if cellular is gone."""
        if not self.net.cellular(self.id):
            self.net.emit("relay-failed", node=self.id, msg_id=msg.id, reason="cellular lost")
            self._reenter(msg)
            return
        if self.net.cellular_reachable(msg.destination):
            self._cellular_forward(msg)
        else:
            self._store_at_cc(msg)

    def _cellular_forward(self, msg: DataMessage) -> None:
        msg = msg.stamped(self.id)
        self.store.seen.add(msg.id)
        self.net.emit("cellular-forward", node=self.id, peer=msg.destination, msg_id=msg.id)

        def arrived():
            self.net.agent(msg.destination).receive_cellular(msg)

        def failed():
            if self.net.cellular(self.id):
                self._store_at_cc(msg)
            else:
                self._reenter(msg)

        self.net.send_cellular(self.id, msg.destination, arrived, failed, msg.id)

    def receive_cellular(self, msg: DataMessage) -> None:
        self._deliver(msg.stamped(self.id))

    def _store_at_cc(self, msg: DataMessage) -> None:
        cc = self.net.cc
        if cc is None or msg.destination == cc:
            self._carry(msg, self._opportunistic_mode(msg))
            return

        def arrived(m=msg.stamped(self.id)):
            self.net.agent(cc).mailbox_store(m)

        def failed():
            self._carry(msg, self._opportunistic_mode(msg))

        self.net.send_cellular(self.id, cc, arrived, failed, msg.id)

    def mailbox_store(self, msg: DataMessage) -> None:
        msg = msg.stamped(self.id)
        if self.mailbox.store(msg):
            self.net.emit("store-at-cc", node=self.id, msg_id=msg.id, dst=msg.destination)
        self.net.poke(msg.destination)

    def poll_command_center(self) -> None:
        cc = self.net.cc
        if cc is None or cc == self.id or not self.net.cellular(self.id):
            return
        for msg in self.net.agent(cc).mailbox.fetch(self.id):
            self.net.emit("fetch-from-cc", node=self.id, msg_id=msg.id)
            self.net.send_cellular(cc, self.id, lambda m=msg: self.receive_cellular(m),
                                   lambda m=msg: self.net.agent(cc).mailbox_store(m), msg.id)

    def on_cellular_up(self) -> None:
        self.poll_command_center()
        for c in self._carried():
            msg = c.message
            if self._policy() != "adhoc-only" and self.net.cellular_reachable(msg.destination):
                self.store.drop(msg.id)
                self._cellular_forward(msg)

    def _deliver(self, msg: DataMessage) -> None:
        first = msg.id not in self.delivered
        self.delivered.add(msg.id)
        self.store.seen.add(msg.id)
        self.store.drop(msg.id)
        if first:
            self.net.emit("deliver", node=self.id, msg_id=msg.id, src=msg.source, kind=msg.kind,
                          delay_us=self.net.now_us - round(msg.created_at * 1_000_000), path=list(msg.path))
            self.net.delivered(msg)
            if self.net.delivered_notice:
                self.notices.add(msg.id)
        else:
            self.net.emit("duplicate", node=self.id, msg_id=msg.id)

    # --- opportunistic ------------------------------------------------------------

    def _carried(self) -> list:
        return [self.store.carried[k] for k in sorted(self.store.carried)]

    def _carry(self, msg: DataMessage, mode: str) -> None:
        self.store.hold(msg, mode)
        self.net.emit("carry", node=self.id, msg_id=msg.id, mode=mode)
        if mode == "flood":
            for v in self.neighbors.established():
                self._offer(v, self.store.carried[msg.id])

    def opportunistic_exchange(self, peer) -> None:
        """Contact with ``peer`` just began: pass on what the forwarding rules allow."""
        if self.net.delivered_notice and self.notices:
            self.net.agent(peer).learn_notices(self.notices, self.id)
        for c in self._carried():
            self._offer(peer, c)

    def learn_notices(self, notices, sender) -> None:
        fresh = set(notices) - self.notices
        if not fresh:
            return
        self.notices |= fresh
        for mid in sorted(fresh):
            if mid in self.store.carried:
                self.store.drop(mid)
                self.net.emit("delivered-notice", node=self.id, msg_id=mid, peer=sender, model_extension=True)

    def _offer(self, peer, c: Carried) -> None:
        msg = c.message
        if msg.id not in self.store.carried or msg.id in self.notices:
            return
        entry = self.neighbors.entries.get(peer)
        peer_gateway = entry is not None and entry.gateway
        if msg.kind == "emergency" and self._policy() != "adhoc-only" and peer_gateway and peer != msg.destination:
            # a gateway in reach: hand the emergency over for relay to the command center
            self.net.emit("encapsulate", node=self.id, msg_id=msg.id, gateway=peer)
            self._transfer(peer, msg.encapsulated(peer), keep=c.mode == "flood")
            return
        if peer == msg.destination:
            self._transfer(peer, msg, keep=False)
            return
        if c.mode == "flood" and msg.id not in self.net.agent(peer).summary_vector():
            self.net.emit("replicate", node=self.id, peer=peer, msg_id=msg.id)
            self._transfer(peer, msg, keep=True, replica=True)

    def _transfer(self, peer, msg: DataMessage, keep: bool, replica: bool = False) -> None:
        def arrived():
            if not keep:
                self.store.drop(msg.id)
            agent = self.net.agent(peer)
            if replica:
                agent.receive_replica(self.id, msg.stamped(self.id))
            else:
                agent.receive_data(self.id, msg.stamped(self.id))

        def failed():
            # contact ended mid-transfer: nothing changes hands, retry on the next contact
            self.net.emit("transfer-void", node=self.id, peer=peer, msg_id=msg.id)
            self.link_broken(peer)

        self.net.send_data(self.id, peer, arrived, failed, msg.id)

    def receive_replica(self, sender, msg: DataMessage) -> None:
        if msg.id in self.store.seen:
            return
        msg = msg.stamped(self.id)
        if msg.destination == self.id:
            self._deliver(msg)
            return
        if msg.kind == "emergency" and self._cellular_ok() and self.net.cellular_reachable(msg.destination):
            self.store.seen.add(msg.id)
            self._cellular_forward(msg)
            return
        self._carry(msg, "flood")

    def summary_vector(self) -> frozenset:
        """Ids this node has held; exchanged on contact for duplicate suppression."""
        return frozenset(self.store.seen)

    def holds(self, msg_id: str) -> bool:
        """Carried, or queued here while a route discovery runs."""
        return msg_id in self.store.carried or any(m.id == msg_id for q in self.waiting.values() for m in q)


@dataclass(frozen=True)
class _NeighborRoute:
    next_hop: NodeId
    hops: int = 1
    is_gateway_route: bool = False
