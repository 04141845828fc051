"""Per-node state and the network-layer packet router.

``NodeState`` bundles everything one HELPER owns: identity, position,
battery, the two transmit queues, the harvested neighbor table, MAC state
and the flood-suppression cache. ``Router`` makes the forwarding decisions
(SEEK or the greedy baseline) and realizes the flood rules; the MAC asks it
for a next hop whenever a unicast reaches the head of the queue, so every
forwarding decision uses the freshest OAI available.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable

from .core import (
    BROADCAST,
    EnergyState,
    GeoPosition,
    HelperPacket,
    NeighborEntry,
    NodeId,
    Oai,
    PacketKind,
    distance,
)
from .mac import MacState
from .radio import LinkModel
from .routing import (
    ForwardDecision,
    FloodCache,
    NextHop,
    QueueItem,
    RoutingQueues,
    NEIGHBOR_TTL_PERIODS,
    greedy_next_hop,
    link_efficiency,
    seek_next_hop,
    utility,
)


@dataclass
class NodeState:
    id: NodeId
    position: GeoPosition
    energy: EnergyState
    queues: RoutingQueues = field(default_factory=RoutingQueues)
    table: dict[NodeId, NeighborEntry] = field(default_factory=dict)
    mac: MacState = field(default_factory=MacState)
    flood_cache: FloodCache = field(default_factory=FloodCache)
    directory: dict[NodeId, GeoPosition] = field(default_factory=dict)
    erc_id: NodeId | None = None
    erc_position: GeoPosition | None = None
    alive: bool = True
    _seq: int = 0

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def fresh_oai(self) -> Oai:
        return Oai(queue_backlog=len(self.queues),
                   residual_energy=self.energy.residual,
                   initial_energy=self.energy.initial,
                   position=self.position)

    def learn_erc(self, erc: NodeId, position: GeoPosition) -> None:
        self.erc_id = erc
        self.erc_position = position
        for entry in self.table.values():
            entry.dist_to_dest = distance(entry.position, position)


class _NullTrace:
    def decision(self, d: ForwardDecision) -> None:
        pass

    def drop(self, t: float, node: NodeId, p: HelperPacket, reason: str) -> None:
        pass


NULL_TRACE = _NullTrace()


class Router:
    """Network-layer logic for one node."""

    def __init__(self, node: NodeState, link: LinkModel, mode: str = "seek",
                 beacon_period: float = 5.0, trace=NULL_TRACE,
                 deliver_local: Callable[[HelperPacket, float], None] | None = None,
                 poke_mac: Callable[[float], None] | None = None) -> None:
        if mode not in ("seek", "greedy"):
            raise ValueError(f"unknown routing mode {mode!r}")
        self.node = node
        self.link = link
        self.mode = mode
        self.neighbor_ttl = NEIGHBOR_TTL_PERIODS * beacon_period
        self.trace = trace
        self.deliver_local = deliver_local or (lambda p, t: None)
        self.poke_mac = poke_mac or (lambda t: None)

    # -- next-hop selection (called by the MAC at service time) -------------

    def select_next_hop(self, node: NodeState, p: HelperPacket,
                        now: float) -> NextHop | None:
        dest = self._dest_position(p)
        if dest is None:
            return None  # destination still unknown; hold
        self._evict_stale(now)
        q_i = max(1, len(node.queues))
        if self.mode == "greedy":
            nid = greedy_next_hop(node.position, node.table, dest,
                                  now, self.neighbor_ttl)
            if nid is None:
                return None
            # The MAC (and its utility-weighted backoff) is the same stack
            # in both modes; greedy only replaces the next-hop rule.
            s = self.link.default_strategy
            entry = node.table[nid]
            score = utility(q_i, node.position, entry, s, dest, p.final_dst)
            hop = NextHop(nid, s, score, link_efficiency(entry, s))
        else:
            hop = seek_next_hop(q_i, node.position, node.table,
                                self.link.usable_strategies(), dest,
                                p.final_dst, now, self.neighbor_ttl)
            if hop is None:
                return None
        entry = node.table[hop.node]
        q_j = 0 if hop.node == p.final_dst else entry.queue_backlog
        self.trace.decision(ForwardDecision(
            t=now, node=node.id, mode=self.mode, dest=p.final_dst,
            chosen=hop.node, q_i=q_i, q_j=q_j,
            d_is=distance(node.position, dest),
            d_js=distance(entry.position, dest), score=hop.score))
        return hop

    # -- packet entry points -------------------------------------------------

    def originate(self, p: HelperPacket, now: float) -> None:
        """Queue a locally created DATA packet for transmission."""
        if p.is_broadcast:
            self.node.flood_cache.add(p.origin, p.seq, now)
        if p.final_dst == self.node.id:
            self.deliver_local(p, now)
            return
        self.node.queues.push(p, now)
        self.poke_mac(now)

    def route_inbound(self, p: HelperPacket, now: float) -> None:
        """Handle a DATA packet the MAC delivered up."""
        node = self.node
        if p.is_broadcast:
            if node.flood_cache.seen(p.origin, p.seq, now):
                self.trace.drop(now, node.id, p, "flood-duplicate")
                return
            node.flood_cache.add(p.origin, p.seq, now)
            self.deliver_local(p, now)
            if p.htl > 0:
                fwd = copy.copy(p)
                fwd.htl = p.htl - 1
                node.queues.push(fwd, now)
                self.poke_mac(now)
            return
        if p.final_dst == node.id:
            self.deliver_local(p, now)
            return
        if p.htl <= 0:
            self.trace.drop(now, node.id, p, "htl-exhausted")
            return
        fwd = copy.copy(p)
        fwd.htl = p.htl - 1
        node.queues.push(fwd, now)
        self.poke_mac(now)

    def on_mac_failure(self, item: QueueItem, next_hop: NodeId,
                       now: float) -> None:
        """MAC exhausted its retries toward ``next_hop``.

        The failed neighbor's goodput estimate is halved, then the packet
        gets one fresh next-hop computation; a second failure drops it.
        """
        entry = self.node.table.get(next_hop)
        if entry is not None:
            entry.goodput *= 0.5
        if item.reroutes >= 1:
            self.node.queues.pop(item)
            self.trace.drop(now, self.node.id, item.packet, "mac-failure")
        else:
            item.reroutes += 1
        self.poke_mac(now)

    # -- helpers ---------------------------------------------------------------

    def _dest_position(self, p: HelperPacket) -> GeoPosition | None:
        if p.final_dst == self.node.erc_id and self.node.erc_position is not None:
            return self.node.erc_position
        return self.node.directory.get(p.final_dst)

    def _evict_stale(self, now: float) -> None:
        dead = [nid for nid, e in self.node.table.items()
                if now - e.last_heard > self.neighbor_ttl]
        for nid in dead:
            del self.node.table[nid]
