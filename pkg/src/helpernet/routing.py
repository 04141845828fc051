"""Network layer: dual transmit queues, SEEK next-hop selection, the greedy
geographic baseline, and duplicate-suppressed HTL-bounded flooding.

SEEK scores every (neighbor, strategy) pair with

    U = eta * (max(q_i - q_j, 0) / q_i) * ((d_is - d_js) / d_is) * (E_r / E_0)

where eta = goodput / tx_power is the link energy efficiency in bits per
joule. A score of zero marks the pair ineligible: the backpressure gate
(no positive differential backlog) and the progress gate (neighbor not
strictly closer to the destination) both zero the score, so a node holds
its packet rather than route backwards or into congestion.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .core import (
    GeoPosition,
    HelperPacket,
    NeighborEntry,
    NodeId,
    PRIORITY_APP_TYPES,
    TransmissionStrategy,
    distance,
)
from .radio import GOODPUT_FLOOR

#: Neighbor rows older than this many beacon periods are treated as gone.
NEIGHBOR_TTL_PERIODS = 3

#: How long a (origin, seq) flood key stays in the suppression cache.
FLOOD_CACHE_TTL = 600.0


def link_efficiency(entry: NeighborEntry, s: TransmissionStrategy) -> float:
    """eta = G / P: successfully delivered bits per joule on this link.

    The probe measures an intact-bit ratio at the bitrate it was sampled
    at; for another strategy the goodput scales with that strategy's
    bitrate. Links below the goodput floor are unusable (score 0).
    """
    ratio = entry.goodput_ratio()
    if ratio < GOODPUT_FLOOR:
        return 0.0
    return ratio * s.bitrate / s.tx_power


def utility(own_backlog: int, own_position: GeoPosition, entry: NeighborEntry,
            s: TransmissionStrategy, dest: GeoPosition,
            dest_node: NodeId | None = None) -> float:
    """SEEK utility of forwarding via ``entry`` with strategy ``s``.

    ``own_backlog`` counts the packet in hand, so it is always >= 1.
    The destination's advertised backlog is taken as zero.
    """
    d_is = distance(own_position, dest)
    if d_is <= 0.0:
        raise ValueError("utility undefined at the destination itself")
    q_i = max(1, own_backlog)
    d_js = distance(entry.position, dest)
    at_dest = (dest_node is not None and entry.node == dest_node) or d_js == 0.0
    q_j = 0 if at_dest else entry.queue_backlog

    backlog_term = max(q_i - q_j, 0) / q_i
    progress = max((d_is - d_js) / d_is, 0.0)
    if entry.initial_energy <= 0.0:
        return 0.0
    energy_term = entry.residual_energy / entry.initial_energy
    return link_efficiency(entry, s) * backlog_term * progress * energy_term


@dataclass(frozen=True)
class NextHop:
    node: NodeId
    strategy: TransmissionStrategy
    score: float
    efficiency: float  # eta of the chosen pair, for backoff normalization


def seek_next_hop(own_backlog: int, own_position: GeoPosition,
                  table: dict[NodeId, NeighborEntry],
                  strategies: tuple[TransmissionStrategy, ...],
                  dest: GeoPosition,
                  dest_node: NodeId | None = None,
                  now: float | None = None,
                  ttl: float = math.inf) -> NextHop | None:
    """Argmax of the utility over neighbors x strategies.

    Ties break toward higher residual energy, then lower node id, then
    configured strategy order. Returns None when every score is zero
    (the packet is held and retried later).
    """
    best: NextHop | None = None
    best_key = (0.0, -math.inf, math.inf)
    for entry in table.values():
        if now is not None and now - entry.last_heard > ttl:
            continue
        for s in strategies:
            score = utility(own_backlog, own_position, entry, s, dest, dest_node)
            if score <= 0.0:
                continue
            key = (score, entry.residual_energy, -entry.node)
            if key > best_key:
                best_key = key
                best = NextHop(entry.node, s, score,
                               link_efficiency(entry, s))
    return best


def greedy_next_hop(own_position: GeoPosition,
                    table: dict[NodeId, NeighborEntry],
                    dest: GeoPosition,
                    now: float | None = None,
                    ttl: float = math.inf) -> NodeId | None:
    """Baseline: the neighbor closest to the destination, if it makes
    progress at all. Ties break toward the lower node id."""
    d_is = distance(own_position, dest)
    best: NodeId | None = None
    best_key = (d_is, math.inf)
    for entry in table.values():
        if now is not None and now - entry.last_heard > ttl:
            continue
        d_js = distance(entry.position, dest)
        key = (d_js, entry.node)
        if d_js < d_is and key < best_key:
            best_key = key
            best = entry.node
    return best


@dataclass
class QueueItem:
    packet: HelperPacket
    enqueued_at: float
    reroutes: int = 0


class RoutingQueues:
    """Two FIFO transmit queues; priority traffic is served first."""

    def __init__(self) -> None:
        self.priority: deque[QueueItem] = deque()
        self.best_effort: deque[QueueItem] = deque()

    def __len__(self) -> int:
        return len(self.priority) + len(self.best_effort)

    def push(self, p: HelperPacket, now: float) -> None:
        p.enqueue_time = now
        item = QueueItem(p, now)
        if p.app_type in PRIORITY_APP_TYPES:
            self.priority.append(item)
        else:
            self.best_effort.append(item)

    def head(self) -> QueueItem | None:
        if self.priority:
            return self.priority[0]
        if self.best_effort:
            return self.best_effort[0]
        return None

    def pop(self, item: QueueItem) -> None:
        if self.priority and self.priority[0] is item:
            self.priority.popleft()
        elif self.best_effort and self.best_effort[0] is item:
            self.best_effort.popleft()
        else:
            raise ValueError("pop of non-head queue item")


class FloodCache:
    """Remembers (origin, seq) keys so each flood is rebroadcast at most
    once per node; entries expire after a TTL."""

    def __init__(self, ttl: float = FLOOD_CACHE_TTL) -> None:
        self.ttl = ttl
        self._seen: dict[tuple[NodeId, int], float] = {}

    def seen(self, origin: NodeId, seq: int, now: float) -> bool:
        exp = self._seen.get((origin, seq))
        return exp is not None and exp > now

    def add(self, origin: NodeId, seq: int, now: float) -> None:
        self._seen[(origin, seq)] = now + self.ttl
        if len(self._seen) > 4096:
            self._seen = {k: e for k, e in self._seen.items() if e > now}


@dataclass
class ForwardDecision:
    """Trace record of one next-hop choice, for the gate audits."""

    t: float
    node: NodeId
    mode: str
    dest: NodeId
    chosen: NodeId
    q_i: int
    q_j: int
    d_is: float
    d_js: float
    score: float
