"""CSMA/CA-style medium access with OAI piggybacking.

Unicast data runs the RTS -> CTS -> DATA -> ACK handshake; broadcast data
and beacons go out after carrier sense (plus a utility-weighted random
backoff for data broadcasts) with no handshake. Every transmitted RTS, CTS
and BEACON carries the sender's fresh OAI and the known probe sequence;
receivers harvest both into their neighbor tables, measuring link goodput
from how much of the probe survived.

The FSM is event-driven and returns actions instead of touching the radio
or scheduler itself, so the simulator and the wall-clock emulation drive
the identical code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable

from .core import (
    BROADCAST,
    CONTROL_KINDS,
    HelperPacket,
    NeighborEntry,
    NodeId,
    Oai,
    PROBE_BITS,
    PacketKind,
    TransmissionStrategy,
    distance,
    packet_airtime,
)
from .radio import Reception
from .routing import NextHop, QueueItem

if TYPE_CHECKING:
    from .node import NodeState


class MacPhase(Enum):
    IDLE = "IDLE"
    SENSE = "SENSE"
    BACKOFF = "BACKOFF"
    SEND_RTS = "SEND_RTS"
    WAIT_CTS = "WAIT_CTS"
    SEND_DATA = "SEND_DATA"
    WAIT_ACK = "WAIT_ACK"
    RESPOND = "RESPOND"
    DEAD = "DEAD"


@dataclass
class MacState:
    state: MacPhase = MacPhase.IDLE
    retries: int = 0
    nav_until: float = 0.0
    last_control_tx: float = 0.0
    busy_until: float = 0.0


@dataclass
class MacConfig:
    max_retries: int = 3
    w_min: float = 0.05
    w_max: float = 0.8
    beacon_period: float = 5.0
    goodput_alpha: float = 0.3
    max_payload: int = 200
    broadcast_u_norm: float = 0.5
    sense_retry: float = 0.02
    unicast_dedup_ttl: float = 60.0


# Actions handed back to whoever drives the FSM.
@dataclass
class Transmit:
    packet: HelperPacket
    strategy: TransmissionStrategy


@dataclass
class SetTimer:
    delay: float
    tag: str
    token: int


@dataclass
class DeliverUp:
    packet: HelperPacket


@dataclass
class TxServed:
    item: QueueItem
    next_hop: NodeId


@dataclass
class TxFailed:
    item: QueueItem
    next_hop: NodeId


Action = Transmit | SetTimer | DeliverUp | TxServed | TxFailed


def backoff_duration(u_norm: float, rng, w_min: float = 0.05,
                     w_max: float = 0.8) -> float:
    """Uniform draw whose window shrinks as the normalized utility grows:
    [0, w_min] at u=1, [0, w_max] at u=0."""
    u = min(1.0, max(0.0, u_norm))
    return float(rng.uniform(0.0, w_min + (1.0 - u) * (w_max - w_min)))


def maybe_beacon(node: "NodeState", now: float,
                 period: float = 5.0) -> HelperPacket | None:
    """A BEACON is due once the node has stayed control-silent a full
    period; transmitting any RTS/CTS/BEACON resets the silence clock."""
    if node.mac.state == MacPhase.DEAD:
        return None
    if now - node.mac.last_control_tx < period:
        return None
    return HelperPacket(kind=PacketKind.BEACON, src=node.id, origin=node.id,
                        oai=node.fresh_oai())


def harvest_oai(node: "NodeState", rec: Reception, now: float,
                alpha: float = 0.3) -> NeighborEntry | None:
    """Fold an overheard control packet into the neighbor table.

    The goodput sample is the intact probe fraction scaled by the bitrate;
    the first sample seeds the estimate, later ones blend in by EWMA. A
    corrupted header makes the packet unusable and it is ignored entirely.
    """
    p = rec.packet
    if p.kind not in CONTROL_KINDS or not rec.header_ok:
        return None
    if p.src == node.id:
        return None
    sample = (rec.probe_bits_intact / PROBE_BITS) * rec.strategy.bitrate
    entry = node.table.get(p.src)
    if entry is None:
        entry = NeighborEntry(node=p.src, position=p.oai.position)
        node.table[p.src] = entry
        entry.goodput = sample
    else:
        entry.goodput = alpha * sample + (1.0 - alpha) * entry.goodput
    entry.goodput_bitrate = rec.strategy.bitrate
    entry.position = p.oai.position
    entry.queue_backlog = p.oai.queue_backlog
    entry.residual_energy = p.oai.residual_energy
    entry.initial_energy = p.oai.initial_energy
    entry.last_heard = now
    if node.erc_position is not None:
        entry.dist_to_dest = distance(entry.position, node.erc_position)
    return entry


@dataclass
class Slotter:
    """Global id-keyed broadcast slots (scenario option).

    Each node may start a broadcast only inside its own slot of a shared
    time grid, which makes broadcast/broadcast collisions impossible by
    construction. Needs GPS-grade time, which the system model provides.
    """

    rank: int
    n_slots: int
    slot_len: float

    def next_start(self, now: float) -> float:
        m = math.floor(now / self.slot_len + 1e-9)
        if m * self.slot_len < now - 1e-9:
            m += 1
        shift = (self.rank - m) % self.n_slots
        return (m + shift) * self.slot_len


@dataclass
class _Work:
    """The head-of-queue packet currently being serviced."""

    item: QueueItem
    next_hop: NodeId
    strategy: TransmissionStrategy
    u_norm: float
    broadcast: bool


class MacFsm:
    """One per node, driven solely by scheduler events."""

    def __init__(self, node: "NodeState", config: MacConfig,
                 default_strategy: TransmissionStrategy,
                 rng, cad_busy: Callable[[NodeId, float], bool],
                 select_next_hop: Callable[["NodeState", HelperPacket, float],
                                           NextHop | None],
                 slotter: Slotter | None = None,
                 busy_since: Callable[[NodeId, float], float | None]
                 = lambda n, t: None) -> None:
        self.node = node
        self.cfg = config
        self.default_strategy = default_strategy
        self.rng = rng
        self.cad_busy = cad_busy
        self.busy_since = busy_since
        self.select_next_hop = select_next_hop
        self.slotter = slotter
        self.work: _Work | None = None
        self.respond_peer: NodeId | None = None
        self._timers: dict[str, int] = {}
        self._recent_unicast: dict[tuple[NodeId, int], float] = {}
        self._backoff_left: float | None = None
        self._max_data_airtime = packet_airtime(
            HelperPacket(kind=PacketKind.DATA, payload=bytes(config.max_payload)),
            default_strategy)

    # -- lifecycle ---------------------------------------------------------

    def startup(self, now: float) -> list[Action]:
        """Arm the jittered beacon clock."""
        jitter = float(self.rng.uniform(0.1, self.cfg.beacon_period))
        self.node.mac.last_control_tx = now + jitter - self.cfg.beacon_period
        return [self._set_timer(jitter, "beacon")]

    def kill(self) -> None:
        self.node.mac.state = MacPhase.DEAD
        self.work = None

    # -- event entry points ------------------------------------------------

    def poke(self, now: float) -> list[Action]:
        """Try to start servicing the transmit queue."""
        return self._try_service(now)

    def on_timer(self, tag: str, token: int, now: float) -> list[Action]:
        if self.node.mac.state == MacPhase.DEAD:
            return []
        if self._timers.get(tag) != token:
            return []  # superseded
        if tag == "beacon":
            return self._beacon_due(now)
        if tag == "sense":
            return self._sense(now)
        if tag == "backoff":
            return self._backoff_done(now)
        if tag == "cts_timeout":
            return self._handshake_timeout(now)
        if tag == "ack_timeout":
            return self._handshake_timeout(now)
        if tag == "respond_timeout":
            if self.node.mac.state != MacPhase.RESPOND:
                return []
            self.respond_peer = None
            self.node.mac.state = MacPhase.IDLE
            return self._try_service(now)
        if tag == "hold" or tag == "tx_done":
            return self._try_service(now)
        raise ValueError(f"unknown timer tag {tag}")

    def on_rx(self, rec: Reception, now: float) -> list[Action]:
        mac = self.node.mac
        if mac.state == MacPhase.DEAD:
            return []
        if not rec.header_ok:
            return []  # undecodable, ignored entirely
        p = rec.packet
        out: list[Action] = []
        harvest_oai(self.node, rec, now, self.cfg.goodput_alpha)

        if p.kind == PacketKind.RTS:
            if p.next_hop == self.node.id:
                out += self._answer_rts(p, now)
            else:
                self._defer_nav(now, for_rts=True)
        elif p.kind == PacketKind.CTS:
            if p.next_hop == self.node.id:
                out += self._got_cts(p, now)
            else:
                self._defer_nav(now, for_rts=False)
        elif p.kind == PacketKind.ACK:
            if p.next_hop == self.node.id:
                out += self._got_ack(p, now)
        elif p.kind == PacketKind.DATA:
            out += self._got_data(p, rec, now)
        # BEACON: harvest above is all there is to it.
        return out

    # -- transmit-queue servicing -------------------------------------------

    def _try_service(self, now: float) -> list[Action]:
        mac = self.node.mac
        if mac.state != MacPhase.IDLE:
            return []
        if self.work is not None:
            # IDLE with lingering work means the exchange was abandoned;
            # the packet is still queued, so reselect from scratch.
            self.work = None
        if now < mac.busy_until:
            return [self._set_timer(mac.busy_until - now, "tx_done")]
        item = self.node.queues.head()
        if item is None:
            return []
        p = item.packet
        if p.is_broadcast:
            self.work = _Work(item, BROADCAST, self.default_strategy,
                              self.cfg.broadcast_u_norm, broadcast=True)
        else:
            hop = self.select_next_hop(self.node, p, now)
            if hop is None:
                # No eligible neighbor: hold and retry next beacon period.
                return [self._set_timer(self.cfg.beacon_period, "hold")]
            u = hop.score / hop.efficiency if hop.efficiency > 0 else 0.0
            self.work = _Work(item, hop.node, hop.strategy, u, broadcast=False)
        mac.retries = 0
        self._backoff_left = None
        return self._enter_sense(now)

    def _enter_sense(self, now: float) -> list[Action]:
        self.node.mac.state = MacPhase.SENSE
        if self.work and self.work.broadcast and self.slotter is not None:
            start = self.slotter.next_start(now)
            if start > now:
                return [self._set_timer(start - now, "sense")]
        return self._sense(now)

    def _sense(self, now: float) -> list[Action]:
        mac = self.node.mac
        if mac.state not in (MacPhase.SENSE, MacPhase.BACKOFF):
            return []
        mac.state = MacPhase.SENSE
        if now < mac.busy_until:
            return [self._set_timer(mac.busy_until - now, "sense")]
        if mac.nav_until > now:
            return [self._set_timer(mac.nav_until - now, "sense")]
        if self.cad_busy(self.node.id, now):
            delay = self.cfg.sense_retry + float(self.rng.uniform(0, self.cfg.w_min))
            if self.work and self.work.broadcast and self.slotter is not None:
                return [self._set_timer(self.slotter.next_start(now + delay) - now,
                                        "sense")]
            return [self._set_timer(delay, "sense")]
        mac.state = MacPhase.BACKOFF
        if self._backoff_left is None:
            self._backoff_left = backoff_duration(
                self.work.u_norm, self.rng, self.cfg.w_min,
                self.cfg.w_max) * (2 ** mac.retries)
        return [self._set_timer(self._backoff_left, "backoff")]

    def _backoff_done(self, now: float) -> list[Action]:
        mac = self.node.mac
        if mac.state != MacPhase.BACKOFF or self.work is None:
            return []
        if now < mac.busy_until:
            mac.state = MacPhase.SENSE
            return [self._set_timer(mac.busy_until - now, "sense")]
        if mac.nav_until > now or self.cad_busy(self.node.id, now):
            # Freeze the countdown: only the idle time before the channel
            # went busy counts as consumed (classic CSMA/CA behavior).
            since = self.busy_since(self.node.id, now)
            if since is not None:
                self._backoff_left = max(now - since, 0.001)
            else:
                self._backoff_left = 0.001
            mac.state = MacPhase.SENSE
            return self._sense(now)
        self._backoff_left = None
        if self.work.broadcast:
            return self._transmit_broadcast(now)
        return self._transmit_rts(now)

    def _transmit_broadcast(self, now: float) -> list[Action]:
        work = self.work
        assert work is not None
        p = work.item.packet
        p.src = self.node.id
        p.next_hop = BROADCAST
        air = packet_airtime(p, work.strategy)
        self.node.queues.pop(work.item)
        self.work = None
        self.node.mac.state = MacPhase.IDLE
        self.node.mac.busy_until = now + air
        return [Transmit(p, work.strategy), TxServed(work.item, BROADCAST),
                self._set_timer(air, "tx_done")]

    def _transmit_rts(self, now: float) -> list[Action]:
        work = self.work
        assert work is not None
        mac = self.node.mac
        mac.state = MacPhase.SEND_RTS
        data = work.item.packet
        rts = HelperPacket(kind=PacketKind.RTS, src=self.node.id,
                           origin=data.origin, seq=data.seq,
                           final_dst=data.final_dst, next_hop=work.next_hop,
                           oai=self.node.fresh_oai())
        air = packet_airtime(rts, work.strategy)
        mac.last_control_tx = now
        mac.busy_until = now + air
        mac.state = MacPhase.WAIT_CTS
        timeout = air + self._handshake_timeout_span(data, work.strategy)
        return [Transmit(rts, work.strategy),
                self._set_timer(timeout, "cts_timeout")]

    def _handshake_timeout_span(self, data: HelperPacket,
                                s: TransmissionStrategy) -> float:
        return 2 * packet_airtime(data, s) + self.cfg.w_min

    # -- handshake: initiator side ------------------------------------------

    def _got_cts(self, p: HelperPacket, now: float) -> list[Action]:
        mac = self.node.mac
        work = self.work
        if mac.state != MacPhase.WAIT_CTS or work is None:
            return []
        if p.src != work.next_hop:
            return []
        self._cancel_timer("cts_timeout")
        mac.state = MacPhase.SEND_DATA
        data = work.item.packet
        data.src = self.node.id
        data.next_hop = work.next_hop
        air = packet_airtime(data, work.strategy)
        mac.busy_until = now + air
        mac.state = MacPhase.WAIT_ACK
        timeout = air + self._handshake_timeout_span(data, work.strategy)
        return [Transmit(data, work.strategy),
                self._set_timer(timeout, "ack_timeout")]

    def _got_ack(self, p: HelperPacket, now: float) -> list[Action]:
        mac = self.node.mac
        work = self.work
        if mac.state != MacPhase.WAIT_ACK or work is None:
            return []
        data = work.item.packet
        if p.src != work.next_hop or (p.origin, p.seq & 0xFFFF) != \
                (data.origin, data.seq & 0xFFFF):
            return []
        self._cancel_timer("ack_timeout")
        self.node.queues.pop(work.item)
        served = TxServed(work.item, work.next_hop)
        self.work = None
        mac.retries = 0
        mac.state = MacPhase.IDLE
        return [served] + self._try_service(now)

    def _handshake_timeout(self, now: float) -> list[Action]:
        mac = self.node.mac
        work = self.work
        if mac.state not in (MacPhase.WAIT_CTS, MacPhase.WAIT_ACK) or work is None:
            return []
        mac.retries += 1
        if mac.retries > self.cfg.max_retries:
            failed = TxFailed(work.item, work.next_hop)
            self.work = None
            mac.retries = 0
            mac.state = MacPhase.IDLE
            return [failed]
        mac.state = MacPhase.SENSE
        self._backoff_left = None  # redraw from the doubled window
        return self._sense(now)

    # -- handshake: responder side ------------------------------------------

    def _answer_rts(self, p: HelperPacket, now: float) -> list[Action]:
        mac = self.node.mac
        if mac.state in (MacPhase.IDLE, MacPhase.SENSE, MacPhase.BACKOFF):
            self.work = None  # suspend own attempt; head packet is re-picked
        elif mac.state == MacPhase.RESPOND and self.respond_peer == p.src:
            pass  # sender retried; answer again
        else:
            return []
        if now < mac.busy_until:
            return []  # still radiating our own frame; sender will retry
        self.respond_peer = p.src
        mac.state = MacPhase.RESPOND
        cts = HelperPacket(kind=PacketKind.CTS, src=self.node.id,
                           origin=p.origin, seq=p.seq, final_dst=p.final_dst,
                           next_hop=p.src, oai=self.node.fresh_oai())
        air = packet_airtime(cts, self.default_strategy)
        mac.last_control_tx = now
        mac.busy_until = now + air
        timeout = air + 2 * self._max_data_airtime + self.cfg.w_min
        return [Transmit(cts, self.default_strategy),
                self._set_timer(timeout, "respond_timeout")]

    def _got_data(self, p: HelperPacket, rec: Reception, now: float) -> list[Action]:
        mac = self.node.mac
        if p.next_hop == BROADCAST:
            if rec.corrupted:
                return []
            return [DeliverUp(p)]
        if p.next_hop != self.node.id or rec.corrupted:
            return []  # not ours, or unusable: sender retries
        out: list[Action] = []
        ack = HelperPacket(kind=PacketKind.ACK, src=self.node.id,
                           origin=p.origin, seq=p.seq, final_dst=p.final_dst,
                           next_hop=p.src)
        air = packet_airtime(ack, self.default_strategy)
        if now >= mac.busy_until:
            mac.busy_until = now + air
            out.append(Transmit(ack, self.default_strategy))
        key = (p.origin, p.seq & 0xFFFF)
        self._prune_dedup(now)
        if key not in self._recent_unicast:
            self._recent_unicast[key] = now + self.cfg.unicast_dedup_ttl
            out.append(DeliverUp(p))
        if mac.state == MacPhase.RESPOND and self.respond_peer == p.src:
            self._cancel_timer("respond_timeout")
            self.respond_peer = None
            mac.state = MacPhase.IDLE
            out += self._try_service(now)
        return out

    # -- beacons -------------------------------------------------------------

    def _beacon_due(self, now: float) -> list[Action]:
        mac = self.node.mac
        beacon = maybe_beacon(self.node, now, self.cfg.beacon_period)
        if beacon is None:
            due = mac.last_control_tx + self.cfg.beacon_period
            return [self._set_timer(max(due - now, 0.001), "beacon")]
        busy = (mac.state != MacPhase.IDLE or now < mac.busy_until
                or mac.nav_until > now or self.cad_busy(self.node.id, now))
        if self.slotter is not None:
            start = self.slotter.next_start(now)
            if start > now or busy:
                target = self.slotter.next_start(max(start, now + 0.001)) \
                    if busy else start
                return [self._set_timer(target - now, "beacon")]
        elif busy:
            delay = self.cfg.sense_retry + float(self.rng.uniform(0, self.cfg.w_min))
            return [self._set_timer(delay, "beacon")]
        air = packet_airtime(beacon, self.default_strategy)
        mac.last_control_tx = now
        mac.busy_until = max(mac.busy_until, now + air)
        return [Transmit(beacon, self.default_strategy),
                self._set_timer(self.cfg.beacon_period, "beacon")]

    # -- helpers --------------------------------------------------------------

    def _defer_nav(self, now: float, for_rts: bool) -> None:
        """Virtual carrier sense: block exactly the rest of the overheard
        exchange (CTS + DATA + ACK after an RTS; DATA + ACK after a CTS)."""
        ctl_air = packet_airtime(
            HelperPacket(kind=PacketKind.ACK), self.default_strategy)
        margin = 2 * 8 / self.default_strategy.bitrate  # one CAD latency
        span = self._max_data_airtime + ctl_air + 2 * margin
        if for_rts:
            span += ctl_air + margin
        self.node.mac.nav_until = max(self.node.mac.nav_until, now + span)

    def _set_timer(self, delay: float, tag: str) -> SetTimer:
        token = self._timers.get(tag, 0) + 1
        self._timers[tag] = token
        return SetTimer(max(delay, 0.0), tag, token)

    def _cancel_timer(self, tag: str) -> None:
        self._timers[tag] = self._timers.get(tag, 0) + 1

    def _prune_dedup(self, now: float) -> None:
        if len(self._recent_unicast) > 2048:
            self._recent_unicast = {k: e for k, e in
                                    self._recent_unicast.items() if e > now}
