"""Simulated LoRa-class physical layer.

Reachability is a unit disk of radius ``range_m`` (links are symmetric by
construction). Corruption has two causes: independent per-bit errors at the
strategy's error rate, and binary time-overlap collisions between any two
transmissions heard by the same receiver (no capture effect). Receivers are
half-duplex: a node mid-transmission hears nothing.

Only transmissions cost energy; reception and idle listening are free, which
keeps the virtual-energy experiments faithful to how the testbed drained its
25 J budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .core import (
    ConfigError,
    GeoPosition,
    HelperPacket,
    NodeId,
    TransmissionStrategy,
    distance,
    packet_airtime,
)

#: Default single-entry strategy set (one LoRa-like setting).
DEFAULT_STRATEGY = TransmissionStrategy(bitrate=5000.0, tx_power=0.1)

#: Strategies whose measured goodput ratio falls below this are excluded
#: from next-hop scoring (reliability floor on the link).
GOODPUT_FLOOR = 0.25


@dataclass
class LinkModel:
    """Pairwise reachability and per-strategy channel quality."""

    range_m: float
    strategies: tuple[TransmissionStrategy, ...] = (DEFAULT_STRATEGY,)
    ber: dict[TransmissionStrategy, float] = field(default_factory=dict)
    capacity: float = math.inf  # C_ij, uniform across links

    def __post_init__(self) -> None:
        if self.range_m <= 0:
            raise ConfigError("link range must be positive")
        if not self.strategies:
            raise ConfigError("strategy set must not be empty")
        for s in self.strategies:
            if s.bitrate <= 0 or s.tx_power <= 0:
                raise ConfigError(f"invalid strategy {s}")
            self.ber.setdefault(s, 0.0)

    @property
    def default_strategy(self) -> TransmissionStrategy:
        return self.strategies[0]

    def usable_strategies(self) -> tuple[TransmissionStrategy, ...]:
        """Strategies not excluded by the link capacity constraint."""
        return tuple(s for s in self.strategies if s.bitrate <= self.capacity)

    def bit_error_rate(self, s: TransmissionStrategy) -> float:
        return self.ber.get(s, 0.0)

    def cad_latency(self, s: TransmissionStrategy | None = None) -> float:
        """Carrier-sense detection latency: two symbol durations."""
        s = s or self.default_strategy
        return 2 * 8 / s.bitrate


def tx_cost(p: HelperPacket, s: TransmissionStrategy) -> float:
    """Joules charged to the sender for one transmission (control or data)."""
    return s.tx_power * packet_airtime(p, s)


@dataclass
class Transmission:
    src: NodeId
    packet: HelperPacket
    strategy: TransmissionStrategy
    start: float
    end: float


@dataclass
class Reception:
    """What one receiver got out of one transmission."""

    receiver: NodeId
    packet: HelperPacket
    strategy: TransmissionStrategy
    collided: bool
    header_ok: bool
    probe_bits_intact: int
    corrupted: bool  # any bit lost anywhere (header, probe or payload)


class Radio:
    """Shared channel; owned exclusively by the event scheduler."""

    def __init__(self, link: LinkModel,
                 positions: dict[NodeId, GeoPosition]) -> None:
        self.link = link
        self.positions = dict(positions)
        self.dead: set[NodeId] = set()
        self._active: list[Transmission] = []
        self._recent: list[Transmission] = []
        max_air = max(packet_airtime(_probe_sizer(), s)
                      for s in link.strategies)
        self._prune_window = 2 * max_air + 1.0

    def in_range(self, a: NodeId, b: NodeId) -> bool:
        return distance(self.positions[a], self.positions[b]) <= self.link.range_m

    def neighbors_of(self, node: NodeId) -> list[NodeId]:
        return [n for n in self.positions
                if n != node and self.in_range(node, n)]

    def mark_dead(self, node: NodeId) -> None:
        self.dead.add(node)

    def begin(self, src: NodeId, p: HelperPacket, s: TransmissionStrategy,
              t: float) -> Transmission:
        tx = Transmission(src, p, s, t, t + packet_airtime(p, s))
        self._active.append(tx)
        return tx

    def complete(self, tx: Transmission, rng_for) -> list[Reception]:
        """Resolve receptions when a transmission's airtime elapses.

        ``rng_for(node)`` supplies the per-receiver channel-error stream.
        Must be called in event order (at ``tx.end``).
        """
        self._active.remove(tx)
        self._recent.append(tx)
        self._prune(tx.end)

        out = []
        for node in self.positions:
            if node == tx.src or node in self.dead:
                continue
            if not self.in_range(tx.src, node):
                continue
            if self._was_transmitting(node, tx.start, tx.end):
                continue  # half-duplex: its own TX blanked the receiver
            collided = self._overlapped(tx, node)
            if collided:
                out.append(Reception(node, tx.packet, tx.strategy,
                                     collided=True, header_ok=False,
                                     probe_bits_intact=0, corrupted=True))
            else:
                out.append(self._bit_errors(node, tx, rng_for))
        return out

    def cad_busy(self, listener: NodeId, t: float,
                 s: TransmissionStrategy | None = None) -> bool:
        """True iff an in-range transmission is detectable at time t."""
        if listener in self.dead:
            return False
        latency = self.link.cad_latency(s)
        for tx in self._active:
            if tx.src == listener:
                continue
            if tx.start <= t - latency and tx.end > t:
                if self.in_range(tx.src, listener):
                    return True
        return False

    def channel_clear_at(self, listener: NodeId, t: float) -> float:
        """Earliest time >= t when no in-range transmission is on the air."""
        clear = t
        for tx in self._active:
            if tx.src != listener and tx.end > clear:
                if self.in_range(tx.src, listener):
                    clear = tx.end
        return clear

    def busy_since(self, listener: NodeId, t: float) -> float | None:
        """Start time of the earliest in-range transmission active at t."""
        starts = [tx.start for tx in self._active
                  if tx.src != listener and tx.start <= t < tx.end
                  and self.in_range(tx.src, listener)]
        return min(starts) if starts else None

    def _was_transmitting(self, node: NodeId, start: float, end: float) -> bool:
        for tx in self._active + self._recent:
            if tx.src == node and tx.start < end and start < tx.end:
                return True
        return False

    def _overlapped(self, tx: Transmission, receiver: NodeId) -> bool:
        for other in self._active + self._recent:
            if other is tx or other.src == tx.src:
                continue
            if not (other.start < tx.end and tx.start < other.end):
                continue
            if self.in_range(other.src, receiver):
                return True
        return False

    def _bit_errors(self, node: NodeId, tx: Transmission, rng_for) -> Reception:
        from .core import PROBE_BITS

        e = self.link.bit_error_rate(tx.strategy)
        if e <= 0.0:
            return Reception(node, tx.packet, tx.strategy, collided=False,
                             header_ok=True, probe_bits_intact=PROBE_BITS,
                             corrupted=False)
        rng = rng_for(node)
        header_bits = (tx.packet.air_bytes() - len(tx.packet.payload)) * 8 - PROBE_BITS
        header_ok = rng.random() < (1.0 - e) ** header_bits
        probe_intact = int(rng.binomial(PROBE_BITS, 1.0 - e))
        payload_bits = len(tx.packet.payload) * 8
        payload_ok = payload_bits == 0 or rng.random() < (1.0 - e) ** payload_bits
        corrupted = not (header_ok and payload_ok and probe_intact == PROBE_BITS)
        return Reception(node, tx.packet, tx.strategy, collided=False,
                         header_ok=header_ok, probe_bits_intact=probe_intact,
                         corrupted=corrupted)

    def _prune(self, now: float) -> None:
        cutoff = now - self._prune_window
        self._recent = [tx for tx in self._recent if tx.end >= cutoff]


def _probe_sizer() -> HelperPacket:
    from .core import PacketKind

    return HelperPacket(kind=PacketKind.DATA, payload=bytes(255))
