"""Core domain types shared by every layer: nodes, packets, geometry, OAI.

Everything here is a plain value type safe to copy between threads. The
binary wire layout of a packet is fixed (little-endian, see
``HelperPacket.serialize``) so golden-file tests can pin exact bytes.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum

NodeId = int

#: Address wildcard for broadcast packets (fits the u16 wire field).
BROADCAST: NodeId = 0xFFFF

#: Remaining-rebroadcast budget cap for floods and hop budget for unicasts.
HTL_MAX = 16

#: Known probe bit sequence carried by control packets for link probing.
PROBE_BYTES = bytes((0xA5, 0x5A, 0xC3, 0x3C, 0x96, 0x69, 0xF0, 0x0F,
                     0xAA, 0x55, 0xCC, 0x33, 0x99, 0x66, 0xFF, 0x00))
PROBE_BITS = len(PROBE_BYTES) * 8

#: Nominal over-the-air frame overhead in bytes. Airtime and energy are
#: charged against this abstraction of the PHY framing, not against the
#: host serialization below (which carries extra bookkeeping fields).
AIRTIME_HEADER_BYTES = 32


class ConfigError(ValueError):
    """Raised for invalid radio/scenario configuration values."""


class PacketKind(IntEnum):
    RTS = 1
    CTS = 2
    ACK = 3
    BEACON = 4
    DATA = 5


#: Kinds whose OAI block is harvested by receivers (ACK is terminal).
CONTROL_KINDS = frozenset((PacketKind.RTS, PacketKind.CTS, PacketKind.BEACON))


class AppType(IntEnum):
    GENERIC = 0
    LOCAL = 1
    NEIGHBORHOOD = 2
    HELP = 3
    RESOURCE = 4
    ND = 5
    ALERT = 6
    RESOURCE_UPDATE = 7
    HELPER_UPDATE = 8


#: Application types that go to the priority transmit queue.
PRIORITY_APP_TYPES = frozenset((AppType.HELP, AppType.ALERT, AppType.ND))


@dataclass(frozen=True)
class GeoPosition:
    """Planar local frame in meters (x east, y north); lat/lon display-only."""

    x: float
    y: float
    lat: float | None = field(default=None, compare=False)
    lon: float | None = field(default=None, compare=False)


def distance(a: GeoPosition, b: GeoPosition) -> float:
    """Euclidean distance in meters between two planar positions."""
    return math.hypot(a.x - b.x, a.y - b.y)


@dataclass
class EnergyState:
    """Battery model: residual is derived from a single spend accumulator.

    Keeping one accumulator (instead of decrementing residual) makes the
    conservation audit exact in floating point: summing the logged
    per-transmission costs in order reproduces ``spent`` bit-for-bit.
    """

    initial: float
    spent: float = 0.0

    @property
    def residual(self) -> float:
        return self.initial - self.spent

    @property
    def depleted(self) -> bool:
        return self.spent >= self.initial

    def charge(self, cost: float) -> None:
        self.spent += cost

    def drain(self) -> float:
        """Zero the battery; returns the energy that was left."""
        left = self.initial - self.spent
        self.spent = self.initial
        return left


@dataclass(frozen=True)
class Oai:
    """Optimization Assisting Information piggybacked on control packets."""

    queue_backlog: int = 0
    residual_energy: float = 0.0
    initial_energy: float = 0.0
    position: GeoPosition = GeoPosition(0.0, 0.0)


EMPTY_OAI = Oai()


@dataclass(frozen=True)
class TransmissionStrategy:
    """One (bitrate, tx power) choice from the configured strategy set."""

    bitrate: float
    tx_power: float


@dataclass
class NeighborEntry:
    """One neighbor-table row built from harvested OAI and probe goodput."""

    node: NodeId
    position: GeoPosition
    queue_backlog: int = 0
    residual_energy: float = 0.0
    initial_energy: float = 1.0
    goodput: float = 0.0
    goodput_bitrate: float = 0.0  # bitrate the goodput sample was taken at
    dist_to_dest: float = math.inf  # refreshed against the known sink
    last_heard: float = 0.0

    def goodput_ratio(self) -> float:
        """Fraction of nominal bitrate observed intact, clamped to [0, 1]."""
        if self.goodput_bitrate <= 0.0:
            return 0.0
        return min(1.0, self.goodput / self.goodput_bitrate)


# Wire layout, little-endian, fixed order:
#   header : kind u8, app_type u8, src u16, origin u16, final_dst u16,
#            next_hop u16, htl u8, seq u16                      (13 B)
#   oai    : queue_backlog u32, residual f32, initial f32,
#            reserved u32, pos.x f32, pos.y f32                 (24 B)
#   probe  : 16 B
#   payload: length u16 + bytes
_HEADER = struct.Struct("<BBHHHHBH")
_OAI = struct.Struct("<IffIff")
_PLEN = struct.Struct("<H")
WIRE_FIXED_BYTES = _HEADER.size + _OAI.size + len(PROBE_BYTES) + _PLEN.size


@dataclass
class HelperPacket:
    """The over-the-air unit: header + OAI block + probe + payload."""

    kind: PacketKind
    app_type: AppType = AppType.GENERIC
    src: NodeId = 0
    origin: NodeId = 0
    final_dst: NodeId = BROADCAST
    next_hop: NodeId = BROADCAST
    htl: int = 0
    seq: int = 0
    oai: Oai = EMPTY_OAI
    probe: bytes = PROBE_BYTES
    payload: bytes = b""
    origin_time: float = field(default=0.0, compare=False)
    enqueue_time: float = field(default=0.0, compare=False)

    def __post_init__(self) -> None:
        if self.kind != PacketKind.DATA and self.payload:
            raise ValueError("control packets carry an empty payload")
        if not 0 <= self.htl <= HTL_MAX:
            raise ValueError(f"htl {self.htl} outside [0, {HTL_MAX}]")
        if len(self.probe) != len(PROBE_BYTES):
            raise ValueError("probe field must be 16 bytes")

    @property
    def is_broadcast(self) -> bool:
        return self.final_dst == BROADCAST

    def serialize(self) -> bytes:
        head = _HEADER.pack(self.kind, self.app_type, self.src, self.origin,
                            self.final_dst, self.next_hop, self.htl,
                            self.seq & 0xFFFF)
        oai = _OAI.pack(self.oai.queue_backlog, self.oai.residual_energy,
                        self.oai.initial_energy, 0,
                        self.oai.position.x, self.oai.position.y)
        return b"".join((head, oai, self.probe,
                         _PLEN.pack(len(self.payload)), self.payload))

    @classmethod
    def deserialize(cls, raw: bytes) -> HelperPacket:
        if len(raw) < WIRE_FIXED_BYTES:
            raise ValueError(f"packet truncated: {len(raw)} bytes")
        kind, app, src, origin, fdst, nhop, htl, seq = _HEADER.unpack_from(raw, 0)
        off = _HEADER.size
        backlog, res, ini, _reserved, px, py = _OAI.unpack_from(raw, off)
        off += _OAI.size
        probe = raw[off:off + len(PROBE_BYTES)]
        off += len(PROBE_BYTES)
        (plen,) = _PLEN.unpack_from(raw, off)
        off += _PLEN.size
        payload = raw[off:off + plen]
        if len(payload) != plen:
            raise ValueError("payload truncated")
        return cls(kind=PacketKind(kind), app_type=AppType(app), src=src,
                   origin=origin, final_dst=fdst, next_hop=nhop, htl=htl,
                   seq=seq,
                   oai=Oai(backlog, res, ini, GeoPosition(px, py)),
                   probe=probe, payload=payload)

    def air_bytes(self) -> int:
        """Nominal over-the-air size used for airtime/energy accounting."""
        return AIRTIME_HEADER_BYTES + len(self.payload)


def packet_airtime(p: HelperPacket, s: TransmissionStrategy) -> float:
    """Seconds a packet occupies the channel at the given bitrate."""
    if s.bitrate <= 0:
        raise ConfigError(f"bitrate must be positive, got {s.bitrate}")
    return p.air_bytes() * 8 / s.bitrate
