"""Run metrics: the event trace every experiment output is derived from.

The log records transmissions (with exact energy costs), forwarding
decisions, deliveries, drops and deaths. Residual energy at any instant is
reconstructed from the transmission records, which is what makes the
conservation audit exact: summing the logged costs in order reproduces the
node's spend accumulator bit-for-bit.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .core import AppType, HelperPacket, NodeId, PacketKind
from .routing import ForwardDecision


@dataclass
class TxRecord:
    t: float
    node: NodeId
    kind: int
    app_type: int
    origin: NodeId
    seq: int
    next_hop: NodeId
    final_dst: NodeId
    cost: float
    payload_bytes: int = 0
    htl: int = 0
    aborted: bool = False  # battery died before this frame hit the air


@dataclass
class Delivery:
    t: float
    node: NodeId
    origin: NodeId
    seq: int
    app_type: int
    latency: float
    payload_bytes: int


@dataclass
class Drop:
    t: float
    node: NodeId
    origin: NodeId
    seq: int
    app_type: int
    reason: str


@dataclass
class SessionStats:
    src: NodeId
    dst: NodeId
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    latencies: list[float] = field(default_factory=list)
    terminal: set[int] = field(default_factory=set)  # seqs resolved either way


class MetricsLog:
    """Trace sink shared by the router/MAC/engine of one run."""

    def __init__(self, name: str = "", seed: int = 0, mode: str = "seek") -> None:
        self.name = name
        self.seed = seed
        self.mode = mode
        self.tx_records: list[TxRecord] = []
        self.decisions: list[ForwardDecision] = []
        self.deliveries: list[Delivery] = []
        self.drops: list[Drop] = []
        self.deaths: list[tuple[float, NodeId]] = []
        self.energy_samples: list[tuple[float, NodeId, float]] = []
        self.events: list[tuple[float, str, dict]] = []
        self.sessions: dict[tuple[NodeId, NodeId], SessionStats] = {}
        self.initial_energy: dict[NodeId, float] = {}
        self.final_spent: dict[NodeId, float] = {}
        self.end_time: float = 0.0

    # -- trace protocol used by Router -------------------------------------

    def decision(self, d: ForwardDecision) -> None:
        self.decisions.append(d)

    def drop(self, t: float, node: NodeId, p: HelperPacket, reason: str) -> None:
        self.drops.append(Drop(t, node, p.origin, p.seq, int(p.app_type), reason))
        st = self.sessions.get((p.origin, p.final_dst))
        if st is not None and p.app_type == AppType.GENERIC \
                and p.seq not in st.terminal:
            st.terminal.add(p.seq)
            st.dropped += 1

    # -- engine-side records --------------------------------------------------

    def record_tx(self, t: float, node: NodeId, p: HelperPacket, cost: float,
                  aborted: bool = False) -> None:
        self.tx_records.append(TxRecord(t, node, int(p.kind), int(p.app_type),
                                        p.origin, p.seq, p.next_hop,
                                        p.final_dst, cost, len(p.payload),
                                        p.htl, aborted))

    def record_delivery(self, t: float, node: NodeId, p: HelperPacket) -> None:
        lat = t - p.origin_time
        self.deliveries.append(Delivery(t, node, p.origin, p.seq,
                                        int(p.app_type), lat, len(p.payload)))
        st = self.sessions.get((p.origin, p.final_dst))
        if st is not None and node == st.dst and p.app_type == AppType.GENERIC:
            st.delivered += 1
            st.latencies.append(lat)
            st.terminal.add(p.seq)

    def record_sent(self, src: NodeId, dst: NodeId) -> None:
        self.sessions[(src, dst)].sent += 1

    def record_death(self, t: float, node: NodeId) -> None:
        self.deaths.append((t, node))

    def sample_energy(self, t: float, node: NodeId, residual: float) -> None:
        self.energy_samples.append((t, node, residual))

    def event(self, t: float, kind: str, body: dict) -> None:
        self.events.append((t, kind, body))

    # -- metric operations -----------------------------------------------------

    def residual_at(self, node: NodeId, t: float) -> float:
        spent = 0.0
        for r in self.tx_records:
            if r.node == node and r.t <= t:
                spent += r.cost
        return self.initial_energy[node] - spent

    def min_residual(self, t: float) -> float:
        return min(self.residual_at(n, t) for n in self.initial_energy)

    def network_lifetime(self) -> float:
        if self.deaths:
            return self.deaths[0][0]
        return self.end_time

    def delivered_bits(self) -> int:
        """Session payload bits that reached their final destination."""
        return sum(d.payload_bytes * 8 for d in self.deliveries
                   if d.app_type == AppType.GENERIC
                   and (d.origin, d.node) in self.sessions)

    def network_throughput(self) -> float:
        """Delivered session bits per second over the whole run."""
        if self.end_time <= 0:
            return 0.0
        return self.delivered_bits() / self.end_time

    def normalized_throughput(self, thl: float) -> float:
        """Network goodput over the measured single-link goodput Th_l."""
        if thl <= 0:
            raise ValueError("missing or invalid link-throughput calibration")
        return self.network_throughput() / thl

    def total_delivered(self) -> int:
        return sum(st.delivered for st in self.sessions.values())

    def total_sent(self) -> int:
        return sum(st.sent for st in self.sessions.values())

    def mean_delay(self) -> float:
        lats = [lat for st in self.sessions.values() for lat in st.latencies]
        return sum(lats) / len(lats) if lats else float("nan")

    def audit_energy(self) -> None:
        """Exact conservation: initial - residual == sum of logged costs."""
        for node, initial in self.initial_energy.items():
            total = 0.0
            for r in self.tx_records:
                if r.node == node:
                    total += r.cost
            spent = self.final_spent.get(node, 0.0)
            if total != spent:
                raise AssertionError(
                    f"node {node}: logged costs {total!r} != spent {spent!r}")
            if not (0.0 <= initial - spent <= initial):
                raise AssertionError(f"node {node}: residual out of range")

    # -- CSV emission ------------------------------------------------------------

    def summary_rows(self) -> list[list]:
        rows = []
        for (src, dst), st in sorted(self.sessions.items()):
            mean_lat = (sum(st.latencies) / len(st.latencies)
                        if st.latencies else "")
            rows.append([self.name, self.mode, self.seed, src, dst, st.sent,
                         st.delivered, st.dropped, repr(mean_lat)
                         if mean_lat != "" else "", repr(self.network_lifetime()),
                         repr(self.end_time)])
        return rows

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["scenario", "mode", "seed", "src", "dst", "sent",
                    "delivered", "dropped", "mean_delay_s", "lifetime_s",
                    "end_time_s"])
        w.writerows(self.summary_rows())
        return buf.getvalue()

    def energy_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["t", "node", "residual_j"])
        for t, node, res in self.energy_samples:
            w.writerow([repr(t), node, repr(res)])
        return buf.getvalue()

    def deliveries_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["t", "node", "origin", "seq", "app_type", "latency_s",
                    "payload_bytes"])
        for d in self.deliveries:
            w.writerow([repr(d.t), d.node, d.origin, d.seq,
                        AppType(d.app_type).name, repr(d.latency),
                        d.payload_bytes])
        return buf.getvalue()
