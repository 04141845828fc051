"""Deterministic discrete-event engine.

One binary heap orders all events; ties break on an insertion counter so a
(scenario, seed) pair always replays the identical event sequence. All
randomness flows through named numpy substreams keyed by (seed, purpose,
node), so nothing depends on wall clock, hashing or dict iteration order.

The world also backs the wall-clock emulation: `emu` steps the same heap
against real time instead of draining it.
"""

from __future__ import annotations

import heapq
import itertools
from typing import Callable

import numpy as np

from .core import (
    AppType,
    EnergyState,
    HTL_MAX,
    HelperPacket,
    NodeId,
    PacketKind,
    packet_airtime,
)
from .mac import (
    Action,
    DeliverUp,
    MacConfig,
    MacFsm,
    SetTimer,
    Slotter,
    Transmit,
    TxFailed,
    TxServed,
)
from .messages import AppMessage, MessageService, ResourceKind
from .metrics import MetricsLog, SessionStats
from .node import NodeState, Router
from .radio import Radio, Transmission, tx_cost
from .scenario import Scenario, ScenarioError, Session

_PURPOSE = {"mac": 1, "chan": 2, "traffic": 3}


class World:
    """Builds the node stacks for a scenario and owns the event loop."""

    def __init__(self, sc: Scenario, mode: str | None = None,
                 seed: int | None = None) -> None:
        sc.validate()
        self.sc = sc
        self.mode = mode or sc.routing
        self.seed = sc.seed if seed is None else seed
        self.now = 0.0
        self._heap: list[tuple[float, int, Callable[[], None]]] = []
        self._counter = itertools.count()
        self._stopped = False
        self.metrics = MetricsLog(sc.name, self.seed, self.mode)
        self.listeners: list[Callable[[float, str, dict], None]] = []

        positions = {n.id: n.position for n in sorted(sc.nodes, key=lambda n: n.id)}
        self.radio = Radio(sc.link, positions)
        self.mac_cfg = MacConfig(beacon_period=sc.options.beacon_period)
        self.nodes: dict[NodeId, NodeState] = {}
        self.macs: dict[NodeId, MacFsm] = {}
        self.routers: dict[NodeId, Router] = {}
        self.services: dict[NodeId, MessageService] = {}

        slot_len = None
        ids = sorted(positions)
        if sc.options.broadcast_slotting:
            w_bcast = (self.mac_cfg.w_min
                       + (1 - self.mac_cfg.broadcast_u_norm)
                       * (self.mac_cfg.w_max - self.mac_cfg.w_min))
            max_air = packet_airtime(
                HelperPacket(kind=PacketKind.DATA,
                             payload=bytes(self.mac_cfg.max_payload)),
                sc.link.default_strategy)
            slot_len = w_bcast + max_air + sc.link.cad_latency() + 0.02

        for rank, spec in enumerate(sorted(sc.nodes, key=lambda n: n.id)):
            nid = spec.id
            state = NodeState(id=nid, position=spec.position,
                              energy=EnergyState(spec.energy),
                              directory=dict(positions))
            self.metrics.initial_energy[nid] = spec.energy
            is_erc = nid == sc.erc
            if is_erc:
                state.learn_erc(nid, spec.position)
            router = Router(state, sc.link, self.mode,
                            beacon_period=sc.options.beacon_period,
                            trace=self.metrics)
            slotter = (Slotter(rank, len(ids), slot_len)
                       if slot_len is not None else None)
            mac = MacFsm(state, self.mac_cfg, sc.link.default_strategy,
                         rng=self._rng("mac", nid),
                         cad_busy=self.radio.cad_busy,
                         select_next_hop=router.select_next_hop,
                         slotter=slotter,
                         busy_since=self.radio.busy_since)
            stagger = (sc.options.reply_stagger_base
                       + rank * sc.options.reply_stagger_step)
            service = MessageService(
                state, router, is_erc,
                schedule=self._service_scheduler(),
                emit=self._emitter(nid),
                reply_delay=lambda s=stagger: s)
            router.deliver_local = self._deliverer(nid, service)
            router.poke_mac = self._poker(nid)
            self.nodes[nid] = state
            self.macs[nid] = mac
            self.routers[nid] = router
            self.services[nid] = service

        for nid in ids:
            self._apply(nid, self.macs[nid].startup(0.0))
        if sc.options.setup_flood:
            def announce() -> None:
                if self.nodes[sc.erc].alive:
                    self.services[sc.erc].send_setup_flood(self.now)
                period = sc.options.setup_flood_period
                if period and self.now + period <= sc.duration:
                    self.schedule(self.now + period, announce)
            self.schedule(0.0, announce)
        if sc.options.nd_at is not None:
            self.schedule(sc.options.nd_at, lambda: self.services[sc.erc].erc_dispatch(
                AppType.ND, {}, self.now))
        for sess in sc.sessions:
            self.metrics.sessions[(sess.src, sess.dst)] = SessionStats(
                sess.src, sess.dst)
            self.schedule(sess.start, self._traffic_fn(sess, 0))
        for inj in sc.injects:
            self.schedule(inj.t, lambda i=inj: self.apply_inject(i.node, i.op, i.body))
        self.schedule(0.0, self._sampler())

    # -- scheduling ----------------------------------------------------------

    def schedule(self, t: float, fn: Callable[[], None]) -> None:
        heapq.heappush(self._heap, (t, next(self._counter), fn))

    def run(self) -> MetricsLog:
        """Drain the heap up to the scenario duration; returns the log."""
        duration = self.sc.duration
        while self._heap and not self._stopped:
            t, _, fn = heapq.heappop(self._heap)
            if t > duration:
                break
            self.now = t
            fn()
            if self._sessions_complete():
                self._stopped = True
        self.metrics.end_time = self.now if self._stopped else duration
        self._finalize()
        return self.metrics

    def step_until(self, t_target: float) -> None:
        """Process every event due up to t_target (emulation driver)."""
        while (self._heap and not self._stopped
               and self._heap[0][0] <= t_target
               and self._heap[0][0] <= self.sc.duration):
            t, _, fn = heapq.heappop(self._heap)
            self.now = t
            fn()
        self.now = min(t_target, self.sc.duration)

    def next_event_time(self) -> float | None:
        return self._heap[0][0] if self._heap else None

    def finish(self) -> MetricsLog:
        self.metrics.end_time = self.now
        self._finalize()
        return self.metrics

    def _finalize(self) -> None:
        for nid, state in self.nodes.items():
            self.metrics.final_spent[nid] = state.energy.spent
            self.metrics.sample_energy(self.metrics.end_time, nid,
                                       state.energy.residual)

    def _sessions_complete(self) -> bool:
        if not self.sc.sessions or any(s.count is None for s in self.sc.sessions):
            return False
        for s in self.sc.sessions:
            st = self.metrics.sessions[(s.src, s.dst)]
            if st.sent < s.count or len(st.terminal) < s.count:
                return False
        return True

    # -- node wiring helpers ----------------------------------------------------

    def _rng(self, purpose: str, node: NodeId) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed, _PURPOSE[purpose], node])
        return np.random.default_rng(ss)

    def _service_scheduler(self):
        def sched(delay: float, fn: Callable[[float], None]) -> None:
            self.schedule(self.now + delay, lambda: fn(self.now))
        return sched

    def _emitter(self, nid: NodeId):
        def emit(kind: str, body: dict) -> None:
            self.metrics.event(self.now, kind, body)
            for listener in self.listeners:
                listener(self.now, kind, body)
        return emit

    def _deliverer(self, nid: NodeId, service: MessageService):
        def deliver(p: HelperPacket, t: float) -> None:
            self.metrics.record_delivery(t, nid, p)
            service.handle_delivery(p, t)
        return deliver

    def _poker(self, nid: NodeId):
        def poke(t: float) -> None:
            self._apply(nid, self.macs[nid].poke(t))
        return poke

    def _traffic_fn(self, sess: Session, k: int):
        def generate() -> None:
            src = self.nodes[sess.src]
            if not src.alive:
                return
            if sess.count is not None and k >= sess.count:
                return
            if sess.duration is not None and self.now > sess.start + sess.duration:
                return
            pkt = HelperPacket(kind=PacketKind.DATA, app_type=AppType.GENERIC,
                               src=sess.src, origin=sess.src,
                               final_dst=sess.dst, htl=HTL_MAX,
                               seq=src.next_seq(),
                               payload=bytes(sess.payload),
                               origin_time=self.now)
            self.metrics.record_sent(sess.src, sess.dst)
            self.routers[sess.src].originate(pkt, self.now)
            if sess.count is None or k + 1 < sess.count:
                self.schedule(self.now + sess.interval,
                              self._traffic_fn(sess, k + 1))
        return generate

    def _sampler(self):
        def sample() -> None:
            for nid in self.nodes:
                self.metrics.sample_energy(self.now, nid,
                                           self.nodes[nid].energy.residual)
            for listener in self.listeners:
                listener(self.now, "metrics_tick", {})
            if self.now + self.sc.options.metrics_dt <= self.sc.duration:
                self.schedule(self.now + self.sc.options.metrics_dt, sample)
        return sample

    # -- action interpreter --------------------------------------------------------

    def _apply(self, nid: NodeId, actions: list[Action]) -> None:
        for act in actions:
            if isinstance(act, Transmit):
                self._do_transmit(nid, act)
            elif isinstance(act, SetTimer):
                self.schedule(self.now + act.delay,
                              lambda a=act, n=nid: self._apply(
                                  n, self.macs[n].on_timer(a.tag, a.token, self.now)))
            elif isinstance(act, DeliverUp):
                self.routers[nid].route_inbound(act.packet, self.now)
            elif isinstance(act, TxFailed):
                self.routers[nid].on_mac_failure(act.item, act.next_hop, self.now)
            elif isinstance(act, TxServed):
                pass  # queue bookkeeping already done by the MAC
            else:
                raise TypeError(f"unknown action {act!r}")

    def _do_transmit(self, nid: NodeId, act: Transmit) -> None:
        state = self.nodes[nid]
        if not state.alive:
            return
        cost = tx_cost(act.packet, act.strategy)
        if not state.energy.residual > cost:
            left = state.energy.drain()
            self.metrics.record_tx(self.now, nid, act.packet, left, aborted=True)
            self._kill(nid)
            return
        state.energy.charge(cost)
        self.metrics.record_tx(self.now, nid, act.packet, cost)
        tx = self.radio.begin(nid, act.packet, act.strategy, self.now)
        self.schedule(tx.end, lambda: self._complete(tx))

    def _complete(self, tx: Transmission) -> None:
        recs = self.radio.complete(tx, lambda n: self._chan_rng(n))
        for rec in recs:
            self._apply(rec.receiver, self.macs[rec.receiver].on_rx(rec, self.now))

    def _chan_rng(self, node: NodeId) -> np.random.Generator:
        rng = getattr(self, "_chan_cache", None)
        if rng is None:
            rng = {}
            self._chan_cache = rng
        if node not in rng:
            rng[node] = self._rng("chan", node)
        return rng[node]

    def _kill(self, nid: NodeId) -> None:
        state = self.nodes[nid]
        state.alive = False
        self.radio.mark_dead(nid)
        self.macs[nid].kill()
        self.metrics.record_death(self.now, nid)
        for listener in self.listeners:
            listener(self.now, "death", {"node": nid})
        if self.sc.options.stop_at_first_death:
            self._stopped = True

    # -- app-level injection (shared by scenario injects and the emulation) -----

    def apply_inject(self, nid: NodeId, op: str, body: dict) -> dict:
        """Run one operator/app action against a node; returns a reply body."""
        state = self.nodes.get(nid)
        if state is None:
            raise ScenarioError(f"unknown node {nid}")
        if not state.alive:
            raise ScenarioError(f"node {nid} is dead")
        service = self.services[nid]
        if op == "send":
            msg = parse_app_message(body, state)
            pkts = service.dispatch(msg, self.now)
            return {"queued": len(pkts)}
        if op == "nd":
            service.erc_dispatch(AppType.ND, {}, self.now)
            return {"queued": 1}
        if op == "alert":
            service.erc_dispatch(AppType.ALERT,
                                 {"text": str(body.get("text", ""))}, self.now)
            return {"queued": 1}
        if op == "approve":
            pkt = service.approve_resource(int(body["pending_id"]),
                                           str(body.get("verdict", "approve")),
                                           self.now)
            return {"flooded": pkt is not None}
        raise ScenarioError(f"unknown op {op!r}")


def parse_app_message(body: dict, node: NodeState) -> AppMessage:
    from .core import GeoPosition

    try:
        app = AppType[str(body.get("type", "LOCAL")).upper()]
    except KeyError:
        raise ScenarioError(f"unknown message type {body.get('type')!r}") from None
    loc = None
    if "x" in body and "y" in body:
        loc = GeoPosition(float(body["x"]), float(body["y"]))
    elif app in (AppType.HELP, AppType.RESOURCE):
        loc = node.position
    kind = None
    if body.get("resource_kind"):
        kind = ResourceKind(str(body["resource_kind"]).upper())
    return AppMessage(type=app, origin_user=str(body.get("user", "")),
                      text=str(body.get("text", "")), location=loc,
                      resource_kind=kind)


def run(sc: Scenario, mode: str | None = None,
        seed: int | None = None) -> MetricsLog:
    """Build a world for the scenario and run it to completion."""
    return World(sc, mode=mode, seed=seed).run()
