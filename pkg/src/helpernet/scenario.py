"""Scenario documents: schema, validation, canned topologies.

A scenario is a versioned JSON document (``schema: 1``) naming the nodes
(id, planar position, initial energy), the ERC, the link model, the routing
mode, the traffic sessions and the run options. Validation happens before
any event executes and failures carry a one-line diagnostic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import BROADCAST, GeoPosition, NodeId, TransmissionStrategy, distance
from .radio import DEFAULT_STRATEGY, LinkModel


class ScenarioError(ValueError):
    """A scenario document failed validation."""


@dataclass
class NodeSpec:
    id: NodeId
    position: GeoPosition
    energy: float
    label: str = ""


@dataclass
class Session:
    src: NodeId
    dst: NodeId
    payload: int = 200
    interval: float = 0.1
    count: int | None = None
    duration: float | None = None
    start: float = 1.0


@dataclass
class Inject:
    t: float
    node: NodeId
    op: str
    body: dict = field(default_factory=dict)


@dataclass
class ScenarioOptions:
    beacon_period: float = 5.0
    broadcast_slotting: bool = False
    stop_at_first_death: bool = False
    setup_flood: bool = True
    setup_flood_period: float | None = None  # re-announce the ERC
    nd_at: float | None = None
    reply_stagger_base: float = 5.0
    reply_stagger_step: float = 0.5
    metrics_dt: float = 1.0


@dataclass
class Scenario:
    name: str
    seed: int
    duration: float
    routing: str
    erc: NodeId
    link: LinkModel
    nodes: list[NodeSpec]
    sessions: list[Session] = field(default_factory=list)
    options: ScenarioOptions = field(default_factory=ScenarioOptions)
    injects: list[Inject] = field(default_factory=list)

    def node_ids(self) -> list[NodeId]:
        return sorted(n.id for n in self.nodes)

    def label_of(self, nid: NodeId) -> str:
        for n in self.nodes:
            if n.id == nid:
                return n.label or str(nid)
        return str(nid)

    def validate(self) -> None:
        ids = [n.id for n in self.nodes]
        if not ids:
            raise ScenarioError("scenario has no nodes")
        if len(set(ids)) != len(ids):
            raise ScenarioError("node ids are not unique")
        labels = [n.label for n in self.nodes if n.label]
        if len(set(labels)) != len(labels):
            raise ScenarioError("node labels are not unique")
        for n in self.nodes:
            if not (0 <= n.id < BROADCAST):
                raise ScenarioError(f"node id {n.id} outside [0, {BROADCAST})")
            if not (math.isfinite(n.position.x) and math.isfinite(n.position.y)):
                raise ScenarioError(f"node {n.id} has non-finite coordinates")
            if n.energy <= 0:
                raise ScenarioError(f"node {n.id} initial energy must be positive")
        if self.erc not in ids:
            raise ScenarioError(f"erc {self.erc} is not a scenario node")
        if self.routing not in ("seek", "greedy"):
            raise ScenarioError(f"routing must be seek or greedy, got {self.routing!r}")
        if self.duration <= 0:
            raise ScenarioError("duration must be positive")
        pairs = set()
        for i, s in enumerate(self.sessions):
            if s.src == s.dst:
                raise ScenarioError(f"session {i} has src == dst")
            if s.src not in ids or s.dst not in ids:
                raise ScenarioError(f"session {i} references unknown nodes")
            if s.interval <= 0:
                raise ScenarioError(f"session {i} interval must be positive")
            if not (1 <= s.payload <= 200):
                raise ScenarioError(f"session {i} payload outside [1, 200] bytes")
            if s.count is None and s.duration is None:
                raise ScenarioError(f"session {i} needs a count or a duration")
            if (s.src, s.dst) in pairs:
                raise ScenarioError(f"duplicate session {s.src}->{s.dst}")
            pairs.add((s.src, s.dst))
        for i, inj in enumerate(self.injects):
            if inj.node not in ids:
                raise ScenarioError(f"inject {i} references unknown node {inj.node}")
            if inj.t < 0:
                raise ScenarioError(f"inject {i} has negative time")


def _resolve(ref, by_label: dict[str, NodeId], what: str) -> NodeId:
    if isinstance(ref, str):
        if ref not in by_label:
            raise ScenarioError(f"{what} references unknown label {ref!r}")
        return by_label[ref]
    if isinstance(ref, int) and not isinstance(ref, bool):
        return ref
    raise ScenarioError(f"{what} must be a node id or label, got {ref!r}")


def scenario_from_dict(doc: dict, name: str = "scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    if doc.get("schema") != 1:
        raise ScenarioError(f"unsupported schema {doc.get('schema')!r}, expected 1")
    try:
        nodes = [NodeSpec(id=int(n["id"]),
                          position=GeoPosition(float(n["x"]), float(n["y"]),
                                               n.get("lat"), n.get("lon")),
                          energy=float(n["energy"]),
                          label=str(n.get("label", "")))
                 for n in doc.get("nodes", [])]
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioError(f"bad node record: {e}") from None
    by_label = {n.label: n.id for n in nodes if n.label}

    link_doc = doc.get("link", {})
    strategies = []
    ber = {}
    for s in link_doc.get("strategies", [{"bitrate": DEFAULT_STRATEGY.bitrate,
                                          "tx_power": DEFAULT_STRATEGY.tx_power}]):
        try:
            strat = TransmissionStrategy(float(s["bitrate"]), float(s["tx_power"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError(f"bad strategy record: {e}") from None
        strategies.append(strat)
        ber[strat] = float(s.get("ber", 0.0))
    try:
        link = LinkModel(range_m=float(link_doc.get("range", 2000.0)),
                         strategies=tuple(strategies), ber=ber,
                         capacity=float(link_doc["capacity"])
                         if link_doc.get("capacity") is not None else math.inf)
    except Exception as e:
        raise ScenarioError(f"bad link model: {e}") from None

    sessions = []
    for s in doc.get("sessions", []):
        sessions.append(Session(
            src=_resolve(s.get("src"), by_label, "session src"),
            dst=_resolve(s.get("dst"), by_label, "session dst"),
            payload=int(s.get("payload", 200)),
            interval=float(s.get("interval", 0.1)),
            count=int(s["count"]) if s.get("count") is not None else None,
            duration=float(s["duration"]) if s.get("duration") is not None else None,
            start=float(s.get("start", 1.0))))

    opt_doc = doc.get("options", {})
    known = set(ScenarioOptions.__dataclass_fields__)
    unknown = set(opt_doc) - known
    if unknown:
        raise ScenarioError(f"unknown options: {sorted(unknown)}")
    options = ScenarioOptions(**opt_doc)

    injects = [Inject(t=float(i.get("t", 0.0)),
                      node=_resolve(i.get("node"), by_label, f"inject {k}"),
                      op=str(i.get("op", "")), body=dict(i.get("body", {})))
               for k, i in enumerate(doc.get("injects", []))]

    sc = Scenario(name=str(doc.get("name", name)),
                  seed=int(doc.get("seed", 1)),
                  duration=float(doc.get("duration", 60.0)),
                  routing=str(doc.get("routing", "seek")),
                  erc=_resolve(doc.get("erc", nodes[0].id if nodes else 0),
                               by_label, "erc"),
                  link=link, nodes=nodes, sessions=sessions,
                  options=options, injects=injects)
    sc.validate()
    return sc


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except OSError as e:
        raise ScenarioError(f"cannot read {p}: {e}") from None
    except ValueError as e:
        raise ScenarioError(f"{p} is not valid JSON: {e}") from None
    return scenario_from_dict(doc, name=p.stem)


# -- canned topologies ------------------------------------------------------

#: Canonical 3x2 grid, 1000 m spacing, labeled so that A->F, C->E and F->A
#: are multi-hop under R = 1500 m (adjacent + one diagonal in range) and the
#: two inner nodes B and D form the shared relay pool.
GRID_LAYOUT = {
    "A": (0.0, 0.0), "B": (1000.0, 1000.0), "C": (2000.0, 0.0),
    "D": (1000.0, 0.0), "E": (0.0, 1000.0), "F": (2000.0, 1000.0),
}

#: The four evaluation sessions; k-session experiments take the first k.
SESSION_CYCLE = (("A", "F"), ("B", "C"), ("C", "E"), ("F", "A"))


def canonical_grid(routing: str = "seek", n_sessions: int = 4, seed: int = 1,
                   energy: float = 25.0, duration: float = 7200.0,
                   interval: float = 0.1, payload: int = 200,
                   count: int | None = None,
                   stop_at_first_death: bool = False,
                   session_pairs: tuple[tuple[str, str], ...] | None = None
                   ) -> Scenario:
    """The testbed-analog grid scenario.

    Sessions default to the first ``n_sessions`` of the standard cycle;
    pass ``session_pairs`` (label pairs) to run an arbitrary subset.
    """
    labels = sorted(GRID_LAYOUT)
    nodes = [NodeSpec(id=i, position=GeoPosition(*GRID_LAYOUT[lab]),
                      energy=energy, label=lab)
             for i, lab in enumerate(labels)]
    by_label = {n.label: n.id for n in nodes}
    pairs = session_pairs if session_pairs is not None \
        else SESSION_CYCLE[:n_sessions]
    sessions = [Session(src=by_label[a], dst=by_label[b], payload=payload,
                        interval=interval, count=count,
                        duration=None if count else duration)
                for a, b in pairs]
    sc = Scenario(name=f"grid-{routing}-{len(pairs)}s", seed=seed,
                  duration=duration, routing=routing, erc=by_label["F"],
                  link=LinkModel(range_m=1500.0), nodes=nodes,
                  sessions=sessions,
                  options=ScenarioOptions(stop_at_first_death=stop_at_first_death))
    sc.validate()
    return sc


def _greedy_routable(pos: np.ndarray, adj: np.ndarray, sink: int) -> bool:
    """Every node can descend to the sink by always stepping to the
    neighbor closest to it (no geographic dead ends)."""
    n = len(pos)
    d_sink = np.hypot(pos[:, 0] - pos[sink, 0], pos[:, 1] - pos[sink, 1])
    reaches = np.zeros(n, dtype=bool)
    reaches[sink] = True
    for start in range(n):
        seen = []
        cur = start
        while not reaches[cur]:
            nbrs = np.flatnonzero(adj[cur])
            closer = [j for j in nbrs if d_sink[j] < d_sink[cur]]
            if not closer:
                return False
            cur = min(closer, key=lambda j: (d_sink[j], j))
            seen.append(cur)
        for v in seen:
            reaches[v] = True
    return True


def random_geometric_scenario(n_nodes: int, seed: int,
                              side: float = 5000.0, range_m: float = 1800.0,
                              energy: float = 50.0, duration: float = 900.0,
                              routing: str = "seek",
                              max_tries: int = 500) -> Scenario:
    """Random connected geometric graph with a greedy-routable ERC.

    Used by the flood experiments: connectivity guarantees the flood can
    reach everyone, greedy-routability guarantees discovery replies can
    always make geographic progress back to the ERC.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF100D]))
    for _ in range(max_tries):
        pos = rng.uniform(0.0, side, size=(n_nodes, 2))
        dx = pos[:, None, 0] - pos[None, :, 0]
        dy = pos[:, None, 1] - pos[None, :, 1]
        adj = np.hypot(dx, dy) <= range_m
        np.fill_diagonal(adj, False)
        # connectivity by BFS from 0
        seen = {0}
        frontier = [0]
        while frontier:
            nxt = []
            for v in frontier:
                for w in np.flatnonzero(adj[v]):
                    if w not in seen:
                        seen.add(int(w))
                        nxt.append(int(w))
            frontier = nxt
        if len(seen) != n_nodes:
            continue
        erc = int(np.argmin(np.hypot(pos[:, 0] - side / 2, pos[:, 1] - side / 2)))
        if not _greedy_routable(pos, adj, erc):
            continue
        nodes = [NodeSpec(id=i, position=GeoPosition(float(pos[i, 0]),
                                                     float(pos[i, 1])),
                          energy=energy) for i in range(n_nodes)]
        sc = Scenario(name=f"rgg-{n_nodes}-{seed}", seed=seed,
                      duration=duration, routing=routing, erc=erc,
                      link=LinkModel(range_m=range_m), nodes=nodes,
                      options=ScenarioOptions(
                          broadcast_slotting=True, nd_at=2.0,
                          reply_stagger_base=20.0, reply_stagger_step=1.5))
        sc.validate()
        return sc
    raise ScenarioError(
        f"no routable connected topology found for n={n_nodes}, seed={seed}")


def scenario_to_dict(sc: Scenario) -> dict:
    """Inverse of scenario_from_dict (used to ship canned scenarios)."""
    return {
        "schema": 1, "name": sc.name, "seed": sc.seed,
        "duration": sc.duration, "routing": sc.routing, "erc": sc.erc,
        "link": {"range": sc.link.range_m,
                 "capacity": None if math.isinf(sc.link.capacity) else sc.link.capacity,
                 "strategies": [{"bitrate": s.bitrate, "tx_power": s.tx_power,
                                 "ber": sc.link.ber.get(s, 0.0)}
                                for s in sc.link.strategies]},
        "nodes": [{"id": n.id, "label": n.label, "x": n.position.x,
                   "y": n.position.y, "energy": n.energy} for n in sc.nodes],
        "sessions": [{"src": s.src, "dst": s.dst, "payload": s.payload,
                      "interval": s.interval, "count": s.count,
                      "duration": s.duration, "start": s.start}
                     for s in sc.sessions],
        "options": {k: getattr(sc.options, k)
                    for k in ScenarioOptions.__dataclass_fields__},
        "injects": [{"t": i.t, "node": i.node, "op": i.op, "body": i.body}
                    for i in sc.injects],
    }
