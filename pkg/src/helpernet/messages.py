"""Service layer: translation between application messages and air packets,
plus the per-type dispatch and handling rules.

End-user messages: HELP goes out twice (an ERC-bound unicast at maximum HTL
and a 2-hop broadcast for responders nearby), LOCAL never touches the air,
NEIGHBORHOOD is a single 1-hop broadcast, RESOURCE is ERC-bound unicast.
ERC messages (ND, ALERT, RESOURCE_UPDATE) are network-wide floods; resource
updates only ever follow an explicit operator approval.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .core import (
    BROADCAST,
    GeoPosition,
    HTL_MAX,
    HelperPacket,
    NodeId,
    AppType,
    PacketKind,
)
from .node import NodeState, Router

MAX_TEXT_BYTES = 200


class ResourceKind(str, Enum):
    WATER = "WATER"
    FOOD = "FOOD"
    GAS = "GAS"
    MEDICINE = "MEDICINE"
    INTERNET = "INTERNET"
    ELECTRICITY = "ELECTRICITY"


class NotErcError(PermissionError):
    """An ERC-only operation was invoked on a field node."""


@dataclass
class AppMessage:
    type: AppType
    origin_user: str = ""
    text: str = ""
    location: GeoPosition | None = None
    resource_kind: ResourceKind | None = None

    def __post_init__(self) -> None:
        if len(self.text.encode()) > MAX_TEXT_BYTES:
            raise ValueError(f"text exceeds {MAX_TEXT_BYTES} bytes")
        if self.type in (AppType.RESOURCE, AppType.RESOURCE_UPDATE):
            if self.resource_kind is None or self.location is None:
                raise ValueError("resource messages need a kind and a location")


@dataclass
class PendingResource:
    pending_id: int
    kind: str
    x: float
    y: float
    text: str
    reported_by: NodeId


def _enc(body: dict) -> bytes:
    return json.dumps(body, separators=(",", ":"), sort_keys=True).encode()


def _dec(payload: bytes) -> dict | None:
    try:
        out = json.loads(payload.decode())
    except (ValueError, UnicodeDecodeError):
        return None
    return out if isinstance(out, dict) else None


class MessageService:
    """Service layer of one node; the ERC node additionally owns the
    approval queue and the discovered-node set."""

    def __init__(self, node: NodeState, router: Router, is_erc: bool,
                 schedule: Callable[[float, Callable[[float], None]], None],
                 emit: Callable[[str, dict], None] = lambda k, b: None,
                 reply_delay: Callable[[], float] = lambda: 1.0) -> None:
        self.node = node
        self.router = router
        self.is_erc = is_erc
        self.schedule = schedule
        self.emit = emit
        self.reply_delay = reply_delay
        self.pending_outbox: list[AppMessage] = []
        self.pending_approvals: list[PendingResource] = []
        self.discovered: dict[NodeId, dict] = {}
        self.resource_map: dict[tuple, dict] = {}
        self.alerts: list[dict] = []
        self.distress: list[dict] = []
        self.local_feed: list[dict] = []
        self._next_pending_id = 1
        self._replied_nd: set[tuple[NodeId, int]] = set()

    # -- outbound ---------------------------------------------------------

    def dispatch(self, m: AppMessage, now: float) -> list[HelperPacket]:
        """Translate an end-user message into air packets and queue them."""
        node = self.node
        if m.type == AppType.LOCAL:
            entry = {"t": now, "user": m.origin_user, "text": m.text}
            self.local_feed.append(entry)
            self.emit("local", {"node": node.id, **entry})
            return []
        if m.type == AppType.NEIGHBORHOOD:
            pkt = HelperPacket(
                kind=PacketKind.DATA, app_type=AppType.NEIGHBORHOOD,
                src=node.id, origin=node.id, final_dst=BROADCAST,
                htl=1, seq=node.next_seq(),
                payload=_enc({"user": m.origin_user, "text": m.text}),
                origin_time=now)
            self.router.originate(pkt, now)
            return [pkt]
        if m.type == AppType.HELP:
            if node.erc_id is None:
                self.pending_outbox.append(m)
                return []
            loc = m.location or node.position
            body = {"user": m.origin_user, "text": m.text,
                    "x": loc.x, "y": loc.y}
            unicast = HelperPacket(
                kind=PacketKind.DATA, app_type=AppType.HELP, src=node.id,
                origin=node.id, final_dst=node.erc_id, htl=HTL_MAX,
                seq=node.next_seq(), payload=_enc(body), origin_time=now)
            nearby = HelperPacket(
                kind=PacketKind.DATA, app_type=AppType.HELP, src=node.id,
                origin=node.id, final_dst=BROADCAST, htl=2,
                seq=node.next_seq(), payload=_enc(body), origin_time=now)
            self.router.originate(unicast, now)
            self.router.originate(nearby, now)
            self.emit("help_sent", {"node": node.id, "unicast_seq": unicast.seq,
                                    "broadcast_seq": nearby.seq})
            return [unicast, nearby]
        if m.type == AppType.RESOURCE:
            if node.erc_id is None:
                self.pending_outbox.append(m)
                return []
            body = {"kind": m.resource_kind.value, "x": m.location.x,
                    "y": m.location.y, "text": m.text}
            pkt = HelperPacket(
                kind=PacketKind.DATA, app_type=AppType.RESOURCE, src=node.id,
                origin=node.id, final_dst=node.erc_id, htl=HTL_MAX,
                seq=node.next_seq(), payload=_enc(body), origin_time=now)
            self.router.originate(pkt, now)
            return [pkt]
        raise ValueError(f"{m.type.name} is not an end-user message type")

    def erc_dispatch(self, app_type: AppType, body: dict,
                     now: float) -> HelperPacket:
        """Flood an ERC message (ND, ALERT or RESOURCE_UPDATE) network-wide."""
        if not self.is_erc:
            raise NotErcError(f"node {self.node.id} is not the ERC")
        if app_type not in (AppType.ND, AppType.ALERT, AppType.RESOURCE_UPDATE):
            raise ValueError(f"{app_type.name} is not an ERC flood type")
        pkt = HelperPacket(
            kind=PacketKind.DATA, app_type=app_type, src=self.node.id,
            origin=self.node.id, final_dst=BROADCAST, htl=HTL_MAX,
            seq=self.node.next_seq(), payload=_enc(body), origin_time=now)
        self.router.originate(pkt, now)
        if app_type == AppType.RESOURCE_UPDATE:
            self._apply_resource_update(body, now)
        self.emit("erc_flood", {"type": app_type.name, "seq": pkt.seq})
        return pkt

    def send_setup_flood(self, now: float) -> HelperPacket:
        """Announce the ERC's identity at network setup (GENERIC flood)."""
        if not self.is_erc:
            raise NotErcError(f"node {self.node.id} is not the ERC")
        body = {"setup": {"erc": self.node.id, "x": self.node.position.x,
                          "y": self.node.position.y}}
        pkt = HelperPacket(
            kind=PacketKind.DATA, app_type=AppType.GENERIC, src=self.node.id,
            origin=self.node.id, final_dst=BROADCAST, htl=HTL_MAX,
            seq=self.node.next_seq(), payload=_enc(body), origin_time=now)
        self.router.originate(pkt, now)
        return pkt

    def approve_resource(self, pending_id: int, verdict: str,
                         now: float) -> HelperPacket | None:
        """Operator verdict on a held resource report; approval floods it."""
        if not self.is_erc:
            raise NotErcError(f"node {self.node.id} is not the ERC")
        if verdict not in ("approve", "reject"):
            raise ValueError(f"verdict must be approve or reject, got {verdict!r}")
        match = [p for p in self.pending_approvals if p.pending_id == pending_id]
        if not match:
            raise ValueError(f"no pending resource #{pending_id}")
        pending = match[0]
        self.pending_approvals.remove(pending)
        self.emit("approval", {"pending_id": pending_id, "verdict": verdict})
        if verdict == "reject":
            return None
        return self.erc_dispatch(AppType.RESOURCE_UPDATE,
                                 {"kind": pending.kind, "x": pending.x,
                                  "y": pending.y, "text": pending.text}, now)

    # -- inbound ------------------------------------------------------------

    def handle_delivery(self, p: HelperPacket, now: float) -> None:
        body = _dec(p.payload) or {}
        if p.app_type == AppType.GENERIC:
            setup = body.get("setup")
            if setup and self.node.erc_id is None:
                self.node.learn_erc(int(setup["erc"]),
                                    GeoPosition(float(setup["x"]),
                                                float(setup["y"])))
                self._flush_outbox(now)
        elif p.app_type == AppType.ND:
            self._on_nd(p, now)
        elif p.app_type == AppType.ALERT:
            entry = {"t": now, "from": p.origin, "text": body.get("text", "")}
            self.alerts.append(entry)
            self.emit("alert", {"node": self.node.id, **entry})
        elif p.app_type == AppType.HELP:
            entry = {"t": now, "from": p.origin, **body}
            self.distress.append(entry)
            self.emit("distress", {"node": self.node.id, "origin": p.origin,
                                   "x": body.get("x"), "y": body.get("y")})
        elif p.app_type == AppType.RESOURCE and self.is_erc:
            pending = PendingResource(self._next_pending_id,
                                      body.get("kind", "?"),
                                      float(body.get("x", 0.0)),
                                      float(body.get("y", 0.0)),
                                      body.get("text", ""), p.origin)
            self._next_pending_id += 1
            self.pending_approvals.append(pending)
            self.emit("pending_resource", {"pending_id": pending.pending_id,
                                           "kind": pending.kind,
                                           "from": p.origin})
        elif p.app_type == AppType.RESOURCE_UPDATE:
            self._apply_resource_update(body, now)
        elif p.app_type == AppType.HELPER_UPDATE and self.is_erc:
            nid = int(body.get("id", p.origin))
            self.discovered[nid] = {"t": now, **body}
            self.emit("discovered", {"node": nid, "x": body.get("x"),
                                     "y": body.get("y"),
                                     "residual": body.get("res")})

    def _on_nd(self, p: HelperPacket, now: float) -> None:
        """Reply to a network-discovery flood with a HELPER Update unicast.

        The flood cache already filters duplicate ND copies before they get
        here; the per-flood reply guard only covers replays across cache
        expiry. Replies are staggered to keep them off the flood's heels.
        """
        node = self.node
        if node.erc_id is None:
            node.learn_erc(p.origin, node.directory.get(p.origin, p.oai.position))
            self._flush_outbox(now)
        self.emit("nd", {"node": node.id, "from": p.origin})
        if self.is_erc or p.origin != node.erc_id:
            return
        key = (p.origin, p.seq)
        if key in self._replied_nd:
            return
        self._replied_nd.add(key)
        delay = self.reply_delay()

        def reply(t: float) -> None:
            if not node.alive:
                return
            pkt = HelperPacket(
                kind=PacketKind.DATA, app_type=AppType.HELPER_UPDATE,
                src=node.id, origin=node.id, final_dst=node.erc_id,
                htl=HTL_MAX, seq=node.next_seq(),
                payload=_enc({"id": node.id, "x": node.position.x,
                              "y": node.position.y,
                              "res": round(node.energy.residual, 6)}),
                origin_time=t)
            self.router.originate(pkt, t)

        self.schedule(delay, reply)

    def _apply_resource_update(self, body: dict, now: float) -> None:
        x, y = float(body.get("x", 0.0)), float(body.get("y", 0.0))
        key = (body.get("kind", "?"), round(x / 10.0), round(y / 10.0))
        self.resource_map[key] = {"t": now, "kind": body.get("kind", "?"),
                                  "x": x, "y": y, "text": body.get("text", "")}
        self.emit("resource_update", {"node": self.node.id, **self.resource_map[key]})

    def _flush_outbox(self, now: float) -> None:
        queued, self.pending_outbox = self.pending_outbox, []
        for m in queued:
            self.dispatch(m, now)
