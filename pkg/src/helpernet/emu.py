"""Wall-clock emulation host.

Runs the same node stacks as the simulator, but advances the event heap
against real time (scaled by ``time_scale``) and bridges the world to
clients over a websocket: one JSON document per frame, both directions.

Server frames carry a monotonically increasing ``tick``:

* ``snapshot``     — full world state, sent on connect or on request
* ``receive``      — an application-level message reached somebody
* ``node_event``   — state change (death, discovery, approval, resources)
* ``metrics_tick`` — once per emulated second

Client frames: ``send``, ``nd``, ``alert``, ``approve``, ``snapshot``.
Malformed or unknown frames get a structured ``error`` reply and the
connection stays open. One asyncio loop owns the world; client handlers
mutate it only through the same synchronous injection path the simulator
uses for scripted events, so a recorded session replays identically.
"""

from __future__ import annotations

import asyncio
import json
import time

from .engine import World
from .metrics import MetricsLog
from .scenario import Scenario, ScenarioError

RECEIVE_EVENTS = frozenset(("local", "alert", "distress", "nd"))


class EmulationServer:
    def __init__(self, sc: Scenario, time_scale: float = 1.0,
                 seed: int | None = None) -> None:
        if time_scale <= 0:
            raise ValueError("time-scale must be positive")
        self.sc = sc
        self.time_scale = time_scale
        self.world = World(sc, seed=seed)
        self.world.listeners.append(self._on_world_event)
        self.tick = 0
        self.clients: set = set()
        self._outbox: list[dict] = []
        self.injected: list[dict] = []  # recorded ops, for replay
        self.finished = asyncio.Event()

    # -- frames -------------------------------------------------------------

    def _frame(self, op: str, body: dict, node=None) -> dict:
        self.tick += 1
        frame = {"op": op, "tick": self.tick, "body": body}
        if node is not None:
            frame["node"] = node
        return frame

    def _on_world_event(self, t: float, kind: str, body: dict) -> None:
        if kind == "metrics_tick":
            self._outbox.append(self._frame("metrics_tick", {
                "time": round(t, 6),
                "residuals": {str(n): s.energy.residual
                              for n, s in self.world.nodes.items()},
                "delivered": self.world.metrics.total_delivered(),
            }))
        elif kind in RECEIVE_EVENTS:
            self._outbox.append(self._frame(
                "receive", {"kind": kind, **body}, node=body.get("node")))
        else:
            self._outbox.append(self._frame(
                "node_event", {"kind": kind, **body}, node=body.get("node")))

    def snapshot_frame(self) -> dict:
        w = self.world
        erc_service = w.services[w.sc.erc]
        nodes = []
        for nid in sorted(w.nodes):
            st = w.nodes[nid]
            svc = w.services[nid]
            nodes.append({
                "id": nid,
                "label": w.sc.label_of(nid),
                "x": st.position.x, "y": st.position.y,
                "alive": st.alive,
                "residual": st.energy.residual,
                "initial": st.energy.initial,
                "discovered": nid in erc_service.discovered or nid == w.sc.erc,
                "distress": bool(svc.distress),
            })
        return self._frame("snapshot", {
            "time": round(w.now, 6),
            "erc": w.sc.erc,
            "duration": w.sc.duration,
            "time_scale": self.time_scale,
            "nodes": nodes,
            "resource_map": sorted(erc_service.resource_map.values(),
                                   key=lambda r: (r["kind"], r["x"], r["y"])),
            "pending": [{"pending_id": p.pending_id, "kind": p.kind,
                         "x": p.x, "y": p.y, "text": p.text,
                         "from": p.reported_by}
                        for p in erc_service.pending_approvals],
            "alerts": erc_service.alerts[-20:],
        })

    # -- client handling -------------------------------------------------------

    async def handler(self, ws) -> None:
        self.clients.add(ws)
        try:
            await ws.send(json.dumps(self.snapshot_frame()))
            async for raw in ws:
                await self._handle_client_frame(ws, raw)
        except Exception:
            pass
        finally:
            self.clients.discard(ws)

    async def _handle_client_frame(self, ws, raw) -> None:
        try:
            msg = json.loads(raw)
            if not isinstance(msg, dict):
                raise ValueError("frame must be a JSON object")
        except ValueError as e:
            await ws.send(json.dumps(self._frame(
                "error", {"message": f"malformed frame: {e}"})))
            return
        op = msg.get("op")
        if op == "snapshot":
            await ws.send(json.dumps(self.snapshot_frame()))
            return
        if op not in ("send", "nd", "alert", "approve"):
            await ws.send(json.dumps(self._frame(
                "error", {"message": f"unknown op {op!r}", "reply_to": op})))
            return
        node = msg.get("node", self.sc.erc if op != "send" else None)
        body = msg.get("body", {})
        try:
            result = self.world.apply_inject(int(node), op, body)
        except (ScenarioError, ValueError, KeyError, TypeError) as e:
            await ws.send(json.dumps(self._frame(
                "error", {"message": str(e), "reply_to": op})))
            return
        self.injected.append({"t": self.world.now, "node": int(node),
                              "op": op, "body": body})
        await ws.send(json.dumps(self._frame(
            "ok", {"reply_to": op, **result})))
        await self._flush()

    async def _flush(self) -> None:
        frames, self._outbox = self._outbox, []
        if not frames or not self.clients:
            return
        payloads = [json.dumps(f) for f in frames]
        for ws in list(self.clients):
            for p in payloads:
                try:
                    await ws.send(p)
                except Exception:
                    self.clients.discard(ws)
                    break

    # -- world driver ---------------------------------------------------------

    async def drive(self) -> MetricsLog:
        t0 = time.monotonic()
        try:
            while True:
                target = (time.monotonic() - t0) * self.time_scale
                self.world.step_until(min(target, self.sc.duration))
                await self._flush()
                if self.world.now >= self.sc.duration:
                    break
                nxt = self.world.next_event_time()
                if nxt is None:
                    break
                wall_gap = (nxt - target) / self.time_scale
                await asyncio.sleep(min(max(wall_gap, 0.0), 0.25))
        finally:
            self.finished.set()
        return self.world.finish()

    async def serve(self, host: str, port: int) -> MetricsLog:
        import websockets

        async with websockets.serve(self.handler, host, port):
            return await self.drive()


def serve_forever(sc: Scenario, host: str, port: int,
                  time_scale: float = 1.0, seed: int | None = None) -> None:
    server = EmulationServer(sc, time_scale=time_scale, seed=seed)
    print(f"emulation: {sc.name} on ws://{host}:{port} "
          f"(time scale {time_scale:g}x, duration {sc.duration:g}s)")
    asyncio.run(server.serve(host, port))
