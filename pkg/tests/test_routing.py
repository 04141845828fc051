import math

import numpy as np
import pytest

from helpernet.core import (
    GeoPosition,
    HelperPacket,
    NeighborEntry,
    PacketKind,
    TransmissionStrategy,
)
from helpernet.radio import DEFAULT_STRATEGY
from helpernet.routing import (
    FloodCache,
    RoutingQueues,
    greedy_next_hop,
    link_efficiency,
    seek_next_hop,
    utility,
)

ORIGIN = GeoPosition(0.0, 0.0)


def entry(node, pos, backlog=0, res=25.0, ini=25.0, goodput=5000.0,
          bitrate=5000.0):
    return NeighborEntry(node=node, position=pos, queue_backlog=backlog,
                         residual_energy=res, initial_energy=ini,
                         goodput=goodput, goodput_bitrate=bitrate)


class TestUtility:
    def test_worked_example(self):
        # independent arithmetic: eta = 5000/0.1 = 50000,
        # backlog (4-2)/4 = 0.5, progress (1000-500)/1000 = 0.5,
        # energy 0.5  ->  50000 * 0.5 * 0.5 * 0.5 = 6250
        dest = GeoPosition(1000.0, 0.0)
        j = entry(7, GeoPosition(500.0, 0.0), backlog=2, res=12.5, ini=25.0)
        u = utility(4, ORIGIN, j, DEFAULT_STRATEGY, dest)
        assert u == pytest.approx(6250.0)

    def test_backpressure_gate(self):
        dest = GeoPosition(1000.0, 0.0)
        j = entry(7, GeoPosition(500.0, 0.0), backlog=9)
        assert utility(4, ORIGIN, j, DEFAULT_STRATEGY, dest) == 0.0

    def test_destination_reaches_eta(self):
        # j == destination: every normalized term is 1, so U == eta
        dest = GeoPosition(1000.0, 0.0)
        j = entry(7, dest, backlog=99)  # advertised backlog ignored at dest
        u = utility(1, ORIGIN, j, DEFAULT_STRATEGY, dest, dest_node=7)
        assert u == pytest.approx(50000.0)
        assert u == pytest.approx(link_efficiency(j, DEFAULT_STRATEGY))

    def test_progress_clamped_at_zero(self):
        dest = GeoPosition(1000.0, 0.0)
        j = entry(7, GeoPosition(-500.0, 0.0))  # behind the source
        assert utility(4, ORIGIN, j, DEFAULT_STRATEGY, dest) == 0.0

    def test_goodput_floor_excludes_lossy_link(self):
        dest = GeoPosition(1000.0, 0.0)
        j = entry(7, GeoPosition(500.0, 0.0), goodput=1000.0)  # ratio 0.2
        assert utility(4, ORIGIN, j, DEFAULT_STRATEGY, dest) == 0.0

    def test_at_destination_rejected(self):
        j = entry(7, GeoPosition(500.0, 0.0))
        with pytest.raises(ValueError):
            utility(4, ORIGIN, j, DEFAULT_STRATEGY, ORIGIN)


def brute_force_argmax(q_i, own_pos, table, strategies, dest, dest_node):
    """Independent oracle: exhaustive scoring with explicit tie-breaks."""
    best = None
    for e in table.values():
        for s in strategies:
            score = utility(q_i, own_pos, e, s, dest, dest_node)
            if score <= 0.0:
                continue
            key = (score, e.residual_energy, -e.node)
            if best is None or key > best[0]:
                best = (key, e.node, s)
    return None if best is None else (best[1], best[2])


def random_table(rng, n_neighbors, n_strategies):
    strategies = tuple(
        TransmissionStrategy(float(rng.choice([2500, 5000, 10000, 20000])),
                             float(rng.choice([0.05, 0.1, 0.2])))
        for _ in range(n_strategies))
    table = {}
    for node in rng.choice(100, size=n_neighbors, replace=False):
        node = int(node)
        ini = float(rng.uniform(5, 50))
        bitrate = float(rng.choice([2500, 5000, 10000]))
        table[node] = NeighborEntry(
            node=node,
            position=GeoPosition(float(rng.uniform(-2000, 2000)),
                                 float(rng.uniform(-2000, 2000))),
            queue_backlog=int(rng.integers(0, 12)),
            residual_energy=float(rng.uniform(0, ini)),
            initial_energy=ini,
            goodput=float(rng.uniform(0, bitrate)),
            goodput_bitrate=bitrate)
    return table, strategies


class TestSeekArgmax:
    def test_matches_brute_force_on_randomized_tables(self):
        rng = np.random.default_rng(2024)
        dest = GeoPosition(1500.0, -300.0)
        for _ in range(400):
            table, strategies = random_table(rng, int(rng.integers(1, 9)),
                                             int(rng.integers(1, 5)))
            q_i = int(rng.integers(1, 15))
            dest_node = int(rng.integers(100, 200))
            got = seek_next_hop(q_i, ORIGIN, table, strategies, dest, dest_node)
            want = brute_force_argmax(q_i, ORIGIN, table, strategies, dest,
                                      dest_node)
            if want is None:
                assert got is None
            else:
                assert (got.node, got.strategy) == want

    def test_tie_breaks_prefer_energy_then_lower_id(self):
        dest = GeoPosition(1000.0, 0.0)
        pos = GeoPosition(500.0, 0.0)
        table = {5: entry(5, pos, res=20.0), 3: entry(3, pos, res=22.0)}
        hop = seek_next_hop(4, ORIGIN, table, (DEFAULT_STRATEGY,), dest)
        assert hop.node == 3  # higher residual wins
        table[5].residual_energy = 22.0
        hop = seek_next_hop(4, ORIGIN, table, (DEFAULT_STRATEGY,), dest)
        assert hop.node == 3  # equal residual: lower id wins

    def test_all_gated_returns_none(self):
        dest = GeoPosition(1000.0, 0.0)
        table = {7: entry(7, GeoPosition(-100.0, 0.0))}  # no progress
        assert seek_next_hop(4, ORIGIN, table, (DEFAULT_STRATEGY,), dest) is None

    def test_single_neighbor_is_destination(self):
        dest = GeoPosition(900.0, 0.0)
        table = {9: entry(9, dest)}
        hop = seek_next_hop(1, ORIGIN, table, (DEFAULT_STRATEGY,), dest, 9)
        assert hop.node == 9

    def test_energy_scale_invariance(self):
        # multiplying every (E_r, E_0) by one constant keeps the argmax
        rng = np.random.default_rng(99)
        dest = GeoPosition(1500.0, 500.0)
        for _ in range(100):
            table, strategies = random_table(rng, 6, 2)
            base = seek_next_hop(5, ORIGIN, table, strategies, dest, 999)
            for e in table.values():
                e.residual_energy *= 7.5
                e.initial_energy *= 7.5
            scaled = seek_next_hop(5, ORIGIN, table, strategies, dest, 999)
            if base is None:
                assert scaled is None
            else:
                assert scaled.node == base.node
                assert scaled.strategy == base.strategy


class TestGreedy:
    def test_picks_closest(self):
        dest = GeoPosition(1000.0, 0.0)
        table = {1: entry(1, GeoPosition(500.0, 0.0)),
                 2: entry(2, GeoPosition(200.0, 0.0))}
        assert greedy_next_hop(ORIGIN, table, dest) == 1

    def test_no_progress_returns_none(self):
        dest = GeoPosition(1000.0, 0.0)
        table = {1: entry(1, GeoPosition(0.0, 1000.0))}  # same distance
        assert greedy_next_hop(ORIGIN, table, dest) is None

    def test_tie_break_lower_id(self):
        dest = GeoPosition(1000.0, 0.0)
        table = {8: entry(8, GeoPosition(500.0, 0.0)),
                 2: entry(2, GeoPosition(500.0, 0.0))}
        assert greedy_next_hop(ORIGIN, table, dest) == 2

    def test_grid_pick_matches_distance_scan(self):
        # oracle: full scan over the canonical grid from A toward F
        from helpernet.scenario import GRID_LAYOUT

        a = GeoPosition(*GRID_LAYOUT["A"])
        f = GeoPosition(*GRID_LAYOUT["F"])
        table = {}
        ids = {}
        for i, lab in enumerate(sorted(GRID_LAYOUT)):
            ids[lab] = i
            pos = GeoPosition(*GRID_LAYOUT[lab])
            if lab != "A" and math.dist((a.x, a.y), (pos.x, pos.y)) <= 1500.0:
                table[i] = entry(i, pos)
        by_scan = min(
            ((math.dist((e.position.x, e.position.y), (f.x, f.y)), nid)
             for nid, e in table.items()
             if math.dist((e.position.x, e.position.y), (f.x, f.y))
             < math.dist((a.x, a.y), (f.x, f.y))))[1]
        assert greedy_next_hop(a, table, f) == by_scan == ids["B"]


class TestQueues:
    def test_priority_served_first(self):
        q = RoutingQueues()
        generic = HelperPacket(kind=PacketKind.DATA, seq=1)
        from helpernet.core import AppType

        help_pkt = HelperPacket(kind=PacketKind.DATA, app_type=AppType.HELP,
                                seq=2)
        q.push(generic, 0.0)
        q.push(help_pkt, 0.1)
        assert len(q) == 2
        assert q.head().packet is help_pkt
        q.pop(q.head())
        assert q.head().packet is generic

    def test_backlog_counts_both_queues(self):
        q = RoutingQueues()
        from helpernet.core import AppType

        for i in range(3):
            q.push(HelperPacket(kind=PacketKind.DATA, seq=i), 0.0)
        q.push(HelperPacket(kind=PacketKind.DATA, app_type=AppType.ALERT,
                            seq=9), 0.0)
        assert len(q) == 4


class TestFloodCache:
    def test_suppresses_duplicates(self):
        c = FloodCache(ttl=10.0)
        assert not c.seen(4, 7, now=0.0)
        c.add(4, 7, now=0.0)
        assert c.seen(4, 7, now=5.0)
        assert not c.seen(4, 7, now=11.0)  # expired

    def test_distinct_keys_independent(self):
        c = FloodCache()
        c.add(4, 7, now=0.0)
        assert not c.seen(4, 8, now=0.0)
        assert not c.seen(5, 7, now=0.0)
