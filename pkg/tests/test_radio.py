import numpy as np
import pytest

from helpernet.core import (
    GeoPosition,
    HelperPacket,
    PROBE_BITS,
    PacketKind,
    TransmissionStrategy,
)
from helpernet.radio import DEFAULT_STRATEGY, LinkModel, Radio, tx_cost


def make_radio(positions, range_m=2000.0, ber=0.0):
    link = LinkModel(range_m=range_m,
                     ber={DEFAULT_STRATEGY: ber})
    return Radio(link, positions)


def rng_for(_node):
    return np.random.default_rng(1234)


def data_packet(payload=200):
    return HelperPacket(kind=PacketKind.DATA, payload=bytes(payload))


class TestDelivery:
    def test_ideal_channel(self):
        radio = make_radio({0: GeoPosition(0, 0), 1: GeoPosition(100, 0)})
        tx = radio.begin(0, data_packet(), DEFAULT_STRATEGY, t=0.0)
        recs = radio.complete(tx, rng_for)
        assert [r.receiver for r in recs] == [1]
        assert not recs[0].corrupted
        assert recs[0].header_ok
        assert recs[0].probe_bits_intact == PROBE_BITS

    def test_out_of_range(self):
        radio = make_radio({0: GeoPosition(0, 0), 1: GeoPosition(2500, 0)})
        tx = radio.begin(0, data_packet(), DEFAULT_STRATEGY, t=0.0)
        assert radio.complete(tx, rng_for) == []

    def test_collision_corrupts_both(self):
        # oracle: both airtimes overlap in [0.1, 0.3712], receiver 2 hears both
        radio = make_radio({0: GeoPosition(0, 0), 1: GeoPosition(1000, 0),
                            2: GeoPosition(500, 500)})
        tx_a = radio.begin(0, data_packet(), DEFAULT_STRATEGY, t=0.0)
        tx_b = radio.begin(1, data_packet(), DEFAULT_STRATEGY, t=0.1)
        recs_a = radio.complete(tx_a, rng_for)
        recs_b = radio.complete(tx_b, rng_for)
        at_2_a = [r for r in recs_a if r.receiver == 2][0]
        at_2_b = [r for r in recs_b if r.receiver == 2][0]
        assert at_2_a.collided and at_2_a.corrupted and not at_2_a.header_ok
        assert at_2_b.collided and at_2_b.corrupted

    def test_sequential_transmissions_do_not_collide(self):
        radio = make_radio({0: GeoPosition(0, 0), 1: GeoPosition(1000, 0),
                            2: GeoPosition(500, 500)})
        tx_a = radio.begin(0, data_packet(), DEFAULT_STRATEGY, t=0.0)
        recs_a = radio.complete(tx_a, rng_for)
        tx_b = radio.begin(1, data_packet(), DEFAULT_STRATEGY, t=tx_a.end)
        recs_b = radio.complete(tx_b, rng_for)
        assert all(not r.corrupted for r in recs_a + recs_b)

    def test_half_duplex_receiver_misses(self):
        radio = make_radio({0: GeoPosition(0, 0), 1: GeoPosition(1000, 0)})
        tx_a = radio.begin(0, data_packet(), DEFAULT_STRATEGY, t=0.0)
        tx_b = radio.begin(1, data_packet(50), DEFAULT_STRATEGY, t=0.05)
        recs_a = radio.complete(tx_a, rng_for)
        assert recs_a == []  # node 1 was transmitting itself

    def test_dead_node_receives_nothing(self):
        radio = make_radio({0: GeoPosition(0, 0), 1: GeoPosition(100, 0)})
        radio.mark_dead(1)
        tx = radio.begin(0, data_packet(), DEFAULT_STRATEGY, t=0.0)
        assert radio.complete(tx, rng_for) == []


class TestBitErrors:
    def test_probe_corruption_counts(self):
        # binomial oracle: with e_b = 0.05, mean intact = 128 * 0.95 = 121.6
        radio = make_radio({0: GeoPosition(0, 0), 1: GeoPosition(100, 0)},
                           ber=0.05)
        intact = []
        master = np.random.default_rng(7)
        streams = {}

        def per_node(n):
            if n not in streams:
                streams[n] = np.random.default_rng(master.integers(2**32))
            return streams[n]

        t = 0.0
        for _ in range(300):
            tx = radio.begin(0, HelperPacket(kind=PacketKind.BEACON),
                             DEFAULT_STRATEGY, t)
            recs = radio.complete(tx, per_node)
            intact.append(recs[0].probe_bits_intact)
            t = tx.end + 0.01
        mean = np.mean(intact)
        assert 118 < mean < 125
        assert any(i < PROBE_BITS for i in intact)

    def test_zero_ber_never_corrupts(self):
        radio = make_radio({0: GeoPosition(0, 0), 1: GeoPosition(100, 0)})
        for k in range(20):
            tx = radio.begin(0, data_packet(), DEFAULT_STRATEGY, t=k)
            recs = radio.complete(tx, rng_for)
            assert not recs[0].corrupted


class TestCad:
    def test_idle_channel(self):
        radio = make_radio({0: GeoPosition(0, 0), 1: GeoPosition(100, 0)})
        assert not radio.cad_busy(1, 0.0)

    def test_mid_transmission_detected(self):
        radio = make_radio({0: GeoPosition(0, 0), 1: GeoPosition(100, 0)})
        radio.begin(0, data_packet(), DEFAULT_STRATEGY, t=0.0)
        assert radio.cad_busy(1, 0.1)

    def test_detection_latency(self):
        # within two symbol durations of the start nothing is detectable yet
        radio = make_radio({0: GeoPosition(0, 0), 1: GeoPosition(100, 0)})
        radio.begin(0, data_packet(), DEFAULT_STRATEGY, t=0.0)
        latency = radio.link.cad_latency()
        assert latency == pytest.approx(2 * 8 / 5000)
        assert not radio.cad_busy(1, latency / 2)
        assert radio.cad_busy(1, latency * 1.5)

    def test_out_of_range_transmitter_invisible(self):
        # hidden-terminal seed: geometry check
        radio = make_radio({0: GeoPosition(0, 0), 1: GeoPosition(2500, 0)})
        radio.begin(0, data_packet(), DEFAULT_STRATEGY, t=0.0)
        assert not radio.cad_busy(1, 0.1)


class TestEnergyAndLinks:
    def test_tx_cost_is_power_times_airtime(self):
        p = data_packet()
        assert tx_cost(p, DEFAULT_STRATEGY) == pytest.approx(0.1 * 0.3712)
        beacon = HelperPacket(kind=PacketKind.BEACON)
        assert tx_cost(beacon, DEFAULT_STRATEGY) == pytest.approx(0.1 * 0.0512)

    def test_link_symmetry_random_topologies(self):
        rng = np.random.default_rng(42)
        for _ in range(20):
            pts = {i: GeoPosition(*rng.uniform(0, 5000, 2)) for i in range(12)}
            radio = make_radio(pts, range_m=1800.0)
            for a in pts:
                for b in pts:
                    if a != b:
                        assert radio.in_range(a, b) == radio.in_range(b, a)

    def test_capacity_filters_strategies(self):
        fast = TransmissionStrategy(20000.0, 0.2)
        link = LinkModel(range_m=1000.0,
                         strategies=(DEFAULT_STRATEGY, fast),
                         capacity=10000.0)
        assert link.usable_strategies() == (DEFAULT_STRATEGY,)
