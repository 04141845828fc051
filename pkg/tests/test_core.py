import math

import pytest
from hypothesis import given, strategies as st

from helpernet.core import (
    AIRTIME_HEADER_BYTES,
    AppType,
    BROADCAST,
    ConfigError,
    EnergyState,
    GeoPosition,
    HTL_MAX,
    HelperPacket,
    Oai,
    PROBE_BYTES,
    PacketKind,
    TransmissionStrategy,
    WIRE_FIXED_BYTES,
    distance,
    packet_airtime,
)


class TestDistance:
    def test_pythagorean(self):
        assert distance(GeoPosition(0, 0), GeoPosition(3, 4)) == 5.0

    def test_identity(self):
        assert distance(GeoPosition(7, 2), GeoPosition(7, 2)) == 0.0

    def test_negative_coordinates(self):
        # sqrt(9 + 16) by hand
        assert distance(GeoPosition(-1, 0), GeoPosition(2, 4)) == 5.0

    @given(st.tuples(*[st.floats(-1e6, 1e6) for _ in range(4)]))
    def test_symmetry(self, coords):
        a = GeoPosition(coords[0], coords[1])
        b = GeoPosition(coords[2], coords[3])
        assert distance(a, b) == distance(b, a)
        assert distance(a, b) >= 0.0

    @given(st.tuples(*[st.floats(-1e5, 1e5) for _ in range(6)]))
    def test_triangle_inequality(self, coords):
        a = GeoPosition(coords[0], coords[1])
        b = GeoPosition(coords[2], coords[3])
        c = GeoPosition(coords[4], coords[5])
        assert distance(a, c) <= distance(a, b) + distance(b, c) + 1e-6


class TestAirtime:
    def test_data_packet(self):
        # (32 + 200) * 8 / 5000 computed by hand
        p = HelperPacket(kind=PacketKind.DATA, payload=bytes(200))
        s = TransmissionStrategy(5000.0, 0.1)
        assert packet_airtime(p, s) == pytest.approx(0.3712)

    def test_control_packet_fixed_size(self):
        p = HelperPacket(kind=PacketKind.BEACON)
        s = TransmissionStrategy(5000.0, 0.1)
        assert packet_airtime(p, s) == pytest.approx(32 * 8 / 5000)
        assert packet_airtime(p, s) == pytest.approx(0.0512)

    def test_high_bitrate_limit(self):
        p = HelperPacket(kind=PacketKind.DATA, payload=bytes(200))
        assert packet_airtime(p, TransmissionStrategy(1e12, 0.1)) < 1e-8

    def test_zero_bitrate_rejected(self):
        p = HelperPacket(kind=PacketKind.DATA)
        with pytest.raises(ConfigError):
            packet_airtime(p, TransmissionStrategy(0.0, 0.1))


def packets():
    """Strategy for random packets; float32-exact values so the wire
    round-trip (which stores energies/positions as f32) is lossless."""
    f32 = st.floats(0, 1e6, width=32, allow_nan=False)
    kinds = st.sampled_from(list(PacketKind))
    return st.builds(
        lambda kind, app, src, origin, fdst, nhop, htl, seq, oai, payload:
        HelperPacket(kind=kind, app_type=app, src=src, origin=origin,
                     final_dst=fdst, next_hop=nhop, htl=htl, seq=seq, oai=oai,
                     payload=payload if kind == PacketKind.DATA else b""),
        kinds, st.sampled_from(list(AppType)),
        st.integers(0, 0xFFFE), st.integers(0, 0xFFFE),
        st.integers(0, 0xFFFF), st.integers(0, 0xFFFF),
        st.integers(0, HTL_MAX), st.integers(0, 0xFFFF),
        st.builds(Oai, st.integers(0, 2**32 - 1), f32, f32,
                  st.builds(GeoPosition, st.floats(-1e4, 1e4, width=32),
                            st.floats(-1e4, 1e4, width=32))),
        st.binary(max_size=220))


class TestSerialization:
    @given(packets())
    def test_round_trip(self, p):
        assert HelperPacket.deserialize(p.serialize()) == p

    def test_golden_beacon_bytes(self):
        p = HelperPacket(kind=PacketKind.BEACON, src=3, origin=3,
                         oai=Oai(queue_backlog=2, residual_energy=12.5,
                                 initial_energy=25.0,
                                 position=GeoPosition(1000.0, 2000.0)))
        raw = p.serialize()
        assert len(raw) == WIRE_FIXED_BYTES == 55
        assert raw[0] == PacketKind.BEACON
        assert raw[1] == AppType.GENERIC
        assert raw[2:4] == (3).to_bytes(2, "little")
        assert raw[6:8] == BROADCAST.to_bytes(2, "little")  # final_dst
        # OAI block: u32 backlog, f32 residual, f32 initial, u32 reserved
        assert raw[13:17] == (2).to_bytes(4, "little")
        assert raw[17:21] == bytes.fromhex("00004841")  # 12.5 as LE f32
        assert raw[21:25] == bytes.fromhex("0000c841")  # 25.0 as LE f32
        assert raw[25:29] == b"\x00\x00\x00\x00"
        assert raw[29:33] == bytes.fromhex("00007a44")  # 1000.0
        assert raw[33:37] == bytes.fromhex("0000fa44")  # 2000.0
        assert raw[37:53] == PROBE_BYTES
        assert raw[53:55] == b"\x00\x00"  # payload length

    def test_payload_carried(self):
        p = HelperPacket(kind=PacketKind.DATA, payload=b"hello world")
        raw = p.serialize()
        assert raw[-11:] == b"hello world"
        assert HelperPacket.deserialize(raw).payload == b"hello world"

    def test_truncated_raises(self):
        p = HelperPacket(kind=PacketKind.DATA, payload=bytes(50))
        raw = p.serialize()
        with pytest.raises(ValueError):
            HelperPacket.deserialize(raw[:30])
        with pytest.raises(ValueError):
            HelperPacket.deserialize(raw[:-5])


class TestPacketInvariants:
    def test_control_payload_rejected(self):
        for kind in (PacketKind.RTS, PacketKind.CTS, PacketKind.ACK,
                     PacketKind.BEACON):
            with pytest.raises(ValueError):
                HelperPacket(kind=kind, payload=b"x")

    def test_htl_bounds(self):
        with pytest.raises(ValueError):
            HelperPacket(kind=PacketKind.DATA, htl=HTL_MAX + 1)
        with pytest.raises(ValueError):
            HelperPacket(kind=PacketKind.DATA, htl=-1)

    def test_timestamps_do_not_affect_equality(self):
        a = HelperPacket(kind=PacketKind.DATA, seq=9, origin_time=1.0)
        b = HelperPacket(kind=PacketKind.DATA, seq=9, origin_time=7.0)
        assert a == b

    def test_airtime_overhead_is_nominal(self):
        # the nominal air frame is 32 B regardless of the 55 B host layout
        p = HelperPacket(kind=PacketKind.RTS)
        assert p.air_bytes() == AIRTIME_HEADER_BYTES


class TestEnergyState:
    def test_residual_derivation(self):
        e = EnergyState(25.0)
        e.charge(0.25)
        e.charge(0.125)
        assert e.residual == 25.0 - (0.25 + 0.125)
        assert not e.depleted

    def test_drain_zeroes_exactly(self):
        e = EnergyState(2.0)
        e.charge(1.75)
        left = e.drain()
        assert left == 2.0 - 1.75
        assert e.residual == 0.0
        assert e.depleted
