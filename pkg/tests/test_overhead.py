import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bpec.channel import ChannelModel
from bpec.overhead import (FeedbackLog, FramingError, InfoFrame, PacketTooSmall, feedback_packet_count,
                           groups_per_packet, header, multicast_until_all, overhead_slots, packetize_log,
                           receiver_reconstruct, termination_packet)


def test_bit_layout_by_hand():
    # N = 3, L = 16: g = 4 groups per packet, user 1 first inside a group
    log = FeedbackLog(3, [0b101, 0b010, 0b111, 0b000, 0b001])
    p0, p1 = packetize_log(log, 16)
    # 1 0 | 1 0 1 | 0 1 0 | 1 1 1 | 0 0 0 | 0 0
    assert p0 == bytes([0xAA, 0xE0])
    # 1 1 | 1 0 0 | zero padding
    assert p1 == bytes([0xE0, 0x00])
    assert header(p0) == (1, 0) and header(p1) == (1, 1)
    assert termination_packet(16) == b"\x00\x00"


def test_from_patterns_inverts_erasures():
    assert FeedbackLog.from_patterns([0b110, 0b000], 3).groups == [0b001, 0b111]


@given(st.integers(0, 500), st.integers(3, 64), st.integers(1, 8))
def test_packet_count(T, L, n):
    if L - 2 < n:
        with pytest.raises(PacketTooSmall):
            groups_per_packet(L, n)
        return
    g = (L - 2) // n
    assert feedback_packet_count(T, L, n) == -(-T // g)
    assert len(packetize_log([0] * T, L, n)) == -(-T // g)


def _stage1(rng, n, T):
    patterns = [int(x) for x in rng.integers(0, 1 << n, size=T)]
    fifos = [[] for _ in range(n)]
    for t, p in enumerate(patterns):
        for u in range(n):
            if not p >> u & 1:
                fifos[u].append(InfoFrame(np.array([t % 256], dtype=np.uint8), t + 1))
    return patterns, fifos


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 60), st.integers(0, 40), st.integers(0, 2**32 - 1))
def test_every_receiver_rebuilds_the_log(n, T, extra_bits, seed):
    rng = np.random.default_rng(seed)
    L = n + 2 + extra_bits
    patterns, fifos = _stage1(rng, n, T)
    log = FeedbackLog.from_patterns(patterns, n)
    mc = multicast_until_all(packetize_log(log, L), ChannelModel.symmetric([0.5] * n).source(rng), n, L)
    for u in range(n):
        own = [0 if p >> u & 1 else 1 for p in patterns]
        rep = receiver_reconstruct(fifos[u] + mc.fifos[u], own, u, n, L)
        assert rep.log == log.groups
        got = [None if x is None else int(x[0]) for x in rep.received]
        assert got == [t % 256 if own[t] else None for t in range(T)]


def test_multicast_delivers_everything_once_terminated():
    rng = np.random.default_rng(0)
    pkts = packetize_log([1, 2, 3, 0, 1], 8, 2)
    mc = multicast_until_all(pkts, ChannelModel.symmetric([0.6, 0.3]).source(rng), 2, 8)
    assert len(mc.slots) == len(pkts) + 1
    for fifo in mc.fifos:
        assert set(pkts) <= set(fifo)
        assert fifo[-1] == termination_packet(8)
        assert fifo.count(termination_packet(8)) == 1
    assert mc.total == sum(mc.slots) >= len(pkts) + 1


def test_overhead_slots_ignores_contents():
    rng_a, rng_b = np.random.default_rng(4), np.random.default_rng(4)
    model = ChannelModel.symmetric([0.3, 0.1])
    pats = [int(x) for x in np.random.default_rng(1).integers(0, 4, size=30)]
    a = overhead_slots(30, model.source(rng_a), 2, 12)
    b = overhead_slots(30, model.source(rng_b), 2, 12, patterns=pats)
    assert a.slots == b.slots


class TestFramingErrors:
    n, L = 2, 8

    def fifo(self):
        pats = [0b10, 0b00, 0b01]
        own = [1, 1, 0]                            # user 1 heard slots 1 and 2
        infos = [InfoFrame(np.zeros(1, np.uint8), 1), InfoFrame(np.zeros(1, np.uint8), 2)]
        pkts = packetize_log(FeedbackLog.from_patterns(pats, 2), self.L)
        return infos, pkts, own

    def test_clean(self):
        infos, pkts, own = self.fifo()
        receiver_reconstruct(infos + pkts + [termination_packet(8)], own, 0, 2, 8)

    def test_duplicates_are_dropped(self):
        infos, pkts, own = self.fifo()
        fifo = infos + [pkts[0], pkts[0]] + pkts[1:] + [termination_packet(8)]
        assert receiver_reconstruct(fifo, own, 0, 2, 8).log == [0b01, 0b11, 0b10]

    def test_missing_termination(self):
        infos, pkts, own = self.fifo()
        with pytest.raises(FramingError):
            receiver_reconstruct(infos + pkts, own, 0, 2, 8)

    def test_info_after_feedback(self):
        infos, pkts, own = self.fifo()
        with pytest.raises(FramingError):
            receiver_reconstruct(infos[:1] + pkts + infos[1:] + [termination_packet(8)], own, 0, 2, 8)

    def test_lost_feedback_packet(self):
        infos, pkts, own = self.fifo()
        with pytest.raises(FramingError):
            receiver_reconstruct(infos + pkts[:-1] + [termination_packet(8)], own, 0, 2, 8)

    def test_log_contradicts_own_feedback(self):
        infos, pkts, own = self.fifo()
        with pytest.raises(FramingError):
            receiver_reconstruct(infos + pkts + [termination_packet(8)], [1, 0, 1], 0, 2, 8)

    def test_wrong_info_count(self):
        infos, pkts, own = self.fifo()
        with pytest.raises(FramingError):
            receiver_reconstruct(infos[:1] + pkts + [termination_packet(8)], own, 0, 2, 8)
