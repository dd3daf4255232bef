import numpy as np
import pytest

from bpec import gf
from bpec.channel import ChannelModel
from bpec.decoder import DesyncError, RankDeficient, ReceiverState, SessionMeta, decode, decode_private, replay_slot
from bpec.encoder_code1 import make_process
from bpec.overhead import FeedbackLog, InfoFrame, multicast_until_all, packetize_log


def _stage1(sizes, m, seed, model, algorithm="code1", L=16):
    f = gf.field(m)
    rng = np.random.default_rng(seed)
    sessions = [[f.random_vector(rng, 3) for _ in range(d)] for d in sizes]
    tx = make_process(algorithm, sizes, f, 3, seed, sessions=sessions)
    n = len(sizes)
    src = model.source(np.random.default_rng(seed + 1))
    patterns, fifos = [], [[] for _ in range(n)]
    while (t := tx.prepare()) is not None:
        p = src.draw()
        patterns.append(p)
        tx.step(p)
        for u in range(n):
            if not p >> u & 1:
                fifos[u].append(InfoFrame(t.payload, tx.slot))
    meta = SessionMeta(tuple(sizes), m, 3, seed, algorithm, L_bits=L)
    return sessions, patterns, fifos, meta, src


@pytest.mark.parametrize("algorithm", ["code1", "code2"])
@pytest.mark.parametrize("seed", range(4))
def test_private_decoding(algorithm, seed):
    model = ChannelModel.symmetric([0.4, 0.2, 0.1])
    sessions, patterns, fifos, meta, src = _stage1([6, 4, 5], 8, seed, model, algorithm)
    mc = multicast_until_all(packetize_log(FeedbackLog.from_patterns(patterns, 3), 16), src, 3, 16)
    for u in range(3):
        own = [0 if p >> u & 1 else 1 for p in patterns]
        got = decode_private(fifos[u] + mc.fifos[u], own, u, meta)
        assert all(np.array_equal(a, b) for a, b in zip(got, sessions[u]))


def test_truncated_log():
    model = ChannelModel.symmetric([0.4, 0.2, 0.1])
    _, patterns, fifos, meta, _ = _stage1([4, 4, 4], 8, 2, model)
    u = 0
    short = patterns[:-1]
    own = [0 if p >> u & 1 else 1 for p in short]
    hits = sum(own)
    pk = packetize_log(FeedbackLog.from_patterns(short, 3), 16)
    with pytest.raises(DesyncError):
        decode_private(fifos[u][:hits] + pk + [bytes(2)], own, u, meta)


def test_replay_guards_and_rank():
    meta = SessionMeta((2, 1), 8, 1, 0)
    st = ReceiverState(0, meta)
    with pytest.raises(DesyncError):
        replay_slot(st, 0b00, None)                  # heard but no payload
    with pytest.raises(DesyncError):
        replay_slot(st, 0b01, np.zeros(1, np.uint8))  # erased yet a payload
    with pytest.raises(RankDeficient):
        decode(st)
    assert decode(ReceiverState(1, SessionMeta((2, 0), 8, 1, 0))) == []
    with pytest.raises(ValueError):
        decode_private([bytes(2)], [], 0, meta)       # no packet length configured
