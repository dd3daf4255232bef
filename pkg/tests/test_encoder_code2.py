import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bpec import gf
from bpec.channel import ChannelModel
from bpec.decoder import decode
from bpec.encoder_code1 import IndexRun
from bpec.encoder_code2 import (Branch, Code2Process, InvalidSurvival, UnsupportedN, classify_at_t2, run_code2,
                                survival)
from conftest import random_joint_channel
from test_encoder_code1 import _full_run


@pytest.mark.parametrize("su, want", [
    ((0, 0, 0), Branch("revert_phase3")),
    ((1, 1, 1), Branch("finish_level2_as_code1")),
    ((0, 1, 2), Branch("subphase21", "a", (1, 2, 3))),
    ((2, 0, 1), Branch("subphase21", "a", (2, 3, 1))),
    ((0, 1, 1), Branch("subphase21", "b", (1, 2, 3))),
    ((1, 0, 1), Branch("subphase21", "b", (2, 1, 3))),
    ((0, 0, 2), Branch("subphase21", "c", (2, 1, 3))),
    ((2, 0, 0), Branch("subphase21", "c", (3, 2, 1))),
    ((0, 0, 1), Branch("subphase21", "d", (2, 1, 3))),
    ((0, 1, 0), Branch("subphase21", "d", (3, 1, 2))),
])
def test_branch_table(su, want):
    assert classify_at_t2(su) == want


@pytest.mark.parametrize("su", [(2, 2, 2), (2, 2, 0), (1, 1, 2), (3, 0, 0), (0, 0)])
def test_impossible_survival_numbers(su):
    with pytest.raises(InvalidSurvival):
        classify_at_t2(su)


def test_survival_from_indices():
    k = [[0] * 8 for _ in range(3)]
    k[0][0b011] = 2          # user 1 survives on {1,2}
    k[2][0b101] = 1          # user 3 survives on {1,3}
    state = survival(k)
    assert state.su == (1, 0, 1)
    # user 2 survives nowhere, so {1,2} (survivor 1) is mixed; {2,3} has no survivor
    assert state.q_su == ((1, 0),)
    k[1][0b011] = 1
    with pytest.raises(InvalidSurvival):
        survival(k)


def test_needs_three_users():
    f = gf.field(8)
    with pytest.raises(UnsupportedN):
        Code2Process([1, 1], f, 1, 0, sessions=[[f.asvec([1])], [f.asvec([2])]])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([4, 8]))
def test_code2_replicas_track_and_decode(seed, m):
    rng = np.random.default_rng(seed)
    model = random_joint_channel(rng, 3)
    sizes = [int(x) for x in rng.integers(0, 9, size=3)]
    tx, rx, sessions, patterns = _full_run(sizes, model, seed, algorithm="code2", m=m)
    for i, r in enumerate(rx):
        assert all(np.array_equal(a, b) for a, b in zip(decode(r), sessions[i]))
    marks = tx.marks
    if sum(sizes):
        assert marks["passes"] <= 2
        assert set(marks) >= {"t2", "su", "branch", "t3", "k_full_t3"}
    fast = IndexRun(sizes, "code2").run(ChannelModel.scripted(patterns, 3).source())
    assert fast.total_slots == tx.result().total_slots
    assert fast.extras["su"] == marks["su"]


def test_mixing_happens_on_asymmetric_instance():
    # user 1 has far more traffic, so pair queues end with user 1 surviving
    model = ChannelModel.symmetric([0.3, 0.15, 0.05])
    f = gf.field(8)
    rng = np.random.default_rng(1)
    sessions = [[f.random_vector(rng, 1) for _ in range(d)] for d in (40, 5, 5)]
    res = run_code2(sessions, model.source(np.random.default_rng(2)), f, 1, 9)
    assert res.phase_slots.get("2.1", 0) > 0
    assert res.extras["su"][0] >= 1
