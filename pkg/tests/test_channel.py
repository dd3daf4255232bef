import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bpec.channel import (ChannelModel, InvalidChannel, TraceExhausted, channel_from_spec, format_pattern,
                          format_subset, mask_of, parse_pattern, parse_subset, superset_moebius, superset_sums,
                          users_of)
from conftest import random_joint_channel


def brute_eps(probs, n, I):
    return math.fsum(p for x, p in enumerate(probs) if x & I == I)


@given(st.integers(1, 8).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, (1 << n) - 1))))
def test_pattern_text_roundtrip(nm):
    n, mask = nm
    assert parse_pattern(format_pattern(mask, n)) == mask


def test_pattern_conventions():
    assert parse_pattern("REE") == 0b110
    assert parse_pattern("XER") == 0b010          # X is read as received
    assert format_pattern(0b001, 3) == "ERR"
    with pytest.raises(ValueError):
        parse_pattern("RQE")


def test_subset_helpers():
    assert users_of(0b1011) == [0, 1, 3]
    assert mask_of([3, 0]) == 0b1001
    assert parse_subset("{1,3}") == 0b101 == parse_subset([1, 3])
    assert format_subset(0b101) == "{1,3}"


@settings(max_examples=40)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_superset_transforms_invert(n, seed):
    t = np.random.default_rng(seed).random(1 << n)
    assert np.allclose(superset_moebius(superset_sums(t, n), n), t)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_epsilons_against_direct_sum(n, seed):
    model = random_joint_channel(np.random.default_rng(seed), n)
    eps = model.epsilons()
    for I in range(1, 1 << n):
        assert eps[I] == pytest.approx(brute_eps(model.pattern_probs, n, I), abs=1e-12)
    back = ChannelModel.from_epsilons(eps)
    assert np.allclose(back.pattern_probs, model.pattern_probs, atol=1e-12)


def test_symmetric_intersections():
    m = ChannelModel.symmetric([0.3, 0.15, 0.05])
    eps = m.epsilons()
    for I in range(1, 8):
        assert eps[I] == pytest.approx([0.3, 0.15, 0.05][bin(I).count("1") - 1], abs=1e-12)
    with pytest.raises(InvalidChannel):
        ChannelModel.symmetric([0.1, 0.5])        # eps_12 > eps_1 is impossible


def test_independent_products():
    e = [0.1, 0.5, 0.25]
    eps = ChannelModel.independent(e).epsilons()
    for r in range(1, 4):
        for combo in itertools.combinations(range(3), r):
            assert eps[mask_of(combo)] == pytest.approx(math.prod(e[u] for u in combo))


def test_invalid_tables():
    with pytest.raises(InvalidChannel):
        ChannelModel.joint([0.5, 0.6, -0.1, 0.0])
    with pytest.raises(InvalidChannel):
        ChannelModel.joint([0.5, 0.5, 0.5])
    with pytest.raises(InvalidChannel):
        ChannelModel.joint([0.0, 1.0])              # the only user always erases
    with pytest.raises(InvalidChannel):
        ChannelModel.from_epsilons({1: 0.2, 2: 0.2, 3: 0.3}, n_users=2)  # eps_12 > eps_1


def test_sampling_frequencies():
    model = random_joint_channel(np.random.default_rng(5), 3)
    src = model.source(np.random.default_rng(6))
    n = 200_000
    counts = np.bincount([src.draw() for _ in range(n)], minlength=8)
    sd = np.sqrt(model.pattern_probs * (1 - model.pattern_probs) / n)
    assert np.all(np.abs(counts / n - model.pattern_probs) < 5 * sd + 1e-9)


def test_stream_depends_only_on_generator():
    model = ChannelModel.symmetric([0.3, 0.15, 0.05])
    a = model.source(np.random.default_rng(9))
    b = model.source(np.random.default_rng(9), batch=7)
    assert [a.draw() for _ in range(50)] == [b.draw() for _ in range(50)]


def test_scripted_replay():
    model = ChannelModel.scripted(["REE", "ERR"])
    src = model.source()
    assert [src.draw(), src.draw()] == [0b110, 0b001]
    assert src.remaining() == 0
    with pytest.raises(TraceExhausted):
        src.draw()


def test_spec_parsing():
    m = channel_from_spec({"kind": "joint", "n_users": 2, "eps": {"1": 0.3, "2": 0.4, "1,2": 0.1}})
    assert m.epsilon(0b11) == pytest.approx(0.1)
    assert channel_from_spec({"kind": "independent", "eps": [0.5, 0.5]}).epsilon(3) == pytest.approx(0.25)
    with pytest.raises(InvalidChannel):
        channel_from_spec({"kind": "gilbert"})
