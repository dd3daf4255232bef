"""Three-user coder (CODE2).

Phase 1 is CODE1's.  In phase 2 each pair queue is served only until one of
its two indices reaches zero.  At that point (``t2``) every pair queue has at
most one surviving index, and the survival number of user l counts the pair
queues where l survives.  For each pair ``{i*, j}`` whose survivor j is
paired with a user i* that survives nowhere, the transmitter mixes the pair
queue with the all-user queue until j's index there is zero (subphase 2.1),
then recomputes survival numbers and repeats.  Anything left in the pair
queues is finished CODE1-style before the final all-user phase.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

from .channel import users_of
from .encoder_code1 import Code1Process, Transmission, subsets_of_size
from .queue_net import Plan, QueueNetwork, plan_actfb2


class UnsupportedN(ValueError):
    """CODE2 is defined for exactly three users."""


class InvalidSurvival(ValueError):
    """Survival numbers that cannot arise at the end of phase 2."""


@dataclass(frozen=True)
class SurvivalState:
    su: tuple[int, int, int]
    q_su: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class Branch:
    kind: str
    category: str | None = None
    roles: tuple[int, int, int] | None = None   # (i*, j*, k*), 1-based


PAIRS = subsets_of_size(3, 2)
FULL3 = 0b111


def survival(k: Sequence[Sequence[int]]) -> SurvivalState:
    """Survival numbers and the list of pair queues to mix, from the indices."""
    su = [0, 0, 0]
    for S in PAIRS:
        alive = [i for i in users_of(S) if k[i][S] > 0]
        if len(alive) > 1:
            raise InvalidSurvival(f"pair queue {S} still has two surviving indices")
        for i in alive:
            su[i] += 1
    q_su = []
    for S in PAIRS:
        a, b = users_of(S)
        for i_star, j in ((a, b), (b, a)):
            if su[i_star] == 0 and k[j][S] > 0:
                q_su.append((i_star, j))
    return SurvivalState(tuple(su), tuple(q_su))


def classify_at_t2(su) -> Branch:
    """Which way CODE2 continues, given survival numbers (indexed by user 0..2)."""
    if isinstance(su, SurvivalState):
        su = su.su
    su = tuple(int(v) for v in su)
    if len(su) != 3 or any(v not in (0, 1, 2) for v in su):
        raise InvalidSurvival(f"bad survival numbers {su}")
    if su == (0, 0, 0):
        return Branch("revert_phase3")
    if su == (1, 1, 1):
        return Branch("finish_level2_as_code1")
    zeros = [u for u in range(3) if su[u] == 0]
    ones = [u for u in range(3) if su[u] == 1]
    twos = [u for u in range(3) if su[u] == 2]
    shape = (len(zeros), len(ones), len(twos))
    # labelling of tied users: survivors in increasing order, zero-survival
    # users in decreasing order
    if shape == (1, 1, 1):
        cat, roles = "a", (zeros[0], ones[0], twos[0])
    elif shape == (1, 2, 0):
        cat, roles = "b", (zeros[0], ones[0], ones[1])
    elif shape == (2, 0, 1):
        cat, roles = "c", (zeros[1], zeros[0], twos[0])
    elif shape == (2, 1, 0):
        cat, roles = "d", (zeros[1], zeros[0], ones[0])
    else:
        raise InvalidSurvival(f"survival numbers {su} cannot occur")
    return Branch("subphase21", cat, tuple(r + 1 for r in roles))


def code2_schedule(host) -> Iterator[tuple]:
    """Transmission specs for CODE2.  ``host`` exposes k, n, full, slot, marks."""
    k, n, full = host.k, host.n, host.full
    if n != 3:
        raise UnsupportedN(f"CODE2 needs exactly 3 users, got {n}")
    for S in subsets_of_size(3, 1):
        (i,) = users_of(S)
        while k[i][S] > 0:
            yield ("single", S)
    for S in PAIRS:
        a, b = users_of(S)
        while k[a][S] > 0 and k[b][S] > 0:
            yield ("single", S)
    host.marks["t2"] = host.slot
    host.marks["k_full_t2"] = tuple(k[i][full] for i in range(3))
    host.marks["k_pairs_t2"] = tuple(tuple(k[i][S] for i in range(3)) for S in PAIRS)
    state = survival(k)
    host.marks["su"] = state.su
    branch = classify_at_t2(state)
    host.marks["branch"] = (branch.kind, branch.category, branch.roles)
    passes = 0
    while state.q_su:
        passes += 1
        for i_star, j in state.q_su:
            pair = (1 << i_star) | (1 << j)
            while k[j][pair] > 0:
                yield ("mixed", i_star, j)
        state = survival(k)
    host.marks["passes"] = passes
    for S in PAIRS:
        users = users_of(S)
        while any(k[i][S] > 0 for i in users):
            yield ("single", S)
    host.marks["t3"] = host.slot
    host.marks["k_full_t3"] = tuple(k[i][full] for i in range(3))
    while any(k[i][full] > 0 for i in range(3)):
        yield ("single", full)


def apply_actfb2(net: QueueNetwork, pair: tuple[int, int], sent: tuple, received_by: int,
                 slot: int = 0) -> Plan:
    """Mixed-queue feedback rule; ``pair`` is ``(i*, j)`` and ``sent`` ``(payload, views)``."""
    i_star, j = pair
    plan = plan_actfb2(net.k, i_star, j, net.full, received_by)
    net.apply(plan, sent[0], sent[1], slot, received_by)
    return plan


class Code2Process(Code1Process):
    """CODE2 transmitter or receiver replica (three users)."""

    name = "code2"

    def __init__(self, sizes, *args, **kwargs):
        if len(sizes) != 3:
            raise UnsupportedN(f"CODE2 needs exactly 3 users, got {len(sizes)}")
        super().__init__(sizes, *args, **kwargs)

    def schedule(self):
        return code2_schedule(self)

    def build(self, spec: tuple) -> Transmission:
        if spec[0] == "single":
            return super().build(spec)
        _, i_star, j = spec
        full = self.net.full
        pair = (1 << i_star) | (1 << j)
        # j's head comes from the pair queue (it survives there); i*'s from the
        # all-user queue, and only while i* still needs tokens from it
        targets = [(j, pair)]
        if self.net.k[i_star][full] > 0:
            targets.append((i_star, full))
        return self._make("mixed", (pair, full), tuple(targets), pair, "2.1", (i_star, j))

    def plan(self, tx: Transmission, G: int) -> Plan:
        if tx.kind == "mixed":
            i_star, j = tx.pair
            return plan_actfb2(self.net.k, i_star, j, self.net.full, G)
        return super().plan(tx, G)


def run_code2(sessions, source, f, payload_len: int, seed: int, slot_cap: int | None = None):
    """Transmitter-only CODE2 run; see :mod:`bpec.harness` for full trials."""
    from .encoder_code1 import run_to_completion
    sizes = [len(s) for s in sessions]
    proc = Code2Process(sizes, f, payload_len, seed, sessions=sessions)
    return run_to_completion(proc, source, slot_cap)
