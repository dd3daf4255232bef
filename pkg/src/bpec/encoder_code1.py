"""The single-queue coder (CODE1): phases 1..N over the queue network.

One class, :class:`Code1Process`, plays both sides.  With ``observer=None``
it is the transmitter; with ``observer=i`` it is user i's replica, fed with
the same feedback and with user i's own receptions.  Everything that decides
what is sent next (schedule, recipe draws, acceptance tests) reads only
state that both sides hold, which is what lets receivers regenerate recipes
instead of reading coefficients from headers.

Recipe coefficients come from :class:`SharedRecipeRng`, a SplitMix64 stream
(Steele, Lea and Flood, 2014): state advances by 0x9E3779B97F4A7C15 and each
output is mixed with the multipliers 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB.
A coefficient in GF(2^m) is the top m bits of one output.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import gf as gfm
from .channel import PatternSource, popcount, users_of
from .queue_net import (
    DesyncError,
    Plan,
    QueueNetwork,
    StoredPacket,
    apply_plan_indices,
    check_invariants,
    initialize,
    plan_actfb1,
    plan_actfb2,
)

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MAX_ATTEMPTS = 10**6


class RecipeExhausted(RuntimeError):
    """No acceptable recipe after MAX_ATTEMPTS draws; the field is too small."""


class RouteMismatch(AssertionError):
    """Fast and reference basis tests disagreed."""


class SharedRecipeRng:
    """SplitMix64 coefficient stream shared by transmitter and receivers."""

    def __init__(self, seed: int, m: int):
        self.state = int(seed) & MASK64
        self.m = m
        self._shift = 64 - m

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def coefficients(self, count: int) -> np.ndarray:
        sh = self._shift
        return np.fromiter((self.next_u64() >> sh for _ in range(count)), dtype=np.int64, count=count)


# -- schedules -----------------------------------------------------------------


def subsets_of_size(n: int, level: int) -> list[int]:
    """Masks with ``level`` users, in lexicographic order of their user lists."""
    return [sum(1 << u for u in combo) for combo in itertools.combinations(range(n), level)]


def code1_schedule(k: Sequence[Sequence[int]], n: int) -> Iterator[tuple]:
    """Yield ``('single', S)`` for every new transmission CODE1 makes."""
    for level in range(1, n + 1):
        for S in subsets_of_size(n, level):
            users = users_of(S)
            while any(k[i][S] > 0 for i in users):
                yield ("single", S)


# -- slot records and statistics ---------------------------------------------------


@dataclass
class Transmission:
    kind: str
    sources: tuple[int, ...]
    packets: list[StoredPacket]
    coeffs: np.ndarray
    targets: tuple[tuple[int, int], ...]
    payload: np.ndarray | None
    views: dict
    attempts: int
    label: int
    phase: str
    pair: tuple[int, int] | None = None


@dataclass
class SlotRecord:
    slot: int
    phase: str
    label: int
    sources: tuple[int, ...]
    coeffs: tuple[int, ...]
    pattern: int
    retransmit: bool
    steps: tuple[int, ...]
    attempts: int


@dataclass
class SlotStats:
    """Per-queue slot counts; ``per_user[(i, S)]`` is slots until K^i_S hit zero."""

    total: int = 0
    per_queue: dict = field(default_factory=dict)
    per_user: dict = field(default_factory=dict)
    phase_slots: dict = field(default_factory=dict)
    recipes: int = 0
    attempts: int = 0

    def start(self, label: int, k) -> None:
        if label not in self.per_queue:
            self.per_queue[label] = 0
            for i in users_of(label):
                if k[i][label] == 0:
                    self.per_user.setdefault((i, label), 0)

    def count(self, label: int, phase: str, k) -> None:
        self.total += 1
        self.per_queue[label] += 1
        self.phase_slots[phase] = self.phase_slots.get(phase, 0) + 1
        for i in users_of(label):
            if k[i][label] == 0 and (i, label) not in self.per_user:
                self.per_user[(i, label)] = self.per_queue[label]


@dataclass
class RunResult:
    total_slots: int
    per_queue: dict
    per_user: dict
    phase_slots: dict
    deadline_exceeded: bool
    recipes: int = 0
    attempts: int = 0
    transcript: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)


def draw_recipe(rng: SharedRecipeRng, n_packets: int, accept, q: int | None = None) -> tuple[np.ndarray, int]:
    """Draw coefficient vectors until ``accept`` passes; returns it and the draw count."""
    for attempts in range(1, MAX_ATTEMPTS + 1):
        coeffs = rng.coefficients(n_packets)
        if accept(coeffs):
            return coeffs, attempts
    raise RecipeExhausted(f"no valid recipe after {MAX_ATTEMPTS} draws (q={q})")


def basis_test(f: gfm.GF, ys) -> callable:
    """Fast acceptance: every target's head coordinate ``coeffs . y`` is nonzero."""
    return lambda coeffs: all(f.dot(coeffs, y) != 0 for y in ys)


# -- the process -----------------------------------------------------------------


class Code1Process:
    """CODE1 state machine for the transmitter or one receiver's replica."""

    name = "code1"

    def __init__(self, sizes: Sequence[int], f: gfm.GF, payload_len: int, seed: int,
                 sessions: Sequence[Sequence[np.ndarray]] | None = None,
                 observer: int | None = None, policy: str = "coded",
                 check_routes: bool = False, keep_transcript: bool = True):
        if observer is None and sessions is None:
            raise ValueError("the transmitter needs the session packets")
        if policy not in ("coded", "uncoded"):
            raise ValueError("policy must be 'coded' or 'uncoded'")
        self.f = f
        self.n = len(sizes)
        self.observer = observer
        self.policy = policy
        self.check_routes = check_routes
        self.keep_transcript = keep_transcript
        self.net: QueueNetwork = initialize(sizes, f, payload_len, None if observer is not None else sessions,
                                            observer)
        self.rng = SharedRecipeRng(seed, f.m)
        self.slot = 0
        self.current: Transmission | None = None
        self.finished = False
        self.stats = SlotStats()
        self.transcript: list[SlotRecord] = []
        self.equations: list[tuple[np.ndarray, np.ndarray]] = []
        self.marks: dict = {}
        self._schedule = self.schedule()

    @property
    def k(self):
        return self.net.k

    @property
    def full(self) -> int:
        return self.net.full

    # hooks for subclasses --------------------------------------------------------

    def schedule(self) -> Iterator[tuple]:
        return code1_schedule(self.net.k, self.n)

    def phase_of(self, spec: tuple) -> str:
        return str(popcount(spec[1]))

    def build(self, spec: tuple) -> Transmission:
        S = spec[1]
        targets = tuple((i, S) for i in users_of(S) if self.net.k[i][S] > 0)
        return self._make(spec[0], (S,), targets, S, self.phase_of(spec))

    def plan(self, tx: Transmission, G: int) -> Plan:
        return plan_actfb1(self.net.k, tx.sources[0], G)

    # recipe generation -----------------------------------------------------------

    def _make(self, kind: str, sources: tuple[int, ...], targets, label: int, phase: str,
              pair=None) -> Transmission:
        net, f = self.net, self.f
        packets = [p for s in sources for p in net.queues.get(s, ())]
        if not packets:
            raise DesyncError(f"queue {sources} is empty but still scheduled")
        # coordinate of the combined view along each target's head vector is
        # coeffs . y, with y[r] = b_r . W[:, head]
        ys = []
        for i, key in targets:
            bmat = np.array([p.views[i].b for p in packets], dtype=f.dtype)
            ys.append(f.matmul(bmat, net.bases[i].pivot_column(key)[:, None])[:, 0])
        if self.policy == "uncoded" and kind == "single" and popcount(sources[0]) == 1 and targets:
            coeffs = self._uncoded(packets, targets[0])
            attempts = 1
            if not self._accept(coeffs, ys, packets, targets):
                raise DesyncError("uncoded packet failed the basis test")
        else:
            coeffs, attempts = draw_recipe(self.rng, len(packets),
                                           lambda c: self._accept(c, ys, packets, targets), f.q)
        common = net.full
        for s in sources:
            common &= s
        payload, views = net.combine(packets, coeffs, users_of(common))
        self.stats.recipes += 1
        self.stats.attempts += attempts
        return Transmission(kind, sources, packets, coeffs, targets, payload, views, attempts, label, phase, pair)

    def _uncoded(self, packets, target) -> np.ndarray:
        i, key = target
        basis = self.net.bases[i]
        want = basis.U[basis.head(key)].tobytes()
        for r, p in enumerate(packets):
            if p.views[i].key() == want:
                coeffs = np.zeros(len(packets), dtype=np.int64)
                coeffs[r] = 1
                return coeffs
        raise DesyncError("no stored packet matches the head basis vector")

    def _accept(self, coeffs, ys, packets, targets) -> bool:
        f = self.f
        fast = basis_test(f, ys)(coeffs)
        if self.check_routes:
            ref = True
            for i, key in targets:
                b = f.combine(coeffs, [p.views[i].b for p in packets])
                basis = self.net.bases[i]
                union = list(basis.U)
                ref &= gfm.is_basis_after_swap(union, union[basis.head(key)], b, f)
            if ref != fast:
                raise RouteMismatch("fast basis test disagrees with elimination")
        return fast

    # driving ---------------------------------------------------------------------

    def prepare(self) -> Transmission | None:
        """Return the packet for the coming slot (None once finished)."""
        if self.current is None and not self.finished:
            spec = next(self._schedule, None)
            if spec is None:
                self.finished = True
                self.marks.setdefault("end", self.slot)
            else:
                tx = self.build(spec)
                self.stats.start(tx.label, self.net.k)
                self.current = tx
        return self.current

    def step(self, pattern: int, observed: np.ndarray | None = None) -> SlotRecord:
        """Consume one slot of feedback; ``observed`` is this replica's reception."""
        tx = self.prepare()
        if tx is None:
            raise RuntimeError("process already finished")
        net = self.net
        self.slot += 1
        G = net.full & ~pattern
        plan = self.plan(tx, G)
        if not plan.retransmit:
            payload = tx.payload
            if payload is None and self.observer is not None and G >> self.observer & 1:
                if observed is None:
                    raise DesyncError(f"slot {self.slot}: user {self.observer + 1} received but no payload given")
                payload = self.f.asvec(observed)
            if self.observer is not None:
                for i, _ in plan.deliver:
                    if i == self.observer:
                        view = tx.views[i]
                        if view.c is None or payload is None:
                            raise DesyncError("receiver lacks the constant for a delivered token")
                        self.equations.append((view.b.copy(), payload ^ view.c))
            net.apply(plan, payload, tx.views, self.slot, G)
            self.current = None
        self.stats.count(tx.label, tx.phase, net.k)
        rec = SlotRecord(self.slot, tx.phase, tx.label, tx.sources,
                         tuple(int(c) for c in tx.coeffs) if self.keep_transcript else (),
                         pattern, plan.retransmit, plan.steps, tx.attempts)
        if self.keep_transcript:
            self.transcript.append(rec)
        return rec

    def snapshot(self) -> tuple:
        cur = None
        if self.current is not None:
            cur = (self.current.sources, self.current.coeffs.tobytes(), self.current.targets)
        return (self.net.snapshot(), self.rng.state, self.slot, cur, tuple(sorted(self.marks.items())))

    def result(self, deadline_exceeded: bool = False) -> RunResult:
        s = self.stats
        return RunResult(s.total, dict(s.per_queue), dict(s.per_user), dict(s.phase_slots),
                         deadline_exceeded, s.recipes, s.attempts, list(self.transcript), dict(self.marks))

    def check(self) -> None:
        check_invariants(self.net)


def make_process(algorithm: str, *args, **kwargs) -> Code1Process:
    if algorithm.startswith("code2"):
        from .encoder_code2 import Code2Process
        return Code2Process(*args, **kwargs)
    return Code1Process(*args, **kwargs)


def run_to_completion(proc: Code1Process, source: PatternSource, slot_cap: int | None = None) -> RunResult:
    """Drive ``proc`` against a channel until it finishes or exceeds ``slot_cap``."""
    while proc.prepare() is not None:
        if slot_cap is not None and proc.slot >= slot_cap:
            return proc.result(deadline_exceeded=True)
        proc.step(source.draw())
    return proc.result()


# -- slot-count engine -------------------------------------------------------------


class IndexRun:
    """Index-only counterpart of the full process.

    Tracks only ``k`` and ``kd`` with the same planners and schedules, so for
    one pattern stream it yields exactly the slot counts of the full engine,
    without packets or bases.  Used for long blocks.
    """

    def __init__(self, sizes: Sequence[int], algorithm: str = "code1"):
        n = len(sizes)
        self.n = n
        self.full = (1 << n) - 1
        self.k = [[0] * (1 << n) for _ in range(n)]
        for i, d in enumerate(sizes):
            self.k[i][1 << i] = int(d)
        self.kd = [0] * n
        self.slot = 0
        self.marks: dict = {}
        self.stats = SlotStats()
        if algorithm.startswith("code2"):
            from .encoder_code2 import code2_schedule
            self._schedule = code2_schedule(self)
        else:
            self._schedule = code1_schedule(self.k, n)

    def run(self, source: PatternSource, slot_cap: int | None = None) -> RunResult:
        k, kd, full = self.k, self.kd, self.full
        stats = self.stats
        for spec in self._schedule:
            if spec[0] == "single":
                S = label = spec[1]
                phase = str(popcount(S))
            else:
                i_star, j = spec[1], spec[2]
                label = (1 << i_star) | (1 << j)
                phase = "2.1"
            stats.start(label, k)
            while True:
                if slot_cap is not None and self.slot >= slot_cap:
                    return self._result(True)
                G = full & ~source.draw()
                self.slot += 1
                if spec[0] == "single":
                    plan = plan_actfb1(k, S, G)
                else:
                    plan = plan_actfb2(k, i_star, j, full, G)
                if not plan.retransmit:
                    apply_plan_indices(k, kd, plan)
                stats.count(label, phase, k)
                if not plan.retransmit:
                    break
        self.marks.setdefault("end", self.slot)
        return self._result(False)

    def _result(self, exceeded: bool) -> RunResult:
        s = self.stats
        return RunResult(s.total, dict(s.per_queue), dict(s.per_user), dict(s.phase_slots), exceeded,
                         extras=dict(self.marks))


def count_slots(sizes: Sequence[int], source: PatternSource, algorithm: str = "code1",
                slot_cap: int | None = None) -> RunResult:
    return IndexRun(sizes, algorithm).run(source, slot_cap)
