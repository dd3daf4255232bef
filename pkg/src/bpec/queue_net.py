"""Transmitter-side virtual queue network.

Queue ``Q_S`` (S a non-empty user mask) holds packets that are tokens for
exactly the users in S.  Each stored packet carries, for every user i in S,
a :class:`TokenView` ``(b, c)`` with ``s = sum_j b[j] * K_i[j] + c``, where
``K_i`` is user i's session.

Index bookkeeping (``k[i][S]`` and ``kd[i]``) is kept apart from the packet
bookkeeping: the feedback rules are written once as pure functions on the
index arrays (:func:`plan_actfb1`, :func:`plan_actfb2`) that return a
:class:`Plan`, and the network applies that plan to queues and bases.  The
fast slot-count engines reuse the same planners without any packets.

Basis sets are tracked per user by :class:`UserBasis`.  It holds the union
basis as the rows of a d x d matrix ``U`` together with its inverse ``W``;
every row position is owned either by a queue mask S (a member of
``B^(i)_S``) or by ``DELIVERED`` (a member of ``B_D``).  Replacing the oldest
member of a set by a new vector is a rank-one update of ``W``.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import gf as gfm
from .channel import users_of

DELIVERED = 0


class FieldTooSmall(ValueError):
    """Coefficient field must have more elements than there are users."""


class BasisError(RuntimeError):
    """A basis exchange was requested that would break the basis property."""


class DesyncError(RuntimeError):
    """A replayed state disagrees with what the slot record implies."""


@dataclass
class TokenView:
    b: np.ndarray
    c: np.ndarray | None

    def key(self) -> bytes:
        return self.b.tobytes()


@dataclass
class StoredPacket:
    payload: np.ndarray | None
    views: dict[int, TokenView]
    origin_slot: int
    received_by: int = 0
    label: str = ""


# -- index rules -------------------------------------------------------------


@dataclass(frozen=True)
class Plan:
    """What one slot of feedback does to the indices.

    ``deliver``: (user, source key) pairs whose index drops by one and whose
    delivered count grows.  ``migrate``: (user, source key, target key) moves.
    ``append_to``: mask of the queue that receives the transmitted packet (0
    for none); ``newcomers``: users that see the packet only as a received
    constant.  ``steps`` lists the rule numbers that fired.
    """

    retransmit: bool
    deliver: tuple = ()
    migrate: tuple = ()
    append_to: int = 0
    newcomers: int = 0
    steps: tuple = ()


RETRANSMIT_ALL_ERASED = Plan(True, steps=(1,))
RETRANSMIT_NOTHING_NEW = Plan(True, steps=(2,))


def plan_actfb1(k: Sequence[Sequence[int]], S: int, G: int) -> Plan:
    """Feedback rule for a packet combined from ``Q_S`` and heard by ``G``."""
    if G == 0:
        return RETRANSMIT_ALL_ERASED
    users = users_of(S)
    extra = G & ~S
    if extra == 0 and all(k[i][S] == 0 for i in users if G >> i & 1):
        return RETRANSMIT_NOTHING_NEW
    deliver = tuple((i, S) for i in users if G >> i & 1 and k[i][S] > 0)
    erasers = [i for i in users if not G >> i & 1]
    steps = []
    if deliver:
        steps.append(3)
    migrate: tuple = ()
    target = 0
    if erasers and extra:
        target = S | G
        migrate = tuple((i, S, target) for i in erasers if k[i][S] > 0)
        steps.append(4)
    return Plan(False, deliver, migrate, target, extra if target else 0, tuple(steps))


def plan_actfb2(k: Sequence[Sequence[int]], i_star: int, j: int, full: int, G: int) -> Plan:
    """Feedback rule for a packet mixing ``Q_{i*,j}`` with the all-user queue."""
    if G == 0:
        return RETRANSMIT_ALL_ERASED
    pair = (1 << i_star) | (1 << j)
    if G == 1 << i_star and k[i_star][full] == 0:
        return RETRANSMIT_NOTHING_NEW
    deliver = []
    migrate: tuple = ()
    steps = []
    target = newcomers = 0
    if G >> j & 1:
        deliver.append((j, pair))
        steps.append(3)
    if G >> i_star & 1 and k[i_star][full] > 0:
        deliver.append((i_star, full))
        steps.append(4)
    third = full & ~pair
    if not G >> j & 1 and G & third:
        target = full
        newcomers = third
        migrate = ((j, pair, full),)
        steps.append(5)
    return Plan(False, tuple(deliver), migrate, target, newcomers, tuple(steps))


def apply_plan_indices(k: list[list[int]], kd: list[int], plan: Plan) -> None:
    for i, src in plan.deliver:
        k[i][src] -= 1
        kd[i] += 1
    for i, src, dst in plan.migrate:
        k[i][src] -= 1
        k[i][dst] += 1


# -- per-user bases ------------------------------------------------------------


class UserBasis:
    """Union basis of one user, partitioned into ordered per-queue lists."""

    def __init__(self, f: gfm.GF, d: int, home: int):
        self.f = f
        self.d = d
        self.U = np.eye(d, dtype=f.dtype)
        self.W = np.eye(d, dtype=f.dtype)
        self.owner = [home] * d
        self.groups: dict[int, list[int]] = defaultdict(list)
        self.groups[home] = list(range(d))

    def size(self, key: int) -> int:
        return len(self.groups.get(key, ()))

    def head(self, key: int) -> int:
        g = self.groups.get(key)
        if not g:
            raise BasisError(f"basis set for key {key} is empty")
        return g[0]

    def vectors(self, key: int) -> list[np.ndarray]:
        return [self.U[p].copy() for p in self.groups.get(key, ())]

    def pivot_column(self, key: int) -> np.ndarray:
        """Column of W that yields the coordinate along the head of ``key``."""
        return self.W[:, self.head(key)]

    def coordinate(self, b: np.ndarray, key: int) -> int:
        return self.f.dot(b, self.pivot_column(key))

    def exchange(self, src: int, b: np.ndarray, dst: int) -> None:
        """Swap the oldest member of ``src`` for ``b`` and file it under ``dst``."""
        f = self.f
        pos = self.head(src)
        x = f.matmul(b[None, :], self.W)[0]
        xk = int(x[pos])
        if xk == 0:
            raise BasisError("new vector does not complete the basis")
        col = f.mul(f.inv(xk), self.W[:, pos])
        self.W ^= f.mul(col[:, None], x[None, :])
        self.W[:, pos] = col
        self.U[pos] = b
        self.groups[src].pop(0)
        self.groups[dst].append(pos)
        self.owner[pos] = dst

    def snapshot(self) -> tuple:
        groups = tuple(sorted((key, tuple(v)) for key, v in self.groups.items() if v))
        return (self.U.tobytes(), groups)


# -- the network -----------------------------------------------------------------


class QueueNetwork:
    """Queues, token indices and basis sets for N users.

    ``observer`` selects whose knowledge the network models: ``None`` is the
    transmitter (every payload and constant known); an integer i is a
    receiver's replica, which knows only its own constants.
    """

    def __init__(self, f: gfm.GF, sizes: Sequence[int], payload_len: int, observer: int | None = None):
        n = len(sizes)
        if f.q <= n:
            raise FieldTooSmall(f"field size {f.q} must exceed the number of users {n}")
        if any(s < 0 for s in sizes):
            raise ValueError("session sizes must be non-negative")
        self.f = f
        self.n_users = n
        self.full = (1 << n) - 1
        self.sizes = tuple(int(s) for s in sizes)
        self.payload_len = payload_len
        self.observer = observer
        self.queues: dict[int, list[StoredPacket]] = defaultdict(list)
        self.delivered: list[list[StoredPacket]] = [[] for _ in range(n)]
        self.k = [[0] * (1 << n) for _ in range(n)]
        self.kd = [0] * n
        self.bases = [UserBasis(f, sizes[i], 1 << i) for i in range(n)]
        self._verified: dict[int, bytes] = {}

    # views -----------------------------------------------------------------

    def knows_constant(self, user: int) -> bool:
        return self.observer is None or self.observer == user

    def k_index(self, user: int, mask: int) -> int:
        return self.k[user][mask]

    def combine(self, packets: Sequence[StoredPacket], coeffs: np.ndarray, users: Sequence[int]):
        """Payload and per-user views of ``sum coeffs[r] * packets[r]``."""
        f = self.f
        if any(p.payload is None for p in packets):
            payload = None
        else:
            payload = f.combine(coeffs, [p.payload for p in packets]) if packets else f.zeros(self.payload_len)
        views = {}
        for u in users:
            b = f.combine(coeffs, [p.views[u].b for p in packets]) if packets else f.zeros(self.sizes[u])
            cs = [p.views[u].c for p in packets]
            if any(c is None for c in cs):
                c = None
            else:
                c = f.combine(coeffs, cs) if packets else f.zeros(self.payload_len)
            views[u] = TokenView(b, c)
        return payload, views

    # mutation ----------------------------------------------------------------

    def apply(self, plan: Plan, payload: np.ndarray | None, views: dict[int, TokenView],
              slot: int, heard_by: int, label: str = "") -> StoredPacket | None:
        """Carry out ``plan`` for a transmitted packet with the given views."""
        f = self.f
        if plan.retransmit:
            return None
        sent = StoredPacket(payload, dict(views), slot, heard_by, label)
        for i, src in plan.deliver:
            self.bases[i].exchange(src, views[i].b, DELIVERED)
            self.delivered[i].append(sent)
        for i, src, dst in plan.migrate:
            self.bases[i].exchange(src, views[i].b, dst)
        apply_plan_indices(self.k, self.kd, plan)
        if plan.append_to:
            stored_views = dict(views)
            for u in users_of(plan.newcomers):
                c = payload if self.knows_constant(u) else None
                if self.knows_constant(u) and c is None:
                    raise DesyncError(f"user {u + 1} gains a token but has no payload for it")
                stored_views[u] = TokenView(f.zeros(self.sizes[u]), None if c is None else c.copy())
            stored = StoredPacket(payload, stored_views, slot, heard_by, label)
            self.queues[plan.append_to].append(stored)
            return stored
        return sent

    # inspection ----------------------------------------------------------------

    def snapshot(self) -> tuple:
        """Everything a receiver can reproduce, in a comparable form."""
        queues = []
        for mask in sorted(self.queues):
            packets = self.queues[mask]
            if not packets:
                continue
            queues.append((mask, tuple(
                (p.origin_slot, p.received_by, tuple((u, p.views[u].key()) for u in sorted(p.views)))
                for p in packets)))
        return (tuple(queues), tuple(map(tuple, self.k)), tuple(self.kd),
                tuple(b.snapshot() for b in self.bases),
                tuple(tuple(p.origin_slot for p in d) for d in self.delivered))


def initialize(sizes: Sequence[int], f: gfm.GF, payload_len: int,
               sessions: Sequence[Sequence[np.ndarray]] | None = None,
               observer: int | None = None) -> QueueNetwork:
    """Place every session packet in its owner's singleton queue.

    Session packets get identity views (``b = e_j``, ``c = 0``).  Replicas
    (``observer`` set) are built without ``sessions``.
    """
    net = QueueNetwork(f, sizes, payload_len, observer)
    for i, d in enumerate(net.sizes):
        mask = 1 << i
        for j in range(d):
            payload = None if sessions is None else f.asvec(sessions[i][j])
            c = f.zeros(payload_len) if net.knows_constant(i) else None
            net.queues[mask].append(StoredPacket(payload, {i: TokenView(f.unit(d, j), c)}, 0, 0, f"{i}:{j}"))
        net.k[i][mask] = d
    return net


def form_combination(net: QueueNetwork, sources: Sequence[int], coeffs) -> tuple:
    """Combine the packets of the source queues (concatenated in order).

    Returns the payload and the views for every user common to all sources.
    """
    packets = [p for s in sources for p in net.queues.get(s, ())]
    coeffs = np.asarray(coeffs, dtype=np.int64)
    if coeffs.size != len(packets):
        raise ValueError(f"recipe has {coeffs.size} coefficients for {len(packets)} packets")
    common = net.full
    for s in sources:
        common &= s
    return net.combine(packets, coeffs, users_of(common))


def apply_actfb1(net: QueueNetwork, S: int, sent: tuple, received_by: int, slot: int = 0) -> Plan:
    """Apply the single-queue feedback rule; ``sent`` is ``(payload, views)``."""
    plan = plan_actfb1(net.k, S, received_by)
    net.apply(plan, sent[0], sent[1], slot, received_by)
    return plan


def check_invariants(net: QueueNetwork) -> None:
    """Raise AssertionError if any structural invariant is violated.

    The rank test runs plain elimination on the union basis, independent of
    the inverse that the exchange updates maintain.
    """
    f = net.f
    for i in range(net.n_users):
        basis = net.bases[i]
        total = net.kd[i]
        for mask in range(1, net.full + 1):
            kk = net.k[i][mask]
            if not mask >> i & 1:
                assert kk == 0, f"user {i + 1} has a nonzero index on queue {mask}"
                continue
            assert basis.size(mask) == kk, f"|B| != K for user {i + 1}, queue {mask}"
            total += kk
            if kk:
                views = {net.queues[mask][r].views[i].key() for r in range(len(net.queues[mask]))}
                for v in basis.vectors(mask):
                    assert v.tobytes() in views, "basis vector is not the view of a queued packet"
        assert basis.size(DELIVERED) == net.kd[i], f"|B_D| != K_D for user {i + 1}"
        assert total == net.sizes[i], f"token count not conserved for user {i + 1}"
        if net.sizes[i]:
            # an unchanged union was already verified; elimination reruns only on change
            key = basis.U.tobytes()
            if net._verified.get(i) != key:
                assert gfm.rank(list(basis.U), f) == net.sizes[i], f"basis union lost rank for user {i + 1}"
                net._verified[i] = key
    for mask, packets in net.queues.items():
        for p in packets:
            assert set(p.views) == set(users_of(mask)), f"views of a packet in queue {mask} are off"
