"""Receivers.

A receiver keeps a replica of the transmitter's coder (the same process
class with ``observer`` set to its own index) and replays every slot from
the feedback pattern plus whatever it heard itself.  Each slot that hands it
a Basis token adds one equation ``b . K_i = s - c``; at the end the system is
square and full rank.

With public feedback the replay runs slot by slot.  With private feedback
the receiver first stores everything in a FIFO and replays once the feedback
log has arrived (:func:`decode_private`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import gf as gfm
from .encoder_code1 import Code1Process, make_process
from .overhead import receiver_reconstruct
from .queue_net import DesyncError

__all__ = ["RankDeficient", "DesyncError", "SessionMeta", "ReceiverState", "replay_slot", "decode",
           "replay_private", "decode_private"]


class RankDeficient(RuntimeError):
    """The collected equations do not determine the session."""


@dataclass(frozen=True)
class SessionMeta:
    """What every receiver knows up front: sizes, field, recipe seed, coder."""

    sizes: tuple[int, ...]
    m: int = 8
    payload_len: int = 1
    seed: int = 0
    algorithm: str = "code1"
    policy: str = "coded"
    L_bits: int | None = None


@dataclass
class ReceiverState:
    user: int
    meta: SessionMeta
    proc: Code1Process = field(init=False)
    received: list = field(default_factory=list)

    def __post_init__(self):
        f = gfm.field(self.meta.m)
        self.proc = make_process(self.meta.algorithm, list(self.meta.sizes), f, self.meta.payload_len,
                                 self.meta.seed, observer=self.user, policy=self.meta.policy)

    @property
    def equations(self):
        return self.proc.equations

    @property
    def finished(self) -> bool:
        return self.proc.prepare() is None


def replay_slot(state: ReceiverState, pattern: int, own_payload: np.ndarray | None = None) -> ReceiverState:
    """Advance the replica by one slot.  ``own_payload`` is None when erased."""
    heard = not pattern >> state.user & 1
    if heard and own_payload is None:
        raise DesyncError(f"user {state.user + 1} received slot {state.proc.slot + 1} but no payload was given")
    if own_payload is not None:
        if not heard:
            raise DesyncError("a payload was supplied for a slot this user erased")
        state.received.append((state.proc.slot + 1, own_payload))
    state.proc.step(pattern, own_payload)
    return state


def decode(state: ReceiverState) -> list[np.ndarray]:
    """Solve the collected equations for the user's session packets."""
    d = state.meta.sizes[state.user]
    eqs = state.equations
    if d == 0:
        return []
    if len(eqs) != d:
        raise RankDeficient(f"user {state.user + 1} holds {len(eqs)} equations for {d} unknowns")
    try:
        return gfm.solve_linear_system(eqs, gfm.field(state.meta.m))
    except gfm.SingularMatrix as exc:
        raise RankDeficient(str(exc)) from exc


def replay_private(fifo: Sequence, own_feedback: Sequence[int], user: int, meta: SessionMeta,
                   on_slot=None) -> ReceiverState:
    """Parse the FIFO, rebuild the log and replay stage 1.

    ``on_slot(t, state)`` is called after each replayed slot t (1-based).
    """
    if meta.L_bits is None:
        raise ValueError("private decoding needs the packet length L_bits")
    n = len(meta.sizes)
    full = (1 << n) - 1
    replay = receiver_reconstruct(fifo, own_feedback, user, n, meta.L_bits)
    state = ReceiverState(user, meta)
    for t, (mask, payload) in enumerate(zip(replay.log, replay.received), start=1):
        if state.finished:
            raise DesyncError("feedback log is longer than the replayed run")
        replay_slot(state, full & ~mask, payload)
        if on_slot is not None:
            on_slot(t, state)
    if not state.finished:
        raise DesyncError("feedback log ended before the replayed run terminated")
    return state


def decode_private(fifo: Sequence, own_feedback: Sequence[int], user: int, meta: SessionMeta) -> list[np.ndarray]:
    """Replay stage 1 from the stored FIFO, then solve."""
    return decode(replay_private(fifo, own_feedback, user, meta))
