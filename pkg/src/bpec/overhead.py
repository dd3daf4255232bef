"""Framing for private feedback.

With private feedback a receiver sees only its own ACK/NACKs, so it cannot
replay the coder on its own.  The transmitter therefore runs in two stages:

1. information packets, every one tagged ``h1 = 0``; after each slot the
   transmitter appends the N-bit reception group ``(f_1, ..., f_N)`` to a log;
2. the log, cut into feedback packets (``h1 = 1``), each multicast until every
   user has it, then an all-zero termination packet, also multicast until
   every user has it.

Packet bit layout (bit k of a packet is ``(data[k // 8] >> (7 - k % 8)) & 1``):

    bit 0        h1
    bit 1        h2, toggled between consecutive distinct feedback packets
    bits 2..     g = (L - 2) // N groups, slot order; within a group user 1
                 comes first.  Unused tail bits are zero.

Consecutive copies of one feedback packet share h2, so a receiver that hears a
packet twice drops the second copy; two distinct packets never share h2 when
adjacent, even if their groups are identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channel import PatternSource


class PacketTooSmall(ValueError):
    """Packets must hold both header bits plus at least one N-bit group."""


class FramingError(ValueError):
    """A receiver's FIFO does not parse as info frames, feedback, termination."""


@dataclass(frozen=True)
class InfoFrame:
    """A stage-1 packet as seen by a receiver (h1 = 0)."""

    payload: np.ndarray
    slot: int = 0


@dataclass
class FeedbackLog:
    """One received-by mask per stage-1 slot (bit i set: user i received)."""

    n_users: int
    groups: list[int] = field(default_factory=list)

    def record(self, received_by: int) -> None:
        self.groups.append(int(received_by))

    @classmethod
    def from_patterns(cls, patterns: Sequence[int], n_users: int) -> "FeedbackLog":
        full = (1 << n_users) - 1
        return cls(n_users, [full & ~int(p) for p in patterns])

    def __len__(self) -> int:
        return len(self.groups)


def packet_bytes(L_bits: int) -> int:
    return (L_bits + 7) // 8


def groups_per_packet(L_bits: int, n_users: int) -> int:
    if L_bits - 2 < n_users:
        raise PacketTooSmall(f"L = {L_bits} bits cannot carry 2 header bits and {n_users} feedback bits")
    return (L_bits - 2) // n_users


def feedback_packet_count(n_slots: int, L_bits: int, n_users: int) -> int:
    g = groups_per_packet(L_bits, n_users)
    return -(-n_slots // g)


def _set_bit(buf: bytearray, k: int) -> None:
    buf[k >> 3] |= 0x80 >> (k & 7)


def _get_bit(buf: bytes, k: int) -> int:
    return buf[k >> 3] >> (7 - (k & 7)) & 1


def packetize_log(log: FeedbackLog | Sequence[int], L_bits: int, n_users: int | None = None) -> list[bytes]:
    """Cut a feedback log into ``h1 = 1`` packets of ``L_bits`` bits each."""
    if isinstance(log, FeedbackLog):
        groups, n = log.groups, log.n_users if n_users is None else n_users
    else:
        groups, n = list(log), n_users
    if n is None:
        raise ValueError("n_users is required for a bare group list")
    g = groups_per_packet(L_bits, n)
    out = []
    for p, start in enumerate(range(0, len(groups), g)):
        buf = bytearray(packet_bytes(L_bits))
        _set_bit(buf, 0)
        if p % 2:
            _set_bit(buf, 1)
        k = 2
        for mask in groups[start:start + g]:
            for u in range(n):
                if mask >> u & 1:
                    _set_bit(buf, k)
                k += 1
        out.append(bytes(buf))
    return out


def termination_packet(L_bits: int) -> bytes:
    return bytes(packet_bytes(L_bits))


def header(packet: bytes) -> tuple[int, int]:
    """``(h1, h2)`` of a packet."""
    return _get_bit(packet, 0), _get_bit(packet, 1)


@dataclass
class MulticastResult:
    slots: list[int]
    fifos: list[list]

    @property
    def total(self) -> int:
        return sum(self.slots)


def multicast_until_all(packets: Sequence[bytes], source: PatternSource, n_users: int,
                        L_bits: int | None = None, with_termination: bool = True) -> MulticastResult:
    """Send each packet until every user has flagged it, then the termination packet.

    Returns the slot count per packet and what each user's FIFO received.
    A user stops listening once it has stored the termination packet.
    """
    full = (1 << n_users) - 1
    todo = list(packets)
    if with_termination:
        if L_bits is None:
            L_bits = 8 * len(packets[0]) if packets else 8
        todo.append(termination_packet(L_bits))
    slots = []
    fifos: list[list] = [[] for _ in range(n_users)]
    for n_pkt, pkt in enumerate(todo):
        last = with_termination and n_pkt == len(todo) - 1
        flags = 0
        used = 0
        while flags != full:
            got = full & ~source.draw()
            used += 1
            for u in range(n_users):
                if got >> u & 1 and not (last and flags >> u & 1):
                    fifos[u].append(pkt)
            flags |= got
        slots.append(used)
    return MulticastResult(slots, fifos)


@dataclass
class ReplayInput:
    """What a receiver needs to replay stage 1: the log and its own receptions."""

    log: list[int]
    received: list[np.ndarray | None]


def _groups_of(packet: bytes, n_users: int, g: int) -> list[int]:
    out = []
    k = 2
    for _ in range(g):
        mask = 0
        for u in range(n_users):
            if _get_bit(packet, k):
                mask |= 1 << u
            k += 1
        out.append(mask)
    return out


def receiver_reconstruct(fifo: Sequence, own_feedback: Sequence[int], user: int, n_users: int,
                         L_bits: int) -> ReplayInput:
    """Rebuild the feedback log and bind stored info frames to their slots.

    ``fifo`` lists what the user stored, in order: :class:`InfoFrame` items,
    then raw feedback packets (``bytes``), ending with the termination packet.
    ``own_feedback[t]`` is 1 when the user received stage-1 slot t.
    """
    if not fifo:
        raise FramingError("FIFO is empty; the termination packet was never stored")
    if isinstance(fifo[-1], InfoFrame) or any(fifo[-1]):
        raise FramingError("FIFO does not end with the all-zero termination packet")
    infos: list[InfoFrame] = []
    fb: list[bytes] = []
    for item in fifo[:-1]:
        if isinstance(item, InfoFrame):
            if fb:
                raise FramingError("information packet stored after feedback packets")
            infos.append(item)
            continue
        h1, h2 = header(item)
        if h1 != 1:
            raise FramingError("packet with h1 = 0 before the end of the FIFO")
        if not fb:
            if h2 != 0:
                raise FramingError("first feedback packet must carry h2 = 0")
            fb.append(item)
        elif h2 == header(fb[-1])[1]:
            if item != fb[-1]:
                raise FramingError("two different feedback packets share an h2 value back to back")
        else:
            fb.append(item)

    n_slots = len(own_feedback)
    g = groups_per_packet(L_bits, n_users)
    if len(fb) != feedback_packet_count(n_slots, L_bits, n_users):
        raise FramingError(f"expected {feedback_packet_count(n_slots, L_bits, n_users)} feedback packets, "
                           f"got {len(fb)}")
    groups: list[int] = []
    for pkt in fb:
        groups.extend(_groups_of(pkt, n_users, g))
    if any(groups[n_slots:]):
        raise FramingError("padding groups in the last feedback packet are not zero")
    groups = groups[:n_slots]
    for t, (mask, mine) in enumerate(zip(groups, own_feedback)):
        if (mask >> user & 1) != (1 if mine else 0):
            raise FramingError(f"log disagrees with the user's own feedback at slot {t + 1}")
    hits = [t for t, mine in enumerate(own_feedback) if mine]
    if len(hits) != len(infos):
        raise FramingError(f"{len(infos)} information packets stored but the log shows {len(hits)} receptions")
    received: list[np.ndarray | None] = [None] * n_slots
    for t, frame in zip(hits, infos):
        received[t] = frame.payload
    return ReplayInput(groups, received)


def overhead_slots(n_slots: int, source: PatternSource, n_users: int, L_bits: int,
                   patterns: Sequence[int] | None = None) -> MulticastResult:
    """Stage-2 slot counts for a stage 1 of ``n_slots`` slots.

    Only the number of feedback packets matters for the slot count, so the
    packet contents are built only when ``patterns`` is given.
    """
    if patterns is not None:
        packets = packetize_log(FeedbackLog.from_patterns(patterns, n_users), L_bits)
    else:
        packets = [b"\x80"] * feedback_packet_count(n_slots, L_bits, n_users)
    return multicast_until_all(packets, source, n_users, L_bits)
