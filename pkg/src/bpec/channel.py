"""Memoryless broadcast erasure channel.

A channel over N users is a distribution on the 2^N erasure patterns.  A
pattern is an int whose bit ``i`` is set when user ``i`` (0-based) erased the
slot.  From the pattern table we derive the intersection probabilities

    eps[I] = Pr(every user in I erases),   eps[0] = 1,

with one superset-sum pass.  Going the other way (``from_epsilons``) is the
Moebius inversion of the same transform.

Scripted channels replay a fixed list of patterns; they exist so that a
hand-written trace can be pushed through the coders slot by slot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

TOL = 1e-12
MAX_USERS = 16


class InvalidChannel(ValueError):
    """The supplied statistics do not describe a usable erasure channel."""


class TraceExhausted(RuntimeError):
    """A scripted channel was asked for more slots than its trace holds."""


def popcount(x: int) -> int:
    return bin(x).count("1")


def parse_pattern(text: str) -> int:
    """``'REE'`` -> erased mask.  Position k is user k; ``X`` counts as received."""
    mask = 0
    for k, ch in enumerate(text.strip().upper()):
        if ch == "E":
            mask |= 1 << k
        elif ch not in "RX":
            raise ValueError(f"bad pattern character {ch!r} in {text!r}")
    return mask


def format_pattern(mask: int, n_users: int) -> str:
    return "".join("E" if mask >> k & 1 else "R" for k in range(n_users))


def users_of(mask: int) -> list[int]:
    out = []
    k = 0
    while mask:
        if mask & 1:
            out.append(k)
        mask >>= 1
        k += 1
    return out


def mask_of(users: Iterable[int]) -> int:
    m = 0
    for u in users:
        m |= 1 << u
    return m


def superset_sums(table: np.ndarray, n_users: int) -> np.ndarray:
    """out[I] = sum of table[J] over all J containing I."""
    out = np.array(table, dtype=float, copy=True)
    for b in range(n_users):
        bit = 1 << b
        idx = np.arange(out.size)
        lo = idx[(idx & bit) == 0]
        out[lo] += out[lo | bit]
    return out


def superset_moebius(table: np.ndarray, n_users: int) -> np.ndarray:
    """Inverse of :func:`superset_sums`."""
    out = np.array(table, dtype=float, copy=True)
    for b in range(n_users):
        bit = 1 << b
        idx = np.arange(out.size)
        lo = idx[(idx & bit) == 0]
        out[lo] -= out[lo | bit]
    return out


@dataclass(frozen=True)
class ChannelModel:
    """Joint erasure statistics of one broadcast slot."""

    kind: str
    n_users: int
    pattern_probs: np.ndarray = field(repr=False)
    trace: tuple[int, ...] | None = None
    params: tuple = ()

    # construction ---------------------------------------------------------

    @classmethod
    def joint(cls, pattern_probs: Sequence[float], kind: str = "joint", params: tuple = ()) -> "ChannelModel":
        p = np.asarray(pattern_probs, dtype=float)
        n = int(round(math.log2(p.size))) if p.size else -1
        if n < 1 or (1 << n) != p.size:
            raise InvalidChannel("pattern table length must be 2^N with N >= 1")
        if n > MAX_USERS:
            raise InvalidChannel(f"at most {MAX_USERS} users supported")
        if np.any(p < -TOL):
            raise InvalidChannel("negative pattern probability")
        p = np.clip(p, 0.0, None)
        total = math.fsum(p)
        if abs(total - 1.0) > 1e-9:
            raise InvalidChannel(f"pattern probabilities sum to {total!r}, not 1")
        p = p / total
        model = cls(kind=kind, n_users=n, pattern_probs=p, params=params)
        eps = model.epsilons()
        for i in range(n):
            if eps[1 << i] >= 1.0 - TOL:
                raise InvalidChannel(f"user {i + 1} erases every slot (eps_i = 1)")
        return model

    @classmethod
    def from_epsilons(cls, eps: Mapping[int, float] | Sequence[float], n_users: int | None = None,
                      kind: str = "joint") -> "ChannelModel":
        """Build the pattern table from intersection probabilities ``eps[I]``.

        ``eps`` is either a full length-2^N array (entry 0 ignored) or a mapping
        mask -> probability that must cover every non-empty mask.
        """
        if isinstance(eps, Mapping):
            if n_users is None:
                raise InvalidChannel("n_users is required when eps is a mapping")
            table = np.empty(1 << n_users)
            for m in range(1, 1 << n_users):
                if m not in eps:
                    raise InvalidChannel(f"missing eps for subset mask {m}")
                table[m] = eps[m]
        else:
            table = np.asarray(eps, dtype=float).copy()
            n_users = int(round(math.log2(table.size)))
        table[0] = 1.0
        probs = superset_moebius(table, n_users)
        if np.any(probs < -1e-12):
            bad = int(np.argmin(probs))
            raise InvalidChannel(
                f"eps values are not consistent with any joint distribution "
                f"(pattern {format_pattern(bad, n_users)} would get {probs[bad]:.3g})")
        return cls.joint(probs, kind=kind)

    @classmethod
    def symmetric(cls, eps_by_size: Sequence[float]) -> "ChannelModel":
        """Exchangeable channel with eps_I = eps_by_size[|I| - 1].

        The construction is the exchangeable one: every pattern with m erasures
        gets the same mass, obtained by inverting the binomial relation between
        the per-size intersection probabilities and those masses.
        """
        et = [1.0] + [float(e) for e in eps_by_size]
        n = len(et) - 1
        if n < 1:
            raise InvalidChannel("need at least one user")
        pi = [math.fsum((-1) ** (j - m) * math.comb(n - m, j - m) * et[j] for j in range(m, n + 1))
              for m in range(n + 1)]
        if min(pi) < -1e-12:
            raise InvalidChannel(f"no exchangeable distribution has these statistics (pattern masses {pi})")
        probs = np.array([pi[popcount(x)] for x in range(1 << n)])
        return cls.joint(probs, kind="symmetric", params=tuple(eps_by_size))

    @classmethod
    def independent(cls, eps: Sequence[float]) -> "ChannelModel":
        """Users erase independently with marginals ``eps``."""
        e = np.asarray(eps, dtype=float)
        if np.any((e < 0) | (e > 1)):
            raise InvalidChannel("marginal erasure probabilities must lie in [0, 1]")
        n = e.size
        probs = np.ones(1 << n)
        for x in range(1 << n):
            for i in range(n):
                probs[x] *= e[i] if x >> i & 1 else 1.0 - e[i]
        return cls.joint(probs, kind="independent", params=tuple(float(v) for v in e))

    @classmethod
    def scripted(cls, trace: Sequence[str | int], n_users: int | None = None) -> "ChannelModel":
        """Deterministic replay of ``trace`` (pattern strings like ``'REE'`` or masks)."""
        masks = []
        for item in trace:
            if isinstance(item, str):
                n_users = n_users or len(item.strip())
                masks.append(parse_pattern(item))
            else:
                masks.append(int(item))
        if not n_users:
            raise InvalidChannel("cannot infer N from an empty trace")
        p = np.zeros(1 << n_users)
        p[0] = 1.0
        return cls(kind="scripted", n_users=n_users, pattern_probs=p, trace=tuple(masks))

    # queries --------------------------------------------------------------

    @property
    def full_mask(self) -> int:
        return (1 << self.n_users) - 1

    def epsilons(self) -> np.ndarray:
        """eps[I] for every mask I (eps[0] = 1)."""
        cached = self.__dict__.get("_eps")
        if cached is None:
            cached = superset_sums(self.pattern_probs, self.n_users)
            cached[0] = 1.0
            object.__setattr__(self, "_eps", cached)
        return cached

    def epsilon(self, subset: int) -> float:
        if subset & ~self.full_mask:
            raise ValueError("subset mentions users outside the channel")
        return float(self.epsilons()[subset])

    def marginals(self) -> np.ndarray:
        eps = self.epsilons()
        return np.array([eps[1 << i] for i in range(self.n_users)])

    def source(self, rng: np.random.Generator | None = None, batch: int = 4096) -> "PatternSource":
        return PatternSource(self, rng, batch)

    def describe(self) -> dict:
        d = {"kind": self.kind, "n_users": self.n_users}
        if self.params:
            d["params"] = list(self.params)
        if self.trace is not None:
            d["trace"] = [format_pattern(m, self.n_users) for m in self.trace]
        else:
            d["eps"] = {format_subset(m): float(v) for m, v in enumerate(self.epsilons()) if m}
        return d


def format_subset(mask: int) -> str:
    return "{" + ",".join(str(u + 1) for u in users_of(mask)) + "}"


class PatternSource:
    """Stream of erasure patterns for one trial.

    Random kinds draw uniforms in batches and map them through the pattern
    CDF, so the stream depends only on the generator state.  Scripted kinds
    walk the trace and raise :class:`TraceExhausted` at its end.
    """

    def __init__(self, model: ChannelModel, rng: np.random.Generator | None = None, batch: int = 4096):
        self.model = model
        self.drawn = 0
        if model.kind == "scripted":
            self._trace = model.trace or ()
        else:
            if rng is None:
                raise ValueError("random channels need a numpy Generator")
            self._rng = rng
            cdf = np.cumsum(model.pattern_probs)
            cdf[-1] = 1.0
            self._cdf = cdf
            self._batch = batch
            self._buf = np.empty(0, dtype=np.int64)
            self._pos = 0

    def draw(self) -> int:
        if self.model.kind == "scripted":
            if self.drawn >= len(self._trace):
                raise TraceExhausted(f"trace of {len(self._trace)} slots exhausted")
            m = self._trace[self.drawn]
        else:
            if self._pos >= self._buf.size:
                u = self._rng.random(self._batch)
                self._buf = np.searchsorted(self._cdf, u, side="right")
                np.minimum(self._buf, self._cdf.size - 1, out=self._buf)
                self._pos = 0
            m = int(self._buf[self._pos])
            self._pos += 1
        self.drawn += 1
        return m

    def remaining(self) -> int | None:
        if self.model.kind == "scripted":
            return len(self._trace) - self.drawn
        return None


def sample_pattern(source: PatternSource) -> int:
    """Next erasure pattern from a trial's pattern source."""
    return source.draw()


def channel_from_spec(spec: Mapping) -> ChannelModel:
    """Build a model from a config mapping (see README for the schema)."""
    kind = spec.get("kind")
    if kind == "symmetric":
        return ChannelModel.symmetric(spec["eps"])
    if kind in ("independent", "spatially_independent"):
        return ChannelModel.independent(spec["eps"])
    if kind == "joint":
        if "pattern_probs" in spec:
            return ChannelModel.joint(spec["pattern_probs"])
        n = int(spec["n_users"])
        eps = {parse_subset(k): float(v) for k, v in spec["eps"].items()}
        return ChannelModel.from_epsilons(eps, n_users=n)
    if kind == "scripted":
        return ChannelModel.scripted(spec["trace"], spec.get("n_users"))
    raise InvalidChannel(f"unknown channel kind {kind!r}")


def parse_subset(text) -> int:
    """``'1,3'`` or ``'{1,3}'`` or ``[1, 3]`` (1-based users) -> mask."""
    if isinstance(text, (list, tuple)):
        items = text
    else:
        items = [t for t in str(text).strip("{} ").split(",") if t.strip()]
    return mask_of(int(t) - 1 for t in items)
