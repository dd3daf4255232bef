"""Closed-form quantities for the coders and the rate regions.

Everything is a pure function of a channel (a :class:`ChannelModel` or a
raw ``eps`` table indexed by user mask) and, where relevant, a rate vector.
Rates are in symbols per slot unless an ``L`` is given, in which case region
tests are in bits per slot with L-bit packets.

Sums with alternating signs go through :func:`math.fsum`.

Notation used below: ``N`` is the full user mask, ``eps[I]`` the probability
that every user in I erases, and

    p(S, G)   = Pr(all of S erase, all of G receive)
    f(i, S)   = sum over H in S-{i} of (-1)^(|S|-|H|-1) / (1 - eps[N-H])

which is the per-unit-rate slot cost of queue S for user i under CODE1.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .channel import ChannelModel, format_subset, popcount, users_of

PERMUTATION_CAP = 8
SUBSET_CAP = 16
TOL = 1e-9


class OverlapError(ValueError):
    """p(S, G) needs disjoint S and G."""


class DegenerateChannel(ValueError):
    """A denominator 1 - eps vanishes."""


class TooManyUsers(ValueError):
    """Permutation enumeration beyond the configured cap."""


class UnsupportedN(ValueError):
    """Three-user formula asked for another N."""


# -- basic probabilities ---------------------------------------------------------------


def eps_table(model) -> np.ndarray:
    if isinstance(model, ChannelModel):
        return model.epsilons()
    e = np.asarray(model, dtype=float)
    n = int(round(math.log2(e.size)))
    if (1 << n) != e.size:
        raise ValueError("eps table length must be a power of two")
    if n > SUBSET_CAP:
        raise TooManyUsers(f"at most {SUBSET_CAP} users")
    return e


def n_users_of(eps: np.ndarray) -> int:
    return int(round(math.log2(eps.size)))


def submasks(mask: int):
    """All submasks of ``mask``, including 0 and ``mask``."""
    s = mask
    while True:
        yield s
        if s == 0:
            return
        s = (s - 1) & mask


def _inv_recv(eps: np.ndarray, mask: int) -> float:
    d = 1.0 - float(eps[mask])
    if d <= 0.0:
        raise DegenerateChannel(f"eps{format_subset(mask)} = 1")
    return 1.0 / d


def p_sg(model, S: int, G: int) -> float:
    """Pr(every user in S erases and every user in G receives)."""
    if S & G:
        raise OverlapError("S and G must be disjoint")
    eps = eps_table(model)
    return math.fsum((-1) ** popcount(H) * float(eps[S | H]) for H in submasks(G))


def p_exact(model, I: int) -> float:
    """Pr(exactly the users in I receive)."""
    eps = eps_table(model)
    full = eps.size - 1
    return p_sg(eps, full & ~I, I)


# -- the per-queue slot coefficients ---------------------------------------------------------


def f_hat(model, S: int, i: int) -> float:
    """Explicit form, indexed by the complement of the erasing set."""
    if not S >> i & 1:
        raise ValueError(f"user {i + 1} is not in {format_subset(S)}")
    eps = eps_table(model)
    full = eps.size - 1
    rest = S & ~(1 << i)
    k = popcount(S)
    return math.fsum((-1) ** (k - popcount(H) - 1) * _inv_recv(eps, full & ~H) for H in submasks(rest))


def f_by_supersets(model, S: int, i: int) -> float:
    """The same coefficient written over supersets of N - (S - {i})."""
    if not S >> i & 1:
        raise ValueError(f"user {i + 1} is not in {format_subset(S)}")
    eps = eps_table(model)
    full = eps.size - 1
    rest = S & ~(1 << i)
    base = full & ~rest
    return math.fsum((-1) ** popcount(H) * _inv_recv(eps, base | H) for H in submasks(rest))


def f_recursive(model, S: int, i: int) -> float:
    """The coefficient from its defining recursion over proper subsets."""
    eps = eps_table(model)
    full = eps.size - 1
    key = eps.tobytes()
    return _f_rec(key, full, S, i, eps)


def _f_rec(key: bytes, full: int, S: int, i: int, eps: np.ndarray) -> float:
    cache = _REC_CACHE.setdefault((key, i), {})
    if S in cache:
        return cache[S]
    if S == 1 << i:
        val = _inv_recv(eps, full)
    else:
        erasers = full & ~(S & ~(1 << i))
        terms = []
        rest = S & ~(1 << i)
        for J in submasks(rest):
            if J == rest:
                continue
            I = J | (1 << i)
            terms.append(_f_rec(key, full, I, i, eps) * p_sg(eps, erasers, S & ~I))
        val = _inv_recv(eps, erasers) * math.fsum(terms)
    cache[S] = val
    if len(_REC_CACHE) > 256:
        _REC_CACHE.clear()
    return val


_REC_CACHE: dict = {}


def f_table(model) -> np.ndarray:
    """``F[i, S]`` = f(i, S) for all users and masks (0 where i is not in S).

    Uses the subset Moebius transform of g(H) = 1/(1 - eps[N-H]):
    f(i, S) is that transform evaluated at S - {i}.
    """
    eps = eps_table(model)
    n = n_users_of(eps)
    full = eps.size - 1
    idx = np.arange(eps.size)
    denom = 1.0 - eps[full & ~idx]
    denom[full] = 1.0   # H = N never occurs (H excludes i)
    if np.any(denom <= 0):
        bad = int(idx[np.argmax(denom <= 0)])
        raise DegenerateChannel(f"eps{format_subset(full & ~bad)} = 1")
    h = 1.0 / denom
    for b in range(n):
        bit = 1 << b
        hi = idx[(idx & bit) != 0]
        h[hi] -= h[hi ^ bit]
    F = np.zeros((n, eps.size))
    for i in range(n):
        bit = 1 << i
        has = idx[(idx & bit) != 0]
        F[i, has] = h[has ^ bit]
    return F


# -- CODE1 asymptotics ---------------------------------------------------------------


def k_recursion(model, R: Sequence[float]) -> dict[tuple[int, int], float]:
    """Limits of K^i_S / n at the start of processing Q_S, for CODE1."""
    eps = eps_table(model)
    n = n_users_of(eps)
    full = eps.size - 1
    R = [float(r) for r in R]
    k: dict[tuple[int, int], float] = {}
    for level in range(1, n + 1):
        for combo in itertools.combinations(range(n), level):
            S = sum(1 << u for u in combo)
            for i in combo:
                if level == 1:
                    k[(i, S)] = R[i]
                    continue
                erasers = full & ~(S & ~(1 << i))
                rest = S & ~(1 << i)
                terms = []
                for J in submasks(rest):
                    if J == rest:
                        continue
                    I = J | (1 << i)
                    terms.append(k[(i, I)] * _inv_recv(eps, full & ~J) * p_sg(eps, erasers, S & ~I))
                k[(i, S)] = math.fsum(terms)
    return k


@dataclass
class TBar:
    total: float
    per_queue: dict[int, float]
    k: dict[tuple[int, int], float] = field(default_factory=dict)


def t_bar_code1(model, R: Sequence[float], with_k: bool = False) -> TBar:
    """Limit of (slots / n) for CODE1 with |K_i| = n R_i, per queue and total."""
    eps = eps_table(model)
    R = np.asarray(R, dtype=float)
    if np.any(R < 0):
        raise ValueError("rates must be non-negative")
    F = f_table(eps)
    load = F * R[:, None]
    per = {S: float(load[:, S].max()) for S in range(1, eps.size)}
    k = k_recursion(eps, R) if with_k else {}
    return TBar(math.fsum(per.values()), per, k)


# -- rate regions ---------------------------------------------------------------------


@dataclass(frozen=True)
class RegionVerdict:
    member: bool
    binding: str
    margin: float
    witness: tuple | None = None


def _perms(n: int):
    if n > PERMUTATION_CAP:
        raise TooManyUsers(f"permutation enumeration is capped at N = {PERMUTATION_CAP}")
    return itertools.permutations(range(n))


def _chain_load(eps: np.ndarray, R, order: Sequence[int]) -> float:
    """sum_k R[order[k]] / (1 - eps[{order[0..k]}])."""
    acc = 0
    terms = []
    for u in order:
        acc |= 1 << u
        terms.append(float(R[u]) * _inv_recv(eps, acc))
    return math.fsum(terms)


def outer_load(model, R: Sequence[float]) -> tuple[float, tuple[int, ...]]:
    """Largest permutation constraint of the outer bound and its permutation."""
    eps = eps_table(model)
    best, arg = -1.0, None
    for perm in _perms(n_users_of(eps)):
        v = _chain_load(eps, R, perm)
        if v > best:
            best, arg = v, perm
    return best, arg


def nofb_load(model, R: Sequence[float]) -> float:
    eps = eps_table(model)
    return math.fsum(float(R[i]) * _inv_recv(eps, 1 << i) for i in range(n_users_of(eps)))


def pri_factor(model, L: int) -> float:
    """Inflation of the slot count by the private-feedback stage, upper bounded."""
    eps = eps_table(model)
    n = n_users_of(eps)
    emax = max(float(eps[1 << i]) for i in range(n))
    return 1.0 + n * n / ((L - 2) * (1.0 - emax))


def ord_witness(model, R: Sequence[float], tol: float = TOL) -> tuple[int, ...] | None:
    """A ranking under which every queue's heaviest user is its top-ranked one.

    Returned as users listed from rank 1 down.  Ties count as heaviest for
    every tied user.  None when no ranking works.
    """
    eps = eps_table(model)
    F = f_table(eps)
    load = F * np.asarray(R, dtype=float)[:, None]
    n = n_users_of(eps)
    masks = range(1, eps.size)
    tops = {S: load[:, S].max() for S in masks}
    for perm in _perms(n):
        ok = True
        for S in masks:
            first = next(u for u in perm if S >> u & 1)
            if load[first, S] < tops[S] - tol * max(1.0, abs(tops[S])):
                ok = False
                break
        if ok:
            return perm
    return None


def ordering_identity_sides(model, R: Sequence[float], order: Sequence[int]) -> tuple[float, float]:
    """(sum over queues of the max load, chain load along ``order``)."""
    eps = eps_table(model)
    return t_bar_code1(eps, R).total, _chain_load(eps, R, order)


def ordering_identity_check(model, R: Sequence[float], order: Sequence[int] | None = None) -> bool:
    eps = eps_table(model)
    if order is None:
        order = ord_witness(eps, R)
        if order is None:
            raise ValueError("rate vector is not in the ordered set; no ranking to test")
    a, b = ordering_identity_sides(eps, R, order)
    return abs(a - b) <= TOL * max(1.0, abs(a))


def region_memberships(model, R: Sequence[float], L_bits: float = 1.0, flavor: str = "code1_pub") -> RegionVerdict:
    """Membership of R (bits per slot when L_bits is the packet length) in one region."""
    eps = eps_table(model)
    R = np.asarray(R, dtype=float)
    n = n_users_of(eps)
    if R.size != n:
        raise ValueError(f"rate vector has {R.size} entries for {n} users")
    if np.any(R < 0):
        return RegionVerdict(False, "R >= 0", float(R.min()))
    L = float(L_bits)
    if flavor == "noFB":
        v = nofb_load(eps, R)
        return RegionVerdict(v <= L + TOL, "sum R_i/(1-eps_i) <= L", L - v)
    if flavor == "outer":
        v, perm = outer_load(eps, R)
        return RegionVerdict(v <= L + TOL, "chain " + ">".join(str(u + 1) for u in perm), L - v, perm)
    if flavor == "code1_pub":
        tb = t_bar_code1(eps, R)
        worst = max(tb.per_queue, key=tb.per_queue.get)
        return RegionVerdict(tb.total <= L + TOL, f"sum of queue maxima (largest {format_subset(worst)})",
                             L - tb.total)
    if flavor == "code1_pri":
        v = t_bar_code1(eps, R).total * pri_factor(eps, int(L))
        return RegionVerdict(v <= L - 1 + TOL, "inflated sum of queue maxima <= L - 1", L - 1 - v)
    if flavor == "ord":
        perm = ord_witness(eps, R)
        return RegionVerdict(perm is not None, "ranking" if perm else "no ranking fits", 0.0, perm)
    if flavor == "D":
        perm = ord_witness(eps, R)
        if perm is None:
            return RegionVerdict(False, "not in the ordered set", -math.inf)
        v = _chain_load(eps, R, perm)
        return RegionVerdict(v <= L + TOL, "chain " + ">".join(str(u + 1) for u in perm), L - v, perm)
    if flavor == "fair":
        marg = [float(eps[1 << i]) for i in range(n)]
        order = sorted(range(n), key=lambda u: -marg[u])
        vals = [marg[u] * R[u] for u in order]
        gaps = [vals[k] - vals[k + 1] for k in range(n - 1)]
        if not gaps:
            return RegionVerdict(True, "single user", math.inf, tuple(order))
        k = int(np.argmin(gaps))
        m = float(gaps[k])
        return RegionVerdict(m >= -TOL, f"eps_{order[k] + 1} R_{order[k] + 1} >= eps_{order[k + 1] + 1} "
                             f"R_{order[k + 1] + 1}", m, tuple(order))
    raise ValueError(f"unknown region {flavor!r}")


def boundary_scale(model, R: Sequence[float], flavor: str = "outer") -> float:
    """alpha such that alpha * R sits on the region boundary (symbols per slot)."""
    eps = eps_table(model)
    if flavor == "outer":
        v = outer_load(eps, R)[0]
    elif flavor == "code1_pub":
        v = t_bar_code1(eps, R).total
    elif flavor == "noFB":
        v = nofb_load(eps, R)
    else:
        raise ValueError(f"no scale for {flavor!r}")
    return 1.0 / v


# -- CODE2 (three users) ----------------------------------------------------------------


@dataclass
class Code2Limits:
    r: dict[tuple[int, int], float]
    succ: dict[tuple[int, int], bool]
    k2_pairs: dict[tuple[int, int], float]
    k2_full: tuple[float, float, float]
    k3_full: tuple[float, float, float]
    survival: tuple[int, int, int]
    t_bar: float
    t_bar_code1: float
    transitive: bool


def code2_asymptotics(model, R: Sequence[float]) -> Code2Limits:
    """Limits of CODE2's index values at the end of phase 2 and before phase 3.

    ``r[(i, S)]`` is how far i's load on pair queue S exceeds its partner's
    (zero when it does not); ``survival`` is the survival count these limits
    imply for large n.
    """
    eps = eps_table(model)
    if n_users_of(eps) != 3:
        raise UnsupportedN("CODE2 limits are for exactly three users")
    R = np.asarray(R, dtype=float)
    full = 7
    F = f_table(eps)
    load = F * R[:, None]
    pairs = [3, 5, 6]
    r, succ, k2p = {}, {}, {}
    for S in pairs:
        a, b = users_of(S)
        for i, j in ((a, b), (b, a)):
            r[(i, S)] = float(max(load[i, S] - load[j, S], 0.0))
            succ[(i, j)] = bool(load[i, S] > load[j, S] + TOL * max(1.0, load[i, S]))
            k2p[(i, S)] = float(r[(i, S)] * (1.0 - float(eps[full & ~(S & ~(1 << i))])))
    k2 = []
    k3 = []
    for i in range(3):
        terms = [float(load[i, 1 << i]) * p_sg(eps, 1 << i, full & ~(1 << i))]
        up, down = [], []
        for S in pairs:
            if not S >> i & 1:
                continue
            (j,) = users_of(S & ~(1 << i))
            third = full & ~S
            lo = float(min(load[i, S], load[j, S]))
            terms.append(lo * p_sg(eps, 1 << i, third))
            up.append(r[(i, S)] * p_sg(eps, 1 << i, third))
            down.append(r[(j, S)] * (1.0 - float(eps[1 << i])))
        base = math.fsum(terms)
        k2.append(base)
        k3.append(max(math.fsum([base] + up + [-d for d in down]), 0.0))
    low = math.fsum(float(load[:, S].max()) for S in range(1, full))
    top = max(k3[i] * _inv_recv(eps, 1 << i) for i in range(3))
    su = tuple(sum(1 for S in pairs if S >> i & 1 and r[(i, S)] > TOL) for i in range(3))
    transitive = True
    for i, j, k in itertools.permutations(range(3)):
        ge_jk = load[j, 1 << j | 1 << k] >= load[k, 1 << j | 1 << k] - TOL
        ge_ij = load[i, 1 << i | 1 << j] >= load[j, 1 << i | 1 << j] - TOL
        if (succ[(i, j)] and ge_jk or ge_ij and succ[(j, k)]) and not succ[(i, k)]:
            transitive = False
    return Code2Limits(r, succ, k2p, tuple(k2), tuple(k3), su, low + top, t_bar_code1(eps, R).total, transitive)


def equal_rate_coefficients(model) -> dict[str, float]:
    """Slots per packet, per user, at equal rates: outer bound, CODE1, CODE2."""
    eps = eps_table(model)
    n = n_users_of(eps)
    ones = [1.0] * n
    out = {"outer": outer_load(eps, ones)[0], "code1": t_bar_code1(eps, ones).total}
    if n == 3:
        out["code2"] = code2_asymptotics(eps, ones).t_bar
    return out


def symmetric_t_bar(eps_by_size: Sequence[float], rate: float = 1.0) -> float:
    """CODE1 slot limit for an exchangeable channel at equal rates.

    Equal to the outer bound there: rate * sum_k 1/(1 - eps~_k).
    """
    return rate * math.fsum(1.0 / (1.0 - e) for e in eps_by_size)


def check_reception_partition(model) -> float:
    """Sum of exact-reception probabilities (should be 1)."""
    eps = eps_table(model)
    return math.fsum(p_exact(eps, I) for I in range(eps.size))


def as_mask_dict(values: Mapping[int, float]) -> dict[str, float]:
    return {format_subset(k): float(v) for k, v in values.items()}
