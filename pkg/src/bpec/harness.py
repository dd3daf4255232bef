"""Experiment runner, golden-trace replay and command line.

Per-trial randomness comes from ``numpy.random.SeedSequence(master_seed,
spawn_key=(trial,))``; its three children seed the channel stream, the
session payloads and the recipe generator, in that order.  Trial t's draws
therefore do not depend on how many trials run.

Config files are YAML or JSON with the keys of :class:`ExperimentConfig`;
see README for the schema.  ``BPEC_OUTPUT_DIR`` sets where results go when
no explicit output path is given.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import analytics, gf
from .channel import ChannelModel, channel_from_spec, format_subset, parse_pattern, parse_subset, users_of
from .decoder import RankDeficient, ReceiverState, SessionMeta, decode, replay_private, replay_slot
from .encoder_code1 import IndexRun, make_process
from .overhead import FeedbackLog, FramingError, InfoFrame, multicast_until_all, overhead_slots, packetize_log
from .queue_net import DELIVERED, DesyncError

ALGORITHMS = ("code1_pub", "code1_pri", "code2_pub", "code2_pri")
ENGINES = ("full", "indices")
OUTPUT_ENV = "BPEC_OUTPUT_DIR"


class ConfigError(ValueError):
    """The experiment configuration is inconsistent."""


# -- configuration -----------------------------------------------------------------


@dataclass
class ExperimentConfig:
    n_users: int
    channel: dict
    sizes: list[int] | None = None
    rates: list[float] | None = None
    blocklength: int | None = None
    field_m: int = 8
    payload_len: int = 4
    L_bits: int | None = None
    algorithm: str = "code1_pub"
    engine: str = "full"
    policy: str = "coded"
    trials: int = 1
    seed: int = 0
    slot_cap: int | None = None
    workers: int = 1
    check: bool = False
    output: str | None = None

    def __post_init__(self):
        self.validate()

    @property
    def private(self) -> bool:
        return self.algorithm.endswith("_pri")

    @property
    def coder(self) -> str:
        return self.algorithm.split("_")[0]

    @property
    def packet_bits(self) -> int:
        return self.L_bits if self.L_bits is not None else self.payload_len * self.field_m

    def session_sizes(self) -> list[int]:
        if self.sizes is not None:
            return [int(s) for s in self.sizes]
        return [math.ceil(self.blocklength * r) for r in self.rates]

    def validate(self) -> None:
        n = self.n_users
        if n < 1:
            raise ConfigError("n_users must be at least 1")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.field_m not in gf.POLYNOMIALS:
            raise ConfigError(f"field_m must be one of {sorted(gf.POLYNOMIALS)}")
        if (1 << self.field_m) <= n:
            raise ConfigError(f"field size 2^{self.field_m} must exceed the number of users ({n})")
        if self.coder == "code2" and n != 3:
            raise ConfigError("code2 variants need exactly 3 users")
        if self.private and self.packet_bits < n + 2:
            raise ConfigError(f"private feedback needs at least N + 2 = {n + 2} bits per packet, "
                              f"have {self.packet_bits}")
        if (self.sizes is None) == (self.rates is None):
            raise ConfigError("give exactly one of sizes or rates")
        if self.rates is not None and not self.blocklength:
            raise ConfigError("rates need a blocklength")
        vec = self.sizes if self.sizes is not None else self.rates
        if len(vec) != n:
            raise ConfigError(f"expected {n} session sizes or rates, got {len(vec)}")
        if any(v < 0 for v in vec):
            raise ConfigError("session sizes and rates must be non-negative")
        if self.trials < 0:
            raise ConfigError("trials must be non-negative")
        if self.payload_len < 1:
            raise ConfigError("payload_len must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path: str | os.PathLike, overrides: dict | None = None) -> ExperimentConfig:
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        data = json.loads(text)
    else:
        import yaml
        data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**data)


# -- one trial -----------------------------------------------------------------------


def trial_streams(master: int, trial: int) -> tuple[np.random.Generator, np.random.Generator, int]:
    ss = np.random.SeedSequence(master, spawn_key=(trial,))
    ch, sess, rec = ss.spawn(3)
    return (np.random.default_rng(ch), np.random.default_rng(sess),
            int(rec.generate_state(1, dtype=np.uint64)[0]))


@dataclass
class TrialRow:
    trial: int
    slots: int
    slots_total: int
    overhead_slots: int
    feedback_packets: int
    deadline_exceeded: bool
    decoded: list[bool]
    recipes: int
    attempts: int
    per_queue: dict[str, int] = field(default_factory=dict)
    marks: dict = field(default_factory=dict)
    invariant_checks: int = 0
    shadow_checks: int = 0


class ShadowMismatch(AssertionError):
    """A receiver's replica left the transmitter's state."""


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def run_trial(cfg: ExperimentConfig, trial: int, model: ChannelModel | None = None) -> TrialRow:
    model = model or channel_from_spec(cfg.channel)
    ch_rng, sess_rng, recipe_seed = trial_streams(cfg.seed, trial)
    source = model.source(ch_rng)
    sizes = cfg.session_sizes()
    if cfg.engine == "indices":
        return _index_trial(cfg, trial, sizes, source)
    return _full_trial(cfg, trial, sizes, source, sess_rng, recipe_seed)


def _index_trial(cfg, trial, sizes, source) -> TrialRow:
    run = IndexRun(sizes, cfg.coder)
    res = run.run(source, cfg.slot_cap)
    over = packets = 0
    if cfg.private and not res.deadline_exceeded:
        mc = overhead_slots(res.total_slots, source, cfg.n_users, cfg.packet_bits)
        over, packets = mc.total, len(mc.slots) - 1
    total = res.total_slots + over
    exceeded = res.deadline_exceeded or (cfg.slot_cap is not None and total > cfg.slot_cap)
    return TrialRow(trial, res.total_slots, total, over, packets, exceeded, [], 0, 0,
                    {format_subset(k): v for k, v in res.per_queue.items()}, _jsonable(res.extras))


def _full_trial(cfg, trial, sizes, source, sess_rng, recipe_seed) -> TrialRow:
    f = gf.field(cfg.field_m)
    n = cfg.n_users
    P = cfg.payload_len
    sessions = [[f.random_vector(sess_rng, P) for _ in range(d)] for d in sizes]
    tx = make_process(cfg.coder, sizes, f, P, recipe_seed, sessions=sessions, policy=cfg.policy,
                      check_routes=cfg.check, keep_transcript=False)
    meta = SessionMeta(tuple(sizes), cfg.field_m, P, recipe_seed, cfg.coder, cfg.policy,
                       cfg.packet_bits if cfg.private else None)
    receivers = [] if cfg.private else [ReceiverState(i, meta) for i in range(n)]
    fifos: list[list] = [[] for _ in range(n)]
    patterns: list[int] = []
    digests: list[int] = []
    checks = [0, 0]
    exceeded = False
    while True:
        t = tx.prepare()
        if t is None:
            break
        if cfg.slot_cap is not None and tx.slot >= cfg.slot_cap:
            exceeded = True
            break
        pat = source.draw()
        patterns.append(pat)
        tx.step(pat)
        for i in range(n):
            got = t.payload if not pat >> i & 1 else None
            if cfg.private:
                if got is not None:
                    fifos[i].append(InfoFrame(got, tx.slot))
            else:
                replay_slot(receivers[i], pat, got)
        if cfg.check:
            tx.check()
            checks[0] += 1
            snap = tx.net.snapshot()
            if cfg.private:
                # receivers replay later; keep a digest to compare against then
                digests.append(hash(snap))
            for r in receivers:
                checks[1] += 1
                if r.proc.net.snapshot() != snap:
                    raise ShadowMismatch(f"trial {trial}: user {r.user + 1} diverged at slot {tx.slot}")
    res = tx.result(exceeded)
    over = packets = 0
    decoded = [False] * n
    if not exceeded:
        if cfg.private:
            fb = packetize_log(FeedbackLog.from_patterns(patterns, n), cfg.packet_bits)
            mc = multicast_until_all(fb, source, n, cfg.packet_bits)
            over, packets = mc.total, len(fb)
            for i in range(n):
                fifo = fifos[i] + mc.fifos[i]
                own = [0 if p >> i & 1 else 1 for p in patterns]
                hook = _digest_hook(digests, checks, trial, i) if cfg.check else None
                decoded[i] = _matches(lambda: decode(replay_private(fifo, own, i, meta, hook)), sessions[i])
        else:
            for i in range(n):
                decoded[i] = _matches(lambda: decode(receivers[i]), sessions[i])
    total = res.total_slots + over
    if cfg.slot_cap is not None and total > cfg.slot_cap:
        exceeded = True
    if exceeded:
        decoded = []                      # a missed deadline is an error event, not a decode failure
    return TrialRow(trial, res.total_slots, total, over, packets, exceeded, decoded, res.recipes, res.attempts,
                    {format_subset(k): v for k, v in res.per_queue.items()}, _jsonable(res.extras), *checks)


def _digest_hook(digests, checks, trial, user):
    def hook(t, state):
        checks[1] += 1
        if hash(state.proc.net.snapshot()) != digests[t - 1]:
            raise ShadowMismatch(f"trial {trial}: user {user + 1} replayed a different state at slot {t}")
    return hook


def _matches(solve, truth) -> bool:
    try:
        got = solve()
    except (RankDeficient, DesyncError, FramingError):
        return False
    return len(got) == len(truth) and all(np.array_equal(a, b) for a, b in zip(got, truth))


# -- experiments -------------------------------------------------------------------------


def _trial_job(args):
    cfg_dict, trial = args
    return run_trial(ExperimentConfig(**cfg_dict), trial)


def _mean_ci(values: Sequence[float]) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"mean": None, "std": None, "ci95": None}
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    half = 1.96 * sd / math.sqrt(v.size)
    m = float(v.mean())
    return {"mean": m, "std": sd, "ci95": [m - half, m + half]}


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> dict:
    """Run every trial of ``cfg`` and return the record (also written to disk)."""
    model = channel_from_spec(cfg.channel)
    started = time.time()
    if cfg.workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_trial_job, [(cfg.to_dict(), t) for t in range(cfg.trials)]))
    else:
        rows = [run_trial(cfg, t, model) for t in range(cfg.trials)]
    record = {"config": cfg.to_dict(), "channel": model.describe(), "trials": [dataclasses.asdict(r) for r in rows],
              "summary": summarize(cfg, rows), "analytic": analytic_predictions(cfg, model),
              "elapsed_s": round(time.time() - started, 3)}
    if write and (cfg.output or os.environ.get(OUTPUT_ENV)):
        write_record(record, cfg.output or os.path.join(os.environ[OUTPUT_ENV], "experiment.json"))
    return record


def summarize(cfg: ExperimentConfig, rows: Sequence[TrialRow]) -> dict:
    sizes = cfg.session_sizes()
    total_k = sum(sizes)
    scale = cfg.blocklength or (total_k or 1)
    L = cfg.packet_bits
    info_bits = L - 1 if cfg.private else L
    out = {
        "trials": len(rows),
        "slots_over_n": _mean_ci([r.slots / scale for r in rows]),
        "slots_total_over_n": _mean_ci([r.slots_total / scale for r in rows]),
        "error_rate": (sum(r.deadline_exceeded for r in rows) / len(rows)) if rows else None,
        "decode_failures": sum(1 for r in rows if r.decoded and not all(r.decoded)),
        "attempts_per_recipe": (sum(r.attempts for r in rows) / max(1, sum(r.recipes for r in rows)))
        if cfg.engine == "full" else None,
        "invariant_checks": sum(r.invariant_checks for r in rows),
        "shadow_checks": sum(r.shadow_checks for r in rows),
        "info_bits_per_slot": _mean_ci([total_k * info_bits / r.slots_total for r in rows if r.slots_total]),
    }
    return out


def analytic_predictions(cfg: ExperimentConfig, model: ChannelModel) -> dict:
    sizes = cfg.session_sizes()
    n = cfg.blocklength or 1
    R = [s / n for s in sizes]
    out: dict[str, Any] = {"rates": R}
    if model.kind == "scripted":
        return out
    out["t_bar_code1"] = analytics.t_bar_code1(model, R).total
    if cfg.n_users <= analytics.PERMUTATION_CAP:
        out["outer_load"] = analytics.outer_load(model, R)[0]
    if cfg.n_users == 3:
        out["t_bar_code2"] = analytics.code2_asymptotics(model, R).t_bar
    if cfg.private:
        out["pri_factor_bound"] = analytics.pri_factor(model, cfg.packet_bits)
    return out


def write_record(record: dict, path: str | os.PathLike) -> tuple[Path, Path]:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(_jsonable(record), indent=2))
    csv_path = p.with_suffix(".csv")
    cols = ["trial", "slots", "slots_total", "overhead_slots", "feedback_packets", "deadline_exceeded",
            "decoded_all", "recipes", "attempts"]
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in record["trials"]:
            w.writerow([r["trial"], r["slots"], r["slots_total"], r["overhead_slots"], r["feedback_packets"],
                        int(r["deadline_exceeded"]), int(all(r["decoded"])) if r["decoded"] else "",
                        r["recipes"], r["attempts"]])
    return p, csv_path


def sweep(cfg: ExperimentConfig, direction: Sequence[float], scales: Sequence[float],
          boundary: str = "outer") -> list[dict]:
    """Error rate at ``scale * alpha * direction`` where alpha puts the ray on a boundary."""
    if not cfg.blocklength:
        raise ConfigError("a sweep needs a blocklength")
    model = channel_from_spec(cfg.channel)
    alpha = analytics.boundary_scale(model, direction, boundary)
    out = []
    for s in scales:
        rates = [s * alpha * d for d in direction]
        c = dataclasses.replace(cfg, rates=rates, sizes=None, slot_cap=cfg.blocklength, output=None)
        rec = run_experiment(c, write=False)
        out.append({"scale": s, "rates": rates, "error_rate": rec["summary"]["error_rate"],
                    "slots_over_n": rec["summary"]["slots_over_n"]["mean"]})
    return out


# -- golden trace ----------------------------------------------------------------------------


GOLDEN = {"three_user_example": "golden_3user.json"}


def load_golden(name: str = "three_user_example") -> dict:
    fname = GOLDEN.get(name, name)
    return json.loads(resources.files("bpec").joinpath("data", fname).read_text())


@dataclass
class GoldenReport:
    passed: bool
    mismatches: list[str]
    first_slot: int | None
    slots: int
    elapsed_s: float


class _GoldenRun:
    """Runs the fixture's trace and names packets the way the tables do."""

    LETTERS = "uvw"

    def __init__(self, fx: dict, seed: int = 1, m: int = 8, payload_len: int = 4):
        self.fx = fx
        n = fx["n_users"]
        self.n = n
        self.f = gf.field(m)
        rng = np.random.default_rng(seed)
        self.sessions = [[self.f.random_vector(rng, payload_len) for _ in range(d)] for d in fx["sizes"]]
        tr = fx["trace"]
        self.trace = [parse_pattern(p) for q in sorted(tr["phase1"]) for p in tr["phase1"][q]]
        self.t1 = len(self.trace)
        self.trace += [parse_pattern(p) for p in tr["phase2"]]
        self.t2 = len(self.trace)
        self.trace += [parse_pattern(p) for p in tr["phase3"]]
        self.tx = make_process("code1", fx["sizes"], self.f, payload_len, seed, sessions=self.sessions,
                               policy=fx.get("policy", "uncoded"), check_routes=True)
        meta = SessionMeta(tuple(fx["sizes"]), m, payload_len, seed, "code1", fx.get("policy", "uncoded"))
        self.rx = [ReceiverState(i, meta) for i in range(n)]
        self.names: dict[int, str] = {}
        self.views: dict[int, dict] = {}
        self.records = []
        self.indices = []
        self.snapshots: dict[str, dict] = {}

    def name_of_slot(self, slot: int, tx) -> str:
        if slot <= self.t1:
            (owner,) = users_of(tx.sources[0])
            j = int(np.flatnonzero(tx.coeffs)[0]) + 1
            return f"{self.LETTERS[owner]}{j}"
        return f"s{slot - self.t1}"

    def run(self, mismatches: list[str]) -> int | None:
        first = None
        for pat in self.trace:
            t = self.tx.prepare()
            if t is None:
                mismatches.append("transmitter finished before the trace ended")
                return first or self.tx.slot
            slot = self.tx.slot + 1
            self.names[slot] = self.name_of_slot(slot, t)
            self.views[slot] = {u: v.b.copy() for u, v in t.views.items()}
            rec = self.tx.step(pat)
            if rec.retransmit:
                mismatches.append(f"slot {slot}: unexpected retransmission")
                first = first or slot
            for i, r in enumerate(self.rx):
                replay_slot(r, pat, t.payload if not pat >> i & 1 else None)
                if r.proc.net.snapshot() != self.tx.net.snapshot():
                    mismatches.append(f"slot {slot}: user {i + 1} replica diverged")
                    first = first or slot
            self.tx.check()
            self.records.append(rec)
            self.indices.append([row[:] for row in self.tx.net.k])
            if slot == self.t1:
                self.snapshots["end_phase1"] = self.capture()
            if slot == self.t2:
                self.snapshots["end_phase2"] = self.capture()
        if self.tx.prepare() is not None:
            mismatches.append("trace ended before the transmitter finished")
            first = first or self.tx.slot
        return first

    def packet_name(self, p) -> str:
        base = self.names.get(p.origin_slot, f"?{p.origin_slot}")
        return base

    def capture(self) -> dict:
        net = self.tx.net
        queues = {}
        for mask, packets in net.queues.items():
            if len(users_of(mask)) < 2 or not packets:
                continue
            queues[format_subset(mask)[1:-1]] = [
                f"{self.packet_name(p)}({''.join(str(u + 1) for u in users_of(p.received_by))})" for p in packets]
        bases = {}
        for i in range(self.n):
            groups = {}
            basis = net.bases[i]
            for key, positions in basis.groups.items():
                if not positions:
                    continue
                label = "D" if key == DELIVERED else format_subset(key)[1:-1]
                pool = net.delivered[i] if key == DELIVERED else net.queues[key]
                names = []
                for pos in positions:
                    row = basis.U[pos].tobytes()
                    hit = next((p for p in pool if p.views[i].key() == row), None)
                    names.append(self.vector_name(i, hit))
                groups[label] = names
            bases[str(i + 1)] = groups
        delivered = {str(i + 1): [self.packet_name(p) for p in net.delivered[i]] for i in range(self.n)}
        return {"queues": queues, "bases": bases, "delivered": delivered}

    def vector_name(self, user: int, packet) -> str:
        if packet is None:
            return "?"
        name = self.packet_name(packet)
        if packet.origin_slot <= self.t1 and name[0] == self.LETTERS[user]:
            return "e" + name[1:]
        return name


def _same_set(a, b) -> bool:
    return sorted(a) == sorted(b)


def replay_golden(name: str = "three_user_example") -> GoldenReport:
    """Replay a bundled trace with the uncoded phase-1 policy and diff against its fixture."""
    started = time.time()
    fx = load_golden(name)
    run = _GoldenRun(fx)
    bad: list[str] = []
    first = run.run(bad)

    def note(slot, msg):
        nonlocal first
        bad.append(msg)
        if first is None or (slot is not None and slot < first):
            first = slot

    e1, e2 = fx["end_phase1"], fx["end_phase2"]
    got1 = run.snapshots.get("end_phase1", {})
    if got1:
        for key, want in e1["queues"].items():
            if got1["queues"].get(key) != want:
                note(run.t1, f"end of phase 1, queue {{{key}}}: got {got1['queues'].get(key)}, want {want}")
        for user, want in e1["delivered"].items():
            if got1["delivered"][user] != want:
                note(run.t1, f"end of phase 1, delivered to {user}: got {got1['delivered'][user]}, want {want}")
        for user, sets in e1["bases"].items():
            for key, want in sets.items():
                if not _same_set(got1["bases"][user].get(key, []), want):
                    note(run.t1, f"end of phase 1, basis of user {user} on {key}: "
                                 f"got {got1['bases'][user].get(key)}, want {want}")
        k1 = run.indices[run.t1 - 1]
        for key, want in e1["indices"].items():
            S = parse_subset(key)
            got = [k1[u][S] for u in users_of(S)]
            if got != want:
                note(run.t1, f"end of phase 1, indices on {{{key}}}: got {got}, want {want}")

    p2 = fx["phase2"]
    for k, (qkey, steps, want) in enumerate(zip(p2["queues"], p2["steps"], p2["indices"])):
        slot = run.t1 + k + 1
        if slot > len(run.records):
            break
        rec = run.records[slot - 1]
        S = parse_subset(qkey)
        if rec.label != S:
            note(slot, f"slot {slot}: processed {format_subset(rec.label)}, want {{{qkey}}}")
        if list(rec.steps) != steps:
            note(slot, f"slot {slot}: rule steps {list(rec.steps)}, want {steps}")
        got = [run.indices[slot - 1][u][S] for u in users_of(S)]
        if got != want:
            note(slot, f"slot {slot}: indices {got}, want {want}")

    got2 = run.snapshots.get("end_phase2", {})
    if got2:
        for key, want in e2["queues"].items():
            if got2["queues"].get(key) != want:
                note(run.t2, f"end of phase 2, queue {{{key}}}: got {got2['queues'].get(key)}, want {want}")
        for user, sets in e2["bases"].items():
            for key, want in sets.items():
                if not _same_set(got2["bases"][user].get(key, []), want):
                    note(run.t2, f"end of phase 2, basis of user {user} on {key}: "
                                 f"got {got2['bases'][user].get(key)}, want {want}")
    for claim in e2["spans"]:
        slot = run.t1 + int(claim["packet"][1:])
        u = claim["user"] - 1
        b = run.views.get(slot, {}).get(u)
        support = [] if b is None else [int(j) + 1 for j in np.flatnonzero(b)]
        if not set(support) <= set(claim["within"]):
            note(slot, f"view of user {u + 1} on {claim['packet']} has support {support}, "
                       f"outside {claim['within']}")

    full = (1 << run.n) - 1
    heard = {str(i + 1): [] for i in range(run.n)}
    for slot, pat in enumerate(run.trace, start=1):
        if slot > run.t1:
            for i in users_of(full & ~pat):
                heard[str(i + 1)].append(run.names.get(slot))
    for user, want in e2["received"].items():
        want_s = [x for x in want if x.startswith("s")] + fx["phase3"]["received"][user]
        if heard[user] != want_s:
            note(None, f"coded packets heard by user {user}: got {heard[user]}, want {want_s}")

    for k, want in enumerate(fx["phase3"]["indices"]):
        slot = run.t2 + k + 1
        if slot > len(run.indices):
            break
        got = [run.indices[slot - 1][u][full] for u in range(run.n)]
        if got != want:
            note(slot, f"slot {slot}: indices on the all-user queue {got}, want {want}")

    counts = [len(r.equations) for r in run.rx]
    if counts != fx["final"]["equations"]:
        note(None, f"equation counts {counts}, want {fx['final']['equations']}")
    for i, r in enumerate(run.rx):
        try:
            got = decode(r)
        except RankDeficient as exc:
            note(None, f"user {i + 1} cannot decode: {exc}")
            continue
        if not all(np.array_equal(a, b) for a, b in zip(got, run.sessions[i])):
            note(None, f"user {i + 1} decoded the wrong packets")
    if run.tx.slot != fx["final"]["slots"]:
        note(None, f"run took {run.tx.slot} slots, want {fx['final']['slots']}")
    return GoldenReport(not bad, bad, first, run.tx.slot, time.time() - started)


# -- command line ---------------------------------------------------------------------------


def _parse_floats(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bpec", description="Feedback network coding over broadcast erasure channels")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="YAML or JSON experiment config")
        p.add_argument("--trials", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--algorithm", choices=ALGORITHMS)
        p.add_argument("--engine", choices=ENGINES)
        p.add_argument("--workers", type=int)
        p.add_argument("--slot-cap", dest="slot_cap", type=int)
        p.add_argument("--blocklength", type=int)
        p.add_argument("--field-m", dest="field_m", type=int)
        p.add_argument("--check", action="store_true", default=None)
        p.add_argument("--output", "-o")

    common(sub.add_parser("simulate", help="run Monte Carlo trials"))
    sw = sub.add_parser("sweep", help="error rate along a rate ray around a region boundary")
    common(sw)
    sw.add_argument("--direction", type=_parse_floats, required=True)
    sw.add_argument("--scales", type=_parse_floats, default=[0.9, 0.95, 1.0, 1.05, 1.1])
    sw.add_argument("--boundary", choices=["outer", "code1_pub", "noFB"], default="outer")

    rg = sub.add_parser("region", help="analytic region membership of a rate vector")
    rg.add_argument("channel", help="channel spec as JSON text or a YAML/JSON file")
    rg.add_argument("--rates", type=_parse_floats, required=True)
    rg.add_argument("--L", dest="L_bits", type=float, default=1.0)
    rg.add_argument("--flavor", action="append",
                    choices=["noFB", "outer", "code1_pub", "code1_pri", "D", "ord", "fair"])

    gd = sub.add_parser("golden", help="replay the bundled worked-example trace")
    gd.add_argument("--name", default="three_user_example")
    return ap


def _load_channel(text: str) -> ChannelModel:
    p = Path(text)
    if p.exists():
        if p.suffix == ".json":
            spec = json.loads(p.read_text())
        else:
            import yaml
            spec = yaml.safe_load(p.read_text())
        spec = spec.get("channel", spec)
    else:
        spec = json.loads(text)
    return channel_from_spec(spec)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "golden":
        rep = replay_golden(args.name)
        for m in rep.mismatches:
            print("MISMATCH", m)
        print(f"golden {args.name}: {'ok' if rep.passed else 'FAILED'} ({rep.slots} slots, "
              f"{rep.elapsed_s:.3f} s)")
        return 0 if rep.passed else 1
    if args.command == "region":
        model = _load_channel(args.channel)
        out = {}
        for fl in args.flavor or ["noFB", "outer", "code1_pub"]:
            v = analytics.region_memberships(model, args.rates, args.L_bits, fl)
            out[fl] = {"member": v.member, "binding": v.binding, "margin": v.margin,
                       "witness": None if v.witness is None else [u + 1 for u in v.witness]}
        print(json.dumps(out, indent=2))
        return 0
    keys = ("trials", "seed", "algorithm", "engine", "workers", "slot_cap", "blocklength", "field_m", "check",
            "output")
    overrides = {k: getattr(args, k) for k in keys}
    cfg = load_config(args.config, overrides)
    if args.command == "sweep":
        res = sweep(cfg, args.direction, args.scales, args.boundary)
        print(json.dumps(res, indent=2))
        if cfg.output:
            Path(cfg.output).write_text(json.dumps(res, indent=2))
        return 0
    rec = run_experiment(cfg)
    s = rec["summary"]
    print(json.dumps({"summary": s, "analytic": rec["analytic"]}, indent=2, default=float))
    return 1 if s["decode_failures"] else 0


if __name__ == "__main__":
    sys.exit(main())
