import json

import pytest
import yaml

from bpec import harness
from bpec.harness import ConfigError, ExperimentConfig, load_config, replay_golden, run_experiment, trial_streams

SYM = {"kind": "symmetric", "eps": [0.3, 0.15, 0.05]}


def cfg(**kw):
    base = dict(n_users=3, channel=SYM, sizes=[4, 4, 4], trials=3, seed=5)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.mark.parametrize("kw", [
    dict(field_m=4, n_users=16, sizes=[1] * 16, channel={"kind": "independent", "eps": [0.1] * 16}),
    dict(algorithm="code2_pub", n_users=2, sizes=[1, 1], channel={"kind": "symmetric", "eps": [0.2, 0.1]}),
    dict(algorithm="code1_pri", L_bits=4),
    dict(rates=[0.1, 0.1, 0.1]),                       # both sizes and rates
    dict(sizes=[1, 1]),
    dict(algorithm="code3_pub"),
    dict(engine="gpu"),
])
def test_config_rejections(kw):
    with pytest.raises(ConfigError):
        cfg(**kw)


def test_rates_need_blocklength_and_round_up():
    with pytest.raises(ConfigError):
        cfg(sizes=None, rates=[0.1, 0.1, 0.1])
    assert cfg(sizes=None, rates=[0.105, 0.1, 0], blocklength=100).session_sizes() == [11, 10, 0]


def test_load_config_formats(tmp_path):
    data = dict(n_users=3, channel=SYM, sizes=[2, 2, 2], algorithm="code2_pub")
    (tmp_path / "a.yaml").write_text(yaml.safe_dump(data))
    (tmp_path / "a.json").write_text(json.dumps(data))
    a = load_config(tmp_path / "a.yaml", {"trials": 7, "seed": None})
    b = load_config(tmp_path / "a.json")
    assert a.trials == 7 and b.trials == 1 and a.algorithm == b.algorithm == "code2_pub"
    (tmp_path / "bad.json").write_text(json.dumps({**data, "colour": "red"}))
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


def test_trial_streams_depend_only_on_trial_index():
    a = trial_streams(11, 3)
    b = trial_streams(11, 3)
    c = trial_streams(11, 4)
    assert a[2] == b[2] != c[2]
    assert a[0].random() == b[0].random()


@pytest.mark.parametrize("algorithm", ["code1_pub", "code1_pri", "code2_pub", "code2_pri"])
def test_trials_decode(algorithm):
    rec = run_experiment(cfg(algorithm=algorithm, check=True, L_bits=16), write=False)
    assert rec["summary"]["decode_failures"] == 0
    assert all(all(t["decoded"]) for t in rec["trials"])
    if algorithm.endswith("pri"):
        assert all(t["overhead_slots"] > 0 for t in rec["trials"])


def test_index_engine_matches_full_engine():
    full = run_experiment(cfg(trials=4), write=False)
    fast = run_experiment(cfg(trials=4, engine="indices"), write=False)
    assert [t["slots"] for t in full["trials"]] == [t["slots"] for t in fast["trials"]]


def test_outputs_written(tmp_path, monkeypatch):
    monkeypatch.setenv(harness.OUTPUT_ENV, str(tmp_path))
    rec = run_experiment(cfg(trials=2))
    assert (tmp_path / "experiment.json").exists()
    rows = (tmp_path / "experiment.csv").read_text().splitlines()
    assert len(rows) == 3 and rows[0].startswith("trial,slots")
    saved = json.loads((tmp_path / "experiment.json").read_text())
    assert saved["summary"]["trials"] == 2
    assert rec["analytic"]["t_bar_code1"] == pytest.approx(saved["analytic"]["t_bar_code1"])


def test_worker_pool_gives_same_rows():
    one = run_experiment(cfg(trials=3), write=False)
    two = run_experiment(cfg(trials=3, workers=2), write=False)
    assert [t["slots"] for t in one["trials"]] == [t["slots"] for t in two["trials"]]


def test_slot_cap_flags_deadline():
    rec = run_experiment(cfg(sizes=[20, 20, 20], slot_cap=10, trials=2), write=False)
    assert rec["summary"]["error_rate"] == 1.0


def test_golden_replay_and_divergence_report(monkeypatch):
    rep = replay_golden()
    assert rep.passed, rep.mismatches
    fx = harness.load_golden()
    fx["phase2"]["indices"][4] = [9, 9]
    monkeypatch.setattr(harness, "load_golden", lambda name="three_user_example": fx)
    bad = replay_golden()
    assert not bad.passed
    assert bad.first_slot == 35


def test_cli(tmp_path, capsys):
    assert harness.main(["golden"]) == 0
    conf = tmp_path / "c.yaml"
    conf.write_text(yaml.safe_dump(dict(n_users=3, channel=SYM, sizes=[3, 3, 3])))
    out = tmp_path / "r.json"
    assert harness.main(["simulate", str(conf), "--trials", "2", "-o", str(out)]) == 0
    assert json.loads(out.read_text())["summary"]["trials"] == 2
    capsys.readouterr()
    assert harness.main(["region", json.dumps(SYM), "--rates", "0.2,0.2,0.2", "--flavor", "outer"]) == 0
    assert json.loads(capsys.readouterr().out)["outer"]["member"] is True


def test_private_replay_is_checked_slot_by_slot(monkeypatch):
    real = harness._digest_hook
    # shift one stored digest: the replaying receiver must notice at that slot
    monkeypatch.setattr(harness, "_digest_hook",
                        lambda d, c, t, u: real(d[:3] + [d[3] ^ 1] + d[4:], c, t, u))
    with pytest.raises(harness.ShadowMismatch, match="slot 4"):
        run_experiment(cfg(algorithm="code1_pri", check=True, L_bits=16, trials=1), write=False)
    rec = run_experiment(cfg(algorithm="code1_pri", check=False, L_bits=16, trials=1), write=False)
    assert rec["summary"]["shadow_checks"] == rec["summary"]["invariant_checks"] == 0
