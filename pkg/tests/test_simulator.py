import numpy as np
import pytest

from smartrar.regimes import ScenarioSpec
from smartrar.simulator import (EventOffsets, TrialConfig, draw_enrollment, parse_scheme,
                                run_trial, simulate_stage)
from smartrar.trial import MISSING, ArmSets


def test_enrollment():
    ids, weeks = draw_enrollment(50, 1, np.random.default_rng(0))
    assert np.all(weeks == 1) and sorted(ids) == list(range(50))
    _, weeks = draw_enrollment(100_000, 130, np.random.default_rng(1))
    assert abs(weeks.mean() - 65.5) < 0.5
    assert np.all(np.diff(weeks) >= 0)
    a = draw_enrollment(20, 130, np.random.default_rng(9))
    b = draw_enrollment(20, 130, np.random.default_rng(9))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_stage_durability_and_classifier(scenarios):
    s = scenarios[3]
    rng = np.random.default_rng(2)
    n = 100_000
    y2, _ = simulate_stage(s, 2, np.zeros(n, int), np.zeros(n, int), np.ones(n, int), rng)
    assert np.all(y2 == 1)
    y1, r1 = simulate_stage(s, 1, np.zeros(4 * n, int), None, np.zeros(4 * n, int), rng)
    assert abs(r1[y1 == 1].mean() - 0.53) < 0.005
    assert abs(r1[y1 == 0].mean() - 0.10) < 0.005
    y3, r3 = simulate_stage(s, 3, 0, 1, 0, rng)
    assert r3 is None
    with pytest.raises(ValueError):
        simulate_stage(s, 2, 0, None, 0, rng)
    with pytest.raises(ValueError):
        simulate_stage(s, 1, 0, None, 1, rng)


def test_scheme_labels():
    assert not parse_scheme("SR").adaptive
    ts = parse_scheme("TS(0.5t/T_end)")
    assert ts.damping.kind == "linear" and ts.damping.psi_max == 0.5
    assert parse_scheme("TS(t/T_end)").damping.psi_max == 1.0
    assert parse_scheme("TS(0.75)").damping.kind == "constant"
    with pytest.raises(ValueError):
        parse_scheme("TS()")
    with pytest.raises(ValueError):
        parse_scheme("UCB(1)")


def test_config_validation_and_round_trip(tmp_path):
    with pytest.raises(ValueError):
        TrialConfig(offsets=EventOffsets(stage2=12, y1_record=11))
    with pytest.raises(ValueError):
        TrialConfig(T_enroll=140, T_end=143)
    cfg = TrialConfig(n_s=50).with_scheme("TS(0.25)")
    path = tmp_path / "c.json"
    import json
    path.write_text(json.dumps(cfg.to_dict()))
    assert TrialConfig.load(path) == cfg


def check_records(trial, config):
    ds = trial.dataset
    off = config.offsets
    assert len(ds) == config.n_s
    assert np.all(ds.outcome() >= 0)
    for rec in ds:
        weeks = [rec.event_weeks[e] for e in ("r1", "y1", "a2", "r2", "y2", "y3")
                 if e in rec.event_weeks]
        assert weeks == sorted(weeks)
        assert rec.event_weeks["r1"] == rec.enroll_week + off.stage2
        if rec.r1 == 0:
            assert rec.event_weeks["a2"] == rec.enroll_week + off.stage2
    # every stage-2 probability was read from the table of the assignment week
    by_week = {t.week: t for t in trial.tables}
    for i in np.flatnonzero(ds.r1 == 0):
        w = ds.a2_week[i]
        if ds.enroll_week[i] > trial.burn_in_week:
            assert ds.pi2[i] == by_week[w].pi2[ds.a1[i], ds.a2[i]]
    for i in range(len(ds)):
        if ds.enroll_week[i] > trial.burn_in_week:
            assert ds.pi1[i] == by_week[ds.enroll_week[i]].pi1[ds.a1[i]]


def test_ts_trial_records_consistent(scenarios):
    cfg = TrialConfig().with_scheme("TS(1)")
    trial = run_trial(scenarios[3], cfg, 42)
    check_records(trial, cfg)
    ds = trial.dataset
    lo, hi = cfg.clip_lo, cfg.clip_hi
    adaptive = ds.enroll_week > trial.burn_in_week
    assert np.all((ds.pi1[adaptive] >= lo - 1e-12) & (ds.pi1[adaptive] <= hi + 1e-12))
    assert np.all(ds.pi1[~adaptive] == 0.5)
    assert np.all(ds.pi2[~adaptive & (ds.r1 == 0)] == 1 / 3)
    assert trial.burn_in_week == np.sort(ds.enroll_week)[cfg.burn_in_count - 1]


def test_sr_trial_is_uniform(scenarios):
    for k in (1, 4):
        trial = run_trial(scenarios[k], TrialConfig(), k)
        ds = trial.dataset
        assert np.all(ds.pi1 == 0.5)
        assert np.all(ds.pi2[ds.r1 == 0] == 1 / 3)
        assert np.all(np.isnan(ds.pi2[ds.r1 == 1]))


def test_sr_stage1_frequencies(scenarios):
    ds = run_trial(scenarios[1], TrialConfig(n_s=20_000), 3).dataset
    share = np.mean(ds.a1 == 0)
    assert abs(share - 0.5) < 3 * np.sqrt(0.25 / len(ds))


def test_clipped_assignment_frequency_floor(scenarios):
    ds = run_trial(scenarios[3], TrialConfig(n_s=4000).with_scheme("TS(1)"), 8).dataset
    for arm in (0, 1):
        f = np.mean(ds.a1 == arm)
        assert f >= 0.05 - 3 * np.sqrt(0.05 * 0.95 / len(ds))


def test_durability_on_records(scenarios):
    for seed in range(5):
        trial = run_trial(scenarios[2], TrialConfig().with_scheme("TS(0.5)"), seed)
        ds, lat = trial.dataset, trial.latent
        nonresp = ds.r1 == 0
        assert not np.any((lat["y1"] == 1) & nonresp & (lat["y2"] == 0))
        assert not np.any((lat["y2"] == 1) & (lat["y3"] == 0))
        # observed indicators agree with the latent path
        assert np.array_equal(ds.y1[ds.r1 == 1], lat["y1"][ds.r1 == 1])
        assert np.array_equal(ds.y2[ds.r2 == 1], lat["y2"][ds.r2 == 1])
        assert np.array_equal(ds.y3[ds.r2 == 0], lat["y3"][ds.r2 == 0])
        assert np.all((ds.y1 == MISSING) == nonresp)


def test_determinism(scenarios):
    cfg = TrialConfig().with_scheme("TS(t/T_end)")
    a = run_trial(scenarios[4], cfg, 77)
    b = run_trial(scenarios[4], cfg, 77)
    assert a.dataset.to_csv() == b.dataset.to_csv()
    assert a.tables_csv() == b.tables_csv()
    assert run_trial(scenarios[4], cfg, 78).dataset.to_csv() != a.dataset.to_csv()


def test_forced_single_regime_matches_truth(scenarios):
    s3 = scenarios[3]
    arms = ArmSets((0,), (0,))
    single = ScenarioSpec(arms, s3.p1[:1], s3.p2[:1, :1], s3.p3[:1, :1],
                          s3.lambda_sens, s3.lambda_spec)
    ds = run_trial(single, TrialConfig(arms=arms, n_s=1_000_000), 2024).dataset
    assert abs(ds.outcome().mean() - 0.712) < 0.002


def test_arm_mismatch_rejected(scenarios):
    with pytest.raises(ValueError):
        run_trial(scenarios[1], TrialConfig(arms=ArmSets((0,), (0,))), 1)


def test_trajectories(scenarios):
    cfg = TrialConfig().with_scheme("TS(1)")
    trial = run_trial(scenarios[1], cfg, 5)
    traj = trial.pi1_trajectory(cfg.T_end)
    assert traj.shape == (143, 2)
    assert np.allclose(traj.sum(axis=1), 1)
    assert np.all(traj[: trial.burn_in_week] == 0.5)
    assert np.array_equal(traj[trial.final_table.week - 1:][-1], trial.final_table.pi1)
