import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smartrar.estimators import (AlphaTable, EmptyCellError, RegimeEstimate, alpha_table,
                                 estimate_all, estimate_bayes, estimate_plugin, estimate_weighted,
                                 identify_optimal, wald_ci)
from smartrar.simulator import TrialConfig, run_trial
from smartrar.trial import PAPER_ARMS, Dataset, Regime, SubjectRecord


def hand_dataset():
    recs = [
        SubjectRecord(0, 1, 0, 0.5, 1, y1=1),
        SubjectRecord(1, 1, 0, 0.5, 1, y1=0),
        SubjectRecord(2, 1, 0, 0.5, 0, a2=0, pi2_at_assignment=1 / 3, r2=1, y2=1),
        SubjectRecord(3, 1, 0, 0.5, 0, a2=0, pi2_at_assignment=1 / 3, r2=0, y3=0),
    ]
    return Dataset.from_records(recs, PAPER_ARMS)


def test_hand_tally():
    ds = hand_dataset()
    a = alpha_table(ds, Regime(0, 0))
    assert (a.alpha1, a.alpha2, a.alpha3, a.alpha4, a.alpha5, a.alpha6) == (
        0.25, 1.0, 0.25, 0.5, 0.0, 0.5)
    assert estimate_plugin(ds, Regime(0, 0)).estimate == pytest.approx(0.5)


def test_empty_cells_raise():
    ds = hand_dataset()
    with pytest.raises(EmptyCellError, match="alpha4"):
        estimate_plugin(ds, Regime(0, 1))
    with pytest.raises(EmptyCellError, match="alpha2"):
        estimate_weighted(ds, Regime(1, 0))


def test_wald():
    assert wald_ci(0.5, 0.0) == (0.5, 0.5)
    lo, hi = wald_ci(0.7, 0.05)
    assert lo == pytest.approx(0.602, abs=1e-3) and hi == pytest.approx(0.798, abs=1e-3)
    assert (lo + hi) / 2 == pytest.approx(0.7)
    with pytest.raises(ValueError):
        wald_ci(0.5, -1)


def _est(values):
    return [RegimeEstimate(r, v, 0.1, v - 0.2, v + 0.2, "plugin")
            for r, v in zip(PAPER_ARMS.regimes(), values)]


def test_identify_optimal():
    assert identify_optimal(_est([0.6, 0.7, 0.5, 0.1, 0.2, 0.3])) == Regime(0, 1)
    assert identify_optimal(_est([0.4] * 6)) == Regime(0, 0)


def test_bayes_empty_dataset():
    e = estimate_bayes(Dataset.empty(PAPER_ARMS), Regime(1, 2), 100_000, np.random.default_rng(1))
    assert abs(e.estimate - 0.5) < 0.005
    assert e.ci_lo <= e.estimate <= e.ci_hi


def test_bayes_concentrates():
    n = 100_000
    ds = Dataset.empty(PAPER_ARMS, n)
    ds.a1[:], ds.pi1[:], ds.r1[:], ds.y1[:] = 0, 0.5, 1, 1
    ds.r1_week[:], ds.y1_week[:] = 13, 14
    e = estimate_bayes(ds, Regime(0, 0), 2000, np.random.default_rng(2))
    assert e.estimate > 0.999


def _delta_method_se(ds, regime, weighted):
    """Independent oracle: finite-difference gradient of the ratio map."""
    from smartrar.estimators import _indicators, stage_weights
    ind = _indicators(ds, regime)
    keys = [f"alpha{k}" for k in range(1, 7)]
    X = np.array([ind[k].astype(float) for k in keys]).T
    if weighted:
        w1, w2 = stage_weights(ds)
        for j, k in enumerate(keys):
            w = w2 if k in ("alpha3", "alpha4", "alpha5") else w1
            X[:, j] = np.where(X[:, j] > 0, w, 0.0)
    a = X.mean(axis=0)

    def mu(v):
        return AlphaTable(*v).value

    grad = np.zeros(6)
    for j in range(6):
        h = 1e-6 * max(a[j], 1e-3)
        up, dn = a.copy(), a.copy()
        up[j] += h
        dn[j] -= h
        grad[j] = (mu(up) - mu(dn)) / (2 * h)
    infl = (X - a) @ grad
    return mu(a), np.sqrt(np.mean(infl ** 2) / len(ds))


def test_influence_se_matches_delta_method(scenarios):
    ds = run_trial(scenarios[3], TrialConfig().with_scheme("TS(1)"), 31).dataset
    for r in PAPER_ARMS.regimes():
        est, se = _delta_method_se(ds, r, weighted=False)
        p = estimate_plugin(ds, r)
        assert p.estimate == pytest.approx(est, rel=1e-12)
        assert p.se == pytest.approx(se, rel=1e-5)
        est, se = _delta_method_se(ds, r, weighted=True)
        w = estimate_weighted(ds, r)
        assert w.estimate == pytest.approx(est, rel=1e-12)
        assert w.se == pytest.approx(se, rel=1e-5)


def test_unweighted_indicator_variance_is_smaller_under_sr(scenarios):
    ds = run_trial(scenarios[3], TrialConfig(), 4).dataset
    r = Regime(0, 0)
    printed = estimate_weighted(ds, r, weighted_indicators=False)
    assert printed.estimate == pytest.approx(estimate_plugin(ds, r).estimate, abs=1e-12)
    assert printed.se < 0.75 * estimate_plugin(ds, r).se


def test_weighted_equals_plugin_under_sr(scenarios):
    ds = run_trial(scenarios[5], TrialConfig(), 9).dataset
    for p, w in zip(estimate_all(ds, "plugin"), estimate_all(ds, "weighted")):
        assert abs(p.estimate - w.estimate) < 1e-12
        assert abs(p.se - w.se) < 1e-12


@settings(max_examples=50)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.integers(0, 10_000))
def test_weighted_equals_plugin_for_constant_probabilities(pi1, pi2, seed):
    from smartrar import load_scenario
    ds = run_trial(load_scenario("scenario1"), TrialConfig(n_s=300), seed).dataset
    ds.pi1[:] = pi1
    ds.pi2[ds.r1 == 0] = pi2
    for r in PAPER_ARMS.regimes():
        try:
            p = estimate_plugin(ds, r)
        except EmptyCellError:
            continue
        w = estimate_weighted(ds, r)
        assert abs(p.estimate - w.estimate) < 1e-12
        assert abs(p.se - w.se) < 1e-12


def test_large_sample_plugin_consistency(scenarios):
    ds = run_trial(scenarios[3], TrialConfig(n_s=100_000), 17).dataset
    assert abs(estimate_plugin(ds, Regime(0, 0)).estimate - 0.712) < 0.01
    bayes = estimate_all(ds, "bayes", M=1000, rng=np.random.default_rng(5))
    for b, p in zip(bayes, estimate_all(ds, "plugin")):
        assert abs(b.estimate - p.estimate) < 0.005


def test_estimate_all_validates_method():
    with pytest.raises(ValueError):
        estimate_all(hand_dataset(), "median")
    with pytest.raises(ValueError):
        estimate_all(hand_dataset(), "bayes")
