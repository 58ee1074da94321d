import math

import numpy as np
import pytest

from kinrisk import (SimScenario, ValidationError, calibrate_censoring, fit, gen_dataset, replicate,
                     true_risk)
from kinrisk.simulate import (PROB_FREQS, PROB_VALUES, RISK_AGES, DiscreteCovariates,
                              sex_covariates, sex_interaction_contrasts)

CMAX = 222.9  # roughly 40% censoring for the default design
NULL = dict(beta=0.0, eta=(0.0,), theta=(0.0,), gamma=(0.0,))


def test_null_linpred_weibull_median():
    scen = SimScenario(n=200_000, c_max=CMAX, **NULL)
    _, truth = gen_dataset(scen, seed=3)
    med = 105 * math.log(2) ** 0.2
    assert med == pytest.approx(97.58, abs=0.01)
    # sample median standard error: 1 / (2 f(m) sqrt(n))
    f_m = 5 / 105 * (med / 105) ** 4 * 0.5
    se = 1 / (2 * f_m * math.sqrt(scen.n))
    assert abs(np.median(truth.t) - med) < 4 * se


def test_true_hazard_ratios():
    scen = SimScenario()
    hr = {k: math.exp(v) for k, v in scen.true_coef.items()}
    assert hr == pytest.approx({"beta": 4.99, "eta[male]": 2.39, "theta[male]": 0.31,
                                "gamma[proband_male]": 0.71}, rel=1e-12)
    assert round(hr["beta"] * hr["theta[male]"], 3) == 1.547


def test_probability_groups():
    assert PROB_VALUES == (0.0, 0.02, 0.51, 1.0)
    assert sum(f for p, f in zip(PROB_VALUES, PROB_FREQS) if p not in (0, 1)) == pytest.approx(0.93)
    d, _ = gen_dataset(SimScenario(n=100_000, c_max=CMAX), seed=1)
    share = np.mean((d.probs != 0) & (d.probs != 1))
    assert abs(share - 0.93) < 3 * math.sqrt(0.93 * 0.07 / d.n)


def test_observed_vs_latent_times():
    d, truth = gen_dataset(SimScenario(n=5000, c_max=CMAX), seed=2)
    assert np.all(d.y <= truth.t)
    np.testing.assert_array_equal(d.y == truth.t, d.delta == 1)
    np.testing.assert_array_equal(d.y, np.minimum(truth.t, truth.c))


def test_latent_carrier_frequency():
    d, truth = gen_dataset(SimScenario(n=200_000, c_max=CMAX), seed=4)
    m = d.probs == 0.51
    assert abs(truth.x[m].mean() - 0.51) < 3 * math.sqrt(0.51 * 0.49 / m.sum())
    assert truth.x[d.probs == 0].sum() == 0 and truth.x[d.probs == 1].all()


def test_family_blocks():
    d, _ = gen_dataset(SimScenario(n=23, c_max=CMAX), seed=0)
    ids, idx = d.families
    assert len(ids) == 5
    np.testing.assert_array_equal(np.bincount(idx), [5, 5, 5, 5, 3])
    # proband sex is a family-level covariate
    for f in range(5):
        assert np.unique(d.z[idx == f, 0]).size == 1


def test_same_seed_identical():
    a, ta = gen_dataset(SimScenario(n=500, c_max=CMAX), seed=11)
    b, tb = gen_dataset(SimScenario(n=500, c_max=CMAX), seed=11)
    assert a == b
    np.testing.assert_array_equal(ta.t, tb.t)
    c, _ = gen_dataset(SimScenario(n=500, c_max=CMAX), seed=12)
    assert a != c


def test_calibrated_censoring_realized():
    scen = SimScenario()
    c_max = calibrate_censoring(scen)
    assert abs(calibrate_censoring(scen, mc_n=10**6) - c_max) == 0.0
    d, _ = gen_dataset(SimScenario(n=10**6, c_max=c_max), seed=21)
    assert abs(1 - d.delta.mean() - 0.40) < 0.01


def test_censoring_monotone_in_c_max():
    scen = SimScenario()
    cs = [calibrate_censoring(scen, t, mc_n=200_000) for t in (0.2, 0.4, 0.6, 0.8)]
    assert all(b < a for a, b in zip(cs, cs[1:]))


def test_censoring_unreachable_target():
    # a tiny bracket cannot reach almost-complete censoring
    with pytest.raises(ValidationError, match="unreachable"):
        calibrate_censoring(SimScenario(), 1 - 1e-6, mc_n=100_000, tol=1e-7,
                            max_expand=2)
    with pytest.raises(ValidationError):
        calibrate_censoring(SimScenario(), 1.0)


def test_true_risk_at_zero_and_scale():
    scen = SimScenario(**NULL)
    for carrier in (0, 1):
        np.testing.assert_array_equal(true_risk(scen, carrier, ages=[0.0]), [0.0])
        assert true_risk(scen, carrier, ages=[105.0])[0] == pytest.approx(1 - math.exp(-1),
                                                                        abs=1e-15)


def test_true_risk_hand_enumeration():
    scen = SimScenario()
    b, e, th, g = (math.log(v) for v in (4.99, 2.39, 0.31, 0.71))
    t = 70.0
    base = (t / 105) ** 5
    # male relatives: proband sex is 0/1 with probability 1/2
    f1_male = 0.5 * sum(1 - math.exp(-base * math.exp(b + e + th + g * z)) for z in (0, 1))
    f0_female = 0.5 * sum(1 - math.exp(-base * math.exp(g * z)) for z in (0, 1))
    assert true_risk(scen, 1, lambda w, z: w[0] == 1, [t])[0] == pytest.approx(f1_male, rel=1e-14)
    assert true_risk(scen, 0, lambda w, z: w[0] == 0, [t])[0] == pytest.approx(f0_female,
                                                                              rel=1e-14)


def test_true_risk_enumeration_matches_monte_carlo():
    scen = SimScenario()
    exact = true_risk(scen, 1, None, RISK_AGES)

    def draw(rng, n, fam):
        return (rng.random((n, 1)) < 0.5).astype(float), (rng.random((n, 1)) < 0.5).astype(float)

    mc_scen = SimScenario(covariates=draw)
    mc, se = true_risk(mc_scen, 1, None, RISK_AGES, mc_n=10**6, return_se=True)
    assert np.all(np.abs(mc - exact) < 3 * se)


def test_covariate_atoms_validated():
    with pytest.raises(ValidationError):
        DiscreteCovariates([((0.0,), (0.0,), 0.7)], ("a",), ("b",))
    assert sex_covariates().dims == (1, 1)


def test_scenario_validation():
    with pytest.raises(ValidationError):
        SimScenario(prob_freqs=(0.5, 0.5, 0.5, 0.5))
    with pytest.raises(ValidationError):
        SimScenario(censor_target=1.0)
    with pytest.raises(ValidationError):
        SimScenario(n=0)


def test_single_replicate_report():
    rep = replicate(SimScenario(n=400, c_max=CMAX), reps=1, boot_B=3, seed=5)
    row = rep.row("Carrier status in female")
    assert row["sd"] is None and row["mc_se"] is None
    assert row["bias"] == pytest.approx(row["mean"] - 4.99)
    assert row["n_ok"] == 1 and 0.0 <= row["cp"] <= 1.0
    labels = {r["label"] for r in rep.rows}
    assert {lab for lab, _ in sex_interaction_contrasts()} <= labels
    assert "F1|male@60" in labels and "F0|overall@80" in labels


def test_replicate_deterministic(tmp_path):
    scen = SimScenario(n=300, c_max=CMAX)
    a = replicate(scen, reps=2, boot_B=3, seed=7)
    b = replicate(scen, reps=2, boot_B=3, seed=7)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_heavier_censoring_inflates_spread():
    """Same latent draws censored at 40% and 60%: the estimates scatter more at 60%."""
    base = SimScenario(n=1000)
    light = replicate(SimScenario(n=1000, censor_target=0.4), reps=30, boot_B=1, seed=3)
    heavy = replicate(SimScenario(n=1000, censor_target=0.6), reps=30, boot_B=1, seed=3)
    assert base.censor_target == 0.4
    assert abs(light.censor_realized - 0.4) < 0.02 and abs(heavy.censor_realized - 0.6) < 0.02
    sd = {r["label"]: r["sd"] for r in light.rows if r["kind"] == "hr"}
    for r in heavy.rows:
        if r["kind"] == "hr":
            assert r["sd"] > sd[r["label"]], r["label"]


def test_point_estimates_unbiased_at_design_size():
    """500 independent datasets of the default size: log-HR means within 3 MC SE of truth."""
    scen = SimScenario(c_max=calibrate_censoring(SimScenario()))
    est = np.array([list(fit(gen_dataset(scen, seed=10_000 + r)[0], scen.model_spec()).coef)
                    for r in range(500)])
    truth = np.array(list(scen.true_coef.values()))
    mc_se = est.std(axis=0, ddof=1) / math.sqrt(len(est))
    assert np.all(np.abs(est.mean(axis=0) - truth) < 3 * mc_se)
