import math

import numpy as np
import pytest

from panelfilter import (ModelError, PanelData, PanelModel,
                         gompertz_unit_loglik, logmeanexp, panel_loglik,
                         pfilter_unit, simulate_panel, systematic_resample)
from panelfilter.models import gompertz_generating_params, gompertz_panel_model
from panelfilter.rngstream import substream


def test_systematic_equal_weights_is_identity_permutation():
    rng = substream(1)
    idx = systematic_resample(np.ones(8), rng)
    assert sorted(idx) == list(range(8))


def test_systematic_degenerate_mass():
    rng = substream(2)
    idx = systematic_resample(np.array([1.0, 0.0, 0.0, 0.0]), rng)
    assert np.all(idx == 0)


def test_systematic_counts_match_expectations():
    # J * w integer for every weight: systematic counts are exact, every trial.
    w = np.array([0.5, 0.3, 0.2])
    for trial in range(200):
        idx = systematic_resample(w, substream(3, trial), n=1000)
        counts = np.bincount(idx, minlength=3)
        assert np.array_equal(counts, [500, 300, 200])


def test_systematic_counts_within_one_of_expectation():
    rng = substream(4)
    w = rng.random(17)
    idx = systematic_resample(w, substream(5), n=400)
    counts = np.bincount(idx, minlength=17)
    expected = 400 * w / w.sum()
    assert np.all(counts >= np.floor(expected) - 1e-9)
    assert np.all(counts <= np.ceil(expected) + 1e-9)


def test_systematic_rejects_zero_weights():
    with pytest.raises(ValueError):
        systematic_resample(np.zeros(4), substream(6))


def single_obs_model():
    model = gompertz_panel_model(n_units=1, n_obs=1)
    params = gompertz_generating_params(model)
    data = PanelData(("unit1",), (np.array([1.0]),), (np.array([1.0]),))
    return model, params, data


def test_single_step_matches_closed_form():
    # With K = X0 = 1 and y = 1 the exact value is log N(0 | 0, sigma^2 + tau^2).
    model, params, data = single_obs_model()
    exact = -0.5 * math.log(2 * math.pi * 0.02)
    lls = np.array([pfilter_unit(model, data, 0, params, J=4000, seed=s).loglik
                    for s in range(16)])
    se = lls.std(ddof=1) / 4.0
    assert abs(lls.mean() - exact) < 3 * se


def test_flat_measurement_limit():
    # Data from the usual model, filtered with an uninformative measurement:
    # weights are nearly equal, so ESS stays at J and the conditional
    # log-likelihoods are near-constant relative to their size.
    model = gompertz_panel_model(n_units=1, n_obs=30)
    data = simulate_panel(model, gompertz_generating_params(model), seed=3)
    flat = gompertz_generating_params(model, tau_sq=1e8)
    res = pfilter_unit(model, data, 0, flat, J=400, seed=1)
    # Up to the per-observation lognormal Jacobian the conditionals are flat.
    assert np.ptp(res.cond_logliks + np.log(data.observations[0])) < 1e-4
    assert np.all(res.ess > 0.95 * 400)


def test_loglik_equals_sum_of_conditionals():
    model = gompertz_panel_model(1, 40)
    params = gompertz_generating_params(model)
    data = simulate_panel(model, params, seed=5)
    res = pfilter_unit(model, data, 0, params, J=300, seed=2)
    assert res.loglik == pytest.approx(res.cond_logliks.sum(), abs=1e-12)
    assert np.all(np.isfinite(res.cond_logliks))


def test_kalman_oracle_agreement_single_unit():
    model = gompertz_panel_model(1, 50)
    params = gompertz_generating_params(model)
    data = simulate_panel(model, params, seed=7)
    exact = gompertz_unit_loglik(data.observations[0], 1.0, 0.1, 0.01, 0.01, 1.0)
    reps = np.array([pfilter_unit(model, data, 0, params, J=2000, seed=s).loglik
                     for s in range(20)])
    assert -0.5 < reps.mean() - exact < 0.1


def test_consistency_error_shrinks_with_J():
    model = gompertz_panel_model(1, 50)
    params = gompertz_generating_params(model)
    data = simulate_panel(model, params, seed=9)
    exact = gompertz_unit_loglik(data.observations[0], 1.0, 0.1, 0.01, 0.01, 1.0)
    js = np.array([100, 400, 1600, 6400])
    errs = []
    for j in js:
        reps = [pfilter_unit(model, data, 0, params, J=int(j), seed=100 + s).loglik
                for s in range(5)]
        errs.append(abs(np.mean(reps) - exact))
    slope = np.polyfit(np.log(js), np.log(errs), 1)[0]
    assert slope < 0


def test_determinism_and_seed_sensitivity():
    model = gompertz_panel_model(2, 25)
    params = gompertz_generating_params(model)
    data = simulate_panel(model, params, seed=11)
    a = pfilter_unit(model, data, 0, params, J=256, seed=13)
    b = pfilter_unit(model, data, 0, params, J=256, seed=13)
    c = pfilter_unit(model, data, 0, params, J=256, seed=14)
    assert a.loglik == b.loglik
    assert np.array_equal(a.cond_logliks, b.cond_logliks)
    assert a.loglik != c.loglik


def test_filtering_failure_penalty_and_carry_forward():
    model = gompertz_panel_model(1, 3)
    params = gompertz_generating_params(model)
    # A non-positive observation has zero density for every particle.
    data = PanelData(("unit1",), (np.array([1.0, -1.0, 1.0]),),
                     (np.array([1.0, 2.0, 3.0]),))
    res = pfilter_unit(model, data, 0, params, J=100, seed=1)
    assert res.n_failures == 1
    assert bool(res.failures[1])
    assert res.cond_logliks[1] == pytest.approx(math.log(1e-300))
    assert np.all(np.isfinite(res.cond_logliks))


def test_nan_density_raises_model_error():
    model = gompertz_panel_model(1, 2)
    bad_unit = model.units[0]
    import dataclasses
    bad = dataclasses.replace(bad_unit, dmeasure=lambda y, x, n, p, c: np.full(x.shape[0], np.nan))
    bad_model = PanelModel(units=(bad,), layout=model.layout)
    params = gompertz_generating_params(model)
    data = PanelData(("unit1",), (np.array([1.0, 1.0]),), (np.array([1.0, 2.0]),))
    with pytest.raises(ModelError):
        pfilter_unit(bad_model, data, 0, params, J=50, seed=1)


def test_ancestry_tracking_is_non_increasing():
    model = gompertz_panel_model(1, 40)
    params = gompertz_generating_params(model)
    data = simulate_panel(model, params, seed=15)
    res = pfilter_unit(model, data, 0, params, J=200, seed=3, track_ancestry=True)
    assert np.all(np.diff(res.unique_ancestors) <= 0)


def test_per_particle_parameter_swarm_accepted():
    model = gompertz_panel_model(1, 10)
    params = gompertz_generating_params(model)
    data = simulate_panel(model, params, seed=17)
    thetas = np.tile(params.values, (64, 1))
    res = pfilter_unit(model, data, 0, thetas, seed=4)
    same = pfilter_unit(model, data, 0, params, J=64, seed=4)
    assert res.loglik == pytest.approx(same.loglik, abs=1e-12)


def test_panel_loglik_additivity_with_twin_units():
    # Two units with the same name share rng streams, so the panel value is
    # exactly twice the single-unit value.
    base = gompertz_panel_model(1, 20)
    params1 = gompertz_generating_params(base)
    data1 = simulate_panel(base, params1, seed=19)
    twin = gompertz_panel_model(2, 20)
    twin_units = (base.units[0], base.units[0])
    twin_model = PanelModel(units=twin_units, layout=twin.layout)
    params2 = gompertz_generating_params(twin_model)
    data2 = PanelData(("unit1", "unit1"),
                      (data1.observations[0], data1.observations[0]),
                      (data1.times[0], data1.times[0]))
    r1 = panel_loglik(base, data1, params1, J=128, n_reps=3, seed=21)
    r2 = panel_loglik(twin_model, data2, params2, J=128, n_reps=3, seed=21)
    assert r2.loglik == pytest.approx(2 * r1.loglik, abs=1e-10)


def test_panel_loglik_single_rep():
    model = gompertz_panel_model(2, 15)
    params = gompertz_generating_params(model)
    data = simulate_panel(model, params, seed=23)
    res = panel_loglik(model, data, params, J=128, n_reps=1, seed=25)
    expected = sum(pfilter_unit(model, data, u, params, J=128,
                                seed=res_seed).loglik
                   for u, res_seed in zip(range(2), _rep_seeds(25, 1) * 2))
    assert res.loglik == pytest.approx(expected, abs=1e-12)
    assert math.isnan(res.se)


def _rep_seeds(seed, n_reps):
    from panelfilter.rngstream import TAG_REP, derive_seed
    return [derive_seed(seed, TAG_REP, r) for r in range(n_reps)]


def test_logmeanexp_against_direct_computation():
    vals = np.array([0.0, 1.0, -2.0, 0.5])
    est, se = logmeanexp(vals)
    assert est == pytest.approx(math.log(np.mean(np.exp(vals))), abs=1e-12)
    assert se > 0
