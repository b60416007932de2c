"""Acceptance criteria, one test per criterion, at their stated sizes.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS/FAIL line
per criterion with its runtime.  AC-5's mean-tolerance sub-criterion is
asserted exactly as stated and is expected to fail: the unperturbed
marginalized-cloning recursion converges polynomially (measured ~m**-0.7,
|mu - MLE| ~ 1.8e-3 at M = 1e4), so the 1e-8 target is unattainable; the
analysis lives in the project notes.  It is marked xfail(strict) so the
defect stays visible without masking the rest of the suite.
"""

import math
import time

import numpy as np
import pytest
from scipy.stats import binom, chisquare, multivariate_normal

from panelfilter import (DiagonalBelief, FullBelief, GaussianPanelLikelihood,
                         LinearGaussianSSM, MifConfig, NATURAL, PanelData,
                         ParamVector, PerturbKernel, bayes_update_full,
                         check_condition_eq7, gompertz_panel_loglik, iterate,
                         kalman_loglik, lemma1_norm_check, marginalized_update,
                         mle_normal_equations, panel_loglik, run_unit_pass,
                         simulate_panel)
from panelfilter.cli import main
from panelfilter.models import toy_panel_model
from panelfilter.models.measles import eulermultinom
from panelfilter.rngstream import TAG_SWARM, substream

SEED = 2026


def _report(tag, ok, detail, t0):
    status = "PASS" if ok else "FAIL"
    print(f"{tag} {status} ({time.perf_counter() - t0:.1f}s): {detail}")


# ---------------------------------------------------------------- AC-1


def test_ac01_kalman_matches_brute_force_joint_density():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(20):
        ssm = LinearGaussianSSM(
            a=rng.uniform(-0.95, 0.95), b=rng.normal(0, 0.5),
            q=rng.uniform(0.01, 1.0), r_obs=rng.uniform(0.01, 1.0),
            m0=rng.normal(), p0=rng.uniform(0.0, 0.5))
        ys = rng.normal(size=5)
        n = 5
        means = np.empty(n)
        state_var = np.empty(n)
        m, p = ssm.m0, ssm.p0
        for i in range(n):
            m = ssm.a * m + ssm.b
            p = ssm.a * ssm.a * p + ssm.q
            means[i], state_var[i] = m, p
        cov = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                cov[i, j] = cov[j, i] = state_var[i] * ssm.a ** (j - i)
        cov += ssm.r_obs * np.eye(n)
        exact = multivariate_normal(mean=means, cov=cov).logpdf(ys)
        worst = max(worst, abs(kalman_loglik(ssm, ys) - exact))
    ok = worst < 1e-10
    _report("AC-1", ok, f"max |kalman - joint MVN| = {worst:.2e} over 20 instances", t0)
    assert ok


# ---------------------------------------------------------------- AC-2


@pytest.fixture(scope="module")
def ac2_setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("ac2")
    cfg = root / "ac2.cfg"
    cfg.write_text(
        "preset = gompertz-bench\nseed = %d\nU = 5\nN = 50\n"
        "mif.eval_J = 2000\nmif.eval_reps = 10\n" % SEED)
    out1 = root / "t1"
    assert main(["loglik", str(cfg), "--out", str(out1), "--threads", "1"]) == 0
    return cfg, out1


def test_ac02_particle_filter_consistency(ac2_setup):
    t0 = time.perf_counter()
    _, out1 = ac2_setup
    row = (out1 / "summary.csv").read_text().splitlines()[1].split(",")
    loglik, se, exact, diff = (float(v) for v in row[:4])
    ok = abs(diff) < 1.0
    _report("AC-2", ok,
            f"panel J=2000 x10 = {loglik:.3f} vs kalman {exact:.3f} "
            f"(diff {diff:+.3f}, se {se:.3f})", t0)
    assert ok


# ---------------------------------------------------------------- AC-3


@pytest.fixture(scope="module")
def ac3_setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("ac3")
    cfg = root / "ac3.cfg"
    cfg.write_text(
        "preset = gompertz-bench\nseed = %d\nU = 50\nN = 50\nmif.J = 500\n"
        "mif.M = 30\nmif.n_starts = 10\nexact_max.enabled = false\n" % SEED)
    out1 = root / "t1"
    assert main(["run", str(cfg), "--out", str(out1), "--threads", "1"]) == 0
    return cfg, out1


def _final_logliks(out_dir):
    vals = {"mpif": [], "pif": []}
    for row in (out_dir / "summary.csv").read_text().splitlines()[1:]:
        fields = row.split(",")
        vals[fields[0]].append(float(fields[2]))
    return np.array(vals["mpif"]), np.array(vals["pif"])


def test_ac03_mpif_dominates_pif_on_wide_gompertz_panel(ac3_setup):
    t0 = time.perf_counter()
    _, out1 = ac3_setup
    mpif, pif = _final_logliks(out1)
    assert mpif.size == 10 and pif.size == 10
    c1 = mpif.max() >= pif.max() - 0.5
    c2 = np.percentile(mpif, 10) >= np.median(pif) - 0.5
    ok = c1 and c2
    _report("AC-3", ok,
            f"max MPIF {mpif.max():.2f} vs max PIF {pif.max():.2f}; "
            f"p10 MPIF {np.percentile(mpif, 10):.2f} vs median PIF "
            f"{np.median(pif):.2f}", t0)
    assert ok


# ---------------------------------------------------------------- AC-4


def test_ac04_depletion_reproduction():
    t0 = time.perf_counter()
    J, N = 1000, 100
    model = toy_panel_model(2, N)
    truth = ParamVector(model.layout, np.array([1.0, -1.0]), NATURAL)
    data = simulate_panel(model, truth, seed=SEED)
    swarm0 = substream(SEED, TAG_SWARM).standard_normal((J, 2))
    kernel = PerturbKernel.from_defaults(model.layout, 0.02, 0.1)
    counts = {}
    for marg in (True, False):
        swarm = model.layout.to_estimation(swarm0.copy())
        _, _, rec = run_unit_pass(model, data, swarm, 0, 1, kernel, 1.0, marg,
                                  seed=SEED, track_ancestry=True, track_unique=True)
        counts[marg] = rec.unique_counts[:, 1]    # psi_2 column
    ok_m = bool(np.all(counts[True] == J))
    ok_p = counts[False][-1] < 200
    ok = ok_m and ok_p
    _report("AC-4", ok,
            f"marginalized psi_2 counts all == {J}: {ok_m}; "
            f"unmarginalized final count {counts[False][-1]} < 200: {ok_p}", t0)
    assert ok


# ---------------------------------------------------------------- AC-5 / AC-6


def _cloning_instance():
    rho = 0.3
    lam = np.linalg.inv(np.array([[1.0, rho], [rho, 1.0]]))
    optima = np.array([[0.7, -0.4], [0.7, 1.1]])
    lik = GaussianPanelLikelihood(optima, np.array([lam, lam]))
    holds, _ = check_condition_eq7(lik)
    assert holds.all()          # 0.3 < 2/(sqrt(2) * 1.5) = 0.9428
    mle = mle_normal_equations(lik)
    belief = DiagonalBelief(mle + 1.0, np.ones(3))
    return lik, mle, belief


def test_ac05_variance_contracts_at_one_over_m_rate():
    t0 = time.perf_counter()
    lik, mle, belief = _cloning_instance()
    trace = iterate(belief, lik, 10_000, mode="marginalized")
    v3 = trace.cov_norms[1000] * 1000
    v4 = trace.cov_norms[10_000] * 10_000
    ok = abs(v4 - v3) / v3 <= 0.10
    _report("AC-5(var)", ok,
            f"max var x M: {v3:.4f} at 1e3 vs {v4:.4f} at 1e4", t0)
    assert ok


@pytest.mark.xfail(
    strict=True,
    reason="spec defect: unperturbed marginalized cloning converges "
           "polynomially (paper App. C rate ||B|| = 1 - lambda/m); measured "
           "|mu - MLE| ~ 1.8e-3 at M = 1e4, so 1e-8 needs M ~ 1e15. "
           "See the decisions ledger.")
def test_ac05_mean_reaches_mle_at_stated_tolerance():
    t0 = time.perf_counter()
    lik, mle, belief = _cloning_instance()
    trace = iterate(belief, lik, 10_000, mode="marginalized")
    dist = float(np.linalg.norm(trace.means[-1] - mle))
    ok = dist < 1e-8
    _report("AC-5(mean)", ok, f"|mu_M - MLE|_2 = {dist:.3e} (criterion < 1e-8)", t0)
    assert ok


def test_ac06_perturbed_cloning_converges():
    t0 = time.perf_counter()
    lik, mle, belief = _cloning_instance()
    trace = iterate(belief, lik, 10_000, mode="perturbed", sigma1_sq=1.0, delta=0.5)
    dist = float(np.linalg.norm(trace.means[-1] - mle))
    var_decreasing = trace.cov_norms[-1] < trace.cov_norms[1000] < trace.cov_norms[100]
    ok = dist < 1e-6 and var_decreasing and trace.cov_norms[-1] < 2e-3
    _report("AC-6", ok,
            f"|mu_M - MLE|_2 = {dist:.2e} (< 1e-6); final max var "
            f"{trace.cov_norms[-1]:.2e}, decreasing: {var_decreasing}", t0)
    assert ok


# ---------------------------------------------------------------- AC-7


def test_ac07_marginalization_equivalence_1000_instances():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(1000):
        U = int(rng.integers(1, 6))
        lams, opts = [], []
        for _ in range(U):
            a = rng.standard_normal((2, 2))
            lams.append(a @ a.T + 0.3 * np.eye(2))
            opts.append(rng.standard_normal(2))
        lik = GaussianPanelLikelihood(np.array(opts), np.array(lams))
        u = int(rng.integers(1, U + 1))
        taus = rng.uniform(0.3, 3.0, U + 1)
        mu = rng.standard_normal(U + 1)
        got = marginalized_update(DiagonalBelief(mu, taus), lik, u)
        full = bayes_update_full(FullBelief(mu, np.diag(taus)), lik, u)
        cov = np.linalg.inv(full.precision)
        want = np.diag(np.linalg.inv(np.diag(np.diag(cov))))
        worst = max(worst,
                    float(np.max(np.abs(got.precisions - want) / np.abs(want))),
                    float(np.max(np.abs(got.mean - full.mean))))
    ok = worst < 1e-12
    _report("AC-7", ok, f"max deviation {worst:.2e} over 1000 instances", t0)
    assert ok


# ---------------------------------------------------------------- AC-8


def test_ac08_lemma1_product_norm_1000_instances():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(1000):
        d = int(rng.integers(1, 7))
        blocks = []
        for _ in range(d):
            b = rng.standard_normal((2, 2))
            blocks.append(0.9 * b / np.linalg.norm(b, 2))
        ok_one, norm = lemma1_norm_check(blocks, 0.9)
        worst = max(worst, norm)
        assert ok_one
    ok = worst <= 0.9 + 1e-12
    _report("AC-8", ok, f"max product norm {worst:.15f} over 1000 instances", t0)
    assert ok


# ---------------------------------------------------------------- AC-9


def test_ac09_euler_multinomial_correctness():
    t0 = time.perf_counter()
    dt = 1.0
    mu = math.log(2.0) / 2.0          # (mu1 + mu2) dt = ln 2, mu1 = mu2
    n1 = np.ones(100_000, dtype=np.int64)
    k1, k2 = eulermultinom(n1, mu, mu, dt, substream(SEED, 91))
    stay = 1.0 - (k1 + k2)
    fracs = np.array([stay.mean(), k1.mean(), k2.mean()])
    probs = np.array([0.5, 0.25, 0.25])
    ses = np.sqrt(probs * (1 - probs) / n1.size)
    ok_freq = bool(np.all(np.abs(fracs - probs) < 3 * ses))

    n10 = np.full(100_000, 10, dtype=np.int64)
    k1, _ = eulermultinom(n10, mu, mu, dt, substream(SEED, 92))
    counts = np.bincount(k1, minlength=11)
    expected = binom.pmf(np.arange(11), 10, 0.25) * n10.size
    cut = np.searchsorted(np.cumsum(expected[::-1]), 5.0)
    keep = 11 - cut
    obs = np.append(counts[:keep], counts[keep:].sum())
    exp = np.append(expected[:keep], expected[keep:].sum())
    _, pval = chisquare(obs, exp * obs.sum() / exp.sum())
    ok = ok_freq and pval > 0.01
    _report("AC-9", ok,
            f"freqs {np.round(fracs, 4)} vs (0.5, 0.25, 0.25); "
            f"binomial chi-square p = {pval:.3f}", t0)
    assert ok


# ---------------------------------------------------------------- AC-10


def test_ac10_measles_smoke(tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "ac10.cfg"
    cfg.write_text(
        "preset = measles-sim\nseed = %d\nmif.J = 500\nmif.M = 10\n"
        "mif.n_starts = 10\nmif.eval_J = 1000\nmif.eval_reps = 2\n"
        "cooling.factor = 0.8\nmeasles.n_weeks = 104\n" % SEED)
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out), "--threads", "1"]) == 0
    rows = (out / "summary.csv").read_text().splitlines()[1:]
    improved = sum(int(r.split(",")[5]) for r in rows)
    ok = improved >= 8
    _report("AC-10", ok, f"{improved}/10 runs increased the evaluated "
            f"panel loglik from iteration 1 to 10", t0)
    assert ok


# ---------------------------------------------------------------- AC-11


def test_ac11_thread_count_determinism(ac2_setup, ac3_setup, tmp_path):
    t0 = time.perf_counter()
    cfg2, out2_t1 = ac2_setup
    out2_t8 = tmp_path / "ac2_t8"
    assert main(["loglik", str(cfg2), "--out", str(out2_t8), "--threads", "8"]) == 0
    same2 = all(
        (out2_t1 / name).read_bytes() == (out2_t8 / name).read_bytes()
        for name in ("summary.csv", "manifest.json"))

    cfg3, out3_t1 = ac3_setup
    out3_t8 = tmp_path / "ac3_t8"
    assert main(["run", str(cfg3), "--out", str(out3_t8), "--threads", "8"]) == 0
    same3 = all(
        (out3_t1 / name).read_bytes() == (out3_t8 / name).read_bytes()
        for name in ("summary.csv", "trace.csv", "diagnostics.csv",
                     "manifest.json", "data.csv"))
    ok = same2 and same3
    _report("AC-11", ok,
            f"byte-identical artifacts across --threads 1/8: "
            f"AC-2 {same2}, AC-3 {same3}", t0)
    assert ok
