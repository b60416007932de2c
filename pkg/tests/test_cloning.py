import numpy as np
import pytest

from panelfilter import (DiagonalBelief, DomainError, FullBelief,
                         GaussianPanelLikelihood, bayes_update_full,
                         check_condition_eq7, convolve_gaussian, iterate,
                         lemma1_norm_check, marginalized_update,
                         mle_normal_equations, perturbed_marginalized_update)
from panelfilter.cloning import embed_precision


def random_likelihood(U, rng, jitter=0.3):
    lams, opts = [], []
    for _ in range(U):
        a = rng.standard_normal((2, 2))
        lams.append(a @ a.T + jitter * np.eye(2))
        opts.append(rng.standard_normal(2))
    return GaussianPanelLikelihood(np.array(opts), np.array(lams))


def diag1_likelihood(U, rho, optima=None):
    lam = np.linalg.inv(np.array([[1.0, rho], [rho, 1.0]]))
    if optima is None:
        optima = np.zeros((U, 2))
    return GaussianPanelLikelihood(np.asarray(optima), np.array([lam] * U))


def test_bayes_update_full_conjugate_example():
    lik = GaussianPanelLikelihood(np.zeros((1, 2)), np.array([np.eye(2)]))
    out = bayes_update_full(FullBelief(np.array([1.0, 1.0]), np.eye(2)), lik, 1)
    assert np.allclose(out.mean, [0.5, 0.5], atol=1e-14)
    assert np.allclose(out.precision, 2 * np.eye(2), atol=1e-14)


def test_vanishing_likelihood_leaves_belief_unchanged():
    eps = 1e-14
    lik = GaussianPanelLikelihood(np.array([[3.0, -2.0]]),
                                  np.array([eps * np.eye(2)]))
    belief = FullBelief(np.array([1.0, -1.0]), np.diag([2.0, 3.0]))
    out = bayes_update_full(belief, lik, 1)
    assert np.allclose(out.mean, belief.mean, atol=1e-10)
    assert np.allclose(out.precision, belief.precision, atol=1e-10)


def test_flat_prior_limit_reaches_joint_mle():
    rng = np.random.default_rng(3)
    lik = random_likelihood(4, rng)
    mle = mle_normal_equations(lik)
    eps = 1e-10
    belief = FullBelief(np.zeros(5), eps * np.eye(5))
    for u in range(1, 5):
        belief = bayes_update_full(belief, lik, u)
    assert np.allclose(belief.mean, mle, atol=1e-6)


def test_marginalized_equals_full_route_with_cov_zeroing():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(200):
        U = int(rng.integers(1, 6))
        lik = random_likelihood(U, rng)
        u = int(rng.integers(1, U + 1))
        taus = rng.uniform(0.3, 3.0, U + 1)
        mu = rng.standard_normal(U + 1)
        got = marginalized_update(DiagonalBelief(mu, taus), lik, u)
        full = bayes_update_full(FullBelief(mu, np.diag(taus)), lik, u)
        cov = np.linalg.inv(full.precision)
        cov_diag = np.diag(np.diag(cov))
        want_prec = np.diag(np.linalg.inv(cov_diag))
        worst = max(worst,
                    np.max(np.abs(got.precisions - want_prec) / want_prec),
                    np.max(np.abs(got.mean - full.mean)))
        assert np.allclose(got.mean, full.mean, atol=1e-12)
    assert worst < 1e-12


def test_uncorrelated_unit_gives_independent_scalar_updates():
    lam = np.diag([2.0, 5.0])
    lik = GaussianPanelLikelihood(np.array([[1.0, -2.0]]), np.array([lam]))
    belief = DiagonalBelief(np.array([0.0, 0.0]), np.array([1.0, 4.0]))
    out = marginalized_update(belief, lik, 1)
    # Scalar conjugate-normal updates, coordinate by coordinate.
    assert out.precisions[0] == pytest.approx(3.0, abs=1e-14)
    assert out.precisions[1] == pytest.approx(9.0, abs=1e-14)
    assert out.mean[0] == pytest.approx(2.0 / 3.0, abs=1e-14)
    assert out.mean[1] == pytest.approx(-10.0 / 9.0, abs=1e-14)


def test_shared_precision_gains_at_least_alpha():
    rng = np.random.default_rng(11)
    for _ in range(100):
        U = int(rng.integers(1, 5))
        lik = random_likelihood(U, rng)
        lams = lik.precisions
        alpha = np.min(lams[:, 0, 0] - lams[:, 0, 1] ** 2 / lams[:, 1, 1])
        assert alpha > 0
        taus = rng.uniform(0.3, 3.0, U + 1)
        belief = DiagonalBelief(rng.standard_normal(U + 1), taus)
        u = int(rng.integers(1, U + 1))
        out = marginalized_update(belief, lik, u)
        assert out.precisions[0] > taus[0] + alpha - 1e-12


def test_perturbed_update_trivial_cases():
    rng = np.random.default_rng(13)
    lik = random_likelihood(2, rng)
    belief = DiagonalBelief(rng.standard_normal(3), rng.uniform(0.5, 2.0, 3))
    plain = marginalized_update(belief, lik, 1)
    no_noise = perturbed_marginalized_update(belief, lik, 1, np.zeros(3))
    assert np.array_equal(no_noise.mean, plain.mean)
    assert np.array_equal(no_noise.precisions, plain.precisions)
    tiny_noise = perturbed_marginalized_update(belief, lik, 1, np.full(3, 1e-18))
    assert np.allclose(tiny_noise.precisions, plain.precisions, rtol=1e-12)
    # convolution alone: precisions shrink, mean unchanged
    conv = convolve_gaussian(belief, np.full(3, 0.5))
    assert np.array_equal(conv.mean, belief.mean)
    assert np.all(conv.precisions < belief.precisions)


def test_condition_eq7_examples():
    # no cross-information: holds with ratio 0
    lik = GaussianPanelLikelihood(np.zeros((3, 2)),
                                  np.array([np.diag([1.0, 2.0])] * 3))
    holds, ratio = check_condition_eq7(lik)
    assert holds.all() and np.allclose(ratio, 0.0)
    # unit-correlation form at U = 4: threshold is 2/(sqrt(U)(1+1/U)) = 0.8
    holds, _ = check_condition_eq7(diag1_likelihood(4, 0.7))
    assert holds.all()
    holds, _ = check_condition_eq7(diag1_likelihood(4, 0.9))
    assert not holds.any()


def test_iterate_fixed_point_when_optima_match_prior_mean():
    lik = GaussianPanelLikelihood(np.zeros((2, 2)),
                                  np.array([np.diag([1.0, 1.5])] * 2))
    belief = DiagonalBelief(np.zeros(3), np.ones(3))
    trace = iterate(belief, lik, 50, mode="marginalized")
    assert np.allclose(trace.means, 0.0, atol=1e-15)


def test_iterate_converges_at_one_over_m_rate():
    phi_star = 0.7
    optima = np.array([[phi_star, -0.4], [phi_star, 1.1]])
    lik = diag1_likelihood(2, 0.3, optima)
    mle = mle_normal_equations(lik)
    assert np.allclose(mle, [phi_star, -0.4, 1.1], atol=1e-12)
    belief = DiagonalBelief(mle + 1.0, np.ones(3))
    trace = iterate(belief, lik, 10_000, mode="marginalized")
    # Mean error decays polynomially, at roughly m**(-lambda) with lambda
    # near the smallest eigenvalue of the limiting update analysis.
    dists = [np.linalg.norm(trace.means[m] - mle) for m in (100, 1000, 10_000)]
    assert dists[2] < dists[1] < dists[0]
    assert dists[2] < 2e-3
    exponent = np.log(dists[1] / dists[2]) / np.log(10.0)
    assert 0.4 < exponent < 1.2
    # O(1/m) covariance: m * max-variance stabilizes
    v1 = trace.cov_norms[1000] * 1000
    v2 = trace.cov_norms[10_000] * 10_000
    assert abs(v2 - v1) / v1 < 0.1


def test_full_mode_is_classic_data_cloning():
    rng = np.random.default_rng(17)
    lik = random_likelihood(1, rng)
    belief = DiagonalBelief(np.array([2.0, -2.0]), np.array([0.5, 0.5]))
    M = 200
    trace = iterate(belief, lik, M, mode="full")
    final = trace.final_belief
    expected = np.diag([0.5, 0.5]) + M * embed_precision(lik.precisions[0], 1, 2)
    assert np.allclose(final.precision, expected, atol=1e-9)
    # prior influence on the mean fades like 1/M
    mle = mle_normal_equations(lik)
    short = iterate(belief, lik, 20, mode="full")
    assert np.linalg.norm(trace.means[-1] - mle) < np.linalg.norm(short.means[-1] - mle)
    assert np.allclose(trace.means[-1], mle, atol=2e-2)


def test_perturbed_iterate_converges():
    optima = np.array([[0.7, -0.4], [0.7, 1.1]])
    lik = diag1_likelihood(2, 0.3, optima)
    mle = mle_normal_equations(lik)
    belief = DiagonalBelief(mle + 1.0, np.ones(3))
    trace = iterate(belief, lik, 10_000, mode="perturbed", sigma1_sq=1.0, delta=0.5)
    assert np.linalg.norm(trace.means[-1] - mle) < 1e-6
    assert trace.cov_norms[-1] < trace.cov_norms[1000] < trace.cov_norms[100]
    assert trace.cov_norms[-1] < 2e-3


def test_update_norm_shrinks_like_one_over_m():
    lik = diag1_likelihood(2, 0.3)
    belief = DiagonalBelief(np.ones(3), np.ones(3))
    trace = iterate(belief, lik, 4000, mode="marginalized", record_b_norms=True)
    m_grid = np.arange(1, 4001)
    gaps = m_grid * (1.0 - trace.b_norms[:, 0])
    # m (1 - ||B||) approaches a positive constant
    assert gaps[-1] > 0
    assert abs(gaps[-1] - gaps[2000]) / gaps[-1] < 0.05


def test_violating_instance_trace_is_recorded_without_assertion():
    lik = diag1_likelihood(4, 0.9)
    holds, _ = check_condition_eq7(lik)
    assert not holds.any()
    belief = DiagonalBelief(np.ones(5), np.ones(5))
    trace = iterate(belief, lik, 500, mode="marginalized")
    # condition is sufficient, not necessary: simply record the trace shape
    assert trace.means.shape == (501, 5)
    assert np.all(np.isfinite(trace.means))


def test_lemma1_diagonal_and_singleton_cases():
    c = 0.8
    ok, norm = lemma1_norm_check([c * np.eye(2)] * 3, c)
    assert ok and norm <= c + 1e-12
    b = np.array([[0.5, 0.2], [-0.1, 0.4]])
    b *= 0.9 / np.linalg.norm(b, 2)
    ok, norm = lemma1_norm_check([b], 0.9)
    assert ok and norm == pytest.approx(0.9, abs=1e-12)


def test_lemma1_random_instances():
    rng = np.random.default_rng(23)
    for _ in range(300):
        d = int(rng.integers(1, 7))
        blocks = []
        for _ in range(d):
            b = rng.standard_normal((2, 2))
            blocks.append(0.9 * b / np.linalg.norm(b, 2))
        ok, norm = lemma1_norm_check(blocks, 0.9)
        assert ok, norm


def test_lemma1_rejects_oversized_blocks():
    with pytest.raises(DomainError):
        lemma1_norm_check([np.eye(2) * 1.5], 0.9)
