import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize

from bunchmix.distributions import SinghMaddalaParams, SkewNormalParams, sm_quantile, sm_cdf, sn_logpdf, sn_sample
from bunchmix.estimands import (
    AttEstimate,
    EstimandError,
    att,
    bunching_mean,
    bunching_means,
    endpoint_density,
    hdi,
    nonbunching_mean,
    posterior_att,
    summarize,
)
from bunchmix.model import MixtureParams, NeighborhoodSpec
from bunchmix.sampler import PosteriorDraws

THETA = SinghMaddalaParams(3.5, 39.0, 1.5)
GAMMA = SkewNormalParams(50.0, 3.0, 4.0)
NK = NeighborhoodSpec(50.0, 10.0)


def mc_att(psi, nk, n, rng):
    """Truncated Monte Carlo oracle: rejection for f, inverse-cdf on the window for g."""
    f_draws = np.empty(0)
    while f_draws.size < n:
        x = sn_sample(psi.gamma, rng, 2 * n)
        f_draws = np.concatenate([f_draws, x[nk.contains(x)]])
    f_draws = f_draws[:n]
    lo, hi = sm_cdf(nk.lo, psi.theta), sm_cdf(nk.hi, psi.theta)
    g_draws = sm_quantile(lo + (hi - lo) * rng.random(n), psi.theta)
    est = f_draws.mean() - g_draws.mean()
    se = math.sqrt(f_draws.var() / n + g_draws.var() / n)
    return est, se


def test_att_symmetric_bunching_mean_is_threshold():
    g = SkewNormalParams(50.0, 2.0, 0.0)
    assert bunching_mean(g, NK) == pytest.approx(50.0, abs=1e-10)
    psi = MixtureParams(0.2, g, THETA)
    assert att(psi, NK) == pytest.approx(50.0 - nonbunching_mean(THETA, NK), abs=1e-10)


def test_att_zero_when_truncated_means_coincide():
    target = nonbunching_mean(THETA, NK)
    beta = optimize.brentq(lambda b: bunching_mean(SkewNormalParams(b, 4.0, 0.0), NK) - target, 40, 60,
                           xtol=1e-13)
    assert att(MixtureParams(0.3, SkewNormalParams(beta, 4.0, 0.0), THETA), NK) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_att_matches_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    psi = MixtureParams(0.2, SkewNormalParams(rng.uniform(45, 55), rng.uniform(1, 6), rng.uniform(-5, 5)),
                        SinghMaddalaParams(rng.uniform(2, 5), rng.uniform(30, 60), rng.uniform(0.8, 2)))
    est, se = mc_att(psi, NK, 1_000_000, rng)
    assert abs(att(psi, NK) - est) < 3 * se


def test_att_ignores_mixing_weight_bitwise():
    a = att(MixtureParams(0.05, GAMMA, THETA), NK)
    b = att(MixtureParams(0.95, GAMMA, THETA), NK)
    assert a == b


@given(st.floats(42, 58), st.floats(0.5, 8), st.floats(-6, 6))
def test_quadrature_stable_under_tighter_tolerance(beta, omega, delta):
    psi = MixtureParams(0.5, SkewNormalParams(beta, omega, delta), THETA)
    assert abs(att(psi, NK, epsrel=1e-10) - att(psi, NK, epsrel=5e-11)) < 1e-6


def test_att_no_mass_error_names_component():
    far = MixtureParams(0.5, SkewNormalParams(1000.0, 1.0, 0.0), THETA)
    with pytest.raises(EstimandError, match="bunching"):
        att(far, NK)
    empty = MixtureParams(0.5, GAMMA, SinghMaddalaParams(50.0, 1.0, 5.0))
    with pytest.raises(EstimandError, match="non-bunching"):
        att(empty, NK)


def test_batch_bunching_means_match_adaptive():
    rng = np.random.default_rng(5)
    beta = rng.uniform(44, 56, 200)
    omega = np.exp(rng.uniform(-1, 2.5, 200))
    delta = rng.uniform(-8, 8, 200)
    batch = bunching_means(beta, omega, delta, NK)
    single = [bunching_mean(SkewNormalParams(b, o, d), NK) for b, o, d in zip(beta, omega, delta)]
    np.testing.assert_allclose(batch, single, atol=1e-7)
    bad = bunching_means([1000.0], [1.0], [0.0], NK)
    assert np.isnan(bad[0])


def _gamma_draws(beta, omega, delta, pi=None, chains=2):
    beta, omega, delta = (np.asarray(v, dtype=float).reshape(-1, chains) for v in (beta, omega, delta))
    pi = np.full(beta.shape, 0.2) if pi is None else pi
    arr = np.stack([pi, beta, omega, delta], axis=2)
    return PosteriorDraws(arr, ["pi", "beta", "omega", "delta"], np.zeros(beta.shape, bool))


def test_posterior_att_constant_draws():
    d = _gamma_draws(np.full(20, 50.0), np.full(20, 3.0), np.full(20, 4.0))
    out = posterior_att(d, NK, THETA)
    assert out.size == 20 and np.ptp(out) == 0
    assert out[0] == pytest.approx(att(MixtureParams(0.2, GAMMA, THETA), NK), abs=1e-9)


def test_posterior_att_chain_order_irrelevant():
    rng = np.random.default_rng(1)
    b, o, de = rng.uniform(48, 52, 40), rng.uniform(2, 4, 40), rng.uniform(0, 6, 40)
    d = _gamma_draws(b, o, de)
    swapped = PosteriorDraws(d.draws[:, ::-1], d.names, d.divergent)
    np.testing.assert_array_equal(np.sort(posterior_att(d, NK, THETA)),
                                  np.sort(posterior_att(swapped, NK, THETA)))


def test_posterior_att_failure_threshold():
    b = np.full(20, 50.0)
    b[:2] = 1000.0  # 10% of draws with no mass in the window
    with pytest.raises(EstimandError):
        posterior_att(_gamma_draws(b, np.full(20, 1.0), np.zeros(20)), NK, THETA)
    out = posterior_att(_gamma_draws(b, np.full(20, 1.0), np.zeros(20)), NK, THETA, max_fail=0.2)
    assert out.size == 18


def test_hdi_examples():
    assert hdi(np.full(50, 3.0)) == (3.0, 3.0)
    rng = np.random.default_rng(3)
    lo, hi = hdi(rng.normal(size=100_000), 0.9)
    assert abs(lo + 1.6449) < 0.03 and abs(hi - 1.6449) < 0.03
    # the window slides with sd ~0.015 between seeds, its width much less
    for seed in range(10):
        lo, hi = hdi(np.random.default_rng(seed).normal(size=100_000), 0.9)
        assert abs((hi - lo) - 2 * 1.6449) < 0.03
    lo, hi = hdi(rng.exponential(size=100_000), 0.9)
    assert 0 <= lo < 0.02 and hi == pytest.approx(-math.log(0.1), abs=0.05)
    with pytest.raises(ValueError):
        hdi(np.arange(9.0))
    for level in (0.0, 1.0):
        with pytest.raises(ValueError):
            hdi(np.arange(20.0), level)


def test_hdi_holds_required_count_and_prefers_left():
    x = np.arange(10.0)
    assert hdi(x, 0.5) == (0.0, 4.0)  # every 5-point window has width 4; leftmost wins


@given(st.lists(st.floats(-1e3, 1e3), min_size=10, max_size=200), st.floats(0.05, 0.9),
       st.floats(0.0, 0.09))
def test_hdi_width_monotone_in_level(xs, level, extra):
    lo1, hi1 = hdi(xs, level)
    lo2, hi2 = hdi(xs, level + extra)
    assert hi2 - lo2 >= hi1 - lo1
    n = len(xs)
    inside = sum(lo1 <= v <= hi1 for v in xs)
    assert inside >= math.ceil(level * n - 1e-9)


def test_summarize_point_choice():
    d = np.concatenate([np.zeros(50), np.arange(1.0, 51.0)])
    mean = summarize(d, point="mean", group=3, threshold=50.0)
    med = summarize(d, point="median")
    assert mean.point == pytest.approx(d.mean()) and med.point == np.median(d)
    assert mean.to_dict() == {"group": 3, "threshold": 50.0, "point": mean.point,
                              "hdi_low": mean.hdi_low, "hdi_high": mean.hdi_high, "level": 0.9,
                              "n_draws": 100}
    assert isinstance(mean, AttEstimate)
    with pytest.raises(ValueError):
        summarize(d, point="mode")


def test_endpoint_density():
    dens = endpoint_density([50.0], [0.5], [1.0], NK)
    assert dens.shape == (1, 2) and np.all(dens < 1e-8)
    b, o, de = np.array([49.0, 51.0]), np.array([3.0, 6.0]), np.array([2.0, -1.0])
    got = endpoint_density(b, o, de, NK)
    for i in range(2):
        p = SkewNormalParams(b[i], o[i], de[i])
        np.testing.assert_allclose(got[i], np.exp(sn_logpdf(np.array([40.0, 60.0]), p)), rtol=1e-14)
