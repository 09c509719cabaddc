import math

import numpy as np
import pytest
from scipy import stats

from bunchmix.sampler import (
    DiagnosticError,
    PosteriorDraws,
    SamplerConfig,
    SamplerError,
    ess,
    mcse_mean,
    posterior_mean,
    posterior_median,
    rhat,
    run_chains,
    summary,
)


def std_normal(x):
    return -0.5 * float(x @ x), -x


def _normal_draws(dim=1, chains=4, warmup=300, samples=500, seed=0):
    cfg = SamplerConfig(chains=chains, warmup=warmup, samples=samples, seed=seed)
    init = np.random.default_rng(seed).uniform(-2, 2, (chains, dim))
    return run_chains(std_normal, init, cfg)


@pytest.mark.parametrize("kw", [dict(chains=0), dict(warmup=99), dict(samples=0),
                                dict(target_accept=1.0), dict(target_accept=0.0),
                                dict(max_tree_depth=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SamplerConfig(**kw)


def test_default_run_length():
    cfg = SamplerConfig()
    assert cfg.chains * cfg.samples == 12_000 and cfg.warmup == 3000


def test_init_must_be_finite():
    bad = lambda x: (-math.inf, np.zeros_like(x))  # noqa: E731
    with pytest.raises(SamplerError):
        run_chains(bad, np.zeros((2, 1)), SamplerConfig(chains=2, warmup=100, samples=5))
    with pytest.raises(SamplerError):
        run_chains(std_normal, np.zeros((3, 1)), SamplerConfig(chains=2, warmup=100, samples=5))


def test_seed_determinism_bitwise():
    a = _normal_draws(dim=2, samples=200, seed=4)
    b = _normal_draws(dim=2, samples=200, seed=4)
    assert a.draws.tobytes() == b.draws.tobytes()
    c = _normal_draws(dim=2, samples=200, seed=5)
    assert a.draws.tobytes() != c.draws.tobytes()


def test_adaptation_frozen_after_warmup():
    """A longer run repeats the shorter one's draws: nothing adapts after warmup."""
    short = _normal_draws(dim=3, samples=100, seed=8)
    long = _normal_draws(dim=3, samples=300, seed=8)
    assert short.draws.tobytes() == long.draws[:100].tobytes()
    np.testing.assert_array_equal(short.step_size, long.step_size)
    np.testing.assert_array_equal(short.inv_metric, long.inv_metric)


def test_pooled_draws_pass_ks():
    d = _normal_draws(dim=1, chains=4, warmup=500, samples=25_000, seed=1)
    x = d.flat("x[0]")
    assert x.size == 100_000
    assert stats.kstest(x, "norm").pvalue > 0.01


def test_energy_error_small_at_adapted_step():
    d = _normal_draws(dim=5, warmup=500, samples=1000, seed=2)
    assert np.median(np.abs(d.energy_error)) < 0.2
    assert not d.divergent.any()


def test_scaled_target_metric_adapts():
    scales = np.array([0.01, 1.0, 100.0])

    def target(x):
        z = x / scales
        return -0.5 * float(z @ z), -z / scales
    cfg = SamplerConfig(chains=2, warmup=1000, samples=1000, seed=3)
    d = run_chains(target, np.zeros((2, 3)) + 0.001, cfg)
    sd = d.draws.reshape(-1, 3).std(axis=0)
    np.testing.assert_allclose(sd, scales, rtol=0.15)
    np.testing.assert_allclose(np.sqrt(d.inv_metric.mean(axis=0)), scales, rtol=0.3)


def test_constrain_and_names():
    cfg = SamplerConfig(chains=2, warmup=100, samples=20, seed=0)
    d = run_chains(std_normal, np.zeros((2, 2)), cfg, constrain=np.exp, names=["u", "v"])
    assert d.names == ["u", "v"] and np.all(d.draws > 0)
    assert d.draws.shape == (20, 2, 2)


def test_divergence_warning_surfaced():
    # a cliff the integrator cannot cross cleanly
    def cliff(x):
        v = float(x[0])
        return (-0.5 * v * v - 1e6 * max(0.0, v - 1) ** 2), np.array([-v - 2e6 * max(0.0, v - 1)])
    cfg = SamplerConfig(chains=1, warmup=100, samples=300, seed=0, target_accept=0.6)
    d = run_chains(cliff, np.zeros((1, 1)), cfg)
    assert d.divergent.mean() > 0.1
    assert any("diverged" in w for w in d.warnings)
    calm = _normal_draws(dim=2, samples=200)
    assert calm.warnings == []


# --- diagnostics ------------------------------------------------------------

def test_rhat_examples():
    assert rhat(np.ones((100, 4))) == 1.0
    rng = np.random.default_rng(0)
    assert rhat(rng.normal(size=(2000, 4))) < 1.01
    offset = rng.normal(size=(1000, 2)) + np.array([0.0, 10.0])
    assert rhat(offset) > 2
    with pytest.raises(DiagnosticError):
        rhat(rng.normal(size=(100, 1)))
    with pytest.raises(DiagnosticError):
        rhat(rng.normal(size=(3, 2)))


def test_rhat_never_below_one_by_much():
    rng = np.random.default_rng(1)
    for _ in range(20):
        assert rhat(rng.normal(size=(50, 3))) > 1 - 0.05


def test_ess_examples():
    rng = np.random.default_rng(2)
    iid = rng.normal(size=(2000, 4))
    assert abs(ess(iid) / iid.size - 1) < 0.2
    assert ess(np.full((100, 2), 3.0)) == 0.0
    rho, n = 0.9, 20_000
    x = np.empty((n, 4))
    x[0] = rng.normal(size=4) / math.sqrt(1 - rho ** 2)
    eps = rng.normal(size=(n, 4))
    for t in range(1, n):
        x[t] = rho * x[t - 1] + eps[t]
    expected = x.size * (1 - rho) / (1 + rho)
    assert abs(ess(x) / expected - 1) < 0.3


def test_mcse_normal():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1000, 4))
    assert mcse_mean(x) == pytest.approx(1 / math.sqrt(4000), rel=0.2)


def _pd(values):
    v = np.asarray(values, dtype=float).reshape(-1, 1, 1)
    return PosteriorDraws(v, ["p"], np.zeros(v.shape[:2], dtype=bool))


def test_posterior_mean_median_examples():
    assert posterior_mean(_pd([2.5]), "p") == 2.5
    assert posterior_median(_pd([2.5]), "p") == 2.5
    assert posterior_mean(_pd([-1.0, 1.0]), "p") == 0.0
    with pytest.raises(ValueError):
        posterior_mean(PosteriorDraws(np.empty((0, 1, 1)), ["p"], np.empty((0, 1), bool)), "p")
    with pytest.raises(KeyError):
        posterior_mean(_pd([1.0]), "missing")


def test_posterior_mean_matches_streaming_sum():
    x = np.random.default_rng(4).normal(3.0, 2.0, 100_000)
    assert posterior_mean(_pd(x), "p") == pytest.approx(math.fsum(x) / x.size, abs=1e-12)


def test_posterior_draws_validation():
    with pytest.raises(ValueError):
        PosteriorDraws(np.zeros((2, 2, 3)), ["a", "b"], np.zeros((2, 2), bool))
    with pytest.raises(ValueError):
        PosteriorDraws(np.zeros((2, 2, 1)), ["a"], np.zeros((2, 3), bool))


def test_csv_round_trip(tmp_path):
    d = _normal_draws(dim=2, chains=2, samples=50, seed=6)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    d.to_csv(p1)
    back = PosteriorDraws.from_csv(p1)
    assert back.draws.tobytes() == d.draws.tobytes()
    assert back.names == d.names
    back.to_csv(p2)
    assert p1.read_bytes() == p2.read_bytes()
    header = p1.read_text().splitlines()[0]
    assert header == "chain,iteration,x[0],x[1],divergent"


def test_summary_rows():
    d = _normal_draws(dim=2, chains=2, samples=200, seed=7)
    rows = summary(d)
    assert [r["param"] for r in rows] == d.names
    assert all(r["rhat"] < 1.1 and r["ess"] > 50 for r in rows)
