import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from bunchmix.priors import (
    FREE_BETA,
    PriorConfig,
    PriorConfigError,
    PriorSpec,
    prior_term,
    sample_unconstrained,
)


def _natural_logpdf(spec, x):
    if spec.family == "normal":
        return stats.norm(spec.loc, spec.scale).logpdf(x)
    if spec.family == "truncnormal":
        return stats.truncnorm(-spec.loc / spec.scale, np.inf, spec.loc, spec.scale).logpdf(x)
    if spec.family == "lognormal":
        return stats.lognorm(spec.scale, scale=math.exp(spec.loc)).logpdf(x)
    return stats.norm(spec.loc, spec.scale).logpdf(math.log(x / (1 - x))) - math.log(x * (1 - x))


TO_NATURAL = {"normal": lambda u: u, "truncnormal": math.exp, "lognormal": math.exp,
              "logitnormal": lambda u: 1 / (1 + math.exp(-u))}
JACOBIAN = {"normal": lambda u: 0.0, "truncnormal": lambda u: u, "lognormal": lambda u: u,
            "logitnormal": lambda u: -math.log1p(math.exp(-u)) - math.log1p(math.exp(u))}


@pytest.mark.parametrize("spec", [PriorSpec("normal", 1.0, 2.0), PriorSpec("truncnormal", 2.0, 1.0),
                                  PriorSpec("truncnormal", 0.0, 0.5), PriorSpec("lognormal", 0.5, 1.5),
                                  PriorSpec("logitnormal", -1.0, 0.7)])
@pytest.mark.parametrize("u", [-2.0, -0.3, 0.0, 0.8, 1.9])
def test_prior_term_is_natural_density_plus_jacobian(spec, u):
    x = TO_NATURAL[spec.family](u)
    expected = _natural_logpdf(spec, x) + JACOBIAN[spec.family](u)
    val, grad = prior_term(spec, u)
    assert val == pytest.approx(float(expected), rel=1e-10, abs=1e-10)
    h = 1e-6
    fd = (prior_term(spec, u + h)[0] - prior_term(spec, u - h)[0]) / (2 * h)
    assert grad == pytest.approx(fd, rel=1e-6, abs=1e-7)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8),
       st.sampled_from([PriorSpec("normal", 0.0, 1.5), PriorSpec("truncnormal", 1.0, 2.0)]))
def test_prior_term_array_matches_scalar(us, spec):
    val, grad = prior_term(spec, np.array(us))
    parts = [prior_term(spec, u) for u in us]
    assert val == pytest.approx(sum(p[0] for p in parts), rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(grad, [p[1] for p in parts], rtol=1e-12, atol=1e-15)


def test_simulation_defaults():
    # Appendix values for the simulation studies
    p = PriorConfig.simulation()
    assert p["a"] == PriorSpec("lognormal", 0.0, 1.5)
    assert p["b"] == PriorSpec("lognormal", 0.0, 1.5)
    assert p["q"] == PriorSpec("truncnormal", math.log(40.0), 1.0)
    assert p["omega"] == PriorSpec("truncnormal", 0.0, 10.0)
    assert p["delta"] == PriorSpec("normal", 0.0, 2.0)
    assert p["pi"] == PriorSpec("logitnormal", 0.0, 1.5)
    assert p["beta"].fixed and p["beta"].loc == 0.0
    assert (p["mu_a"].loc, p["mu_a"].scale) == (0.0, 2.5)
    assert (p["mu_b"].loc, p["mu_b"].scale) == (3.0, 2.0)
    assert (p["mu_q"].loc, p["mu_q"].scale) == (0.0, 2.5)
    for k in ("sigma_a", "sigma_b", "sigma_q", "sigma_omega", "sigma_delta", "sigma_pi"):
        assert p[k] == PriorSpec("truncnormal", 0.0, 1.0)
    assert (p["mu_omega"].loc, p["mu_omega"].scale) == (2.0, 1.0)
    assert (p["mu_delta"].loc, p["mu_delta"].scale) == (0.0, 1.0)
    assert (p["mu_pi"].loc, p["mu_pi"].scale) == (0.0, 1.5)
    assert p["sigma_beta"].fixed


def test_application_defaults():
    p = PriorConfig.application()
    assert (p["mu_pi"].loc, p["mu_pi"].scale) == (2.0, 1.0)
    assert (p["mu_omega"].loc, p["mu_omega"].scale) == (7.0, 0.5)
    assert (p["mu_delta"].loc, p["mu_delta"].scale) == (0.0, 1.0)
    assert (p["mu_a"].loc, p["mu_b"].loc, p["mu_q"].loc) == (1.0, 10.0, 0.0)
    assert p["sigma_a"] == PriorSpec("truncnormal", 0.5, 1.0)
    assert p["sigma_b"] == PriorSpec("truncnormal", 10.0, 2.0)
    assert p["sigma_pi"] == PriorSpec("truncnormal", 0.0, 0.5)
    assert p["sigma_delta"] == PriorSpec("truncnormal", 0.0, 0.5)


def test_free_beta_mode():
    p = PriorConfig.simulation(fix_beta=False)
    assert p["sigma_beta"] == PriorSpec("truncnormal", 0.0, 1000.0)
    assert p["beta"] == FREE_BETA["beta"]
    assert p["mu_beta"].fixed and p["mu_beta"].loc == 0.0


def test_validation():
    with pytest.raises(PriorConfigError):
        PriorSpec("cauchy", 0.0, 1.0)
    with pytest.raises(PriorConfigError):
        PriorSpec("normal", 0.0, 0.0)
    with pytest.raises(PriorConfigError):
        PriorConfig.simulation().replace(omega=PriorSpec("normal", 0.0, 1.0))
    with pytest.raises(PriorConfigError):
        PriorConfig("simulation", {"a": PriorSpec("lognormal", 0, 1)})
    with pytest.raises(PriorConfigError):
        PriorConfig.from_dict({"priors": {"omega": {"loc": 1}}})


def test_json_round_trip(tmp_path):
    p = PriorConfig.application(fix_beta=False).replace(delta=PriorSpec("normal", 1.0, 3.0))
    path = tmp_path / "priors.json"
    p.to_json(path)
    q = PriorConfig.from_json(path)
    assert q.to_dict() == p.to_dict()
    path2 = tmp_path / "again.json"
    q.to_json(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_partial_json_overrides_base():
    p = PriorConfig.from_dict({"base": "application", "priors": {"delta": {"family": "normal",
                                                                          "loc": 0, "scale": 5}}})
    assert p.mode == "custom" and p["delta"].scale == 5 and p["mu_omega"].loc == 7.0


def test_sample_unconstrained_matches_prior():
    rng = np.random.default_rng(0)
    spec = PriorSpec("truncnormal", 2.0, 1.0)
    x = np.exp(sample_unconstrained(spec, rng, 50_000))
    ref = stats.truncnorm(-2.0, np.inf, 2.0, 1.0)
    assert stats.kstest(x, ref.cdf).pvalue > 0.01
