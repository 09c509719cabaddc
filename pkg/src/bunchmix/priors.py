"""Prior configuration for the two estimation steps.

Each prior is a :class:`PriorSpec` describing a distribution on the
*natural* scale of a parameter.  Positive parameters are sampled on the log
scale and probabilities on the logit scale; :func:`prior_term` returns the
log-density of the unconstrained coordinate, Jacobian included.

JSON layout (see README)::

    {"mode": "custom", "base": "simulation", "fix_beta": true,
     "priors": {"omega": {"family": "truncnormal", "loc": 0, "scale": 10}}}
"""
from __future__ import annotations

import copy
import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .distributions import LOG_SQRT_2PI, truncnormal_sample

FAMILIES = ("normal", "lognormal", "logitnormal", "truncnormal", "fixed")

# unconstraining transform of every named parameter
TRANSFORMS = {
    "a": "log", "b": "log", "q": "log",
    "omega": "log", "delta": "identity", "pi": "logit", "beta": "identity",
    "mu_a": "identity", "mu_b": "identity", "mu_q": "identity",
    "sigma_a": "log", "sigma_b": "log", "sigma_q": "log",
    "mu_pi": "identity", "mu_omega": "identity", "mu_delta": "identity", "mu_beta": "identity",
    "sigma_pi": "log", "sigma_omega": "log", "sigma_delta": "log", "sigma_beta": "log",
}

_ALLOWED = {
    "identity": {"normal", "fixed"},
    "log": {"lognormal", "truncnormal", "fixed"},
    "logit": {"logitnormal", "fixed"},
}


class PriorConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PriorSpec:
    """A prior on the natural scale.

    ``normal``: x ~ N(loc, scale^2).  ``lognormal``: log x ~ N(loc, scale^2).
    ``logitnormal``: logit x ~ N(loc, scale^2).  ``truncnormal``: x ~
    N+(loc, scale^2), the normal truncated to x >= 0 (half-normal when
    ``loc == 0``).  ``fixed``: x == loc, not sampled.
    """

    family: str
    loc: float
    scale: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise PriorConfigError(f"unknown prior family {self.family!r}")
        if self.family != "fixed" and not self.scale > 0:
            raise PriorConfigError("prior scale must be > 0")
        if self.scale < 0:
            raise PriorConfigError("prior scale must be >= 0")

    @property
    def fixed(self):
        return self.family == "fixed"

    @functools.cached_property
    def _log_norm(self):
        """Log normalising constant of the density on the natural scale."""
        c = -math.log(self.scale) - LOG_SQRT_2PI if self.scale > 0 else 0.0
        if self.family == "truncnormal":
            c -= float(special.log_ndtr(self.loc / self.scale))
        return c

    def to_dict(self):
        return {"family": self.family, "loc": self.loc, "scale": self.scale}


def _n(loc, scale):
    return PriorSpec("normal", loc, scale)


def _tn(loc, scale):
    return PriorSpec("truncnormal", loc, scale)


def simulation_priors():
    """Defaults used for the simulation studies.

    ``beta`` and ``mu_beta`` are offsets from the threshold K.
    """
    return {
        "a": PriorSpec("lognormal", 0.0, 1.5),
        "b": PriorSpec("lognormal", 0.0, 1.5),
        "q": _tn(math.log(40.0), 1.0),
        "omega": _tn(0.0, 10.0),
        "delta": _n(0.0, 2.0),
        "pi": PriorSpec("logitnormal", 0.0, 1.5),
        "beta": PriorSpec("fixed", 0.0),
        "mu_a": _n(0.0, 2.5), "mu_b": _n(3.0, 2.0), "mu_q": _n(0.0, 2.5),
        "sigma_a": _tn(0.0, 1.0), "sigma_b": _tn(0.0, 1.0), "sigma_q": _tn(0.0, 1.0),
        "mu_omega": _n(2.0, 1.0), "mu_delta": _n(0.0, 1.0), "mu_pi": _n(0.0, 1.5),
        "sigma_omega": _tn(0.0, 1.0), "sigma_delta": _tn(0.0, 1.0), "sigma_pi": _tn(0.0, 1.0),
        "mu_beta": PriorSpec("fixed", 0.0), "sigma_beta": PriorSpec("fixed", 0.0),
    }


def application_priors():
    """Defaults for currency-scale data with thresholds in the tens of thousands.

    The single-group keys reuse the locations of the hierarchical ones.
    """
    p = simulation_priors()
    p.update({
        "mu_a": _n(1.0, 1.0), "mu_b": _n(10.0, 2.0), "mu_q": _n(0.0, 1.0),
        "sigma_a": _tn(0.5, 1.0), "sigma_b": _tn(10.0, 2.0), "sigma_q": _tn(0.0, 1.0),
        "mu_pi": _n(2.0, 1.0), "mu_omega": _n(7.0, 0.5), "mu_delta": _n(0.0, 1.0),
        "sigma_pi": _tn(0.0, 0.5), "sigma_omega": _tn(0.0, 1.0), "sigma_delta": _tn(0.0, 0.5),
        "a": PriorSpec("lognormal", 1.0, 1.0),
        "b": PriorSpec("lognormal", 10.0, 2.0),
        "q": PriorSpec("lognormal", 0.0, 1.0),
        "omega": PriorSpec("lognormal", 7.0, 0.5),
        "pi": PriorSpec("logitnormal", 2.0, 1.0),
        "delta": _n(0.0, 1.0),
    })
    return p


FREE_BETA = {"beta": _n(0.0, 1000.0), "sigma_beta": _tn(0.0, 1000.0)}


@dataclass
class PriorConfig:
    mode: str = "simulation"
    priors: dict = field(default_factory=simulation_priors)
    fix_beta: bool = True

    def __post_init__(self):
        if self.mode not in ("simulation", "application", "custom"):
            raise PriorConfigError(f"unknown prior mode {self.mode!r}")
        for name, spec in self.priors.items():
            if name not in TRANSFORMS:
                raise PriorConfigError(f"unknown prior key {name!r}")
            if spec.family not in _ALLOWED[TRANSFORMS[name]]:
                raise PriorConfigError(
                    f"{name!r} is sampled on the {TRANSFORMS[name]} scale; "
                    f"family {spec.family!r} is not allowed")
        missing = set(TRANSFORMS) - set(self.priors)
        if missing:
            raise PriorConfigError(f"missing priors: {sorted(missing)}")
        if not self.fix_beta:
            for k, v in FREE_BETA.items():
                if self.priors[k].fixed:
                    self.priors[k] = v

    @classmethod
    def simulation(cls, fix_beta=True):
        return cls("simulation", simulation_priors(), fix_beta)

    @classmethod
    def application(cls, fix_beta=True):
        return cls("application", application_priors(), fix_beta)

    def __getitem__(self, name) -> PriorSpec:
        return self.priors[name]

    def replace(self, **overrides):
        pri = dict(self.priors)
        pri.update(overrides)
        return PriorConfig("custom", pri, self.fix_beta)

    def to_dict(self):
        return {"mode": self.mode, "fix_beta": self.fix_beta,
                "priors": {k: v.to_dict() for k, v in sorted(self.priors.items())}}

    @classmethod
    def from_dict(cls, d):
        mode = d.get("mode", "custom")
        base = d.get("base", mode if mode != "custom" else "simulation")
        if base not in ("simulation", "application"):
            raise PriorConfigError(f"unknown base {base!r}")
        pri = simulation_priors() if base == "simulation" else application_priors()
        for k, v in d.get("priors", {}).items():
            try:
                pri[k] = PriorSpec(v["family"], float(v["loc"]), float(v.get("scale", 0.0)))
            except (KeyError, TypeError) as exc:
                raise PriorConfigError(f"bad prior entry {k!r}: {v!r}") from exc
        return cls(mode, pri, bool(d.get("fix_beta", True)))

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def copy(self):
        return copy.deepcopy(self)


def prior_term(spec: PriorSpec, u):
    """Log-density and gradient of the unconstrained coordinate ``u``.

    Works elementwise on arrays; returns ``(sum of log-densities, gradient)``.
    """
    s2 = spec.scale * spec.scale
    if isinstance(u, float) or np.ndim(u) == 0:
        u = float(u)
        if spec.family == "truncnormal":
            if u > 700.0:
                return -math.inf, 0.0
            x = math.exp(u)
            z = x - spec.loc
            return -0.5 * z * z / s2 + spec._log_norm + u, 1.0 - z * x / s2
        if spec.family in ("normal", "lognormal", "logitnormal"):
            z = u - spec.loc
            return -0.5 * z * z / s2 + spec._log_norm, -z / s2
        raise PriorConfigError(f"no density for a {spec.family!r} prior")
    u = np.asarray(u, dtype=float)
    if spec.family in ("normal", "lognormal", "logitnormal"):
        z = u - spec.loc
        return float(np.sum(-0.5 * z * z / s2)) + u.size * spec._log_norm, -z / s2
    if spec.family == "truncnormal":
        with np.errstate(over="ignore"):
            x = np.exp(u)
        z = x - spec.loc
        val = -0.5 * z * z / s2 + u
        return float(np.sum(val)) + u.size * spec._log_norm, 1.0 - z * x / s2
    raise PriorConfigError(f"no density for a {spec.family!r} prior")


def sample_unconstrained(spec: PriorSpec, rng: np.random.Generator, size=None):
    """Draw the unconstrained coordinate from the prior."""
    if spec.family in ("normal", "lognormal", "logitnormal"):
        return rng.normal(spec.loc, spec.scale, size)
    if spec.family == "truncnormal":
        x = truncnormal_sample(np.full(size or (), spec.loc), spec.scale, rng)
        return np.log(np.maximum(x, 1e-8 * spec.scale))
    raise PriorConfigError(f"cannot sample a {spec.family!r} prior")
