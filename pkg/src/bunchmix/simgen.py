"""Synthetic multi-group spending data with known treatment effects.

Scenario A has moderate bunching with little heterogeneity across groups;
scenario B has sparse bunching with more heterogeneity.  Groups are split
equally into clusters with a common sample size per cluster.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .distributions import (
    SinghMaddalaParams,
    SkewNormalParams,
    sm_cdf,
    sm_sample,
    sn_sample,
    truncnormal_sample,
)
from .estimands import att
from .model import MixtureParams, NeighborhoodSpec

CLUSTER_SIZES = (50, 100, 200, 300)

# (loc, scale) of the normal draw of each population-level parameter
COMMON_HYPER = {
    "mu_omega": (3.0, 0.1), "mu_delta": (4.0, 0.1), "mu_a": (3.5, 0.1),
    "mu_b": (39.0, 1.0), "mu_q": (1.5, 0.1),
}
# (loc, scale) of the truncated-normal draw of each spread parameter
COMMON_SPREAD = {
    "sigma_b": (2.0, 1.0), "sigma_omega": (0.5, 0.1), "sigma_delta": (0.5, 0.1),
    "sigma_a": (0.2, 0.1), "sigma_q": (0.2, 0.1),
}
SCENARIO_PI = {
    "A": {"mu_pi": (-2.0, 0.1), "sigma_pi": (0.5, 0.1)},
    "B": {"mu_pi": (-4.0, 0.1), "sigma_pi": (1.5, 0.1)},
}


class GenerationError(RuntimeError):
    pass


@dataclass
class ScenarioConfig:
    scenario: str = "A"
    G: int = 100
    cluster_sizes: tuple = CLUSTER_SIZES
    K: float = 50.0
    half_width: float = 10.0
    seed: int = 0
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in ("A", "B", "custom"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.G < 1 or self.G % len(self.cluster_sizes):
            raise ValueError("G must be a positive multiple of the number of clusters")
        if any(n <= 0 for n in self.cluster_sizes):
            raise ValueError("cluster sizes must be positive")

    @property
    def nk(self):
        return NeighborhoodSpec(self.K, self.half_width)

    def group_sizes(self):
        per = self.G // len(self.cluster_sizes)
        return np.repeat(np.asarray(self.cluster_sizes, dtype=int), per)


def draw_hyperparams(scenario, rng: np.random.Generator, overrides=None):
    """Population-level parameters for a scenario.

    ``custom`` starts from scenario A; ``overrides`` replaces any drawn
    value by a fixed number.
    """
    base = "A" if scenario == "custom" else scenario
    if base not in SCENARIO_PI:
        raise ValueError(f"unknown scenario {scenario!r}")
    hyper = {}
    for k, (m, s) in COMMON_HYPER.items():
        hyper[k] = float(rng.normal(m, s))
    for k, (m, s) in COMMON_SPREAD.items():
        hyper[k] = float(truncnormal_sample(m, s, rng))
    m, s = SCENARIO_PI[base]["mu_pi"]
    hyper["mu_pi"] = float(rng.normal(m, s))
    m, s = SCENARIO_PI[base]["sigma_pi"]
    hyper["sigma_pi"] = float(truncnormal_sample(m, s, rng))
    hyper.update(overrides or {})
    return hyper


def _positive(loc, sd, rng, size):
    """N+(loc, sd^2) draws, redrawn until strictly positive; ``sd == 0`` gives ``loc``."""
    if sd == 0:
        return np.full(size, float(loc))
    x = truncnormal_sample(np.full(size, float(loc)), sd, rng)
    while np.any(x <= 0):
        bad = x <= 0
        x[bad] = truncnormal_sample(np.full(bad.sum(), float(loc)), sd, rng)
    return x


def draw_group_params(hyper, G, rng: np.random.Generator, K=50.0):
    """Per-group mixture parameters; the bunching location is ``K`` for every group."""
    omega = rng.normal(hyper["mu_omega"], hyper["sigma_omega"], G)
    while np.any(omega <= 0):
        bad = omega <= 0
        omega[bad] = rng.normal(hyper["mu_omega"], hyper["sigma_omega"], bad.sum())
    delta = rng.normal(hyper["mu_delta"], hyper["sigma_delta"], G)
    a = _positive(hyper["mu_a"], hyper["sigma_a"], rng, G)
    b = _positive(hyper["mu_b"], hyper["sigma_b"], rng, G)
    q = _positive(hyper["mu_q"], hyper["sigma_q"], rng, G)
    pi = special.expit(rng.normal(hyper["mu_pi"], hyper["sigma_pi"], G))
    pi = np.clip(pi, 1e-12, 1 - 1e-12)
    return [MixtureParams(float(pi[g]), SkewNormalParams(float(K), float(omega[g]), float(delta[g])),
                          SinghMaddalaParams(float(a[g]), float(b[g]), float(q[g])))
            for g in range(G)]


def truncated_sn_sample(gamma: SkewNormalParams, nk: NeighborhoodSpec, rng, n, min_rate=1e-4):
    """Skew-normal draws conditioned on the neighbourhood, by rejection."""
    out = np.empty(0)
    drawn = 0
    while out.size < n:
        batch = max(64, 2 * (n - out.size))
        x = sn_sample(gamma, rng, batch)
        drawn += batch
        out = np.concatenate([out, x[nk.contains(x)]])
        if drawn >= 10_000 and out.size / drawn < min_rate:
            raise GenerationError(f"bunching density {gamma} puts almost no mass in {nk}")
    return out[:n]


@dataclass
class GroundTruth:
    params: list
    deltas: np.ndarray
    z: np.ndarray
    nk: NeighborhoodSpec
    hyper: dict = None

    def to_dict(self):
        return {
            "neighborhood": {"k": self.nk.k, "half_width": self.nk.half_width},
            "hyper": self.hyper,
            "groups": [
                {"group": g + 1, "pi": p.pi, "beta": p.gamma.beta, "omega": p.gamma.omega,
                 "delta": p.gamma.delta, "a": p.theta.a, "b": p.theta.b, "q": p.theta.q,
                 "att": float(self.deltas[g])}
                for g, p in enumerate(self.params)
            ],
            "z": [int(v) for v in self.z],
        }

    @classmethod
    def from_dict(cls, d):
        params = [MixtureParams(r["pi"], SkewNormalParams(r["beta"], r["omega"], r["delta"]),
                                SinghMaddalaParams(r["a"], r["b"], r["q"])) for r in d["groups"]]
        nk = NeighborhoodSpec(d["neighborhood"]["k"], d["neighborhood"]["half_width"])
        return cls(params, np.array([r["att"] for r in d["groups"]]), np.array(d["z"], dtype=int),
                   nk, d.get("hyper"))


def generate_data(params, sizes, nk: NeighborhoodSpec, rng: np.random.Generator):
    """Observations ``y``, 1-based group labels and the ground truth.

    Each observation bunches with probability ``pi_g``; bunching draws are
    skew-normal truncated to ``nk``, the others are Singh-Maddala draws.
    """
    ys, gs, zs = [], [], []
    for g, (p, n) in enumerate(zip(params, sizes)):
        z = rng.random(int(n)) < p.pi
        y = np.empty(int(n))
        nb = int(z.sum())
        if nb:
            y[z] = truncated_sn_sample(p.gamma, nk, rng, nb)
        y[~z] = sm_sample(p.theta, rng, int(n) - nb)
        ys.append(y)
        gs.append(np.full(int(n), g + 1))
        zs.append(z.astype(int))
    deltas = np.array([att(p, nk) for p in params])
    return (np.concatenate(ys) if ys else np.empty(0),
            np.concatenate(gs) if gs else np.empty(0, dtype=int),
            GroundTruth(list(params), deltas, np.concatenate(zs) if zs else np.empty(0, dtype=int), nk))


def simulate(cfg: ScenarioConfig):
    """Draw hyperparameters, group parameters and data for one replication."""
    rng = np.random.default_rng(cfg.seed)
    hyper = draw_hyperparams(cfg.scenario, rng, cfg.overrides)
    params = draw_group_params(hyper, cfg.G, rng, cfg.K)
    y, groups, truth = generate_data(params, cfg.group_sizes(), cfg.nk, rng)
    truth.hyper = hyper
    return y, groups, truth


def conditional_weight(p: MixtureParams, nk: NeighborhoodSpec):
    """Share of bunchers among observations inside ``nk`` (bunching fully truncated to it)."""
    mass = float(sm_cdf(nk.hi, p.theta) - sm_cdf(nk.lo, p.theta))
    return p.pi / (p.pi + (1.0 - p.pi) * mass)


def write_observations(path, y, groups=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "group"] if groups is not None else ["y"])
        for i, v in enumerate(y):
            w.writerow([format(float(v), ".17g")] + ([groups[i]] if groups is not None else []))


def write_truth(path, truth: GroundTruth):
    with open(path, "w") as fh:
        json.dump(truth.to_dict(), fh, indent=2)
        fh.write("\n")


def read_truth(path) -> GroundTruth:
    with open(path) as fh:
        return GroundTruth.from_dict(json.load(fh))


# --- application-style data ----------------------------------------------

APP_THRESHOLDS = (30000.0, 50000.0, 70000.0)


def application_dataset(rng: np.random.Generator, n_per_group=300, band_width=10000.0,
                        top_code=200000.0, half_width=10000.0):
    """Synthetic stand-in for a three-threshold promotion dataset.

    Groups are bands of previous-month spending (``G = top_code / band_width
    + 1``).  A group's non-bunching scale follows its band; bunching at a
    threshold is strongest for groups whose band lies just below it.
    Returns ``(y, groups, info)`` where ``info`` lists the true parameters.
    """
    G = int(round(top_code / band_width)) + 1
    centers = band_width * (np.arange(G) + 0.5)
    nks = [NeighborhoodSpec(k, half_width) for k in APP_THRESHOLDS]
    ys, gs, info = [], [], []
    for g in range(G):
        b = 0.85 * centers[g] + 8000.0
        theta = SinghMaddalaParams(float(rng.normal(3.0, 0.2)), float(b), float(rng.normal(1.2, 0.1)))
        pis = []
        for nk in nks:
            gap = (nk.k - centers[g]) / band_width  # >0 when the band lies below the threshold
            pis.append(0.12 * math.exp(-0.5 * ((gap - 1.0) / 1.2) ** 2) + 0.01)
        gammas = [SkewNormalParams(nk.k, float(rng.normal(1100.0, 100.0)), float(rng.normal(2.0, 0.3)))
                  for nk in nks]
        n = int(n_per_group)
        u = rng.random(n)
        cum = np.cumsum(pis)
        comp = np.searchsorted(cum, u, side="right")  # 0..M-1 bunch at threshold m, M = none
        y = np.empty(n)
        for m, nk in enumerate(nks):
            k = comp == m
            if k.any():
                y[k] = truncated_sn_sample(gammas[m], nk, rng, int(k.sum()))
        rest = comp == len(nks)
        y[rest] = sm_sample(theta, rng, int(rest.sum()))
        ys.append(y)
        gs.append(np.full(n, g + 1))
        info.append({"group": g + 1, "center": float(centers[g]), "theta": theta,
                     "pis": pis, "gammas": gammas,
                     "att": [att(MixtureParams(0.5, gm, theta), nk) for gm, nk in zip(gammas, nks)]})
    return np.concatenate(ys), np.concatenate(gs), info
