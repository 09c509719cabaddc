"""Two-step fits: single-group (BMTM) and hierarchical multi-group (HBMTM).

Step 1 runs once on the observations outside every neighbourhood; its
posterior mean is frozen and step 2 runs independently per neighbourhood.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .distributions import SinghMaddalaParams
from .estimands import AttEstimate, posterior_att, summarize
from .model import (
    HierStep1Posterior,
    HierStep2Posterior,
    NeighborhoodSpec,
    Step1Posterior,
    Step2Posterior,
    check_neighborhoods,
    partition,
)
from .priors import PriorConfig
from .sampler import PosteriorDraws, SamplerConfig, posterior_mean, rhat, run_chains

logger = logging.getLogger(__name__)


def _child_seeds(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _sample(objective, cfg: SamplerConfig, seed):
    init_seed, run_seed = _child_seeds(seed, 2)
    init = objective.initial_points(cfg.chains, np.random.default_rng(init_seed))
    draws = run_chains(objective, init, replace(cfg, seed=run_seed),
                       constrain=objective.constrain, names=objective.names)
    draws.meta["seed"] = seed
    return draws


def max_rhat(draws: PosteriorDraws):
    if draws.n_chains < 2 or draws.n_samples < 4:
        return float("nan")
    return max(rhat(draws, n) for n in draws.names)


@dataclass
class ThresholdFit:
    nk: NeighborhoodSpec
    draws: PosteriorDraws
    estimates: list  # AttEstimate per group


@dataclass
class TwoStepFit:
    model: str
    step1: PosteriorDraws
    theta_hat: dict  # group label -> SinghMaddalaParams
    thresholds: list  # ThresholdFit per neighbourhood
    warnings: list = field(default_factory=list)

    def estimates(self):
        return [e for t in self.thresholds for e in t.estimates]


def _check_rhat(draws, label, warnings, limit=1.05):
    r = max_rhat(draws)
    if r > limit:
        msg = f"{label}: max R-hat {r:.3f} exceeds {limit}"
        logger.warning(msg)
        warnings.append(msg)
    warnings.extend(draws.warnings)


def fit_bmtm(y, neighborhoods, priors: PriorConfig = None, cfg: SamplerConfig = None, seed=0,
             level=0.9, point="mean", group=None) -> TwoStepFit:
    """Single-group two-step fit over one or more disjoint neighbourhoods."""
    priors = priors or PriorConfig.simulation()
    cfg = cfg or SamplerConfig(seed=seed)
    nks = check_neighborhoods(neighborhoods)
    part = partition(y, nks)
    seeds = _child_seeds(seed, 1 + len(nks))
    warnings = []

    step1 = Step1Posterior(part.outside, nks, priors)
    d1 = _sample(step1, cfg, seeds[0])
    _check_rhat(d1, f"step 1 (group {group})", warnings)
    theta_hat = SinghMaddalaParams(*(posterior_mean(d1, k) for k in ("a", "b", "q")))

    fits = []
    for m, nk in enumerate(nks):
        step2 = Step2Posterior(part.inside[m], theta_hat, nk, priors)
        d2 = _sample(step2, cfg, seeds[1 + m])
        _check_rhat(d2, f"step 2 K={nk.k:g} (group {group})", warnings)
        delta = posterior_att(d2, nk, theta_hat)
        est = summarize(delta, level, point, group=group, threshold=nk.k)
        fits.append(ThresholdFit(nk, d2, [est]))
    return TwoStepFit("bmtm", d1, {group: theta_hat}, fits, warnings)


def _fit_bmtm_job(args):
    return fit_bmtm(*args[:-1], group=args[-1])


def fit_bmtm_groups(y, groups, neighborhoods, priors=None, cfg=None, seed=0, level=0.9,
                    point="mean", threads=1):
    """Independent single-group fits, one per group label (sorted).

    ``threads > 1`` runs groups in worker processes; results do not depend
    on it.
    """
    y = np.asarray(y, dtype=float)
    groups = np.asarray(groups)
    labels = sorted(set(groups.tolist()))
    seeds = _child_seeds(seed, len(labels))
    jobs = [(y[groups == lab], neighborhoods, priors, cfg, s, level, point, lab)
            for lab, s in zip(labels, seeds)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            fits = list(ex.map(_fit_bmtm_job, jobs))
    else:
        fits = [_fit_bmtm_job(j) for j in jobs]
    return dict(zip(labels, fits))


def fit_hbmtm(y, groups, neighborhoods, priors: PriorConfig = None, cfg: SamplerConfig = None,
              seed=0, level=0.9, point="mean", centered=False) -> TwoStepFit:
    """Hierarchical two-step fit with random effects across groups."""
    priors = priors or PriorConfig.simulation()
    cfg = cfg or SamplerConfig(seed=seed)
    nks = check_neighborhoods(neighborhoods)
    y = np.asarray(y, dtype=float)
    groups = np.asarray(groups)
    labels, codes = np.unique(groups, return_inverse=True)
    labels = [lab.item() if hasattr(lab, "item") else lab for lab in labels]
    G = len(labels)
    part = partition(y, nks, codes)
    seeds = _child_seeds(seed, 1 + len(nks))
    warnings = []

    step1 = HierStep1Posterior(part.outside, part.outside_groups, G, nks, priors,
                               labels=labels, centered=centered)
    d1 = _sample(step1, cfg, seeds[0])
    _check_rhat(d1, "hierarchical step 1", warnings)
    theta_hats = np.array([[posterior_mean(d1, f"{p}[{lab}]") for p in "abq"] for lab in labels])
    theta_hat = {lab: SinghMaddalaParams(*theta_hats[i]) for i, lab in enumerate(labels)}

    fits = []
    for m, nk in enumerate(nks):
        step2 = HierStep2Posterior(part.inside[m], part.inside_groups[m], G, theta_hats, nk, priors,
                                   labels=labels, centered=centered)
        d2 = _sample(step2, cfg, seeds[1 + m])
        _check_rhat(d2, f"hierarchical step 2 K={nk.k:g}", warnings)
        ests = []
        for lab in labels:
            delta = posterior_att(d2, nk, theta_hat[lab], group=lab)
            ests.append(summarize(delta, level, point, group=lab, threshold=nk.k))
        fits.append(ThresholdFit(nk, d2, ests))
    return TwoStepFit("hbmtm", d1, theta_hat, fits, warnings)
