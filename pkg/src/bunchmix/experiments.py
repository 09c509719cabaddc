"""Seeded experiment drivers shared by the runner scripts and the acceptance suite."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .distributions import SinghMaddalaParams, SkewNormalParams, sn_logpdf_arr
from .estimands import att, endpoint_density, posterior_att
from .fit import fit_bmtm, fit_hbmtm
from .model import MixtureParams, NeighborhoodSpec
from .priors import PriorConfig
from .sampler import SamplerConfig, posterior_median
from .simgen import APP_THRESHOLDS, application_dataset, generate_data

# a single group with moderate bunching around K = 50
REFERENCE_MIXTURE = MixtureParams(0.2, SkewNormalParams(50.0, 3.0, 4.0), SinghMaddalaParams(3.5, 39.0, 1.5))
REFERENCE_NK = NeighborhoodSpec(50.0, 10.0)


def _single_group(n, seed, psi=REFERENCE_MIXTURE, nk=REFERENCE_NK):
    y, _, _ = generate_data([psi], [n], nk, np.random.default_rng(seed))
    return y


@dataclass
class RecoveryRun:
    seed: int
    truth: float
    point: float
    hdi_low: float
    hdi_high: float
    sd: float
    seconds: float

    @property
    def covered(self):
        return self.hdi_low <= self.truth <= self.hdi_high


def recovery_run(seed, n=2000, cfg: SamplerConfig = None, psi=REFERENCE_MIXTURE,
                 nk=REFERENCE_NK, level=0.9) -> RecoveryRun:
    """Simulate one group of size ``n`` and fit it with the single-group model."""
    cfg = cfg or SamplerConfig(chains=4, warmup=1000, samples=1000)
    t0 = time.perf_counter()
    y = _single_group(n, seed, psi, nk)
    fit = fit_bmtm(y, [nk], cfg=cfg, seed=seed, level=level)
    est = fit.thresholds[0].estimates[0]
    sd = float(np.std(posterior_att(fit.thresholds[0].draws, nk, fit.theta_hat[None]), ddof=1))
    return RecoveryRun(seed, att(psi, nk), est.point, est.hdi_low, est.hdi_high, sd,
                       time.perf_counter() - t0)


@dataclass
class ContractionResult:
    sizes: tuple
    sds: dict  # size -> list of posterior sds of the effect, one per seed
    seconds: float = 0.0

    def mean_sd(self, n):
        return float(np.mean(self.sds[n]))

    @property
    def ratio(self):
        """Seed-averaged posterior sd at the larger size over that at the smaller."""
        small, large = self.sizes
        return self.mean_sd(large) / self.mean_sd(small)

    @property
    def per_seed_ratios(self):
        small, large = self.sizes
        return [b / a for a, b in zip(self.sds[small], self.sds[large])]


def contraction_study(seeds=range(10), sizes=(1000, 4000), cfg: SamplerConfig = None,
                      psi=REFERENCE_MIXTURE, nk=REFERENCE_NK) -> ContractionResult:
    """Posterior sd of the effect at two sample sizes over the same seeds."""
    t0 = time.perf_counter()
    sds = {n: [] for n in sizes}
    for s in seeds:
        for n in sizes:
            sds[n].append(recovery_run(1000 * s + n, n, cfg, psi, nk).sd)
    return ContractionResult(tuple(sizes), sds, time.perf_counter() - t0)


@dataclass
class ApplicationResult:
    thresholds: tuple
    centers: dict  # group -> band centre of previous spending
    true_att: dict  # (group, threshold) -> effect used to generate the data
    medians: dict  # (group, threshold) -> posterior median effect
    endpoint_ratio: dict  # (group, threshold) -> median over draws of max endpoint density / peak
    endpoint_ratio_at_median: dict  # same ratio for the density at posterior-median (beta, omega, delta)
    warnings: list = field(default_factory=list)
    seconds: float = 0.0

    def just_below(self, k, width=10000.0):
        return [g for g, c in self.centers.items() if k - width <= c < k]

    def far_above(self, k, gap=20000.0):
        return [g for g, c in self.centers.items() if c >= k + gap]


def application_study(seed=0, n_per_group=300, cfg: SamplerConfig = None, half_width=10000.0,
                      grid=801) -> ApplicationResult:
    """Hierarchical fit of the synthetic 21-band, three-threshold dataset."""
    cfg = cfg or SamplerConfig(chains=4, warmup=1000, samples=1000)
    t0 = time.perf_counter()
    y, groups, info = application_dataset(np.random.default_rng(seed), n_per_group,
                                          half_width=half_width)
    nks = [NeighborhoodSpec(k, half_width) for k in APP_THRESHOLDS]
    fit = fit_hbmtm(y, groups, nks, priors=PriorConfig.application(), cfg=cfg, seed=seed,
                    point="median")
    centers = {r["group"]: r["center"] for r in info}
    true_att = {(r["group"], k): r["att"][m] for r in info for m, k in enumerate(APP_THRESHOLDS)}
    medians, ratio, ratio_med = {}, {}, {}
    for tf in fit.thresholds:
        nk = tf.nk
        xs = np.linspace(nk.lo, nk.hi, grid)
        for e in tf.estimates:
            key = (e.group, nk.k)
            medians[key] = e.point
            sfx = f"[{e.group}]"
            draws = [tf.draws.get(p + sfx).ravel() for p in ("beta", "omega", "delta")]
            ratio[key] = float(np.median(_endpoint_to_peak(*draws, nk, xs)))
            at_median = [np.array([posterior_median(tf.draws, p + sfx)]) for p in ("beta", "omega", "delta")]
            ratio_med[key] = float(_endpoint_to_peak(*at_median, nk, xs)[0])
    return ApplicationResult(APP_THRESHOLDS, centers, true_att, medians, ratio, ratio_med,
                             fit.warnings, time.perf_counter() - t0)


def _endpoint_to_peak(beta, omega, delta, nk, xs, chunk=500):
    """Larger edge density over the peak on ``xs``, one value per parameter draw."""
    out = np.empty(beta.size)
    for i in range(0, beta.size, chunk):
        b, o, d = (v[i:i + chunk, None] for v in (beta, omega, delta))
        peak = np.exp(sn_logpdf_arr(xs, b, o, d)).max(axis=1)
        ends = endpoint_density(b[:, 0], o[:, 0], d[:, 0], nk).max(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            out[i:i + chunk] = np.where(peak > 0, ends / peak, math.inf)
    return out
