"""Accuracy metrics against known effects and Monte Carlo replication studies.

A study draws fresh synthetic data per replication, fits each requested
method group by group and averages the per-replication metrics.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .baseline import BaselineError, KdeConfig, rdd_estimate
from .fit import fit_bmtm_groups, fit_hbmtm
from .model import NeighborhoodSpec
from .sampler import SamplerConfig
from .simgen import CLUSTER_SIZES, ScenarioConfig, simulate

logger = logging.getLogger(__name__)

METHODS = ("rdd", "bmtm", "hbmtm")
MAX_FAILED_SHARE = 0.05


class StudyError(RuntimeError):
    pass


def mae(true_deltas, est_deltas):
    """Mean absolute error over groups."""
    t = np.asarray(true_deltas, dtype=float).ravel()
    e = np.asarray(est_deltas, dtype=float).ravel()
    if t.size != e.size:
        raise ValueError(f"length mismatch: {t.size} true vs {e.size} estimated")
    if t.size == 0:
        raise ValueError("need at least one group")
    return float(np.mean(np.abs(t - e)))


@dataclass(frozen=True)
class IntervalMetrics:
    cp: float
    al: float
    is_score: float


def interval_scores(true_deltas, intervals, alpha=0.1):
    """Per-group interval score ``(u - l) + (2/alpha)(l - d)[d < l] + (2/alpha)(d - u)[d > u]``."""
    t = np.asarray(true_deltas, dtype=float).ravel()
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    if t.size != iv.shape[0]:
        raise ValueError(f"length mismatch: {t.size} true vs {iv.shape[0]} intervals")
    lo, hi = iv[:, 0], iv[:, 1]
    if np.any(~(lo <= hi)):
        raise ValueError("every interval needs lower <= upper")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    pen = 2.0 / alpha
    below = np.where(t < lo, lo - t, 0.0)
    above = np.where(t > hi, t - hi, 0.0)
    return (hi - lo) + pen * below + pen * above


def interval_metrics(true_deltas, intervals, alpha=0.1) -> IntervalMetrics:
    """Coverage, average length and interval score of per-group intervals."""
    t = np.asarray(true_deltas, dtype=float).ravel()
    scores = interval_scores(t, intervals, alpha)
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    covered = (iv[:, 0] <= t) & (t <= iv[:, 1])
    return IntervalMetrics(float(np.mean(covered)), float(np.mean(iv[:, 1] - iv[:, 0])),
                           float(np.mean(scores)))


# --- replication study ----------------------------------------------------

@dataclass
class StudyConfig:
    """Settings of a replication study; ``desk()`` gives the reduced default scale."""

    scenario: str = "A"
    replications: int = 100
    methods: tuple = METHODS
    G: int = 100
    cluster_sizes: tuple = CLUSTER_SIZES
    K: float = 50.0
    half_width: float = 10.0
    seed: int = 0
    level: float = 0.9
    point: str = "mean"
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    hier_target_accept: float = 0.8
    kde: KdeConfig = field(default_factory=KdeConfig)
    threads: int = 1

    def __post_init__(self):
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}; choose from {METHODS}")
        if self.replications < 1:
            raise ValueError("need at least one replication")

    @classmethod
    def desk(cls, scenario="A", **kw):
        kw.setdefault("replications", 10)
        kw.setdefault("G", 20)
        kw.setdefault("sampler", SamplerConfig(chains=4, warmup=500, samples=500))
        return cls(scenario=scenario, **kw)

    @property
    def nk(self):
        return NeighborhoodSpec(self.K, self.half_width)

    @property
    def alpha(self):
        return 1.0 - self.level


@dataclass
class GroupResult:
    replication: int
    method: str
    group: int
    truth: float
    point: float
    low: float = math.nan
    high: float = math.nan


@dataclass
class MethodReport:
    method: str
    mae: float
    cp: float = math.nan
    al: float = math.nan
    is_score: float = math.nan
    replications: int = 0
    failed: int = 0
    excluded_groups: int = 0  # groups with no estimate inside otherwise successful replications


@dataclass
class EvalReport:
    scenario: str
    replications: int
    seed: int
    methods: dict  # method -> MethodReport
    groups: list = field(default_factory=list)  # GroupResult
    seconds: float = 0.0

    def to_dict(self):
        return {"scenario": self.scenario, "replications": self.replications, "seed": self.seed,
                "seconds": self.seconds,
                "methods": {m: asdict(r) for m, r in self.methods.items()}}

    def write_table(self, path, append=False):
        """Rows ``scenario, method, MAE, CP, AL, IS``; interval columns empty for RDD."""
        mode = "a" if append else "w"
        with open(path, mode, newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if not append:
                w.writerow(["scenario", "method", "MAE", "CP", "AL", "IS"])
            for m in METHODS:
                if m not in self.methods:
                    continue
                r = self.methods[m]
                row = [self.scenario, m.upper(), _fmt(r.mae)]
                row += [_fmt(v) if math.isfinite(v) else "" for v in (r.cp, r.al, r.is_score)]
                w.writerow(row)

    def write_groups(self, path):
        """Per-group point and interval against truth, sorted by replication, method, group."""
        rows = sorted(self.groups, key=lambda g: (g.replication, METHODS.index(g.method), g.group))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replication", "method", "group", "truth", "point", "low", "high"])
            for g in rows:
                w.writerow([g.replication, g.method, g.group, _fmt(g.truth)]
                           + [_fmt(v) if math.isfinite(v) else "" for v in (g.point, g.low, g.high)])

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(x):
    return format(float(x), ".17g")


def _replication_seeds(seed, R):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(R)]


def _fit_rdd(y, groups, labels, cfg: StudyConfig):
    """Per-group density-jump estimates; a group with an empty side gets a NaN point."""
    out = {}
    nk = cfg.nk
    for lab in labels:
        try:
            point = rdd_estimate(y[groups == lab], cfg.K, nk, cfg.kde)
        except BaselineError as exc:
            logger.warning("rdd group %s skipped: %s", lab, exc)
            point = math.nan
        out[lab] = (point, math.nan, math.nan)
    return out


def _fit_bayes(method, y, groups, cfg: StudyConfig, seed):
    nk = cfg.nk
    if method == "bmtm":
        fits = fit_bmtm_groups(y, groups, [nk], cfg=cfg.sampler, seed=seed, level=cfg.level,
                               point=cfg.point)
        ests = {lab: f.thresholds[0].estimates[0] for lab, f in fits.items()}
    else:
        scfg = replace(cfg.sampler, target_accept=cfg.hier_target_accept)
        fit = fit_hbmtm(y, groups, [nk], cfg=scfg, seed=seed, level=cfg.level, point=cfg.point)
        ests = {e.group: e for e in fit.thresholds[0].estimates}
    return {lab: (e.point, e.hdi_low, e.hdi_high) for lab, e in ests.items()}


def run_replication(cfg: StudyConfig, r: int, seed: int):
    """One replication: returns ``{method: list of GroupResult}`` and ``{method: error}``."""
    dgp_seed, *fit_seeds = _replication_seeds(seed, 1 + len(METHODS))
    scfg = ScenarioConfig(cfg.scenario, cfg.G, tuple(cfg.cluster_sizes), cfg.K, cfg.half_width,
                          dgp_seed)
    y, groups, truth = simulate(scfg)
    labels = list(range(1, cfg.G + 1))
    results, errors = {}, {}
    for m in cfg.methods:
        t0 = time.perf_counter()
        try:
            if m == "rdd":
                est = _fit_rdd(y, groups, labels, cfg)
            else:
                est = _fit_bayes(m, y, groups, cfg, fit_seeds[METHODS.index(m)])
        except Exception as exc:  # a failed fit is recorded, the study decides whether to abort
            logger.warning("replication %d method %s failed: %s", r, m, exc)
            errors[m] = f"{type(exc).__name__}: {exc}"
            continue
        results[m] = [GroupResult(r, m, lab, float(truth.deltas[lab - 1]), *map(float, est[lab]))
                      for lab in labels]
        logger.info("replication %d %s done in %.1fs", r, m, time.perf_counter() - t0)
    return results, errors


def _run_one(args):
    return run_replication(*args)


def summarize_groups(method, rows, alpha):
    """Metrics of one method averaged over replications (each replication weighted equally)."""
    by_rep, excluded = {}, 0
    for g in rows:
        if not math.isfinite(g.point):
            excluded += 1
            continue
        by_rep.setdefault(g.replication, []).append(g)
    maes, ims = [], []
    for reps in by_rep.values():
        t = [g.truth for g in reps]
        maes.append(mae(t, [g.point for g in reps]))
        if method != "rdd":
            ims.append(interval_metrics(t, [(g.low, g.high) for g in reps], alpha))
    rep = MethodReport(method, float(np.mean(maes)), replications=len(by_rep),
                       excluded_groups=excluded)
    if ims:
        rep.cp = float(np.mean([m.cp for m in ims]))
        rep.al = float(np.mean([m.al for m in ims]))
        rep.is_score = float(np.mean([m.is_score for m in ims]))
    return rep


def run_replication_study(cfg: StudyConfig) -> EvalReport:
    """Fit every method on ``cfg.replications`` fresh datasets and average the metrics.

    Replications whose fit fails are logged and dropped for that method; a
    study error is raised when more than 5% of a method's replications fail.
    """
    t0 = time.perf_counter()
    seeds = _replication_seeds(cfg.seed, cfg.replications)
    jobs = [(cfg, r, s) for r, s in enumerate(seeds)]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as ex:
            outs = list(ex.map(_run_one, jobs))
    else:
        outs = [_run_one(j) for j in jobs]
    rows, failed = {m: [] for m in cfg.methods}, {m: 0 for m in cfg.methods}
    for results, errors in outs:
        for m in cfg.methods:
            if m in errors:
                failed[m] += 1
            else:
                rows[m].extend(results[m])
    reports = {}
    for m in cfg.methods:
        if failed[m] > MAX_FAILED_SHARE * cfg.replications:
            raise StudyError(f"{m}: {failed[m]} of {cfg.replications} replications failed")
        reports[m] = summarize_groups(m, rows[m], cfg.alpha)
        reports[m].failed = failed[m]
    return EvalReport(cfg.scenario, cfg.replications, cfg.seed, reports,
                      [g for m in cfg.methods for g in rows[m]], time.perf_counter() - t0)
