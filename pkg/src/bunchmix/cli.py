"""Command-line entry point: ``bunchmix simulate | fit | evaluate``.

Exit codes: 0 success (warnings allowed), 1 usage or configuration error,
2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time

import numpy as np

from .distributions import sm_logpdf_arr, sn_logpdf_arr
from .estimands import EstimandError
from .evaluate import METHODS, StudyConfig, StudyError, interval_metrics, mae, run_replication_study
from .fit import fit_bmtm, fit_bmtm_groups, fit_hbmtm
from .model import ConfigError, EvaluationError, NeighborhoodSpec, check_neighborhoods
from .priors import PriorConfig, PriorConfigError
from .sampler import SamplerConfig, SamplerError, ess, posterior_mean, rhat
from .simgen import CLUSTER_SIZES, ScenarioConfig, read_truth, simulate, write_observations, write_truth

logger = logging.getLogger("bunchmix")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# built-in defaults; a JSON config file overrides these, CLI flags override both
FIT_DEFAULTS = {
    "model": "hbmtm", "thresholds": None, "half_width": None, "group_column": "group",
    "y_column": "y", "priors": "simulation", "free_beta": False, "point": "mean",
    "level": 0.9, "chains": 4, "warmup": 3000, "samples": 3000, "seed": 0,
    "target_accept": 0.8, "max_tree_depth": 10, "centered": False, "band_width": None,
    "top_code": None, "band_column": None, "grid": 201, "bins": 40, "threads": 1,
}
EVAL_DEFAULTS = {
    "scenario": "A", "replications": None, "scale": "desk", "methods": ",".join(METHODS),
    "groups": None, "seed": 0, "chains": 4, "warmup": None, "samples": None, "level": 0.9,
    "point": "mean", "threads": 1,
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(x):
    return format(float(x), ".17g")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _merge(defaults, config_path, args, keys):
    """Defaults, then the config file, then any flag given on the command line."""
    cfg = dict(defaults)
    if config_path:
        try:
            with open(config_path) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from exc
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


# --- data ingestion -------------------------------------------------------

def read_observations(path, y_column="y", group_column="group", band_column=None,
                      band_width=None, top_code=None):
    """Spending values and optional group labels from a headered CSV.

    Negative or non-numeric spending is an error naming the row; zero
    spending lies outside the support and is dropped.  With
    ``band_column`` the group is the band index of that column,
    ``min(floor(x / band_width), top_code / band_width) + 1``.
    Returns ``(y, groups or None, n_dropped)``.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or y_column not in reader.fieldnames:
            raise DataError(f"{path}: missing column {y_column!r}")
        grouped = band_column is not None or group_column in reader.fieldnames
        if band_column is not None:
            if band_column not in reader.fieldnames:
                raise DataError(f"{path}: missing band column {band_column!r}")
            if not band_width or band_width <= 0:
                raise UsageError("--band-column needs a positive --band-width")
        ys, gs, dropped = [], [], 0
        for row_no, row in enumerate(reader, start=2):
            raw = row[y_column]
            try:
                y = float(raw)
            except (TypeError, ValueError):
                raise DataError(f"{path}: row {row_no}: non-numeric spending {raw!r}") from None
            if not math.isfinite(y) or y < 0:
                raise DataError(f"{path}: row {row_no}: invalid spending {raw!r}")
            if y == 0:
                dropped += 1
                continue
            if band_column is not None:
                try:
                    prev = float(row[band_column])
                except (TypeError, ValueError):
                    raise DataError(f"{path}: row {row_no}: non-numeric {band_column} "
                                    f"{row[band_column]!r}") from None
                if prev < 0 or not math.isfinite(prev):
                    raise DataError(f"{path}: row {row_no}: invalid {band_column} {row[band_column]!r}")
                band = math.floor(prev / band_width)
                if top_code is not None:
                    band = min(band, int(round(top_code / band_width)))
                gs.append(band + 1)
            elif grouped:
                g = row[group_column]
                try:
                    gs.append(int(g))
                except ValueError:
                    gs.append(g)
            ys.append(y)
    if not ys:
        raise DataError(f"{path}: no positive spending values")
    return np.array(ys), (np.array(gs) if grouped else None), dropped


def _neighborhoods(cfg):
    ths = cfg["thresholds"]
    if not ths:
        raise UsageError("give at least one --threshold")
    hw = cfg["half_width"]
    if hw is None:
        raise UsageError("give --half-width")
    hws = hw if isinstance(hw, list) else [hw] * len(ths)
    if len(hws) == 1:
        hws = hws * len(ths)
    if len(hws) != len(ths):
        raise UsageError("need one half-width per threshold, or a single one")
    try:
        return check_neighborhoods([NeighborhoodSpec(float(k), float(a)) for k, a in zip(ths, hws)])
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _priors(cfg):
    name = cfg["priors"]
    fix = not cfg["free_beta"]
    if name == "simulation":
        return PriorConfig.simulation(fix)
    if name == "application":
        return PriorConfig.application(fix)
    try:
        pri = PriorConfig.from_json(name)
    except OSError as exc:
        raise UsageError(f"cannot read priors {name}: {exc}") from exc
    return pri if fix else PriorConfig(pri.mode, dict(pri.priors), False)


# --- simulate -------------------------------------------------------------

def cmd_simulate(args):
    sizes = tuple(args.cluster_sizes) if args.cluster_sizes else CLUSTER_SIZES
    try:
        scfg = ScenarioConfig(args.scenario, args.groups, sizes, args.k, args.half_width, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    y, groups, truth = simulate(scfg)
    os.makedirs(args.out, exist_ok=True)
    write_observations(os.path.join(args.out, "observations.csv"), y, groups)
    write_truth(os.path.join(args.out, "truth.json"), truth)
    nk = scfg.nk
    inside = int(np.sum(nk.contains(y)))
    print(f"scenario {args.scenario}: {args.groups} groups, {y.size} observations, "
          f"{int(truth.z.sum())} bunchers, {inside} inside [{nk.lo:g}, {nk.hi:g}]")
    print(f"effect over groups: mean {truth.deltas.mean():.4f}, "
          f"range [{truth.deltas.min():.4f}, {truth.deltas.max():.4f}]")
    print(f"wrote {args.out}/observations.csv and {args.out}/truth.json")
    return EXIT_OK


# --- fit ------------------------------------------------------------------

def _diagnostics(draws, label):
    params = {}
    for name in draws.names:
        x = draws.get(name)
        if np.ptp(x) == 0:
            continue
        params[name] = {"mean": float(x.mean()), "sd": float(x.std(ddof=1)),
                        "rhat": rhat(draws, name) if draws.n_chains > 1 else None,
                        "ess": ess(draws, name)}
    return {"label": label, "divergences": int(draws.divergent.sum()),
            "step_size": [float(v) for v in draws.step_size],
            "max_rhat": max((p["rhat"] for p in params.values() if p["rhat"] is not None),
                            default=None),
            "min_ess": min((p["ess"] for p in params.values()), default=None),
            "params": params}


def _label_suffix(group):
    return "" if group is None else f"[{group}]"


def _density_rows(y_in, groups_in, nk, draws, theta_hat, labels, grid_n, bins, hier):
    """Fitted-density grids and observed histograms over one neighbourhood."""
    grid = np.linspace(nk.lo, nk.hi, grid_n)
    dens_rows, hist_rows = [], []
    edges = np.linspace(nk.lo, nk.hi, bins + 1)
    for lab in labels:
        sfx = _label_suffix(lab) if hier else ""
        pi = posterior_mean(draws, "pi" + sfx)
        beta, omega, delta = (posterior_mean(draws, p + sfx) for p in ("beta", "omega", "delta"))
        th = theta_hat[lab]
        f = np.exp(sn_logpdf_arr(grid, beta, omega, delta))
        g = np.exp(sm_logpdf_arr(grid, th.a, th.b, th.q))
        for x, fv, gv in zip(grid, f, g):
            dens_rows.append([lab if lab is not None else "", _fmt(x), _fmt(fv), _fmt(gv),
                              _fmt(pi * fv + (1 - pi) * gv)])
        ys = y_in if groups_in is None or lab is None else y_in[groups_in == lab]
        counts, _ = np.histogram(ys, bins=edges)
        width = edges[1] - edges[0]
        total = max(1, counts.sum())
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            hist_rows.append([lab if lab is not None else "", _fmt(lo), _fmt(hi), int(c),
                              _fmt(c / (total * width))])
    return dens_rows, hist_rows


def cmd_fit(args):
    cfg = _merge(FIT_DEFAULTS, args.config, args, FIT_DEFAULTS.keys())
    if cfg["model"] not in ("bmtm", "hbmtm"):
        raise UsageError("--model must be bmtm or hbmtm")
    if cfg["point"] not in ("mean", "median"):
        raise UsageError("--point must be mean or median")
    nks = _neighborhoods(cfg)
    priors = _priors(cfg)
    try:
        scfg = SamplerConfig(cfg["chains"], cfg["warmup"], cfg["samples"], cfg["seed"],
                             cfg["target_accept"], cfg["max_tree_depth"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    y, groups, dropped = read_observations(args.input, cfg["y_column"],
                                           cfg["group_column"], cfg["band_column"],
                                           cfg["band_width"], cfg["top_code"])
    if dropped:
        logger.warning("dropped %d observations with zero spending", dropped)
    outside = np.ones(y.size, dtype=bool)
    for nk in nks:
        if not np.any(nk.contains(y)):
            raise DataError(f"no observations inside [{nk.lo:g}, {nk.hi:g}]")
        outside &= ~nk.contains(y)
    if not outside.any():
        raise DataError("no observations outside the neighbourhoods")

    t0 = time.perf_counter()
    hier = cfg["model"] == "hbmtm"
    if hier and groups is None:
        raise UsageError("--model hbmtm needs a group column")
    kw = dict(priors=priors, cfg=scfg, seed=cfg["seed"], level=cfg["level"], point=cfg["point"])
    if hier:
        fits = {None: fit_hbmtm(y, groups, nks, centered=cfg["centered"], **kw)}
    elif groups is None:
        fits = {None: fit_bmtm(y, nks, **kw)}
    else:
        fits = fit_bmtm_groups(y, groups, nks, threads=cfg["threads"], **kw)

    out = args.out
    os.makedirs(out, exist_ok=True)
    estimates, diags, warnings = [], [], []
    curves = []
    for key, fit in fits.items():
        tag = "" if key is None else f"_g{key}"
        fit.step1.to_csv(os.path.join(out, f"step1_draws{tag}.csv"))
        diags.append(_diagnostics(fit.step1, f"step 1{tag}"))
        warnings.extend(fit.warnings)
        for lab, th in fit.theta_hat.items():
            hi = max(float(np.quantile(y, 0.99)), max(nk.hi for nk in nks))
            for x in np.linspace(hi / cfg["grid"], hi, cfg["grid"]):
                curves.append([key if lab is None else lab, _fmt(x),
                               _fmt(np.exp(sm_logpdf_arr(x, th.a, th.b, th.q)))])
        for tf in fit.thresholds:
            k = f"{tf.nk.k:g}"
            tf.draws.to_csv(os.path.join(out, f"step2_K{k}_draws{tag}.csv"))
            diags.append(_diagnostics(tf.draws, f"step 2 K={k}{tag}"))
            for e in tf.estimates:
                d = e.to_dict()
                if key is not None:
                    d["group"] = key
                estimates.append(d)
            labels = list(fit.theta_hat)
            if hier:
                y_in, g_in = y, groups
            else:
                y_in = y if key is None else y[groups == key]
                g_in = None
            dens, hist = _density_rows(y_in[tf.nk.contains(y_in)],
                                       None if g_in is None else g_in[tf.nk.contains(y_in)],
                                       tf.nk, tf.draws, fit.theta_hat, labels, cfg["grid"],
                                       cfg["bins"], hier)
            mode = "a" if key is not None and key != list(fits)[0] else "w"
            _append_csv(os.path.join(out, f"density_K{k}.csv"), mode,
                        ["group", "y", "bunching", "nonbunching", "mixture"], dens)
            _append_csv(os.path.join(out, f"histogram_K{k}.csv"), mode,
                        ["group", "bin_low", "bin_high", "count", "density"], hist)
    _write_csv(os.path.join(out, "nonbunching_curves.csv"), ["group", "y", "density"], curves)
    estimates.sort(key=lambda d: (d["threshold"], str(d["group"])))
    _write_json(os.path.join(out, "estimates.json"), {
        "model": cfg["model"], "seed": cfg["seed"], "level": cfg["level"], "point": cfg["point"],
        "estimates": estimates})
    _write_json(os.path.join(out, "diagnostics.json"), {
        "seconds": time.perf_counter() - t0, "dropped_zero": dropped, "warnings": warnings,
        "fits": diags, "priors": priors.to_dict(),
        "sampler": {"chains": scfg.chains, "warmup": scfg.warmup, "samples": scfg.samples,
                    "seed": scfg.seed, "target_accept": scfg.target_accept}})
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    for d in estimates:
        grp = "" if d["group"] is None else f" group {d['group']}"
        print(f"K={d['threshold']:g}{grp}: effect {d['point']:.6g} "
              f"[{d['hdi_low']:.6g}, {d['hdi_high']:.6g}]")
    return EXIT_OK


def _append_csv(path, mode, header, rows):
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if mode == "w":
            w.writerow(header)
        w.writerows(rows)


# --- evaluate -------------------------------------------------------------

def _score_files(estimates_path, truth_path, out, alpha):
    """Metrics of an existing fit against a ground-truth file."""
    if not truth_path or not os.path.exists(truth_path):
        raise DataError(f"ground truth not found: {truth_path}")
    truth = read_truth(truth_path)
    with open(estimates_path) as fh:
        est = json.load(fh)["estimates"]
    by_group = {int(e["group"]): e for e in est if e["threshold"] == truth.nk.k}
    labels = sorted(by_group)
    if not labels:
        raise DataError("no estimates at the ground-truth threshold")
    t = [float(truth.deltas[g - 1]) for g in labels]
    pts = [by_group[g]["point"] for g in labels]
    ivs = [(by_group[g]["hdi_low"], by_group[g]["hdi_high"]) for g in labels]
    im = interval_metrics(t, ivs, alpha)
    os.makedirs(out, exist_ok=True)
    _write_csv(os.path.join(out, "groups.csv"), ["group", "truth", "point", "low", "high"],
               [[g, _fmt(tv), _fmt(p), _fmt(lo), _fmt(hi)] for g, tv, p, (lo, hi) in zip(labels, t, pts, ivs)])
    row = {"MAE": mae(t, pts), "CP": im.cp, "AL": im.al, "IS": im.is_score}
    _write_json(os.path.join(out, "metrics.json"), row)
    print("  ".join(f"{k} {v:.4f}" for k, v in row.items()))
    return EXIT_OK


def cmd_evaluate(args):
    cfg = _merge(EVAL_DEFAULTS, args.config, args, EVAL_DEFAULTS.keys())
    alpha = 1.0 - cfg["level"]
    if args.estimates:
        return _score_files(args.estimates, args.truth, args.out, alpha)
    if args.truth:
        raise UsageError("--truth needs --estimates")
    methods = tuple(m.strip().lower() for m in cfg["methods"].split(",") if m.strip())
    desk = cfg["scale"] == "desk"
    if cfg["scale"] not in ("desk", "full"):
        raise UsageError("--scale must be desk or full")
    warmup = cfg["warmup"] or (500 if desk else 3000)
    samples = cfg["samples"] or (500 if desk else 3000)
    try:
        study = StudyConfig(
            scenario=cfg["scenario"], replications=cfg["replications"] or (10 if desk else 100),
            methods=methods, G=cfg["groups"] or (20 if desk else 100), seed=cfg["seed"],
            level=cfg["level"], point=cfg["point"], threads=cfg["threads"],
            sampler=SamplerConfig(cfg["chains"], warmup, samples, cfg["seed"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    report = run_replication_study(study)
    os.makedirs(args.out, exist_ok=True)
    report.write_table(os.path.join(args.out, "table.csv"))
    report.write_groups(os.path.join(args.out, "groups.csv"))
    report.write_json(os.path.join(args.out, "report.json"))
    print(f"scenario {report.scenario}, {report.replications} replications, seed {report.seed}")
    for m, r in report.methods.items():
        extra = "" if m == "rdd" else f"  CP {r.cp:.3f}  AL {r.al:.3f}  IS {r.is_score:.3f}"
        print(f"{m.upper():6s} MAE {r.mae:.3f}{extra}  (failed {r.failed})")
    return EXIT_OK


# --- parser ---------------------------------------------------------------

def build_parser():
    p = _Parser(prog="bunchmix", description="Bayesian mixture estimates of bunching effects.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="draw a synthetic multi-group dataset")
    s.add_argument("--scenario", default="A", choices=["A", "B"])
    s.add_argument("--groups", type=int, default=100)
    s.add_argument("--cluster-sizes", type=int, nargs="+")
    s.add_argument("--k", type=float, default=50.0)
    s.add_argument("--half-width", type=float, default=10.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=".")

    f = sub.add_parser("fit", help="two-step fit over one or more thresholds")
    f.add_argument("--input", required=True)
    f.add_argument("--config")
    f.add_argument("--model", choices=["bmtm", "hbmtm"])
    f.add_argument("--threshold", dest="thresholds", type=float, action="append")
    f.add_argument("--half-width", type=float)
    f.add_argument("--group-column")
    f.add_argument("--y-column")
    f.add_argument("--priors", help="simulation, application or a JSON file")
    beta = f.add_mutually_exclusive_group()
    beta.add_argument("--free-beta", dest="free_beta", action="store_true", default=None)
    beta.add_argument("--fix-beta", dest="free_beta", action="store_false")
    f.add_argument("--point", choices=["mean", "median"])
    f.add_argument("--level", type=float)
    f.add_argument("--chains", type=int)
    f.add_argument("--warmup", type=int)
    f.add_argument("--samples", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--target-accept", type=float)
    f.add_argument("--max-tree-depth", type=int)
    f.add_argument("--centered", action="store_true", default=None)
    f.add_argument("--band-width", type=float)
    f.add_argument("--top-code", type=float)
    f.add_argument("--band-column")
    f.add_argument("--grid", type=int)
    f.add_argument("--bins", type=int)
    f.add_argument("--threads", type=int)
    f.add_argument("--out", default="fit_out")

    e = sub.add_parser("evaluate", help="replication study or scoring of a fit against truth")
    e.add_argument("--config")
    e.add_argument("--scenario", choices=["A", "B"])
    e.add_argument("--replications", type=int)
    e.add_argument("--scale", choices=["desk", "full"])
    e.add_argument("--methods", help="comma-separated subset of rdd,bmtm,hbmtm")
    e.add_argument("--groups", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--chains", type=int)
    e.add_argument("--warmup", type=int)
    e.add_argument("--samples", type=int)
    e.add_argument("--level", type=float)
    e.add_argument("--point", choices=["mean", "median"])
    e.add_argument("--threads", type=int)
    e.add_argument("--estimates", help="estimates.json from a fit, scored against --truth")
    e.add_argument("--truth", help="truth.json written by simulate")
    e.add_argument("--out", default="eval_out")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"simulate": cmd_simulate, "fit": cmd_fit, "evaluate": cmd_evaluate}
    try:
        return handlers[args.command](args)
    except (UsageError, ConfigError, PriorConfigError) as exc:
        print(f"bunchmix: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"bunchmix: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (EvaluationError, EstimandError, SamplerError, StudyError, FloatingPointError) as exc:
        print(f"bunchmix: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
