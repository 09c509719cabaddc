import csv
import json

import numpy as np
import pytest

from bunchmix import cli
from bunchmix.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main, read_observations
from bunchmix.sampler import PosteriorDraws, SamplerError
from bunchmix.simgen import read_truth, write_observations, write_truth

TINY = ["--chains", "2", "--warmup", "100", "--samples", "60"]


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--scenario", "A", "--groups", "4", "--seed", "7", "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def bmtm_fit(sim_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    rc = main(["fit", "--input", str(sim_dir / "observations.csv"), "--model", "bmtm",
               "--threshold", "50", "--half-width", "10", *TINY, "--out", str(out)])
    assert rc == EXIT_OK
    return out


def _csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def test_simulate_files_and_cluster_sizes(sim_dir):
    y, groups, _ = read_observations(sim_dir / "observations.csv")
    assert sorted(np.bincount(groups)[1:].tolist()) == [50, 100, 200, 300]
    truth = read_truth(sim_dir / "truth.json")
    assert truth.deltas.size == 4 and truth.nk.k == 50.0


def test_simulate_full_scale_sizes(tmp_path):
    assert main(["simulate", "--groups", "100", "--seed", "7", "--out", str(tmp_path)]) == EXIT_OK
    _, groups, _ = read_observations(tmp_path / "observations.csv")
    sizes = np.bincount(groups)[1:]
    assert sizes.size == 100 and {int(s): int(np.sum(sizes == s)) for s in set(sizes)} == {
        50: 25, 100: 25, 200: 25, 300: 25}


def test_simulate_same_seed_same_bytes(sim_dir, tmp_path):
    main(["simulate", "--scenario", "A", "--groups", "4", "--seed", "7", "--out", str(tmp_path)])
    for name in ("observations.csv", "truth.json"):
        assert (tmp_path / name).read_bytes() == (sim_dir / name).read_bytes()


def test_simulate_bad_groups_is_usage_error(tmp_path):
    assert main(["simulate", "--groups", "6", "--out", str(tmp_path)]) == EXIT_USAGE


def test_argparse_errors_exit_one():
    with pytest.raises(SystemExit) as exc:
        main(["fit"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--scenario", "C"])
    assert exc.value.code == EXIT_USAGE


def test_ingestion_row_numbered_errors(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    _csv(bad, ["y"], [[10.0], [-3.0]])
    assert main(["fit", "--input", str(bad), "--threshold", "5", "--half-width", "1",
                 "--model", "bmtm"]) == EXIT_DATA
    assert "row 3" in capsys.readouterr().err
    _csv(bad, ["y"], [[10.0], [4.0], ["abc"]])
    with pytest.raises(cli.DataError, match="row 4"):
        read_observations(bad)
    _csv(bad, ["spend"], [[1.0]])
    with pytest.raises(cli.DataError, match="missing column"):
        read_observations(bad)


def test_zero_spending_dropped_and_counted(tmp_path):
    p = tmp_path / "z.csv"
    _csv(p, ["y", "group"], [[0, 1], [5.5, 1], [0, 2], [7.0, 2]])
    y, g, dropped = read_observations(p)
    assert dropped == 2 and y.tolist() == [5.5, 7.0] and g.tolist() == [1, 2]


def test_band_helper(tmp_path):
    p = tmp_path / "b.csv"
    _csv(p, ["y", "prev_spend"], [[1, 0], [1, 9999], [1, 10000], [1, 250000]])
    _, g, _ = read_observations(p, band_column="prev_spend", band_width=10000, top_code=200000)
    assert g.tolist() == [1, 1, 2, 21]


def test_empty_neighbourhood_is_data_error(sim_dir, tmp_path):
    rc = main(["fit", "--input", str(sim_dir / "observations.csv"), "--model", "bmtm",
               "--threshold", "5000", "--half-width", "1", *TINY, "--out", str(tmp_path)])
    assert rc == EXIT_DATA


def test_overlapping_thresholds_are_usage_error(sim_dir, tmp_path):
    rc = main(["fit", "--input", str(sim_dir / "observations.csv"), "--threshold", "50",
               "--threshold", "55", "--half-width", "10", *TINY, "--out", str(tmp_path)])
    assert rc == EXIT_USAGE


def test_numerical_failure_exit_three(sim_dir, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise SamplerError("no finite starting point")
    monkeypatch.setattr(cli, "fit_bmtm_groups", boom)
    rc = main(["fit", "--input", str(sim_dir / "observations.csv"), "--model", "bmtm",
               "--threshold", "50", "--half-width", "10", *TINY, "--out", str(tmp_path)])
    assert rc == EXIT_NUMERIC


def test_fit_outputs(bmtm_fit):
    est = json.loads((bmtm_fit / "estimates.json").read_text())
    assert est["model"] == "bmtm" and len(est["estimates"]) == 4
    assert all(e["hdi_low"] <= e["point"] <= e["hdi_high"] for e in est["estimates"])
    assert all(e["n_draws"] == 2 * 60 for e in est["estimates"])
    diag = json.loads((bmtm_fit / "diagnostics.json").read_text())
    assert diag["sampler"]["chains"] == 2 and len(diag["fits"]) == 8
    for name in ("density_K50.csv", "histogram_K50.csv", "nonbunching_curves.csv"):
        rows = list(csv.reader(open(bmtm_fit / name)))
        assert len(rows) > 1
    dens = np.array([[float(v) for v in r[1:]] for r in list(csv.reader(open(bmtm_fit / "density_K50.csv")))[1:]])
    assert dens[:, 0].min() >= 40 and dens[:, 0].max() <= 60


def test_fit_deterministic(sim_dir, bmtm_fit, tmp_path):
    main(["fit", "--input", str(sim_dir / "observations.csv"), "--model", "bmtm",
          "--threshold", "50", "--half-width", "10", *TINY, "--out", str(tmp_path)])
    assert (tmp_path / "estimates.json").read_bytes() == (bmtm_fit / "estimates.json").read_bytes()


def test_single_group_gives_one_estimate(tmp_path):
    rng = np.random.default_rng(0)
    y = np.concatenate([rng.gamma(9.0, 5.0, 600), rng.normal(50.5, 1.5, 120)])
    p = tmp_path / "one.csv"
    _csv(p, ["y"], [[f"{v:.6f}"] for v in y[y > 0]])
    rc = main(["fit", "--input", str(p), "--model", "bmtm", "--threshold", "50",
               "--half-width", "10", *TINY, "--out", str(tmp_path / "o")])
    assert rc == EXIT_OK
    est = json.loads((tmp_path / "o" / "estimates.json").read_text())["estimates"]
    assert len(est) == 1 and est[0]["group"] is None


def test_hierarchical_multi_threshold_shares_step_one(sim_dir, tmp_path):
    rc = main(["fit", "--input", str(sim_dir / "observations.csv"), "--model", "hbmtm",
               "--threshold", "45", "--threshold", "55", "--half-width", "5", *TINY,
               "--out", str(tmp_path)])
    assert rc == EXIT_OK
    names = sorted(p.name for p in tmp_path.glob("*draws*.csv"))
    assert names == ["step1_draws.csv", "step2_K45_draws.csv", "step2_K55_draws.csv"]
    est = json.loads((tmp_path / "estimates.json").read_text())["estimates"]
    assert sorted({(e["threshold"], e["group"]) for e in est}) == [
        (k, g) for k in (45.0, 55.0) for g in (1, 2, 3, 4)]


def test_config_precedence(sim_dir, tmp_path):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"samples": 80, "point": "median", "chains": 2, "warmup": 100,
                                "model": "bmtm"}))
    rc = main(["fit", "--input", str(sim_dir / "observations.csv"), "--config", str(conf),
               "--threshold", "50", "--half-width", "10", "--samples", "40",
               "--out", str(tmp_path / "o")])
    assert rc == EXIT_OK
    est = json.loads((tmp_path / "o" / "estimates.json").read_text())
    assert est["point"] == "median"  # from the file
    assert est["estimates"][0]["n_draws"] == 2 * 40  # flag beats file
    assert est["level"] == 0.9  # built-in default
    conf.write_text(json.dumps({"sampels": 10}))
    assert main(["fit", "--input", str(sim_dir / "observations.csv"), "--config", str(conf),
                 "--threshold", "50", "--half-width", "10"]) == EXIT_USAGE


def test_outputs_round_trip(sim_dir, bmtm_fit, tmp_path):
    # draws through the reader
    draws = bmtm_fit / "step2_K50_draws_g1.csv"
    PosteriorDraws.from_csv(draws).to_csv(tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_bytes() == draws.read_bytes()
    write_truth(tmp_path / "t.json", read_truth(sim_dir / "truth.json"))
    assert (tmp_path / "t.json").read_bytes() == (sim_dir / "truth.json").read_bytes()
    # JSON and plain CSV outputs re-serialize identically
    for name in ("estimates.json", "diagnostics.json"):
        src = bmtm_fit / name
        cli._write_json(tmp_path / name, json.loads(src.read_text()))
        assert (tmp_path / name).read_bytes() == src.read_bytes()
    for name in ("density_K50.csv", "histogram_K50.csv", "nonbunching_curves.csv"):
        src = bmtm_fit / name
        rows = list(csv.reader(open(src, newline="")))
        cli._write_csv(tmp_path / name, rows[0], rows[1:])
        assert (tmp_path / name).read_bytes() == src.read_bytes()
    y, g, _ = read_observations(sim_dir / "observations.csv")
    write_observations(tmp_path / "obs.csv", y, g)
    assert (tmp_path / "obs.csv").read_bytes() == (sim_dir / "observations.csv").read_bytes()


def test_evaluate_rdd_only(tmp_path, capsys):
    rc = main(["evaluate", "--scenario", "A", "--replications", "1", "--groups", "4",
               "--methods", "rdd", "--seed", "3", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    rows = (tmp_path / "table.csv").read_text().splitlines()
    assert rows[1].startswith("A,RDD,") and rows[1].endswith(",,,")
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["replications"] == 1 and rep["seed"] == 3
    assert "1 replications, seed 3" in capsys.readouterr().out


def test_evaluate_scores_fit_against_truth(sim_dir, bmtm_fit, tmp_path):
    rc = main(["evaluate", "--estimates", str(bmtm_fit / "estimates.json"),
               "--truth", str(sim_dir / "truth.json"), "--out", str(tmp_path)])
    assert rc == EXIT_OK
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert 0 <= m["CP"] <= 1 and m["IS"] >= m["AL"]
    assert len((tmp_path / "groups.csv").read_text().splitlines()) == 5


def test_evaluate_missing_truth(bmtm_fit, tmp_path):
    rc = main(["evaluate", "--estimates", str(bmtm_fit / "estimates.json"),
               "--truth", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
    assert rc == EXIT_DATA
    assert main(["evaluate", "--truth", str(tmp_path / "x.json")]) == EXIT_USAGE
