import json
import os

import numpy as np
import pytest

from balancenet import cli
from balancenet.ingest import load_prices, read_correlation_csv
from balancenet.network import read_landscape_csv
from balancenet.simulate import read_sweep_csv


def run(*argv):
    return cli.main(list(argv))


def read_bytes_tree(root):
    """Every artifact file's bytes, keyed by relative path."""
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


@pytest.fixture()
def outdir(tmp_path):
    return str(tmp_path / "out")


def synth_small(outdir, rho="0.6", days="51", n="8", seed="7"):
    assert run(
        "synth", "--out", outdir, "--n", n, "--days", days, "--rho", rho,
        "--seed", seed,
    ) == 0


SIM_FAST = (
    "--grid-lo", "0.1", "--grid-hi", "8.0", "--grid-points", "6",
    "--replicas", "2", "--equil-sweeps", "60", "--measure-sweeps", "60",
)


class TestSynth:
    def test_shape_contract(self, outdir):
        synth_small(outdir, days="120", n="5")
        path = os.path.join(outdir, "prices.csv")
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().strip().split("\n")
        assert len(lines) == 121  # header + one row per day
        assert len(lines[0].split(",")) == 6
        table = load_prices(path)
        assert table.n_days == 120

    def test_deterministic_bytes(self, tmp_path):
        out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
        synth_small(out1, days="40", n="4")
        synth_small(out2, days="40", n="4")
        with open(os.path.join(out1, "prices.csv"), "rb") as fh:
            b1 = fh.read()
        with open(os.path.join(out2, "prices.csv"), "rb") as fh:
            b2 = fh.read()
        assert b1 == b2

    def test_rho_one_is_usage_error(self, outdir, capsys):
        assert run("synth", "--out", outdir, "--rho", "1.0") == 2
        assert "rho" in capsys.readouterr().err


class TestCorr:
    def test_window_count_77(self, outdir):
        # 3900 price days -> 3899 return rows -> 77 disjoint 50-day windows
        synth_small(outdir, rho="0.0", days="3900", n="4", seed="3")
        assert run("corr", "--out", outdir, "--tau", "50", "--stride", "50") == 0
        fits = json.load(open(os.path.join(outdir, "fits.json")))
        assert len(fits["windows"]) == 77
        assert fits["windows"][0]["window_id"] == "win_0"
        assert fits["windows"][-1]["window_id"] == "win_3800"

    def test_tau_larger_than_data(self, outdir, capsys):
        synth_small(outdir, days="30", n="4")
        assert run("corr", "--out", outdir, "--tau", "50") == 0
        assert "no window" in capsys.readouterr().err
        fits = json.load(open(os.path.join(outdir, "fits.json")))
        assert fits["windows"] == []

    def test_corr_matches_loader_round_trip(self, outdir):
        synth_small(outdir, days="25", n="5", rho="0.3")
        assert run("corr", "--out", outdir, "--tau", "24") == 0
        corr = read_correlation_csv(
            os.path.join(outdir, "windows", "win_0", "corr.csv")
        )
        assert corr.n == 5
        assert np.all(np.diag(corr.values) == 1.0)
        order_path = os.path.join(outdir, "windows", "win_0", "cluster_order.csv")
        with open(order_path, encoding="utf-8") as fh:
            tickers = fh.read().strip().split(",")
        assert sorted(tickers) == sorted(corr.tickers)

    def test_zero_variance_window_skipped(self, tmp_path, capsys):
        outdir = str(tmp_path / "out")
        os.makedirs(outdir)
        # second window holds a constant column -> zero returns there
        rows = ["date,A,B,C"]
        base = 100.0
        for d in range(9):
            a = base + d
            b = 50.0 + (d % 3)
            c = 10.0 + (d if d < 4 else 3)  # constant from day 4 on
            rows.append(f"2020-01-{d + 1:02d},{a},{b},{c}")
        prices = tmp_path / "prices.csv"
        prices.write_text("\n".join(rows) + "\n", encoding="utf-8")
        assert run(
            "corr", "--out", outdir, "--prices", str(prices), "--tau", "4",
        ) == 0
        err = capsys.readouterr().err
        assert "skipped" in err
        fits = json.load(open(os.path.join(outdir, "fits.json")))
        assert [w["window_id"] for w in fits["windows"]] == ["win_0"]
        assert run(
            "corr", "--out", outdir, "--prices", str(prices), "--tau", "4",
            "--strict",
        ) == 1

    def test_missing_source_is_usage_error(self, outdir):
        assert run("corr", "--out", outdir) == 2

    def test_preset_selects_date_range(self, tmp_path):
        outdir = str(tmp_path / "out")
        rows = ["date,A,B,C"]
        rng = np.random.default_rng(4)
        from datetime import date, timedelta

        start = date(2008, 9, 20)
        for d in range(40):
            vals = 100.0 * np.exp(rng.normal(0, 0.02, size=3))
            rows.append(
                (start + timedelta(days=d)).isoformat()
                + ","
                + ",".join(f"{v:.6f}" for v in vals)
            )
        prices = tmp_path / "p.csv"
        prices.write_text("\n".join(rows) + "\n", encoding="utf-8")
        assert run(
            "corr", "--out", outdir, "--prices", str(prices),
            "--preset", "on-crisis-2008",
        ) == 0
        fits = json.load(open(os.path.join(outdir, "fits.json")))
        (win,) = fits["windows"]
        assert win["start_date"] >= "2008-10-01"
        assert win["end_date"] <= "2008-12-10"
        assert run(
            "corr", "--out", outdir, "--prices", str(prices), "--preset", "nope",
        ) == 2


class TestNet:
    def test_landscape_and_order(self, outdir):
        synth_small(outdir, days="13", n="4", rho="0.6")
        assert run("corr", "--out", outdir, "--tau", "12") == 0
        assert run("net", "--out", outdir) == 0
        hist = read_landscape_csv(
            os.path.join(outdir, "windows", "win_0", "landscape.csv")
        )
        assert hist.total == 12  # complete 4-node graph
        assert run("net", "--out", outdir, "--window", "win_0") == 0
        assert run("net", "--out", outdir, "--window", "bogus") == 2


class TestSim:
    def test_summary_and_report(self, outdir):
        # 61 price days -> 60 return rows -> two tau=30 windows
        synth_small(outdir, days="61", n="6", rho="0.6")
        assert run("corr", "--out", outdir, "--tau", "30") == 0
        assert run("sim", "--out", outdir, *SIM_FAST, "--seed", "9") == 0
        wdir = os.path.join(outdir, "windows", "win_0")
        table = read_sweep_csv(os.path.join(wdir, "sweep.csv"))
        assert table["T"].size == 6
        assert np.all(table["replicas"] == 2)
        summary = json.load(open(os.path.join(wdir, "summary.json")))
        assert set(summary) == {
            "window_id", "start_date", "end_date", "t_c", "gaussian_fit",
            "config_hash",
        }
        assert summary["window_id"] == "win_0"
        assert set(summary["gaussian_fit"]) == {"mean", "std"}
        report = json.load(open(os.path.join(outdir, "report.json")))
        fits = json.load(open(os.path.join(outdir, "fits.json")))
        assert len(report["windows"]) == len(fits["windows"]) == 2
        assert [w["window_id"] for w in report["windows"]] == ["win_0", "win_30"]

    def test_failing_window_recorded_and_batch_continues(self, outdir, capsys):
        synth_small(outdir, days="31", n="5", rho="0.5")
        assert run("corr", "--out", outdir, "--tau", "30") == 0
        # sabotage the window: an exactly-zero correlation has no sign
        corr_path = os.path.join(outdir, "windows", "win_0", "corr.csv")
        corr = read_correlation_csv(corr_path)
        corr.values[0, 1] = corr.values[1, 0] = 0.0
        from balancenet.ingest import write_correlation_csv

        write_correlation_csv(corr_path, corr)
        assert run("sim", "--out", outdir, *SIM_FAST) == 0
        assert "failed" in capsys.readouterr().err
        report = json.load(open(os.path.join(outdir, "report.json")))
        (win,) = report["windows"]
        assert win["t_c"] is None
        assert "zero" in win["error"]

    def test_determinism_across_workers_and_runs(self, tmp_path, monkeypatch):
        trees = []
        for tag, threads in (("a", "1"), ("b", "4"), ("c", "1")):
            outdir = str(tmp_path / tag)
            monkeypatch.setenv("BALANCE_THREADS", threads)
            synth_small(outdir, days="31", n="5", rho="0.5", seed="3")
            assert run("corr", "--out", outdir, "--tau", "30") == 0
            assert run("net", "--out", outdir) == 0
            assert run("sim", "--out", outdir, *SIM_FAST, "--seed", "4") == 0
            trees.append(read_bytes_tree(outdir))
        assert trees[0] == trees[1] == trees[2]


class TestMf:
    def test_gaussian_override(self, outdir):
        synth_small(outdir, days="13", n="5", rho="0.5")
        assert run("corr", "--out", outdir, "--tau", "12") == 0
        assert run(
            "mf", "--out", outdir, "--mf-mu", "1.0", "--mf-sigma", "0.0",
            "--mf-t-lo", "1.0", "--mf-t-hi", "50.0",
            "--grid-lo", "0.5", "--grid-hi", "30", "--grid-points", "4",
        ) == 0
        payload = json.load(open(os.path.join(outdir, "windows", "win_0", "meanfield.json")))
        assert payload["params"]["weight_dist"] == {
            "kind": "gaussian", "mu": 1.0, "sigma": 0.0,
        }
        # point-mass weights at mu=1 on 5 nodes: branch vanishes between 1 and 2
        assert payload["t_c"] is not None
        assert 1.0 < payload["t_c"] < 3.0
        curve = payload["branch_curve"]
        assert [pt["T"] for pt in curve] == pytest.approx(
            list(np.geomspace(0.5, 30, 4))
        )

    def test_empirical_weights_and_malformed_window(self, outdir):
        synth_small(outdir, days="13", n="5", rho="0.6")
        assert run("corr", "--out", outdir, "--tau", "12") == 0
        assert run(
            "mf", "--out", outdir, "--grid-points", "3", "--grid-lo", "0.1",
            "--grid-hi", "5.0", "--mf-t-lo", "0.05", "--mf-t-hi", "20.0",
        ) == 0
        payload = json.load(open(os.path.join(outdir, "windows", "win_0", "meanfield.json")))
        assert payload["params"]["weight_dist"]["kind"] == "empirical"
        assert payload["params"]["weight_dist"]["count"] == 10
        assert run("mf", "--out", outdir, "--window", "win_x") == 2

    def test_weak_weights_report_no_transition(self, outdir):
        # rho=0 weights are tiny; the ordered branch is long gone by T=0.5
        synth_small(outdir, days="51", n="10", rho="0.0", seed="2")
        assert run("corr", "--out", outdir, "--tau", "50") == 0
        assert run(
            "mf", "--out", outdir, "--grid-points", "3", "--grid-lo", "0.5",
            "--grid-hi", "5.0", "--mf-t-lo", "0.5", "--mf-t-hi", "20.0",
        ) == 0
        payload = json.load(open(os.path.join(outdir, "windows", "win_0", "meanfield.json")))
        assert payload["t_c"] is None


class TestReport:
    def test_merges_mf_and_prints_table(self, outdir, capsys):
        synth_small(outdir, days="31", n="5", rho="0.6")
        assert run("corr", "--out", outdir, "--tau", "30") == 0
        assert run("sim", "--out", outdir, *SIM_FAST) == 0
        assert run(
            "mf", "--out", outdir, "--grid-points", "3", "--grid-lo", "0.1",
            "--grid-hi", "5.0", "--mf-t-lo", "0.05", "--mf-t-hi", "30.0",
        ) == 0
        assert run("report", "--out", outdir) == 0
        text = capsys.readouterr().out
        assert "win_0" in text
        report = json.load(open(os.path.join(outdir, "report.json")))
        (win,) = report["windows"]
        assert "t_c_mf" in win
        assert win["artifacts"]["sweep"] == os.path.join("windows", "win_0", "sweep.csv")

    def test_nothing_to_report(self, outdir):
        assert run("report", "--out", outdir) == 2


class TestConfigPrecedence:
    def test_file_and_flag_resolution(self, tmp_path, outdir):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "# comment\nrho = 0.4\ndays = 40\nn = 5\nseed = 6\n", encoding="utf-8"
        )
        assert run("synth", "--config", str(cfg), "--out", outdir, "--days", "25") == 0
        table = load_prices(os.path.join(outdir, "prices.csv"))
        assert table.n_days == 25  # CLI beats the file
        assert table.n_assets == 5  # file beats the default (40)

    def test_unknown_key_rejected(self, tmp_path, outdir):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("nonsense = 1\n", encoding="utf-8")
        assert run("synth", "--config", str(cfg), "--out", outdir) == 2

    def test_bad_grid_rejected(self, outdir):
        synth_small(outdir, days="31", n="4")
        assert run("corr", "--out", outdir, "--tau", "30") == 0
        assert run("sim", "--out", outdir, "--grid-lo", "5", "--grid-hi", "1") == 2
        assert run("sim", "--out", outdir, "--grid-points", "2") == 2

    def test_bad_enum_values_are_usage_errors(self, outdir):
        synth_small(outdir, days="31", n="4")
        assert run("corr", "--out", outdir, "--tau", "2") == 2
        assert run("corr", "--out", outdir, "--policy", "bogus") == 2
        assert run("corr", "--out", outdir, "--tau", "30") == 0
        assert run("sim", "--out", outdir, "--init", "bogus") == 2
        assert run("net", "--out", outdir, "--zero-sign", "sometimes") == 2
