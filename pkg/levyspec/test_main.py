import json

import pandas as pd
import pytest

import main
from config import config
from errors import NumericalError
from models import CalibrationReport, RunManifest, RunTiming


@pytest.fixture
def merton_json(tmp_path):
    path = tmp_path / "merton.json"
    path.write_text(json.dumps({"model": "merton", "sigma": 0.1, "lambda": 5.0, "eta": -0.1, "v": 0.2}))
    return str(path)


@pytest.fixture
def no_log_file(monkeypatch):
    monkeypatch.setattr(config.logging, "log_file", None)


def run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    return main.main(["--output-dir", str(out), *argv]), out


@pytest.mark.parametrize("argv", [["price", "--bogus"], [], ["calibrate", "--model", "xx", "--quotes", "q.csv"],
                                  ["calibrate", "--model", "fa", "--quotes", "q.csv", "--cutoff", "-3"]])
def test_argument_errors_exit_with_usage_code(argv):
    with pytest.raises(SystemExit) as exc:
        main.main(argv)
    assert exc.value.code == main.EXIT_USAGE


def test_price_writes_curve_and_manifest(tmp_path, merton_json, no_log_file):
    code, out = run(tmp_path, "price", "--model", merton_json, "--T", "0.25", "--r", "0.06")
    assert code == 0
    frame = pd.read_csv(out / "prices.csv")
    assert list(frame.columns) == ["x", "O", "K"]
    assert (frame["O"] >= -1e-12).all()
    manifest = RunManifest.parse_file(out / "manifest.json")
    assert manifest.command == "price"
    assert len(manifest.config_hash) == 64
    assert manifest.inputs == [merton_json]
    assert manifest.extra["exit_code"] == 0


def test_simulation_is_reproducible(tmp_path, merton_json, no_log_file):
    first = run(tmp_path, "--seed", "3", "simulate", "--model", merton_json, name="a")[1]
    second = run(tmp_path, "--seed", "3", "simulate", "--model", merton_json, name="b")[1]
    other = run(tmp_path, "--seed", "4", "simulate", "--model", merton_json, name="c")[1]
    assert (first / "quotes.csv").read_bytes() == (second / "quotes.csv").read_bytes()
    assert (first / "quotes.csv").read_bytes() != (other / "quotes.csv").read_bytes()


def test_environment_seed_overrides_flag(tmp_path, merton_json, no_log_file, monkeypatch):
    monkeypatch.setattr(config.run, "seed", 42)
    first = run(tmp_path, "--seed", "1", "simulate", "--model", merton_json, name="a")[1]
    second = run(tmp_path, "--seed", "2", "simulate", "--model", merton_json, name="b")[1]
    assert (first / "quotes.csv").read_bytes() == (second / "quotes.csv").read_bytes()
    assert RunManifest.parse_file(first / "manifest.json").seed == 42


def test_missing_quotes_is_a_data_error(tmp_path, no_log_file):
    code, out = run(tmp_path, "calibrate", "--model", "fa", "--quotes", str(tmp_path / "missing.csv"),
                    "--cutoff", "20")
    assert code == 1
    assert RunManifest.parse_file(out / "manifest.json").extra["exit_code"] == 1


def test_numerical_failure_exit_code(tmp_path, merton_json, no_log_file, monkeypatch):
    def failing(args, ctx):
        raise NumericalError("aliasing")

    monkeypatch.setattr(main, "cmd_price", failing)
    code, _ = run(tmp_path, "price", "--model", merton_json, "--T", "0.25", "--r", "0.06")
    assert code == 2


def test_calibrate_then_confidence(tmp_path, merton_json, no_log_file):
    quotes = run(tmp_path, "--seed", "8", "simulate", "--model", merton_json, name="sim")[1] / "quotes.csv"
    cutoffs = json.dumps({"sigma2": 20, "gamma": 20, "lambda": 16, "nu": 12})
    code, out = run(tmp_path, "calibrate", "--model", "fa", "--quotes", str(quotes), "--cutoff", cutoffs,
                    name="cal")
    assert code == 0
    report = CalibrationReport.parse_file(out / "report.json")
    assert report.cutoff_policy == "fixed"
    assert report.cutoffs["nu"] == 12.0
    assert report.n_quotes == 100
    assert set(report.estimates) >= {"sigma2", "gamma", "lambda"}

    code, conf = run(tmp_path, "confidence", "--report", str(out / "report.json"), "--quotes", str(quotes),
                     "--band-points", "5", name="conf")
    assert code == 0
    band = pd.read_csv(conf / "band.csv")
    assert len(band) == 5
    assert (band["lower"] <= band["upper"]).all()
    intervals = json.loads((conf / "intervals.json").read_text())
    assert set(intervals["sigma2"]) == {"0.5", "0.05"}
    estimate = pd.read_csv(out / "estimate.csv")
    assert list(estimate.columns) == ["x", "nu_raw", "nu_corrected"]


def test_calibrate_with_oracle_cutoffs(tmp_path, merton_json, no_log_file):
    quotes = run(tmp_path, "--seed", "8", "simulate", "--model", merton_json, name="sim")[1] / "quotes.csv"
    code, out = run(tmp_path, "calibrate", "--model", "fa", "--quotes", str(quotes), "--cutoff", "oracle",
                    "--truth", merton_json, name="cal")
    assert code == 0
    report = CalibrationReport.parse_file(out / "report.json")
    assert report.cutoff_policy == "oracle"
    assert set(report.cutoffs) == {"sigma2", "gamma", "lambda", "nu"}
    assert merton_json in RunManifest.parse_file(out / "manifest.json").inputs


def test_oracle_cutoffs_need_truth(tmp_path, merton_json, no_log_file):
    quotes = run(tmp_path, "--seed", "8", "simulate", "--model", merton_json, name="sim")[1] / "quotes.csv"
    code, out = run(tmp_path, "calibrate", "--model", "fa", "--quotes", str(quotes), "--cutoff", "oracle",
                    name="cal")
    assert code == 1
    assert not (out / "report.json").exists()


def test_rerun_writes_identical_manifest(tmp_path, merton_json, no_log_file):
    out = run(tmp_path, "--seed", "3", "simulate", "--model", merton_json)[1]
    first = (out / "manifest.json").read_bytes()
    run(tmp_path, "--seed", "3", "simulate", "--model", merton_json)
    assert (out / "manifest.json").read_bytes() == first
    timing = RunTiming.parse_file(out / "timing.json")
    assert timing.command == "simulate" and timing.wall_time_seconds >= 0.0
