import json

import pytest

from capgp.data import cyclic_data
from capgp.models import gpr
from runner import cli
from tools.analysis import utils as au

FAST = ["fit.restarts=1", "fit.max_iters=20"]


@pytest.fixture
def data_csv(tmp_path):
    path = str(tmp_path / "data.csv")
    assert cli.main(["synth", "--out", path, "--seed", "1"]) == cli.EXIT_OK
    return path


@pytest.fixture
def model_json(tmp_path, data_csv):
    path = str(tmp_path / "model.json")
    argv = ["train", "--data", data_csv, "--model", "b", "--train-cases", "1,2,3,4", "--out", path]
    assert cli.main(argv + FAST) == cli.EXIT_OK
    return path


def test_parse_helpers():
    assert cli.parse_ids(" 1, 2 ,3") == ["1", "2", "3"]
    assert cli.parse_horizons("5=14,6=9") == {"5": 14, "6": 9}
    assert cli.parse_lags_range("1..3") == [1, 2, 3]
    assert cli.parse_lags_range("2,4") == [2, 4]


@pytest.mark.parametrize(
    "parse,text", [(cli.parse_horizons, "5:14"), (cli.parse_horizons, "5=0"), (cli.parse_lags_range, "0..2"), (cli.parse_ids, ",")]
)
def test_parse_errors(parse, text):
    with pytest.raises(cli.ValidationError):
        parse(text)


def test_overrides_are_collected():
    args = cli.parse_args(["train", "--data", "d", "--model", "a", "--train-cases", "1", "--out", "m", "--seed", "3", "fit.restarts=1"])
    assert args.overrides == ["fit.restarts=1"]
    assert cli._overrides(args) == ["fit.restarts=1", "experiment.seed=3"]


def test_unknown_flag_is_rejected():
    with pytest.raises(SystemExit):
        cli.parse_args(["synth", "--out", "x.csv", "--bogus"])


def test_synth_writes_the_matrix(data_csv):
    ds = cyclic_data.load_csv(data_csv)
    assert ds.case_ids == ["1", "2", "3", "4", "5", "6"]
    assert len(ds.case("1")) == 16


def test_synth_from_json_config(tmp_path):
    config = tmp_path / "synth.json"
    config.write_text(json.dumps({"noise_std_ah": 0.0, "n_points": 8}), encoding="utf-8")
    out = str(tmp_path / "noiseless.csv")
    assert cli.main(["synth", "--config", str(config), "--out", out]) == cli.EXIT_OK
    ds = cyclic_data.load_csv(out)
    assert len(ds.case("4")) == 8
    assert ds.case("4").capacities[0] == 21.0


def test_train_and_predict(tmp_path, data_csv, model_json):
    model = gpr.load_model(model_json)
    assert (model.label, model.lags) == ("ModelB", 2)

    out = str(tmp_path / "forecast.csv")
    argv = ["predict", "--model", model_json, "--data", data_csv, "--case", "5", "--mode", "multi-step", "--steps", "14"]
    assert cli.main(argv + ["--out", out]) == cli.EXIT_OK
    df = au.read_forecast_csv(out)
    assert list(df["step"]) == list(range(1, 15))
    assert (df["lower95"] <= df["mean_ah"]).all()
    assert (df["mean_ah"] <= df["upper95"]).all()

    out = str(tmp_path / "one_step.csv")
    argv = ["predict", "--model", model_json, "--data", data_csv, "--case", "6", "--mode", "one-step"]
    assert cli.main(argv + ["--out", out]) == cli.EXIT_OK
    assert len(au.read_forecast_csv(out)) == 14


def test_evaluate(tmp_path, data_csv, model_json):
    out = str(tmp_path / "eval.json")
    argv = ["evaluate", "--model", model_json, "--data", data_csv, "--cases", "5,6", "--horizons", "5=14,6=9"]
    assert cli.main(argv + ["--out", out]) == cli.EXIT_OK
    assert [r.phase for r in au.read_reports(out)] == ["train", "one_step", "multi_step"]


def test_compare(tmp_path, data_csv):
    out = str(tmp_path / "compare.json")
    argv = ["compare", "--data", data_csv, "--train-cases", "1,2,3,4", "--test-cases", "5,6", "--horizons", "5=14,6=9"]
    assert cli.main(argv + ["--seed", "0", "--out", out] + FAST) == cli.EXIT_OK
    reports = au.read_reports(out)
    assert len(reports) == 9
    assert [r.model_label for r in reports[::3]] == ["SEGM", "ModelA", "ModelB"]


def test_lag_sweep(tmp_path, data_csv):
    out = str(tmp_path / "lags.json")
    argv = ["lag-sweep", "--data", data_csv, "--lags", "1..2", "--out", out]
    assert cli.main(argv + FAST) == cli.EXIT_OK
    assert [r.lags for r in au.read_reports(out)] == [1, 2]


def test_kfold(tmp_path, data_csv):
    out = str(tmp_path / "kfold.json")
    argv = ["kfold", "--data", data_csv, "--model", "segm", "--train-cases", "1", "--folds", "3", "--out", out]
    assert cli.main(argv + FAST) == cli.EXIT_OK
    assert len(au.read_reports(out)) == 3


def test_exit_code_for_unknown_case(tmp_path, data_csv):
    argv = ["train", "--data", data_csv, "--model", "a", "--train-cases", "1,9", "--out", str(tmp_path / "m.json")]
    assert cli.main(argv + FAST) == cli.EXIT_VALIDATION


def test_exit_code_for_bad_override(tmp_path, data_csv):
    argv = ["train", "--data", data_csv, "--model", "a", "--train-cases", "1", "--out", str(tmp_path / "m.json")]
    assert cli.main(argv + ["fit.not_a_field=3"]) == cli.EXIT_VALIDATION


def test_exit_code_for_missing_file(tmp_path):
    argv = ["train", "--data", str(tmp_path / "missing.csv"), "--model", "a", "--train-cases", "1"]
    assert cli.main(argv + ["--out", str(tmp_path / "m.json")] + FAST) == cli.EXIT_IO


def test_exit_code_for_tampered_model(tmp_path, data_csv, model_json):
    with open(model_json) as f:
        doc = json.load(f)
    doc["nll"] += 10.0
    with open(model_json, "w") as f:
        json.dump(doc, f)
    argv = ["predict", "--model", model_json, "--data", data_csv, "--case", "5", "--mode", "multi-step"]
    assert cli.main(argv + ["--out", str(tmp_path / "f.csv")]) == cli.EXIT_NUMERICAL
