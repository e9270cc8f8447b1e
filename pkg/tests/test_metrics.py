import json

import numpy as np
import pytest

from capgp.models.forecaster import ForecastPoint
from capgp.utils.errors import DimensionMismatch, EmptyInput, ValidationError
from tools.analysis import metrics
from tools.analysis import utils as au


def test_perfect_prediction():
    assert metrics.Indicators.compute([20.0, 19.0, 18.0], [20.0, 19.0, 18.0]) == (0.0, 0.0, 0.0)


def test_indicator_examples():
    ind = metrics.Indicators.compute([20.0, 19.0], [19.0, 19.0])
    assert ind.me_ah == 1.0
    assert ind.mae_ah == 0.5
    assert ind.rmse_ah == pytest.approx(0.7071, abs=1e-4)
    assert metrics.Indicators.compute([10.0], [12.0]) == (2.0, 2.0, 2.0)


def test_metric_errors():
    with pytest.raises(DimensionMismatch):
        metrics.rmse([1.0, 2.0], [1.0])
    with pytest.raises(EmptyInput):
        metrics.mae([], [])


def test_indicator_ordering(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 20))
        a, p = rng.normal(size=n), rng.normal(size=n)
        mae, rmse, me = metrics.mae(a, p), metrics.rmse(a, p), metrics.me(a, p)
        assert 0.0 <= mae <= rmse + 1e-12
        assert rmse <= me + 1e-12


def test_report_from_predictions():
    report = metrics.EvalReport.from_predictions(
        "ModelB", "multi_step", {"5": [20.0, 19.0], "6": [18.0]}, {"5": [20.0, 18.0], "6": [18.5]}, lags=2
    )
    assert report.per_case["5"] == (1.0, 0.5, pytest.approx(np.sqrt(0.5)))
    assert report.per_case["6"] == (0.5, 0.5, 0.5)
    assert report.aggregate.me_ah == 1.0
    assert report.aggregate.mae_ah == pytest.approx(0.5)


def test_report_round_trip():
    report = metrics.EvalReport.from_predictions("SEGM", "train", {"a": [1.0, 2.0]}, {"a": [1.5, 2.0]})
    doc = json.loads(json.dumps(report.to_dict()))
    assert metrics.EvalReport.from_dict(doc) == report


@pytest.mark.parametrize(
    "label,phase,per_case",
    [
        ("ModelC", "train", {"a": (1.0, 0.5, 0.5)}),
        ("SEGM", "forecast", {"a": (1.0, 0.5, 0.5)}),
        ("SEGM", "train", {"a": (0.5, 1.0, 0.5)}),
    ],
)
def test_invalid_reports(label, phase, per_case):
    with pytest.raises(ValidationError):
        metrics.EvalReport(label, phase, per_case, (1.0, 0.5, 0.5))


def test_report_files(tmp_path):
    reports = [
        metrics.EvalReport.from_predictions(label, "one_step", {"5": [20.0]}, {"5": [19.9]})
        for label in metrics.MODEL_LABELS
    ]
    path = str(tmp_path / "reports.json")
    au.write_reports(reports, path)
    assert au.read_reports(path) == reports


def test_forecast_csv(tmp_path):
    points = [ForecastPoint.from_moments(i + 1, 20.0 - 0.1 * i, 0.01 * (i + 1), 100.0 * (i + 2)) for i in range(3)]
    path = str(tmp_path / "out" / "forecast.csv")
    au.write_forecast_csv(points, path)
    df = au.read_forecast_csv(path)
    assert list(df.columns) == au.FORECAST_COLUMNS
    np.testing.assert_allclose(df["mean_ah"], [p.mean for p in points])
    np.testing.assert_array_equal(df["step"], [1, 2, 3])
