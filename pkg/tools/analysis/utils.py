"""Report and forecast file I/O."""
import os
from typing import List, Sequence

import pandas as pd

from capgp.data.utils import read_json, write_json
from capgp.models.forecaster import ForecastPoint
from capgp.utils.errors import ValidationError
from tools.analysis.metrics import EvalReport

FORECAST_COLUMNS = ["step", "cycle_index", "mean_ah", "variance_ah2", "lower95", "upper95"]


def write_reports(reports: Sequence[EvalReport], path: str) -> None:
    write_json([r.to_dict() for r in reports], path)


def read_reports(path: str) -> List[EvalReport]:
    doc = read_json(path)
    if not isinstance(doc, list):
        raise ValidationError(f"{path}: expected a JSON list of reports")
    return [EvalReport.from_dict(d) for d in doc]


def forecast_frame(points: Sequence[ForecastPoint]) -> pd.DataFrame:
    rows = [
        {
            "step": p.step,
            "cycle_index": p.cycle_index,
            "mean_ah": p.mean,
            "variance_ah2": p.variance,
            "lower95": p.lower95,
            "upper95": p.upper95,
        }
        for p in points
    ]
    return pd.DataFrame(rows, columns=FORECAST_COLUMNS)


def write_forecast_csv(points: Sequence[ForecastPoint], path: str) -> None:
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    forecast_frame(points).to_csv(path, index=False, encoding="utf-8")


def read_forecast_csv(path: str) -> pd.DataFrame:
    df = pd.read_csv(path, encoding="utf-8")
    missing = [c for c in FORECAST_COLUMNS if c not in df.columns]
    if missing:
        raise ValidationError(f"{path}: missing forecast columns {missing}")
    return df
