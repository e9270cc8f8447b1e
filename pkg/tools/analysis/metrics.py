""" Metrics. """
import dataclasses
from typing import Dict, Mapping, NamedTuple, Optional

import numpy as np

from capgp.utils.errors import DimensionMismatch, EmptyInput, ValidationError

PHASES = ("train", "one_step", "multi_step")
MODEL_LABELS = ("SEGM", "ModelA", "ModelB")
# Slack for the max-bounds-mean checks on stored reports.
REPORT_TOL = 1e-12


def _deviations(actual, predicted) -> np.ndarray:
    actual = np.asarray(actual, dtype=float).reshape(-1)
    predicted = np.asarray(predicted, dtype=float).reshape(-1)
    if actual.shape != predicted.shape:
        raise DimensionMismatch(f"{actual.shape[0]} actual values but {predicted.shape[0]} predictions")
    if actual.size == 0:
        raise EmptyInput("metrics need at least one value")
    return np.abs(actual - predicted)


def mae(actual, predicted) -> float:
    """Mean absolute error."""
    return float(np.mean(_deviations(actual, predicted)))


def me(actual, predicted) -> float:
    """Maximum absolute error."""
    return float(np.max(_deviations(actual, predicted)))


def rmse(actual, predicted) -> float:
    """Root mean squared error."""
    return float(np.sqrt(np.mean(_deviations(actual, predicted) ** 2)))


class Indicators(NamedTuple):
    me_ah: float
    mae_ah: float
    rmse_ah: float

    @classmethod
    def compute(cls, actual, predicted) -> "Indicators":
        return cls(me(actual, predicted), mae(actual, predicted), rmse(actual, predicted))

    def check(self, where: str) -> None:
        if not (self.mae_ah <= self.me_ah + REPORT_TOL and self.rmse_ah <= self.me_ah + REPORT_TOL):
            raise ValidationError(f"{where}: mae and rmse must not exceed me, got {tuple(self)}")


@dataclasses.dataclass(frozen=True)
class EvalReport:
    model_label: str
    phase: str
    per_case: Dict[str, Indicators]
    aggregate: Indicators
    lags: Optional[int] = None

    def __post_init__(self):
        if self.model_label not in MODEL_LABELS:
            raise ValidationError(f"unknown model label '{self.model_label}'")
        if self.phase not in PHASES:
            raise ValidationError(f"unknown phase '{self.phase}', expected one of {PHASES}")
        per_case = {str(k): Indicators(*v) for k, v in self.per_case.items()}
        object.__setattr__(self, "per_case", per_case)
        object.__setattr__(self, "aggregate", Indicators(*self.aggregate))
        for case_id, ind in per_case.items():
            ind.check(f"{self.model_label}/{self.phase}/{case_id}")
        self.aggregate.check(f"{self.model_label}/{self.phase}/aggregate")

    @classmethod
    def from_predictions(
        cls, model_label: str, phase: str, actual: Mapping, predicted: Mapping, lags: Optional[int] = None
    ) -> "EvalReport":
        """Per-case indicators plus indicators over the pooled predictions."""
        keys = list(actual)
        if not keys:
            raise EmptyInput("no cases to evaluate")
        per_case = {k: Indicators.compute(actual[k], predicted[k]) for k in keys}
        pooled_actual = np.concatenate([np.atleast_1d(actual[k]) for k in keys])
        pooled_predicted = np.concatenate([np.atleast_1d(predicted[k]) for k in keys])
        return cls(model_label, phase, per_case, Indicators.compute(pooled_actual, pooled_predicted), lags)

    def to_dict(self) -> dict:
        return {
            "model_label": self.model_label,
            "phase": self.phase,
            "per_case": {k: v._asdict() for k, v in self.per_case.items()},
            "aggregate": self.aggregate._asdict(),
            "lags": self.lags,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "EvalReport":
        try:
            return cls(
                model_label=doc["model_label"],
                phase=doc["phase"],
                per_case={k: Indicators(**v) for k, v in doc["per_case"].items()},
                aggregate=Indicators(**doc["aggregate"]),
                lags=doc.get("lags"),
            )
        except (KeyError, TypeError) as e:
            raise ValidationError(f"malformed report document: {e}") from e
