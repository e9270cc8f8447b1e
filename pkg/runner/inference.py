"""Script for forecasting capacity with a fitted model.

Sample command:
> python runner/inference.py +model_path=model.json +case=5 experiment.data_path=data.csv
"""

import dataclasses
import logging
import os
from typing import List, Optional

import hydra
from omegaconf import DictConfig

from capgp.data.cyclic_data import CyclicCase
from capgp.models import forecaster as fc
from capgp.models import gpr
from capgp.utils.errors import TooShort, ValidationError
from runner import train
from tools.analysis import utils as au

MODES = ("one-step", "multi-step")


class Predictor:
    def __init__(self, model: gpr.TrainedModel, observation_noise: bool = False, propagate: bool = True):
        """Initialize predictor.

        Args:
            model: fitted model, carrying its lag count and input scaler.
            observation_noise: add sigma_n**2 to every reported variance.
            propagate: propagate window uncertainty in multi-step mode.
        """
        self._log = logging.getLogger(__name__)
        self._model = model
        self._observation_noise = observation_noise
        self._propagate = propagate

    @classmethod
    def from_file(cls, model_path: str, **kwargs) -> "Predictor":
        model = gpr.load_model(model_path)
        return cls(model, **kwargs)

    @property
    def model(self) -> gpr.TrainedModel:
        return self._model

    @property
    def lags(self) -> int:
        return fc.model_lags(self._model)

    def one_step_series(self, case: CyclicCase, steps: Optional[int] = None) -> List[fc.ForecastPoint]:
        """One-step predictions from measured windows over the case's future points.

        Row j predicts the point after the measured window ending at j + lags - 1.
        """
        available = len(case) - self.lags
        if available < 1:
            raise TooShort(f"case {case.case_id} has {len(case)} points, needs more than {self.lags}")
        steps = available if steps is None else steps
        if steps > available:
            self._log.warning(f"Case {case.case_id}: {steps} steps exceed the {available} measured windows; clamping")
            steps = available
        capacities, cycles = case.capacities, case.cycles
        points = []
        for j in range(steps):
            t = self.lags + j
            point = fc.one_step(
                self._model,
                capacities[j:t],
                case.temperature_c,
                case.dod_pct,
                observation_noise=self._observation_noise,
                cycle_index=cycles[t],
            )
            points.append(dataclasses.replace(point, step=j + 1))
        return points

    def forecast(self, case: CyclicCase, mode: str, steps: Optional[int] = None) -> List[fc.ForecastPoint]:
        if mode not in MODES:
            raise ValidationError(f"unknown mode '{mode}', expected one of {MODES}")
        if steps is not None and steps < 1:
            raise ValidationError(f"steps must be >= 1, got {steps}")
        self._log.info(f"Forecasting case {case.case_id} ({mode}, lags {self.lags})")
        if mode == "one-step":
            return self.one_step_series(case, steps)
        points, _ = fc.forecast_case(
            self._model, case, steps, observation_noise=self._observation_noise, propagate=self._propagate
        )
        return points

    def write(self, points: List[fc.ForecastPoint], path: str) -> None:
        au.write_forecast_csv(points, path)
        self._log.info(f"Wrote {len(points)} forecast rows to {path}")


@hydra.main(version_base=None, config_path="config/", config_name="base")
def run(conf: DictConfig) -> None:
    exp = train.Experiment(conf=conf)
    ds = exp.load_dataset()
    predictor = Predictor.from_file(
        conf.model_path,
        observation_noise=conf.experiment.observation_noise,
        propagate=conf.experiment.propagate,
    )
    case = ds.case(conf.case)
    points = predictor.forecast(case, "multi-step", conf.experiment.horizons.get(str(conf.case)))
    predictor.write(points, os.path.join(conf.experiment.out_dir, f"forecast_case{case.case_id}.csv"))


if __name__ == "__main__":
    run()
