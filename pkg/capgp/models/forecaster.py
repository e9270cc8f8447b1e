"""Lagged capacity pairs, one-step prediction and recursive multi-step forecasts.

A model input is a window of the last ``lags`` capacities plus the case's
constant temperature and DOD; the target is the next capacity. Multi-step
forecasts feed each predicted mean back into the window and propagate the
window's uncertainty to first order through the gradient of the posterior
mean.
"""

import dataclasses
import logging
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import Field
from pydantic.dataclasses import dataclass

from capgp.data.cyclic_data import CyclicCase
from capgp.models import gpr
from capgp.models.kernels import FeatureVector
from capgp.utils.errors import DimensionMismatch, TooShort, ValidationError

logger = logging.getLogger(__name__)

Z95 = 1.96


@dataclass(frozen=True)
class LagConfig:
    lags: int = Field(default=2, ge=1)


@dataclasses.dataclass(frozen=True)
class ForecastPoint:
    step: int
    mean: float
    variance: float
    lower95: float
    upper95: float
    cycle_index: Optional[float] = None

    def __post_init__(self):
        if not self.variance >= 0:
            raise ValidationError(f"forecast variance must be non-negative, got {self.variance}")

    @classmethod
    def from_moments(cls, step: int, mean: float, variance: float, cycle_index: Optional[float] = None):
        half = Z95 * float(np.sqrt(variance))
        return cls(
            step=int(step),
            mean=float(mean),
            variance=float(variance),
            lower95=float(mean) - half,
            upper95=float(mean) + half,
            cycle_index=None if cycle_index is None else float(cycle_index),
        )


def build_pairs(case: CyclicCase, cfg: LagConfig = LagConfig()) -> List[Tuple[FeatureVector, float]]:
    """Sliding windows over one case: lags capacities in, the next capacity out."""
    capacities = case.capacities
    if len(capacities) <= cfg.lags:
        raise TooShort(f"case {case.case_id} has {len(capacities)} points, needs more than {cfg.lags} for {cfg.lags} lags")
    pairs = []
    for t in range(cfg.lags, len(capacities)):
        x = FeatureVector(tuple(capacities[t - cfg.lags : t]), case.temperature_k, case.dod_frac)
        pairs.append((x, float(capacities[t])))
    return pairs


def pooled_pairs(cases: Sequence[CyclicCase], cfg: LagConfig = LagConfig()) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """Pairs of several cases stacked into (X, y), with the case id of each row.

    Windows are built per case, so none spans two cases.
    """
    rows, targets, owners = [], [], []
    for case in cases:
        for x, y in build_pairs(case, cfg):
            rows.append(x.to_array())
            targets.append(y)
            owners.append(case.case_id)
    if not rows:
        raise TooShort("no training pairs")
    return np.stack(rows), np.asarray(targets), owners


def model_lags(model: gpr.TrainedModel) -> int:
    return model.lags if model.lags is not None else model.training.dim - 2


def _window_feature(model: gpr.TrainedModel, window, temperature_c: float, dod_pct: float) -> FeatureVector:
    window = tuple(float(c) for c in np.atleast_1d(window))
    if len(window) != model_lags(model):
        raise DimensionMismatch(f"model uses {model_lags(model)} lags, got a window of {len(window)}")
    return FeatureVector.from_physical(window, temperature_c, dod_pct)


def one_step(
    model: gpr.TrainedModel,
    window: Sequence[float],
    temperature_c: float,
    dod_pct: float,
    observation_noise: bool = False,
    cycle_index: Optional[float] = None,
) -> ForecastPoint:
    """Predict the capacity following window (oldest first)."""
    x = _window_feature(model, window, temperature_c, dod_pct)
    mean, cov = gpr.predict(model, [x], observation_noise=observation_noise)
    return ForecastPoint.from_moments(1, mean[0], cov.entries[0, 0], cycle_index)


def mean_gradient(model: gpr.TrainedModel, x: FeatureVector) -> np.ndarray:
    """d(posterior mean) / d(capacity lags) at x, in Ah per Ah."""
    return gpr.posterior_mean_gradient(model, x.to_array())[: x.lags]


def _seed_covariance(model: gpr.TrainedModel, seed_variance, lags: int) -> np.ndarray:
    if seed_variance is None:
        return np.eye(lags) * model.sigma_n**2
    variances = np.asarray(seed_variance, dtype=float)
    if variances.ndim > 0 and variances.shape != (lags,):
        raise DimensionMismatch(f"{variances.size} seed variances for {lags} lags")
    variances = np.broadcast_to(variances, (lags,))
    if np.any(~np.isfinite(variances)) or np.any(variances < 0):
        raise ValidationError(f"seed variances must be finite and non-negative, got {variances}")
    return np.diag(variances)


def multi_step(
    model: gpr.TrainedModel,
    seed_window: Sequence[float],
    temperature_c: float,
    dod_pct: float,
    k: int,
    observation_noise: bool = False,
    propagate: bool = True,
    cycle_indices: Optional[Sequence[float]] = None,
    seed_variance: Optional[Union[float, Sequence[float]]] = None,
) -> List[ForecastPoint]:
    """Recursive forecast of k steps.

    The window's input covariance S (lags x lags) starts as the measurement
    variance of the seed capacities (seed_variance, or sigma_n**2 each). At
    each step after the first, with mean gradient g, the latent variance is
    v_gp + g^T S g, floored at the previous step's latent variance. S is then
    shifted by one lag and bordered with S g and the new variance. Step 1 is
    one_step. With propagate=False the raw GP variance at the mean input is
    reported.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if cycle_indices is not None and len(cycle_indices) < k:
        raise DimensionMismatch(f"{len(cycle_indices)} cycle indices for {k} steps")
    lags = model_lags(model)
    window = np.array(seed_window, dtype=float)
    cov = _seed_covariance(model, seed_variance, lags) if propagate else np.zeros((lags, lags))
    noise_var = model.sigma_n**2 if observation_noise else 0.0
    previous = 0.0
    points: List[ForecastPoint] = []
    for step in range(1, k + 1):
        cycle_index = None if cycle_indices is None else cycle_indices[step - 1]
        x = _window_feature(model, window, temperature_c, dod_pct)
        mean, latent = gpr.predict(model, [x])
        latent_var = float(latent.entries[0, 0])
        coupling = np.zeros(lags)
        if step == 1:
            point = one_step(model, window, temperature_c, dod_pct, observation_noise, cycle_index)
        else:
            if propagate:
                g = mean_gradient(model, x)
                coupling = cov @ g
                # a recursive forecast is never more certain than the one it extends
                latent_var = max(latent_var + max(float(g @ coupling), 0.0), previous)
            point = ForecastPoint.from_moments(step, mean[0], latent_var + noise_var, cycle_index)
        points.append(point)
        previous = latent_var
        if lags > 1:
            shifted = np.zeros((lags, lags))
            shifted[:-1, :-1] = cov[1:, 1:]
            shifted[:-1, -1] = coupling[1:]
            shifted[-1, :-1] = coupling[1:]
            cov = shifted
        cov[-1, -1] = latent_var
        window = np.append(window[1:], point.mean)
    return points


def future_cycles(cycles: Sequence[float], start: int, k: int) -> np.ndarray:
    """Cycle indices of positions start .. start + k - 1.

    Positions past the last measurement continue at the last observed spacing.
    """
    cycles = np.asarray(cycles, dtype=float)
    spacing = cycles[-1] - cycles[-2] if len(cycles) >= 2 else 1.0
    out = []
    for pos in range(start, start + k):
        out.append(cycles[pos] if pos < len(cycles) else cycles[-1] + spacing * (pos - len(cycles) + 1))
    return np.asarray(out)


def forecast_case(
    model: gpr.TrainedModel,
    case: CyclicCase,
    k: Optional[int] = None,
    observation_noise: bool = False,
    propagate: bool = True,
) -> Tuple[List[ForecastPoint], np.ndarray]:
    """Seed with the case's first capacities and forecast its measured future.

    Seed capacities with a recorded std_ah contribute its square as their
    variance; the others use sigma_n**2. Returns the forecast and the measured
    capacities it should be compared with. A horizon longer than the measured
    future is clamped.
    """
    lags = model_lags(model)
    available = len(case) - lags
    if available < 1:
        raise TooShort(f"case {case.case_id} has {len(case)} points, needs more than {lags} for {lags} lags")
    if k is None:
        k = available
    elif k > available:
        logger.warning(f"Case {case.case_id}: horizon {k} exceeds the {available} measured points; clamping")
        k = available
    capacities = case.capacities
    seed_variance = [model.sigma_n**2 if p.std_ah is None else p.std_ah**2 for p in case.points[:lags]]
    points = multi_step(
        model,
        capacities[:lags],
        case.temperature_c,
        case.dod_pct,
        k,
        observation_noise=observation_noise,
        propagate=propagate,
        cycle_indices=future_cycles(case.cycles, lags, k),
        seed_variance=seed_variance,
    )
    return points, capacities[lags : lags + k]
