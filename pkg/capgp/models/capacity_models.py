"""The three capacity models: SEGM, Model A (ARD-SE) and Model B (Arrhenius x polynomial x SE).

Each model is a kernel plus an input policy. SEGM and Model A see features
standardized with training statistics; Model B sees physical units (Ah,
Kelvin, DOD fraction) because its factors encode physical structure.
"""

import logging
from typing import Dict, Optional

import numpy as np

from capgp.models import gpr
from capgp.models import kernels as ku
from capgp.models.kernels import HyperParamSet, KernelNode
from capgp.utils.errors import ValidationError

logger = logging.getLogger(__name__)

SEGM = "SEGM"
MODEL_A = "ModelA"
MODEL_B = "ModelB"
MODEL_LABELS = (SEGM, MODEL_A, MODEL_B)

# Short names accepted on the command line.
MODEL_ALIASES = {"segm": SEGM, "a": MODEL_A, "b": MODEL_B}

# Published two-lag hyperparameters, for reference and tests. Units follow
# the source model, so they are not drop-in starting points for fit.
REFERENCE_HYPERPARAMS: Dict[str, Dict[str, float]] = {
    SEGM: {"sigma_f": 0.894, "sigma_l": 2.036},
    MODEL_A: {"sigma_f": 0.826, "sigma_1": 2.489, "sigma_2": 1.430, "sigma_T": 1.813, "sigma_DOD": 2.391},
    MODEL_B: {"l_f": 0.516, "sigma_1": 5.282, "sigma_2": 3.351, "sigma_T": 3.964, "c_D": 4.520, "d_D": 1.323},
}


def resolve_label(name: str) -> str:
    """Map a CLI alias or a label (any case) to a model label."""
    key = str(name).strip()
    if key.lower() in MODEL_ALIASES:
        return MODEL_ALIASES[key.lower()]
    for label in MODEL_LABELS:
        if key.lower() == label.lower():
            return label
    raise ValidationError(f"unknown model '{name}', expected one of {sorted(MODEL_ALIASES)} or {list(MODEL_LABELS)}")


def build_kernel(label: str, lags: int) -> KernelNode:
    label = resolve_label(label)
    if lags < 1:
        raise ValidationError(f"lags must be >= 1, got {lags}")
    if label == SEGM:
        return ku.segm_kernel()
    if label == MODEL_A:
        return ku.model_a_kernel(lags)
    return ku.model_b_kernel(lags)


def standardizes(label: str) -> bool:
    return resolve_label(label) != MODEL_B


def reference_params(label: str, sigma_n: float = 0.05) -> HyperParamSet:
    """Published hyperparameters for the two-lag model, with the given noise level."""
    label = resolve_label(label)
    kernel = build_kernel(label, 2)
    bounds = gpr.kernel_bounds(kernel)
    values = {name: REFERENCE_HYPERPARAMS[label][name] for name in kernel.param_names()}
    values[gpr.NOISE] = sigma_n
    # Widen bounds that the published values fall outside of.
    bounds = {n: (min(lo, values[n]), max(hi, values[n])) for n, (lo, hi) in bounds.items()}
    return HyperParamSet.from_values(values, bounds)


def fit_capacity_model(
    label: str,
    X,
    targets,
    lags: int,
    cfg: gpr.FitConfig = gpr.FitConfig(),
    init: Optional[HyperParamSet] = None,
) -> gpr.TrainedModel:
    """Fit one capacity model on physical input rows and raw capacity targets."""
    label = resolve_label(label)
    X = ku.as_matrix(X)
    if X.shape[1] != lags + 2:
        raise ValidationError(f"{lags} lags need {lags + 2} input columns, got {X.shape[1]}")
    kernel = build_kernel(label, lags)
    scaler = gpr.InputScaler.fit(X) if standardizes(label) else None
    inputs = X if scaler is None else scaler.transform(X)
    data = gpr.TrainingSet.from_targets(inputs, np.asarray(targets, dtype=float))
    logger.info(f"Fitting {label} on {data.n} pairs with {lags} lags")
    return gpr.fit(kernel, data, cfg, init=init, scaler=scaler, label=label, lags=lags)
