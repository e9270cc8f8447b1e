"""Synthetic six-case cyclic-ageing datasets.

Capacity follows an Arrhenius-accelerated power law in throughput:

    C(n) = c0 - a * exp(-E_A / (R * T_K)) * dod_frac**beta * n**z + noise

The test matrix pairs three DOD levels with two temperatures, so the 80 % DOD
cases sit strictly between the 50 % and 100 % training extremes.
"""

import logging
import zlib
from typing import Optional, Tuple

import numpy as np
from pydantic import Field
from pydantic.dataclasses import dataclass

from capgp.data.cyclic_data import NOMINAL_CAPACITY_AH, CapacityPoint, CyclicCase, Dataset
from capgp.data.utils import dod_to_fraction, read_json, to_kelvin
from capgp.utils.errors import ValidationError

logger = logging.getLogger(__name__)

# (case_id, dod_pct, temperature_c)
TEST_MATRIX: Tuple[Tuple[str, float, float], ...] = (
    ("1", 100.0, 35.0),
    ("2", 50.0, 45.0),
    ("3", 50.0, 35.0),
    ("4", 100.0, 45.0),
    ("5", 80.0, 35.0),
    ("6", 80.0, 45.0),
)
TRAIN_CASES = ("1", "2", "3", "4")
TEST_CASES = ("5", "6")


@dataclass(frozen=True)
class SynthConfig:
    c0_ah: float = Field(default=NOMINAL_CAPACITY_AH, gt=0)
    a: float = Field(default=18750.0, gt=0)  # pre-exponential fade factor, Ah / FEC**z
    ea_j_mol: float = Field(default=31500.0, gt=0)
    r_j_molk: float = Field(default=8.314, gt=0)
    beta: float = Field(default=1.5, ge=0)  # DOD exponent; 0 decouples DOD from fade
    z: float = Field(default=0.5, gt=0, le=1.5)
    noise_std_ah: float = Field(default=0.05, ge=0)
    seed: int = 0
    n_points: int = Field(default=16, ge=3)
    cycles_per_point: float = Field(default=100.0, gt=0)


def load_synth_config(path: str, **overrides) -> SynthConfig:
    """Read a JSON document whose keys mirror SynthConfig field names."""
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: synth config must be a JSON object")
    unknown = sorted(set(doc) - set(SynthConfig.__dataclass_fields__))
    if unknown:
        raise ValidationError(f"{path}: unknown synth config fields {unknown}")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return SynthConfig(**doc)


def fade_rate(cfg: SynthConfig, temperature_c: float, dod_pct: float) -> float:
    """Arrhenius temperature factor times the DOD power term."""
    t_k = to_kelvin(temperature_c)
    return cfg.a * np.exp(-cfg.ea_j_mol / (cfg.r_j_molk * t_k)) * dod_to_fraction(dod_pct) ** cfg.beta


def expected_capacity(cfg: SynthConfig, temperature_c: float, dod_pct: float, n) -> np.ndarray:
    """Noiseless capacity after n full equivalent cycles."""
    n = np.asarray(n, dtype=float)
    return cfg.c0_ah - fade_rate(cfg, temperature_c, dod_pct) * n**cfg.z


def _case_rng(seed: int, case_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(str(case_id).encode("utf-8"))])


def synth_case(
    cfg: SynthConfig,
    case_id: str,
    temperature_c: float,
    dod_pct: float,
    n_points: Optional[int] = None,
    cycles_per_point: Optional[float] = None,
) -> CyclicCase:
    n_points = cfg.n_points if n_points is None else n_points
    cycles_per_point = cfg.cycles_per_point if cycles_per_point is None else cycles_per_point
    if n_points < 3:
        raise ValidationError(f"n_points must be >= 3, got {n_points}")
    if not cycles_per_point > 0:
        raise ValidationError(f"cycles_per_point must be positive, got {cycles_per_point}")

    cycles = np.arange(n_points, dtype=float) * cycles_per_point
    capacity = expected_capacity(cfg, temperature_c, dod_pct, cycles)
    if cfg.noise_std_ah > 0:
        capacity = capacity + _case_rng(cfg.seed, case_id).normal(0.0, cfg.noise_std_ah, size=n_points)
    if np.any(capacity <= 0):
        raise ValidationError(
            f"case {case_id}: fade law drives capacity to {capacity.min():.3f} Ah; reduce a, z or n_points"
        )
    points = [
        CapacityPoint(cycle_index=float(c), capacity_ah=float(q), std_ah=float(cfg.noise_std_ah))
        for c, q in zip(cycles, capacity)
    ]
    return CyclicCase(case_id=str(case_id), temperature_c=float(temperature_c), dod_pct=float(dod_pct), points=points)


def synth_matrix(cfg: SynthConfig) -> Dataset:
    """All six (DOD, temperature) cases of the cyclic test matrix."""
    cases = [synth_case(cfg, case_id, temperature_c, dod_pct) for case_id, dod_pct, temperature_c in TEST_MATRIX]
    for case in cases:
        fade = 1.0 - case.capacities[-1] / cfg.c0_ah
        logger.debug(f"Case {case.case_id}: {case.dod_pct:.0f}% DOD, {case.temperature_c:.0f} degC, fade {fade:.1%}")
    return Dataset(cases=cases, nominal_capacity_ah=cfg.c0_ah)
