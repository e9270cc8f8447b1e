"""Unit conversions and small I/O helpers shared by the data and model code."""

import json
import os
from typing import Any

import numpy as np
import tree

from capgp.utils.errors import BelowAbsoluteZero, InvalidFeature

ABSOLUTE_ZERO_C = -273.15
KELVIN_OFFSET = 273.15


def to_kelvin(temperature_c: float) -> float:
    """Convert degrees Celsius to Kelvin."""
    if not np.isfinite(temperature_c) or temperature_c <= ABSOLUTE_ZERO_C:
        raise BelowAbsoluteZero(f"temperature {temperature_c} degC is not above absolute zero")
    return float(temperature_c) + KELVIN_OFFSET


def dod_to_fraction(dod_pct: float) -> float:
    """Convert a depth of discharge in percent to a fraction in (0, 1]."""
    if not np.isfinite(dod_pct) or not 0.0 < dod_pct <= 100.0:
        raise InvalidFeature(f"DOD must be in (0, 100] percent, got {dod_pct}")
    return float(dod_pct) / 100.0


def to_builtin(obj: Any) -> Any:
    """Turn numpy scalars and arrays inside a nested structure into plain Python values."""

    def _convert(x):
        if isinstance(x, np.ndarray):
            return x.tolist()
        if isinstance(x, np.generic):
            return x.item()
        return x

    return tree.map_structure(_convert, obj)


def write_json(obj: Any, path: str) -> None:
    dirname = os.path.dirname(path)
    if dirname:
        os.makedirs(dirname, exist_ok=True)
    with open(path, "w") as f:
        json.dump(to_builtin(obj), f, indent=2)


def read_json(path: str) -> Any:
    with open(path, "r") as f:
        return json.load(f)
