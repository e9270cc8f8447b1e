"""Cyclic-ageing datasets: one capacity trajectory per (temperature, DOD) case.

CSV schema, one row per measurement point, header required:

    case_id,temperature_c,dod_pct,cycle_index,capacity_ah,std_ah

``std_ah`` may be empty. Temperature and DOD must be constant within a case.
"""

import dataclasses
import logging
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from capgp.data.utils import ABSOLUTE_ZERO_C, dod_to_fraction, to_kelvin
from capgp.utils.errors import OverlappingSplit, ParseError, UnknownCase, ValidationError

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["case_id", "temperature_c", "dod_pct", "cycle_index", "capacity_ah", "std_ah"]
NUMERIC_COLUMNS = ["temperature_c", "dod_pct", "cycle_index", "capacity_ah"]
NOMINAL_CAPACITY_AH = 21.0


@dataclasses.dataclass(frozen=True)
class CapacityPoint:
    cycle_index: float  # full equivalent cycles
    capacity_ah: float
    std_ah: Optional[float] = None


@dataclasses.dataclass(frozen=True)
class CyclicCase:
    """One cell group's capacity trajectory under constant cycling conditions."""

    case_id: str
    temperature_c: float
    dod_pct: float
    points: Tuple[CapacityPoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "case_id", str(self.case_id))
        object.__setattr__(self, "points", tuple(self.points))
        if not np.isfinite(self.temperature_c) or self.temperature_c <= ABSOLUTE_ZERO_C:
            raise ValidationError(f"case {self.case_id}: temperature {self.temperature_c} degC is below absolute zero")
        if not np.isfinite(self.dod_pct) or not 0.0 < self.dod_pct <= 100.0:
            raise ValidationError(f"case {self.case_id}: DOD {self.dod_pct} % is outside (0, 100]")
        if len(self.points) == 0:
            raise ValidationError(f"case {self.case_id}: no measurement points")
        cycles = np.array([p.cycle_index for p in self.points], dtype=float)
        if np.any(np.diff(cycles) <= 0):
            raise ValidationError(f"case {self.case_id}: cycle_index must be strictly increasing")
        for p in self.points:
            if not np.isfinite(p.capacity_ah) or p.capacity_ah <= 0:
                raise ValidationError(f"case {self.case_id}: capacity {p.capacity_ah} Ah at cycle {p.cycle_index} is not positive")
            if p.std_ah is not None and (not np.isfinite(p.std_ah) or p.std_ah < 0):
                raise ValidationError(f"case {self.case_id}: negative std_ah at cycle {p.cycle_index}")

    @property
    def capacities(self) -> np.ndarray:
        return np.array([p.capacity_ah for p in self.points], dtype=float)

    @property
    def cycles(self) -> np.ndarray:
        return np.array([p.cycle_index for p in self.points], dtype=float)

    @property
    def temperature_k(self) -> float:
        return to_kelvin(self.temperature_c)

    @property
    def dod_frac(self) -> float:
        return dod_to_fraction(self.dod_pct)

    def __len__(self) -> int:
        return len(self.points)


@dataclasses.dataclass(frozen=True)
class Dataset:
    cases: Tuple[CyclicCase, ...]
    nominal_capacity_ah: float = NOMINAL_CAPACITY_AH

    def __post_init__(self):
        object.__setattr__(self, "cases", tuple(self.cases))
        ids = [c.case_id for c in self.cases]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ValidationError(f"duplicate case ids: {dupes}")
        if not self.nominal_capacity_ah > 0:
            raise ValidationError(f"nominal capacity must be positive, got {self.nominal_capacity_ah}")

    @property
    def case_ids(self) -> List[str]:
        return [c.case_id for c in self.cases]

    def case(self, case_id) -> CyclicCase:
        for c in self.cases:
            if c.case_id == str(case_id):
                return c
        raise UnknownCase(f"unknown case '{case_id}', available: {self.case_ids}")

    def subset(self, case_ids: Iterable) -> "Dataset":
        return Dataset(cases=[self.case(i) for i in case_ids], nominal_capacity_ah=self.nominal_capacity_ah)

    def __len__(self) -> int:
        return len(self.cases)


def _parse_numeric(df: pd.DataFrame, column: str) -> pd.Series:
    values = pd.to_numeric(df[column], errors="coerce")
    bad = values.isna() | ~np.isfinite(values.to_numpy(dtype=float, na_value=np.nan))
    if bad.any():
        first = int(np.flatnonzero(bad.to_numpy())[0])
        # +2: one for the header line, one for 1-based numbering.
        raise ParseError(f"cannot parse value {df[column].iloc[first]!r} as a number", row=first + 2, column=column)
    return values.astype(float)


def load_csv(path: str, nominal_capacity_ah: float = NOMINAL_CAPACITY_AH) -> Dataset:
    """Read and validate a cyclic-ageing dataset.

    Raises:
        ParseError: missing columns or unparseable values.
        ValidationError: a case violates its invariants.
        OSError: the file cannot be read.
    """
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(f"cannot read {path}: {e}") from e
    df.columns = [c.strip() for c in df.columns]
    missing = [c for c in CSV_COLUMNS if c not in df.columns]
    if missing:
        raise ParseError(f"missing columns {missing}", row=1, column=missing[0])
    if len(df) == 0:
        raise ParseError(f"{path} has no data rows", row=2)

    case_ids = df["case_id"].str.strip()
    if (case_ids == "").any():
        first = int(np.flatnonzero((case_ids == "").to_numpy())[0])
        raise ParseError("empty case_id", row=first + 2, column="case_id")
    numeric = {c: _parse_numeric(df, c) for c in NUMERIC_COLUMNS}
    std_raw = df["std_ah"].str.strip()
    std = pd.to_numeric(std_raw.where(std_raw != "", None), errors="coerce")
    bad_std = std.isna() & (std_raw != "")
    if bad_std.any():
        first = int(np.flatnonzero(bad_std.to_numpy())[0])
        raise ParseError(f"cannot parse value {std_raw.iloc[first]!r} as a number", row=first + 2, column="std_ah")

    cases = []
    # Keep first-appearance order of case ids.
    for case_id in dict.fromkeys(case_ids.tolist()):
        rows = np.flatnonzero((case_ids == case_id).to_numpy())
        for column in ("temperature_c", "dod_pct"):
            values = numeric[column].iloc[rows].to_numpy()
            if np.any(values != values[0]):
                raise ValidationError(f"case {case_id}: {column} must be constant within a case")
        points = [
            CapacityPoint(
                cycle_index=float(numeric["cycle_index"].iloc[r]),
                capacity_ah=float(numeric["capacity_ah"].iloc[r]),
                std_ah=None if pd.isna(std.iloc[r]) else float(std.iloc[r]),
            )
            for r in rows
        ]
        cases.append(
            CyclicCase(
                case_id=case_id,
                temperature_c=float(numeric["temperature_c"].iloc[rows[0]]),
                dod_pct=float(numeric["dod_pct"].iloc[rows[0]]),
                points=points,
            )
        )
    ds = Dataset(cases=cases, nominal_capacity_ah=nominal_capacity_ah)
    logger.info(f"Loaded {len(ds)} cases ({len(df)} points) from {path}")
    return ds


def to_frame(ds: Dataset) -> pd.DataFrame:
    rows = [
        {
            "case_id": case.case_id,
            "temperature_c": case.temperature_c,
            "dod_pct": case.dod_pct,
            "cycle_index": p.cycle_index,
            "capacity_ah": p.capacity_ah,
            "std_ah": p.std_ah,
        }
        for case in ds.cases
        for p in case.points
    ]
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def write_csv(ds: Dataset, path: str) -> None:
    """Inverse of load_csv."""
    to_frame(ds).to_csv(path, index=False, encoding="utf-8")


def split(ds: Dataset, train_ids: Sequence, test_ids: Sequence) -> Tuple[Dataset, Dataset]:
    """Partition a dataset by case id."""
    train_ids = [str(i) for i in train_ids]
    test_ids = [str(i) for i in test_ids]
    overlap = sorted(set(train_ids) & set(test_ids))
    if overlap:
        raise OverlappingSplit(f"case ids in both train and test: {overlap}")
    return ds.subset(train_ids), ds.subset(test_ids)
