"""Utility functions for experiments."""
from typing import List

import numpy as np

from capgp.utils.errors import TooFewPairs


def flatten_dict(raw_dict):
    """Flattens a nested dict."""
    flattened = []
    for k, v in raw_dict.items():
        if isinstance(v, dict):
            flattened.extend([(f"{k}:{i}", j) for i, j in flatten_dict(v)])
        else:
            flattened.append((k, v))
    return flattened


def fold_indices(n: int, k: int, seed: int) -> List[np.ndarray]:
    """Seeded shuffle of range(n) split into k folds whose sizes differ by at most one."""
    if k < 2:
        raise TooFewPairs(f"cross-validation needs k >= 2 folds, got {k}")
    if n < k:
        raise TooFewPairs(f"{n} pairs cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(n)
    return [np.sort(fold) for fold in np.array_split(order, k)]
