"""Dense symmetric linear algebra for exact GP inference.

Only what the likelihood and the posterior need: Cholesky with an adaptive
jitter ladder, triangular solves and the log-determinant of a factor.
"""

import dataclasses
import logging
from typing import Union

import numpy as np
import scipy.linalg as spla

from capgp.utils.errors import DimensionMismatch, NotPositiveDefinite, SingularTriangular

logger = logging.getLogger(__name__)

# Jitter ladder constants.
JITTER_REL = 1e-10
JITTER_FLOOR = 1e-12
DEFAULT_JITTER_ATTEMPTS = 8


@dataclasses.dataclass(frozen=True)
class SymMatrix:
    """Square matrix symmetrized as (A + A^T) / 2 on construction."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise DimensionMismatch(f"SymMatrix needs a non-empty square array, got shape {a.shape}")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def diagonal(self) -> np.ndarray:
        return np.diag(self.entries)


@dataclasses.dataclass(frozen=True)
class CholFactor:
    """Lower Cholesky factor L with L L^T = A + jitter * I."""

    L: np.ndarray
    jitter: float = 0.0

    def __post_init__(self):
        L = np.array(self.L, dtype=float)
        L.setflags(write=False)
        object.__setattr__(self, "L", L)

    @property
    def n(self) -> int:
        return self.L.shape[0]


MatrixLike = Union[SymMatrix, np.ndarray]


def _as_sym(A: MatrixLike) -> SymMatrix:
    return A if isinstance(A, SymMatrix) else SymMatrix(A)


def cholesky(A: MatrixLike) -> CholFactor:
    """Factor a symmetric positive definite matrix without jitter.

    Raises:
        NotPositiveDefinite: a pivot is not strictly positive or the input
            has non-finite entries.
    """
    a = _as_sym(A).entries
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        L = spla.cholesky(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite(f"cholesky failed: {e}") from e
    if not np.all(np.diag(L) > 0):
        raise NotPositiveDefinite("cholesky produced a non-positive pivot")
    return CholFactor(L=L, jitter=0.0)


def jitter_scale(a: np.ndarray) -> float:
    """Base jitter: 1e-10 of the mean diagonal, floored at 1e-12."""
    return max(JITTER_REL * float(np.mean(np.diag(a))), JITTER_FLOOR)


def cholesky_jittered(A: MatrixLike, max_attempts: int = DEFAULT_JITTER_ATTEMPTS) -> CholFactor:
    """Cholesky with the jitter ladder 0, eps, 10 eps, 100 eps, ...

    Raises:
        ValueError: max_attempts < 1.
        NotPositiveDefinite: every attempt failed.
    """
    if max_attempts < 1:
        raise ValueError(f"max_attempts must be >= 1, got {max_attempts}")
    a = _as_sym(A).entries
    eps = jitter_scale(a)
    eye = np.eye(a.shape[0])
    last_error = None
    for attempt in range(max_attempts):
        jitter = 0.0 if attempt == 0 else eps * 10.0 ** (attempt - 1)
        try:
            factor = cholesky(a + jitter * eye) if jitter > 0 else cholesky(a)
        except NotPositiveDefinite as e:
            last_error = e
            continue
        if jitter > 0:
            logger.debug(f"Cholesky needed jitter {jitter:.3e} after {attempt} failed attempts")
        return CholFactor(L=factor.L, jitter=jitter)
    raise NotPositiveDefinite(f"cholesky failed after {max_attempts} jitter attempts: {last_error}")


def _check_triangular_system(T: np.ndarray, b: np.ndarray) -> None:
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise DimensionMismatch(f"triangular matrix must be square, got shape {T.shape}")
    if b.ndim not in (1, 2) or b.shape[0] != T.shape[0]:
        raise DimensionMismatch(f"right-hand side of shape {b.shape} does not match matrix of shape {T.shape}")
    if np.any(np.diag(T) == 0):
        raise SingularTriangular("triangular matrix has a zero on its diagonal")


def solve_lower(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve L x = b for lower-triangular L. b may be a vector or a matrix."""
    L = np.asarray(L, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_triangular_system(L, b)
    return spla.solve_triangular(L, b, lower=True, check_finite=False)


def solve_upper(U: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve U x = b for upper-triangular U (typically L^T)."""
    U = np.asarray(U, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_triangular_system(U, b)
    return spla.solve_triangular(U, b, lower=False, check_finite=False)


def cho_solve(factor: CholFactor, b: np.ndarray) -> np.ndarray:
    """Solve (L L^T) x = b with one forward and one backward substitution."""
    return solve_upper(factor.L.T, solve_lower(factor.L, b))


def log_det_from_factor(factor: CholFactor) -> float:
    return float(2.0 * np.sum(np.log(np.diag(factor.L))))
