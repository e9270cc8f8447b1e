"""Exact Gaussian process regression.

Negative log marginal likelihood and its gradient in log-hyperparameter
coordinates, multi-start bounded optimization, and the posterior mean and
covariance. All linear algebra goes through a jittered Cholesky factor of

    lambda(theta) = K(theta) + sigma_n**2 * I
"""

import dataclasses
import logging
from typing import Dict, List, Literal, Mapping, NamedTuple, Optional, Tuple

import numpy as np
import scipy.optimize as so
from joblib import Parallel, delayed
from pydantic import Field
from pydantic.dataclasses import dataclass

from capgp.data.utils import read_json, write_json
from capgp.models import kernels as ku
from capgp.models.kernels import HyperParamSet, KernelNode
from capgp.utils import linalg
from capgp.utils.errors import (
    AllStartsFailed,
    DimensionMismatch,
    IncompatibleParams,
    ModelIntegrityError,
    NotPositiveDefinite,
    NumericalError,
    TooFewPairs,
    ValidationError,
)

logger = logging.getLogger(__name__)

NOISE = "sigma_n"
LOG_2PI = np.log(2.0 * np.pi)
ARMIJO_C = 1e-4
MAX_HALVINGS = 40
VARIANCE_TOL = 1e-10

SCALE_BOUNDS = (1e-3, 1e3)
NOISE_BOUNDS = (1e-4, 1e1)
DEGREE_BOUNDS = (0.5, 4.0)
RECIPROCAL_TEMPERATURE_BOUNDS = (1e-6, 1e3)
ROLE_BOUNDS = {
    "sigma_T": RECIPROCAL_TEMPERATURE_BOUNDS,
    "d_D": DEGREE_BOUNDS,
}


@dataclasses.dataclass(frozen=True)
class TrainingSet:
    """Inputs in kernel coordinates and targets centered by their mean."""

    X: np.ndarray
    y: np.ndarray
    y_mean: float = 0.0

    def __post_init__(self):
        X = ku.as_matrix(self.X).copy()
        y = np.array(self.y, dtype=float).reshape(-1)
        if X.shape[0] < 1:
            raise TooFewPairs("training set is empty")
        if y.shape[0] != X.shape[0]:
            raise DimensionMismatch(f"{X.shape[0]} input rows but {y.shape[0]} targets")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.isfinite(self.y_mean)):
            raise ValidationError("training data contains non-finite values")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "y_mean", float(self.y_mean))

    @classmethod
    def from_targets(cls, X, targets) -> "TrainingSet":
        """Center raw targets by their mean."""
        targets = np.asarray(targets, dtype=float).reshape(-1)
        if targets.size == 0:
            raise TooFewPairs("training set is empty")
        y_mean = float(np.mean(targets))
        return cls(X=X, y=targets - y_mean, y_mean=y_mean)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def targets(self) -> np.ndarray:
        return self.y + self.y_mean


@dataclass(frozen=True)
class FitConfig:
    restarts: int = Field(default=8, ge=1)
    max_iters: int = Field(default=200, ge=1)
    grad_tol: float = Field(default=1e-6, gt=0)
    seed: int = 0
    jitter_attempts: int = Field(default=linalg.DEFAULT_JITTER_ATTEMPTS, ge=1)
    optimizer: Literal["pgd", "lbfgsb"] = "pgd"
    n_jobs: int = 1  # joblib workers for restarts


@dataclasses.dataclass(frozen=True)
class InputScaler:
    """Per-column affine map x -> (x - mean) / scale, fit on training rows."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        scale = np.array(self.scale, dtype=float).reshape(-1)
        if mean.shape != scale.shape or not np.all(scale > 0):
            raise ValidationError("scaler needs matching mean/scale vectors with positive scales")
        mean.setflags(write=False)
        scale.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scale", scale)

    @classmethod
    def fit(cls, X) -> "InputScaler":
        X = ku.as_matrix(X)
        std = np.std(X, axis=0)
        return cls(mean=np.mean(X, axis=0), scale=np.where(std > 0, std, 1.0))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def transform(self, X) -> np.ndarray:
        X = ku.as_matrix(X)
        if X.shape[1] != self.dim:
            raise DimensionMismatch(f"scaler expects {self.dim} columns, got {X.shape[1]}")
        return (X - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "InputScaler":
        return cls(mean=doc["mean"], scale=doc["scale"])


@dataclasses.dataclass(frozen=True)
class TrainedModel:
    kernel: KernelNode
    params: HyperParamSet
    training: TrainingSet
    factor: linalg.CholFactor
    alpha: np.ndarray
    nll: float
    scaler: Optional[InputScaler] = None
    label: Optional[str] = None
    lags: Optional[int] = None

    @property
    def sigma_n(self) -> float:
        return self.params[NOISE]

    def transform(self, X) -> np.ndarray:
        """Map physical input rows into the kernel's coordinates."""
        return ku.as_matrix(X) if self.scaler is None else self.scaler.transform(X)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "lags": self.lags,
            "kernel": ku.kernel_to_dict(self.kernel, self.params),
            "training": {
                "X": self.training.X.tolist(),
                "y": self.training.y.tolist(),
                "y_mean": self.training.y_mean,
            },
            "scaler": None if self.scaler is None else self.scaler.to_dict(),
            "nll": self.nll,
        }

    @classmethod
    def from_dict(cls, doc: Mapping, jitter_attempts: int = linalg.DEFAULT_JITTER_ATTEMPTS) -> "TrainedModel":
        """Rebuild the factor and weights, then check them against the stored nll.

        Raises:
            ModelIntegrityError: the recomputed nll differs from the stored one.
        """
        try:
            kernel, params = ku.kernel_from_dict(doc["kernel"])
            training = TrainingSet(X=doc["training"]["X"], y=doc["training"]["y"], y_mean=doc["training"]["y_mean"])
            scaler = None if doc.get("scaler") is None else InputScaler.from_dict(doc["scaler"])
            stored = float(doc["nll"])
        except (KeyError, TypeError) as e:
            raise ValidationError(f"malformed model document: {e}") from e
        if params is None:
            raise ValidationError("model document carries no hyperparameters")
        model = condition(
            kernel,
            params,
            training,
            jitter_attempts=jitter_attempts,
            scaler=scaler,
            label=doc.get("label"),
            lags=doc.get("lags"),
        )
        if not abs(model.nll - stored) <= 1e-8 * max(1.0, abs(stored)):
            raise ModelIntegrityError(f"stored nll {stored!r} but recomputed {model.nll!r}")
        return model


def save_model(model: TrainedModel, path: str) -> None:
    write_json(model.to_dict(), path)


def load_model(path: str, jitter_attempts: int = linalg.DEFAULT_JITTER_ATTEMPTS) -> TrainedModel:
    return TrainedModel.from_dict(read_json(path), jitter_attempts=jitter_attempts)


def role_bounds(role: str) -> Tuple[float, float]:
    if role == NOISE:
        return NOISE_BOUNDS
    return ROLE_BOUNDS.get(role, SCALE_BOUNDS)


def _std_or_one(values: np.ndarray) -> float:
    std = float(np.std(values)) if values.size else 0.0
    return std if np.isfinite(std) and std > 0 else 1.0


def kernel_bounds(kernel: KernelNode) -> Dict[str, Tuple[float, float]]:
    """Box bounds per hyperparameter name, taken from the first role it is bound to."""
    bounds: Dict[str, Tuple[float, float]] = {}
    for leaf in kernel.leaves():
        for role, target in leaf.bind:
            if isinstance(target, str) and target not in bounds:
                bounds[target] = role_bounds(role)
    bounds[NOISE] = NOISE_BOUNDS
    return bounds


def _initial_value(role: str, cols: np.ndarray, y_std: float) -> float:
    if role in ("sigma_f", "l_c"):
        return y_std
    if role == "sigma_l":
        return float(np.mean([_std_or_one(cols[:, j]) for j in range(cols.shape[1])]))
    if role.startswith("ls_"):
        j = int(role[3:])
        if j >= cols.shape[1]:
            raise DimensionMismatch(f"lengthscale {role} has no matching input column")
        return _std_or_one(cols[:, j])
    if role == "sigma_T":
        return _std_or_one(1.0 / cols) if np.all(cols > 0) else 1.0
    # l_T, l_D, c_D, d_D
    return 1.0


def init_params(kernel: KernelNode, data: TrainingSet) -> HyperParamSet:
    """Starting point for the first restart.

    Lengthscales start at the standard deviation of the columns they act on,
    amplitudes at the target standard deviation, the Arrhenius scale at the
    spread of 1/T, the polynomial offset and degree at 1, and the noise at a
    tenth of the target standard deviation. Values are clipped to the bounds.
    """
    y_std = _std_or_one(data.y)
    bounds = kernel_bounds(kernel)
    values: Dict[str, float] = {}
    for leaf in kernel.leaves():
        cols = data.X[:, ku.resolve_columns(leaf.features, data.dim)]
        for role, target in leaf.bind:
            if isinstance(target, str) and target not in values:
                values[target] = float(np.clip(_initial_value(role, cols, y_std), *bounds[target]))
    values[NOISE] = float(np.clip(0.1 * y_std, *NOISE_BOUNDS))
    return HyperParamSet.from_values(values, bounds)


class _Posterior(NamedTuple):
    factor: linalg.CholFactor
    alpha: np.ndarray
    nll: float


def _check_noise(kernel: KernelNode, params: HyperParamSet) -> float:
    if NOISE not in params:
        raise IncompatibleParams(f"hyperparameters must include the noise level '{NOISE}'")
    unused = set(params.names) - set(kernel.param_names()) - {NOISE}
    if unused:
        raise IncompatibleParams(f"hyperparameters {sorted(unused)} are not used by the kernel")
    return params[NOISE]


def _solve_posterior(K: np.ndarray, sigma_n: float, y: np.ndarray, jitter_attempts: int) -> _Posterior:
    n = y.shape[0]
    lam = K + sigma_n**2 * np.eye(n)
    factor = linalg.cholesky_jittered(lam, max_attempts=jitter_attempts)
    alpha = linalg.cho_solve(factor, y)
    value = 0.5 * linalg.log_det_from_factor(factor) + 0.5 * float(y @ alpha) + 0.5 * n * LOG_2PI
    return _Posterior(factor, alpha, float(value))


def _gradient(posterior: _Posterior, dLams: List[np.ndarray]) -> np.ndarray:
    n = posterior.alpha.shape[0]
    W = linalg.cho_solve(posterior.factor, np.eye(n))
    inner = W - np.outer(posterior.alpha, posterior.alpha)
    return np.array([0.5 * float(np.sum(inner * dLam)) for dLam in dLams])


def nll_from_gram(
    K: np.ndarray,
    sigma_n: float,
    y: np.ndarray,
    dK: Optional[List[np.ndarray]] = None,
    jitter_attempts: int = linalg.DEFAULT_JITTER_ATTEMPTS,
) -> Tuple[float, Optional[np.ndarray]]:
    """Negative log marginal likelihood for a precomputed Gram matrix.

    When dK is given, also returns the gradient with respect to the log of
    each parameter behind dK, followed by log(sigma_n).
    """
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if K.shape != (y.shape[0], y.shape[0]):
        raise DimensionMismatch(f"Gram matrix of shape {K.shape} for {y.shape[0]} targets")
    posterior = _solve_posterior(K, sigma_n, y, jitter_attempts)
    if dK is None:
        return posterior.nll, None
    dLams = list(dK) + [2.0 * sigma_n**2 * np.eye(y.shape[0])]
    return posterior.nll, _gradient(posterior, dLams)


def _with_params(error: NotPositiveDefinite, params: HyperParamSet) -> NotPositiveDefinite:
    return NotPositiveDefinite(str(error), params=params.as_dict())


def nll_and_grad(
    kernel: KernelNode,
    params: HyperParamSet,
    data: TrainingSet,
    jitter_attempts: int = linalg.DEFAULT_JITTER_ATTEMPTS,
) -> Tuple[float, np.ndarray]:
    """Value and gradient with respect to log(theta), in params order."""
    sigma_n = _check_noise(kernel, params)
    K, dK = ku.gram_and_grads(kernel, params, data.X)
    try:
        posterior = _solve_posterior(K, sigma_n, data.y, jitter_attempts)
    except NotPositiveDefinite as e:
        raise _with_params(e, params) from e
    noise_index = params.names.index(NOISE)
    dK[noise_index] = 2.0 * sigma_n**2 * np.eye(data.n)
    return posterior.nll, _gradient(posterior, dK)


def nll(
    kernel: KernelNode,
    params: HyperParamSet,
    data: TrainingSet,
    jitter_attempts: int = linalg.DEFAULT_JITTER_ATTEMPTS,
) -> float:
    """0.5 log det(lambda) + 0.5 y^T lambda^-1 y + n/2 log(2 pi).

    Raises:
        NotPositiveDefinite: lambda could not be factored; carries the params.
    """
    sigma_n = _check_noise(kernel, params)
    K = ku.gram(kernel, params, data.X)
    try:
        return _solve_posterior(K, sigma_n, data.y, jitter_attempts).nll
    except NotPositiveDefinite as e:
        raise _with_params(e, params) from e


def nll_grad(
    kernel: KernelNode,
    params: HyperParamSet,
    data: TrainingSet,
    jitter_attempts: int = linalg.DEFAULT_JITTER_ATTEMPTS,
) -> np.ndarray:
    return nll_and_grad(kernel, params, data, jitter_attempts)[1]


def condition(
    kernel: KernelNode,
    params: HyperParamSet,
    data: TrainingSet,
    jitter_attempts: int = linalg.DEFAULT_JITTER_ATTEMPTS,
    scaler: Optional[InputScaler] = None,
    label: Optional[str] = None,
    lags: Optional[int] = None,
) -> TrainedModel:
    """Build a TrainedModel at fixed hyperparameters."""
    sigma_n = _check_noise(kernel, params)
    if scaler is not None and scaler.dim != data.dim:
        raise DimensionMismatch(f"scaler has {scaler.dim} columns, training data {data.dim}")
    K = ku.gram(kernel, params, data.X)
    try:
        posterior = _solve_posterior(K, sigma_n, data.y, jitter_attempts)
    except NotPositiveDefinite as e:
        raise _with_params(e, params) from e
    alpha = posterior.alpha.copy()
    alpha.setflags(write=False)
    return TrainedModel(
        kernel=kernel,
        params=params,
        training=data,
        factor=posterior.factor,
        alpha=alpha,
        nll=posterior.nll,
        scaler=scaler,
        label=label,
        lags=lags,
    )


class RestartResult(NamedTuple):
    index: int
    theta: Optional[np.ndarray]
    nll: float
    iters: int
    error: Optional[str] = None


def projected_gradient_norm(theta: np.ndarray, grad: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    return float(np.max(np.abs(theta - np.clip(theta - grad, lo, hi)))) if theta.size else 0.0


def _pgd(objective, theta0, lo, hi, cfg: FitConfig) -> Tuple[np.ndarray, float, int]:
    """Projected gradient descent in log space.

    Steps start from a Barzilai-Borwein estimate and are halved until the
    Armijo condition holds. A trial point that cannot be factored counts as
    a rejected step.
    """
    theta = np.clip(theta0, lo, hi)
    value, grad = objective(theta)
    step = 1.0 / max(1.0, float(np.max(np.abs(grad))))
    prev_theta, prev_grad = None, None
    it = 0
    for it in range(1, cfg.max_iters + 1):
        if projected_gradient_norm(theta, grad, lo, hi) <= cfg.grad_tol:
            return theta, value, it - 1
        if prev_theta is not None:
            s, g = theta - prev_theta, grad - prev_grad
            sg = float(s @ g)
            if sg > 0:
                step = float(np.clip((s @ s) / sg, 1e-10, 1e4))
        accepted = False
        t = step
        for _ in range(MAX_HALVINGS):
            candidate = np.clip(theta - t * grad, lo, hi)
            if np.array_equal(candidate, theta):
                # step below the resolution of theta
                return theta, value, it
            try:
                new_value, new_grad = objective(candidate)
            except NumericalError:
                t *= 0.5
                continue
            if new_value <= value + ARMIJO_C * float(grad @ (candidate - theta)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # No descent at machine precision.
            return theta, value, it
        prev_theta, prev_grad = theta, grad
        theta, value, grad = candidate, new_value, new_grad
        step = t
    return theta, value, it


def _lbfgsb(objective, theta0, lo, hi, cfg: FitConfig) -> Tuple[np.ndarray, float, int]:
    last = {"value": None}

    def func(theta):
        try:
            value, grad = objective(theta)
        except NumericalError:
            # Steer the line search away from unfactorable points.
            bad = 1e10 if last["value"] is None else abs(last["value"]) * 10.0 + 1e10
            return bad, np.zeros_like(theta)
        last["value"] = value
        return value, grad

    theta, value, info = so.fmin_l_bfgs_b(
        func, np.clip(theta0, lo, hi), bounds=list(zip(lo, hi)), maxiter=cfg.max_iters, pgtol=cfg.grad_tol
    )
    return np.clip(theta, lo, hi), float(value), int(info["nit"])


def _run_restart(index, theta0, kernel, template: HyperParamSet, data, cfg: FitConfig) -> RestartResult:
    lo, hi = template.log_bounds

    def objective(theta):
        return nll_and_grad(kernel, template.with_log_values(theta), data, cfg.jitter_attempts)

    run = _pgd if cfg.optimizer == "pgd" else _lbfgsb
    try:
        theta, value, iters = run(objective, theta0, lo, hi, cfg)
    except NumericalError as e:
        return RestartResult(index, None, np.inf, 0, str(e))
    if not np.isfinite(value):
        return RestartResult(index, None, np.inf, iters, "non-finite objective")
    return RestartResult(index, theta, value, iters)


def restart_points(init: HyperParamSet, cfg: FitConfig) -> List[np.ndarray]:
    """First start at init, the rest log-uniform within the bounds."""
    lo, hi = init.log_bounds
    rng = np.random.default_rng(cfg.seed)
    starts = [np.clip(init.log_values, lo, hi)]
    for _ in range(cfg.restarts - 1):
        starts.append(rng.uniform(lo, hi))
    return starts


def fit(
    kernel: KernelNode,
    data: TrainingSet,
    cfg: FitConfig = FitConfig(),
    init: Optional[HyperParamSet] = None,
    scaler: Optional[InputScaler] = None,
    label: Optional[str] = None,
    lags: Optional[int] = None,
) -> TrainedModel:
    """Multi-start maximum marginal likelihood.

    Raises:
        TooFewPairs: fewer than two training rows.
        AllStartsFailed: no restart produced a factorable optimum.
    """
    if data.n < 2:
        raise TooFewPairs(f"fit needs at least 2 training pairs, got {data.n}")
    init = init_params(kernel, data) if init is None else init
    _check_noise(kernel, init)
    starts = restart_points(init, cfg)

    results = Parallel(n_jobs=cfg.n_jobs)(
        delayed(_run_restart)(i, theta0, kernel, init, data, cfg) for i, theta0 in enumerate(starts)
    )
    for r in results:
        if r.error is None:
            logger.info(f"Restart {r.index}: nll {r.nll:.6f} after {r.iters} iterations")
        else:
            logger.info(f"Restart {r.index} failed: {r.error}")
    ok = [r for r in results if r.error is None]
    if not ok:
        raise AllStartsFailed(f"all {len(results)} restarts failed; last error: {results[-1].error}")
    best = min(ok, key=lambda r: (r.nll, r.index))
    logger.info(f"Selected restart {best.index} with nll {best.nll:.6f}")
    params = init.with_log_values(best.theta)
    return condition(
        kernel, params, data, jitter_attempts=cfg.jitter_attempts, scaler=scaler, label=label, lags=lags
    )


def predict(model: TrainedModel, Xstar, observation_noise: bool = False) -> Tuple[np.ndarray, linalg.SymMatrix]:
    """Posterior mean (un-centered) and covariance at physical inputs Xstar.

    The covariance is that of the latent function unless observation_noise
    is set, in which case sigma_n**2 is added to its diagonal.
    """
    A = model.transform(Xstar)
    if A.shape[1] != model.training.dim:
        raise DimensionMismatch(f"model expects {model.training.dim} input columns, got {A.shape[1]}")
    Ks = ku.gram(model.kernel, model.params, model.training.X, A)
    Kss = ku.gram(model.kernel, model.params, A)
    mean = Ks.T @ model.alpha + model.training.y_mean
    V = linalg.solve_lower(model.factor.L, Ks)
    cov = Kss - V.T @ V
    d = np.diag(cov).copy()
    if np.any(d < -VARIANCE_TOL):
        logger.warning(f"Clamping negative predictive variance {d.min():.3e} to zero")
    cov[np.diag_indices_from(cov)] = np.maximum(d, 0.0)
    if observation_noise:
        cov[np.diag_indices_from(cov)] += model.sigma_n**2
    return mean, linalg.SymMatrix(cov)


def posterior_mean_gradient(model: TrainedModel, x) -> np.ndarray:
    """d mean / d x for a single physical input row, through the scaler."""
    A = model.transform(x)
    if A.shape != (1, model.training.dim):
        raise DimensionMismatch(f"expected a single input row of {model.training.dim} columns")
    dA = ku.gram_input_grad(model.kernel, model.params, A, model.training.X)[0]  # (n, D)
    grad = dA.T @ model.alpha
    if model.scaler is not None:
        grad = grad / model.scaler.scale
    return grad


def fitted_mean(model: TrainedModel) -> np.ndarray:
    """Posterior mean at the model's own training inputs."""
    K = ku.gram(model.kernel, model.params, model.training.X)
    return K @ model.alpha + model.training.y_mean
