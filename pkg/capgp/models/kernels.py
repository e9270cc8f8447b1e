"""Covariance functions and their composition.

A kernel is a tree of ``KernelNode``s. Leaves are base covariance functions
that read a named slice of the input columns; ``Product`` and ``Sum`` nodes
combine their children entrywise. Inputs are row matrices whose columns are
laid out as

    [capacity lag 1 (oldest), ..., capacity lag L (newest), temperature, dod]

Every leaf binds its roles (``sigma_f``, ``ls_0``, ...) either to the name of
a hyperparameter or to a fixed constant. Gradients with respect to
hyperparameters are taken in log coordinates, dK/dlog(theta) = theta * dK/dtheta.
"""

import dataclasses
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from capgp.data.utils import dod_to_fraction, to_kelvin
from capgp.utils.errors import (
    DimensionMismatch,
    IncompatibleParams,
    InvalidFeature,
    NonPositiveBase,
    NonPositiveTemperature,
    ValidationError,
)

# Column slices a leaf may read.
FEATURE_SLICES = ("all", "capacity_lags", "temperature", "dod")

LEAF_VARIANTS = ("SE", "ArdSE", "ArrheniusLaplacian", "Polynomial", "CapacitySE")
COMPOSITE_VARIANTS = ("Product", "Sum")
VARIANTS = LEAF_VARIANTS + COMPOSITE_VARIANTS

# Scalar roles per leaf. ArdSE and CapacitySE also take one ls_<i> role per column.
LEAF_ROLES = {
    "SE": ("sigma_f", "sigma_l"),
    "ArdSE": ("sigma_f",),
    "ArrheniusLaplacian": ("l_T", "sigma_T"),
    "Polynomial": ("l_D", "c_D", "d_D"),
    "CapacitySE": ("l_c",),
}
VECTOR_ROLE_VARIANTS = ("ArdSE", "CapacitySE")

Target = Union[str, float]


@dataclasses.dataclass(frozen=True)
class FeatureVector:
    """Model input in physical units: capacity lags in Ah, temperature in K, DOD as a fraction."""

    capacity_lags: Tuple[float, ...]
    temperature: float
    dod: float

    def __post_init__(self):
        lags = tuple(float(c) for c in np.atleast_1d(self.capacity_lags))
        object.__setattr__(self, "capacity_lags", lags)
        if len(lags) < 1:
            raise InvalidFeature("a feature vector needs at least one capacity lag")
        if not all(np.isfinite(c) and c > 0 for c in lags):
            raise InvalidFeature(f"capacity lags must be positive and finite, got {lags}")
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise NonPositiveTemperature(f"temperature must be positive Kelvin, got {self.temperature}")
        if not (np.isfinite(self.dod) and 0 < self.dod <= 1):
            raise InvalidFeature(f"dod must be a fraction in (0, 1], got {self.dod}")

    @classmethod
    def from_physical(cls, capacity_lags: Sequence[float], temperature_c: float, dod_pct: float) -> "FeatureVector":
        return cls(tuple(capacity_lags), to_kelvin(temperature_c), dod_to_fraction(dod_pct))

    @property
    def lags(self) -> int:
        return len(self.capacity_lags)

    def to_array(self) -> np.ndarray:
        return np.array(self.capacity_lags + (self.temperature, self.dod), dtype=float)


InputRows = Union[np.ndarray, Sequence[FeatureVector], Sequence[Sequence[float]]]


def as_matrix(X: InputRows) -> np.ndarray:
    """Stack inputs into a float row matrix of shape (n, D)."""
    if isinstance(X, FeatureVector):
        return X.to_array()[None, :]
    if isinstance(X, np.ndarray):
        out = np.asarray(X, dtype=float)
    else:
        rows = [x.to_array() if isinstance(x, FeatureVector) else np.asarray(x, dtype=float) for x in X]
        if len(rows) == 0:
            raise DimensionMismatch("no input rows")
        if len({r.shape for r in rows}) != 1:
            raise DimensionMismatch("input rows have different lengths")
        out = np.stack(rows)
    if out.ndim == 1:
        out = out[None, :]
    if out.ndim != 2 or out.shape[1] < 1:
        raise DimensionMismatch(f"expected a 2-D row matrix, got shape {out.shape}")
    return out


def resolve_columns(features: str, dim: int) -> np.ndarray:
    if features == "all":
        return np.arange(dim)
    lags = dim - 2
    if lags < 1:
        raise DimensionMismatch(f"slice '{features}' needs capacity lags, temperature and dod columns; got {dim} columns")
    if features == "capacity_lags":
        return np.arange(lags)
    if features == "temperature":
        return np.array([lags])
    if features == "dod":
        return np.array([lags + 1])
    raise ValidationError(f"unknown feature slice '{features}'")


@dataclasses.dataclass(frozen=True)
class HyperParam:
    name: str
    value: float
    lower: float
    upper: float

    def __post_init__(self):
        for field in ("value", "lower", "upper"):
            object.__setattr__(self, field, float(getattr(self, field)))
        if not (self.lower > 0 and self.upper >= self.lower):
            raise ValidationError(f"{self.name}: bounds [{self.lower}, {self.upper}] must be positive and ordered")
        if not self.lower <= self.value <= self.upper:
            raise ValidationError(f"{self.name}={self.value} outside bounds [{self.lower}, {self.upper}]")


@dataclasses.dataclass(frozen=True)
class HyperParamSet:
    """Ordered, named, positive hyperparameters with box bounds."""

    entries: Tuple[HyperParam, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate hyperparameter names in {names}")

    @classmethod
    def from_values(cls, values: Mapping[str, float], bounds: Mapping[str, Tuple[float, float]]) -> "HyperParamSet":
        return cls(tuple(HyperParam(name, v, *bounds[name]) for name, v in values.items()))

    @property
    def names(self) -> List[str]:
        return [e.name for e in self.entries]

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.entries])

    @property
    def lower(self) -> np.ndarray:
        return np.array([e.lower for e in self.entries])

    @property
    def upper(self) -> np.ndarray:
        return np.array([e.upper for e in self.entries])

    @property
    def log_values(self) -> np.ndarray:
        return np.log(self.values)

    @property
    def log_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.log(self.lower), np.log(self.upper)

    def as_dict(self) -> Dict[str, float]:
        return {e.name: e.value for e in self.entries}

    def with_values(self, values: Iterable[float]) -> "HyperParamSet":
        values = np.asarray(list(values), dtype=float)
        if values.shape != (len(self.entries),):
            raise DimensionMismatch(f"expected {len(self.entries)} values, got shape {values.shape}")
        values = np.clip(values, self.lower, self.upper)
        return HyperParamSet(tuple(dataclasses.replace(e, value=float(v)) for e, v in zip(self.entries, values)))

    def with_log_values(self, theta: Iterable[float]) -> "HyperParamSet":
        return self.with_values(np.exp(np.asarray(list(theta), dtype=float)))

    def replace(self, **updates: float) -> "HyperParamSet":
        unknown = set(updates) - set(self.names)
        if unknown:
            raise IncompatibleParams(f"unknown hyperparameters {sorted(unknown)}")
        return HyperParamSet(
            tuple(dataclasses.replace(e, value=float(updates[e.name])) if e.name in updates else e for e in self.entries)
        )

    def __getitem__(self, name: str) -> float:
        for e in self.entries:
            if e.name == name:
                return e.value
        raise IncompatibleParams(f"no hyperparameter named '{name}' in {self.names}")

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def __iter__(self) -> Iterator[HyperParam]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def to_list(self) -> List[dict]:
        return [dataclasses.asdict(e) for e in self.entries]

    @classmethod
    def from_list(cls, doc: Sequence[Mapping]) -> "HyperParamSet":
        return cls(tuple(HyperParam(d["name"], d["value"], d["lower"], d["upper"]) for d in doc))


@dataclasses.dataclass(frozen=True)
class KernelNode:
    variant: str
    features: str = "all"
    bind: Tuple[Tuple[str, Target], ...] = ()
    children: Tuple["KernelNode", ...] = ()

    def __post_init__(self):
        bind = self.bind.items() if isinstance(self.bind, Mapping) else self.bind
        bind = tuple((str(role), t if isinstance(t, str) else float(t)) for role, t in bind)
        object.__setattr__(self, "bind", bind)
        object.__setattr__(self, "children", tuple(self.children))
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown kernel variant '{self.variant}', expected one of {VARIANTS}")
        if self.variant in COMPOSITE_VARIANTS:
            if len(self.children) < 2:
                raise ValidationError(f"{self.variant} needs at least two children")
            if self.bind:
                raise ValidationError(f"{self.variant} takes no parameters")
            return
        if self.children:
            raise ValidationError(f"leaf {self.variant} cannot have children")
        if self.features not in FEATURE_SLICES:
            raise ValidationError(f"unknown feature slice '{self.features}'")
        roles = dict(bind)
        missing = [r for r in LEAF_ROLES[self.variant] if r not in roles]
        if missing:
            raise ValidationError(f"{self.variant} leaf is missing roles {missing}")
        if self.variant in VECTOR_ROLE_VARIANTS and "ls_0" not in roles:
            raise ValidationError(f"{self.variant} leaf needs at least one lengthscale role ls_0")
        for role, target in bind:
            if not isinstance(target, str) and not target > 0:
                raise ValidationError(f"fixed value for {role} must be positive, got {target}")

    @property
    def is_leaf(self) -> bool:
        return self.variant in LEAF_VARIANTS

    @property
    def binding(self) -> Dict[str, Target]:
        return dict(self.bind)

    def leaves(self) -> Iterator["KernelNode"]:
        if self.is_leaf:
            yield self
            return
        for child in self.children:
            yield from child.leaves()

    def lengthscale_targets(self) -> List[Target]:
        roles = self.binding
        out = []
        while f"ls_{len(out)}" in roles:
            out.append(roles[f"ls_{len(out)}"])
        return out

    def param_names(self) -> List[str]:
        """Hyperparameter names in depth-first declaration order, without repeats."""
        names: List[str] = []
        if self.is_leaf:
            candidates = [t for _, t in self.bind if isinstance(t, str)]
        else:
            candidates = [n for child in self.children for n in child.param_names()]
        for n in candidates:
            if n not in names:
                names.append(n)
        return names


def _bind(**roles: Target) -> Tuple[Tuple[str, Target], ...]:
    return tuple(roles.items())


def se(sigma_f: Target = "sigma_f", sigma_l: Target = "sigma_l", features: str = "all") -> KernelNode:
    return KernelNode("SE", features, _bind(sigma_f=sigma_f, sigma_l=sigma_l))


def ard_se(lengthscales: Sequence[Target], sigma_f: Target = "sigma_f", features: str = "all") -> KernelNode:
    roles = {"sigma_f": sigma_f, **{f"ls_{i}": t for i, t in enumerate(lengthscales)}}
    return KernelNode("ArdSE", features, _bind(**roles))


def arrhenius(sigma_T: Target = "sigma_T", l_T: Target = "l_T", features: str = "temperature") -> KernelNode:
    return KernelNode("ArrheniusLaplacian", features, _bind(l_T=l_T, sigma_T=sigma_T))


def polynomial(c_D: Target = "c_D", d_D: Target = "d_D", l_D: Target = "l_D", features: str = "dod") -> KernelNode:
    return KernelNode("Polynomial", features, _bind(l_D=l_D, c_D=c_D, d_D=d_D))


def capacity_se(lengthscales: Sequence[Target], l_c: Target = "l_c", features: str = "capacity_lags") -> KernelNode:
    roles = {"l_c": l_c, **{f"ls_{i}": t for i, t in enumerate(lengthscales)}}
    return KernelNode("CapacitySE", features, _bind(**roles))


def product(*children: KernelNode) -> KernelNode:
    return KernelNode("Product", children=children)


def sum_of(*children: KernelNode) -> KernelNode:
    return KernelNode("Sum", children=children)


def lag_lengthscale_names(lags: int) -> List[str]:
    return [f"sigma_{i + 1}" for i in range(lags)]


def segm_kernel() -> KernelNode:
    """Single isotropic SE over all (standardized) features."""
    return se("sigma_f", "sigma_l", features="all")


def model_a_kernel(lags: int) -> KernelNode:
    """ARD-SE with one lengthscale per lag, then temperature and DOD."""
    return ard_se(lag_lengthscale_names(lags) + ["sigma_T", "sigma_DOD"], sigma_f="sigma_f", features="all")


def model_b_kernel(lags: int) -> KernelNode:
    """Capacity SE x Arrhenius-Laplacian x polynomial DOD.

    The amplitude sits on the capacity factor (l_f), so the temperature factor
    uses l_T = 1 and the DOD factor uses l_D = 1.
    """
    return product(
        capacity_se(lag_lengthscale_names(lags), l_c="l_f"),
        arrhenius(sigma_T="sigma_T", l_T=1.0),
        polynomial(c_D="c_D", d_D="d_D", l_D=1.0),
    )


# Leaf covariance functions take column slices a (m, d) and b (n, d) and the
# resolved roles; they return K, dK/dlog(role) and optionally dK/da.
class LeafTerms(NamedTuple):
    K: np.ndarray
    dK: Dict[str, np.ndarray]
    dA: Optional[np.ndarray]


def _lengthscales(theta: Mapping[str, float], d: int, variant: str) -> np.ndarray:
    ls = []
    while f"ls_{len(ls)}" in theta:
        ls.append(theta[f"ls_{len(ls)}"])
    if len(ls) != d:
        raise DimensionMismatch(f"{variant} has {len(ls)} lengthscales for {d} input columns")
    return np.asarray(ls, dtype=float)


def _se_leaf(a, b, theta, input_grad):
    sf, sl = theta["sigma_f"], theta["sigma_l"]
    diff = a[:, None, :] - b[None, :, :]
    r2 = np.sum(diff**2, axis=-1)
    K = sf**2 * np.exp(-r2 / (2.0 * sl**2))
    dK = {"sigma_f": 2.0 * K, "sigma_l": K * r2 / sl**2}
    dA = -K[..., None] * diff / sl**2 if input_grad else None
    return LeafTerms(K, dK, dA)


def _ard_leaf(amplitude_role):
    def leaf(a, b, theta, input_grad):
        variant = "ArdSE" if amplitude_role == "sigma_f" else "CapacitySE"
        amp = theta[amplitude_role]
        ls = _lengthscales(theta, a.shape[1], variant)
        diff = a[:, None, :] - b[None, :, :]
        sq = diff**2 / ls**2
        K = amp**2 * np.exp(-0.5 * np.sum(sq, axis=-1))
        dK = {amplitude_role: 2.0 * K}
        for i in range(len(ls)):
            dK[f"ls_{i}"] = K * sq[..., i]
        dA = -K[..., None] * diff / ls**2 if input_grad else None
        return LeafTerms(K, dK, dA)

    return leaf


def _arrhenius_leaf(a, b, theta, input_grad):
    if np.any(~(a > 0)) or np.any(~(b > 0)):
        raise NonPositiveTemperature("Arrhenius kernel needs strictly positive Kelvin temperatures")
    l_T, s_T = theta["l_T"], theta["sigma_T"]
    u = 1.0 / a[:, None, :] - 1.0 / b[None, :, :]
    dist = np.sqrt(np.sum(u**2, axis=-1))
    K = l_T * np.exp(-dist / s_T)
    dK = {"l_T": K.copy(), "sigma_T": K * dist / s_T}
    dA = None
    if input_grad:
        # d dist / d a_j = -(u_j / dist) / a_j**2; zero where the temperatures coincide.
        safe = np.where(dist > 0, dist, 1.0)
        direction = np.where(dist[..., None] > 0, u / safe[..., None], 0.0)
        dA = K[..., None] * direction / (s_T * a[:, None, :] ** 2)
    return LeafTerms(K, dK, dA)


def _polynomial_leaf(a, b, theta, input_grad):
    l_D, c_D, deg = theta["l_D"], theta["c_D"], theta["d_D"]
    s = np.sum(a[:, None, :] * b[None, :, :], axis=-1)
    base = l_D * s + c_D
    if np.any(~(base > 0)):
        raise NonPositiveBase(f"polynomial kernel base must be positive, min is {np.min(base):.6g}")
    K = base**deg
    slope = deg * base ** (deg - 1.0)
    dK = {"l_D": slope * l_D * s, "c_D": slope * c_D, "d_D": K * np.log(base) * deg}
    dA = (slope * l_D)[..., None] * np.broadcast_to(b[None, :, :], (a.shape[0],) + b.shape) if input_grad else None
    return LeafTerms(K, dK, dA)


_LEAVES: Dict[str, Callable] = {
    "SE": _se_leaf,
    "ArdSE": _ard_leaf("sigma_f"),
    "ArrheniusLaplacian": _arrhenius_leaf,
    "Polynomial": _polynomial_leaf,
    "CapacitySE": _ard_leaf("l_c"),
}


class KernelTerms(NamedTuple):
    K: np.ndarray
    dK: Dict[str, np.ndarray]  # by hyperparameter name
    dA: Optional[np.ndarray]  # (m, n, D) derivative with respect to the first argument's columns


def _evaluate(node: KernelNode, values: Mapping[str, float], A, B, hyper_grad, input_grad) -> KernelTerms:
    if node.is_leaf:
        cols = resolve_columns(node.features, A.shape[1])
        theta = {}
        for role, target in node.bind:
            if isinstance(target, str):
                if target not in values:
                    raise IncompatibleParams(f"kernel needs hyperparameter '{target}'")
                theta[role] = values[target]
            else:
                theta[role] = target
        leaf = _LEAVES[node.variant](A[:, cols], B[:, cols], theta, input_grad)
        dK: Dict[str, np.ndarray] = {}
        if hyper_grad:
            for role, target in node.bind:
                if isinstance(target, str):
                    dK[target] = dK[target] + leaf.dK[role] if target in dK else leaf.dK[role]
        dA = None
        if input_grad:
            dA = np.zeros(leaf.K.shape + (A.shape[1],))
            dA[..., cols] = leaf.dA
        return KernelTerms(leaf.K, dK, dA)

    terms = [_evaluate(c, values, A, B, hyper_grad, input_grad) for c in node.children]
    if node.variant == "Sum":
        K = terms[0].K.copy()
        for t in terms[1:]:
            K = K + t.K
        dK = {}
        for t in terms:
            for name, g in t.dK.items():
                dK[name] = dK[name] + g if name in dK else g
        dA = None
        if input_grad:
            dA = terms[0].dA.copy()
            for t in terms[1:]:
                dA = dA + t.dA
        return KernelTerms(K, dK, dA)

    # Product: d(prod K_i) = sum_i dK_i * prod_{j != i} K_j, without dividing by K_i.
    def others(i):
        out = np.ones_like(terms[0].K)
        for j, t in enumerate(terms):
            if j != i:
                out = out * t.K
        return out

    K = terms[0].K.copy()
    for t in terms[1:]:
        K = K * t.K
    rest = [others(i) for i in range(len(terms))] if (hyper_grad or input_grad) else []
    dK = {}
    for i, t in enumerate(terms):
        for name, g in t.dK.items():
            contribution = g * rest[i]
            dK[name] = dK[name] + contribution if name in dK else contribution
    dA = None
    if input_grad:
        dA = np.zeros_like(terms[0].dA)
        for i, t in enumerate(terms):
            dA = dA + t.dA * rest[i][..., None]
    return KernelTerms(K, dK, dA)


def _check_params(k: KernelNode, params: Union[HyperParamSet, Mapping[str, float]]) -> Dict[str, float]:
    values = params.as_dict() if isinstance(params, HyperParamSet) else dict(params)
    missing = [n for n in k.param_names() if n not in values]
    if missing:
        raise IncompatibleParams(f"hyperparameters {missing} missing for kernel")
    return values


def gram(k: KernelNode, params, X: InputRows, X2: Optional[InputRows] = None) -> np.ndarray:
    """Matrix of kernel values k(X[i], X2[j]); symmetric when X2 is X."""
    A = as_matrix(X)
    B = A if X2 is None else as_matrix(X2)
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"inputs have {A.shape[1]} and {B.shape[1]} columns")
    return _evaluate(k, _check_params(k, params), A, B, hyper_grad=False, input_grad=False).K


def gram_and_grads(k: KernelNode, params: HyperParamSet, X: InputRows) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Gram matrix and dK/dlog(theta) for every entry of params, in order.

    Entries of params the kernel does not use (e.g. the noise level) get zeros.
    """
    A = as_matrix(X)
    terms = _evaluate(k, _check_params(k, params), A, A, hyper_grad=True, input_grad=False)
    zeros = np.zeros_like(terms.K)
    return terms.K, [terms.dK.get(name, zeros) for name in params.names]


def grad_hyper(k: KernelNode, params: HyperParamSet, X: InputRows) -> List[np.ndarray]:
    return gram_and_grads(k, params, X)[1]


def gram_input_grad(k: KernelNode, params, Xstar: InputRows, X: InputRows) -> np.ndarray:
    """d k(Xstar[i], X[j]) / d Xstar[i, c] as an (m, n, D) array."""
    A, B = as_matrix(Xstar), as_matrix(X)
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"inputs have {A.shape[1]} and {B.shape[1]} columns")
    return _evaluate(k, _check_params(k, params), A, B, hyper_grad=False, input_grad=True).dA


def _pair(x, x2) -> Tuple[np.ndarray, np.ndarray]:
    a = x.to_array() if isinstance(x, FeatureVector) else np.atleast_1d(np.asarray(x, dtype=float))
    b = x2.to_array() if isinstance(x2, FeatureVector) else np.atleast_1d(np.asarray(x2, dtype=float))
    if a.ndim != 1 or a.shape != b.shape:
        raise DimensionMismatch(f"cannot compare inputs of shapes {a.shape} and {b.shape}")
    return a[None, :], b[None, :]


def _lengthscale_roles(lengthscales: Sequence[float]) -> Dict[str, float]:
    return {f"ls_{i}": float(v) for i, v in enumerate(lengthscales)}


def eval_se(x, x2, sigma_f: float, sigma_l: float) -> float:
    a, b = _pair(x, x2)
    return float(_se_leaf(a, b, {"sigma_f": sigma_f, "sigma_l": sigma_l}, False).K[0, 0])


def eval_ard_se(x, x2, sigma_f: float, lengthscales: Sequence[float]) -> float:
    a, b = _pair(x, x2)
    theta = {"sigma_f": sigma_f, **_lengthscale_roles(lengthscales)}
    return float(_LEAVES["ArdSE"](a, b, theta, False).K[0, 0])


def eval_arrhenius(tK: float, tK2: float, l_T: float, sigma_T: float) -> float:
    a, b = _pair(tK, tK2)
    return float(_arrhenius_leaf(a, b, {"l_T": l_T, "sigma_T": sigma_T}, False).K[0, 0])


def eval_poly(d: float, d2: float, l_D: float, c_D: float, deg: float) -> float:
    a, b = _pair(d, d2)
    return float(_polynomial_leaf(a, b, {"l_D": l_D, "c_D": c_D, "d_D": deg}, False).K[0, 0])


def eval_capacity_se(lags, lags2, l_c: float, lengthscales: Sequence[float]) -> float:
    a, b = _pair(lags, lags2)
    theta = {"l_c": l_c, **_lengthscale_roles(lengthscales)}
    return float(_LEAVES["CapacitySE"](a, b, theta, False).K[0, 0])


def eval_model_b(x: FeatureVector, x2: FeatureVector, params) -> float:
    """Model B kernel value, evaluated through the composition engine."""
    a, b = _pair(x, x2)
    return float(gram(model_b_kernel(a.shape[1] - 2), params, a, b)[0, 0])


def eval_segm(x, x2, sigma_f: float, sigma_l: float) -> float:
    """Isotropic SE over the concatenated, already standardized, feature vector."""
    return eval_se(x, x2, sigma_f, sigma_l)


def kernel_to_dict(k: KernelNode, params: Optional[HyperParamSet] = None) -> dict:
    """Serialize a kernel tree, with parameter values and bounds when given."""

    def node_doc(node: KernelNode) -> dict:
        doc = {"variant": node.variant}
        if node.is_leaf:
            doc["features"] = node.features
            doc["bind"] = dict(node.bind)
            if params is not None:
                doc["params"] = {n: params[n] for n in node.param_names()}
        doc["children"] = [node_doc(c) for c in node.children]
        return doc

    doc = node_doc(k)
    if params is not None:
        doc["hyperparameters"] = params.to_list()
    return doc


def kernel_from_dict(doc: Mapping) -> Tuple[KernelNode, Optional[HyperParamSet]]:
    def build(d: Mapping) -> KernelNode:
        return KernelNode(
            variant=d["variant"],
            features=d.get("features", "all"),
            bind=tuple(d.get("bind", {}).items()),
            children=tuple(build(c) for c in d.get("children", [])),
        )

    try:
        node = build(doc)
    except (KeyError, TypeError, AttributeError) as e:
        raise ValidationError(f"malformed kernel document: {e}") from e
    params = None
    if "hyperparameters" in doc:
        params = HyperParamSet.from_list(doc["hyperparameters"])
    else:
        values: Dict[str, float] = {}

        def collect(d):
            values.update(d.get("params", {}))
            for c in d.get("children", []):
                collect(c)

        collect(doc)
        if values:
            params = HyperParamSet.from_values(values, {n: (min(v, 1e-3), max(v, 1e3)) for n, v in values.items()})
    return node, params
