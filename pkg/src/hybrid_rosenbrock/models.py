"""Rosenbrock-family target densities.

Four families are supported:

``TwoD``    ``-a (x1 - mu)^2 - b (x2 - x1^2)^2``
``Full``    ``-scale * sum_i [quad (x_{i+1} - x_i^2)^2 + (x_i - mu)^2]``
``Even``    product of ``n/2`` independent 2-d kernels
``Hybrid``  one root ``x1`` shared by ``n2`` blocks of ``n1 - 1`` links

Variables of a Hybrid model are ordered ``x1, x_{1,2}, ..., x_{1,n1},
x_{2,2}, ..., x_{n2,n1}`` (block by block).

All evaluation happens in log space.  Every kernel is lowered to a list of
anchor and link terms (see :mod:`hybrid_rosenbrock._kernels`), which is
what the gradient, Hessian and samplers consume.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from . import _kernels
from .errors import DimensionError, NonFiniteError, NotDecomposableError

STANDARD_MU = 1.0
STANDARD_A = 1.0 / 20.0
STANDARD_B = 100.0 / 20.0


def _positive(name, value):
    value = float(value)
    if not (value > 0.0 and math.isfinite(value)):
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return value


def _finite(name, value):
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class TwoDParams:
    mu: float = STANDARD_MU
    a: float = STANDARD_A
    b: float = STANDARD_B

    def __post_init__(self):
        object.__setattr__(self, "mu", _finite("mu", self.mu))
        object.__setattr__(self, "a", _positive("a", self.a))
        object.__setattr__(self, "b", _positive("b", self.b))

    @property
    def dim(self) -> int:
        return 2


@dataclass(frozen=True)
class FullParams:
    """Full Rosenbrock kernel with uniform coefficients.

    ``scale`` is the overall ``1/20`` factor and ``quad_coeff`` the ``100``
    in front of each link term.
    """

    n: int = 3
    scale: float = 1.0 / 20.0
    quad_coeff: float = 100.0
    mu: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"Full kernel needs integer n >= 2, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "scale", _positive("scale", self.scale))
        object.__setattr__(self, "quad_coeff", _positive("quad_coeff", self.quad_coeff))
        object.__setattr__(self, "mu", _finite("mu", self.mu))

    @property
    def dim(self) -> int:
        return self.n


@dataclass(frozen=True)
class EvenParams:
    n: int = 4
    mus: tuple = (1.0, 1.0)
    scale: float = 1.0 / 20.0
    quad_coeff: float = 100.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2 or self.n % 2:
            raise ValueError(f"Even kernel needs an even n >= 2, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        mus = tuple(_finite("mus", m) for m in np.atleast_1d(self.mus))
        if len(mus) == 1 and self.n > 2:
            mus = mus * (self.n // 2)
        if len(mus) != self.n // 2:
            raise ValueError(f"Even kernel with n={self.n} needs {self.n // 2} mus, got {len(mus)}")
        object.__setattr__(self, "mus", mus)
        object.__setattr__(self, "scale", _positive("scale", self.scale))
        object.__setattr__(self, "quad_coeff", _positive("quad_coeff", self.quad_coeff))

    @property
    def dim(self) -> int:
        return self.n


@dataclass(frozen=True)
class HybridParams:
    """Hybrid Rosenbrock parameters.

    ``b`` is stored as an ``n2 x (n1 - 1)`` tuple of tuples; ``b[j][i-2]``
    is the coefficient of ``(x_{j+1,i} - x_{j+1,i-1}^2)^2``.  A scalar is
    broadcast to every link.
    """

    mu: float = STANDARD_MU
    a: float = STANDARD_A
    b: Union[float, Sequence[Sequence[float]]] = STANDARD_B
    n1: int = 2
    n2: int = 1

    def __post_init__(self):
        if int(self.n1) != self.n1 or self.n1 < 2:
            raise ValueError(f"n1 must be an integer >= 2, got {self.n1!r}")
        if int(self.n2) != self.n2 or self.n2 < 1:
            raise ValueError(f"n2 must be an integer >= 1, got {self.n2!r}")
        n1, n2 = int(self.n1), int(self.n2)
        object.__setattr__(self, "n1", n1)
        object.__setattr__(self, "n2", n2)
        object.__setattr__(self, "mu", _finite("mu", self.mu))
        object.__setattr__(self, "a", _positive("a", self.a))
        b = np.asarray(self.b, dtype=float)
        if b.ndim == 0:
            b = np.full((n2, n1 - 1), float(b))
        if b.shape != (n2, n1 - 1):
            raise ValueError(f"b must have shape ({n2}, {n1 - 1}), got {b.shape}")
        rows = tuple(tuple(_positive("b", v) for v in row) for row in b)
        object.__setattr__(self, "b", rows)

    @property
    def dim(self) -> int:
        return (self.n1 - 1) * self.n2 + 1

    def index(self, j: int, i: int) -> int:
        """Position of ``x_{j,i}`` (1-based ``j``, ``i >= 2``) in the state vector."""
        if not (1 <= j <= self.n2 and 2 <= i <= self.n1):
            raise IndexError(f"no variable x_{{{j},{i}}} in a ({self.n1},{self.n2}) model")
        return 1 + (j - 1) * (self.n1 - 1) + (i - 2)


Params = Union[TwoDParams, FullParams, EvenParams, HybridParams]

_FAMILY = {TwoDParams: "twod", FullParams: "full", EvenParams: "even", HybridParams: "hybrid"}


class Terms(NamedTuple):
    u_idx: np.ndarray
    u_c: np.ndarray
    u_w: np.ndarray
    l_ch: np.ndarray
    l_pa: np.ndarray
    l_w: np.ndarray


def _build_terms(p: Params) -> Terms:
    anchors, links = [], []  # (index, centre, weight), (child, parent, weight)
    if isinstance(p, TwoDParams):
        anchors.append((0, p.mu, p.a))
        links.append((1, 0, p.b))
    elif isinstance(p, FullParams):
        for i in range(p.n - 1):
            anchors.append((i, p.mu, p.scale))
            links.append((i + 1, i, p.quad_coeff * p.scale))
    elif isinstance(p, EvenParams):
        for k, m in enumerate(p.mus):
            anchors.append((2 * k, m, p.scale))
            links.append((2 * k + 1, 2 * k, p.quad_coeff * p.scale))
    else:
        anchors.append((0, p.mu, p.a))
        for j in range(1, p.n2 + 1):
            for i in range(2, p.n1 + 1):
                child = p.index(j, i)
                parent = 0 if i == 2 else child - 1
                links.append((child, parent, p.b[j - 1][i - 2]))
    u = np.array(anchors, dtype=float).reshape(-1, 3)
    lk = np.array(links, dtype=float).reshape(-1, 3)
    return Terms(
        np.ascontiguousarray(u[:, 0], dtype=np.int64), np.ascontiguousarray(u[:, 1]),
        np.ascontiguousarray(u[:, 2]),
        np.ascontiguousarray(lk[:, 0], dtype=np.int64), np.ascontiguousarray(lk[:, 1], dtype=np.int64),
        np.ascontiguousarray(lk[:, 2]),
    )


@dataclass(frozen=True)
class ModelSpec:
    """A target density: one of the four parameter types plus its dimension."""

    params: Params
    dim: int = field(init=False)
    terms: Terms = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if type(self.params) not in _FAMILY:
            raise TypeError(f"unknown parameter type {type(self.params).__name__}")
        object.__setattr__(self, "dim", self.params.dim)
        object.__setattr__(self, "terms", _build_terms(self.params))

    @property
    def family(self) -> str:
        return _FAMILY[type(self.params)]

    @property
    def decomposable(self) -> bool:
        return self.family != "full"

    @classmethod
    def twod(cls, mu=STANDARD_MU, a=STANDARD_A, b=STANDARD_B) -> "ModelSpec":
        return cls(TwoDParams(mu, a, b))

    @classmethod
    def full(cls, n=3, scale=1.0 / 20.0, quad_coeff=100.0, mu=1.0) -> "ModelSpec":
        return cls(FullParams(n, scale, quad_coeff, mu))

    @classmethod
    def even(cls, n=4, mus=(1.0,), scale=1.0 / 20.0, quad_coeff=100.0) -> "ModelSpec":
        return cls(EvenParams(n, tuple(np.atleast_1d(mus)), scale, quad_coeff))

    @classmethod
    def hybrid(cls, n1=2, n2=1, mu=STANDARD_MU, a=STANDARD_A, b=STANDARD_B) -> "ModelSpec":
        return cls(HybridParams(mu, a, b, n1, n2))

    def variable_names(self) -> list:
        """Column labels: ``x_1, x_{j}_{i}`` for Hybrid, ``x_1..x_n`` otherwise."""
        p = self.params
        if isinstance(p, HybridParams):
            return ["x_1"] + [f"x_{j}_{i}" for j in range(1, p.n2 + 1) for i in range(2, p.n1 + 1)]
        return [f"x_{k}" for k in range(1, self.dim + 1)]

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        p = self.params
        if isinstance(p, TwoDParams):
            return {"family": "twod", "mu": p.mu, "a": p.a, "b": p.b}
        if isinstance(p, FullParams):
            return {"family": "full", "n": p.n, "scale": p.scale, "quad_coeff": p.quad_coeff, "mu": p.mu}
        if isinstance(p, EvenParams):
            return {"family": "even", "n": p.n, "mus": list(p.mus), "scale": p.scale,
                    "quad_coeff": p.quad_coeff}
        return {"family": "hybrid", "mu": p.mu, "a": p.a, "b": [list(r) for r in p.b],
                "n1": p.n1, "n2": p.n2}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        """Build a spec from its JSON form.

        Numbers may be given as JSON numbers or as decimal strings
        (``"0.05"``); strings are parsed through :class:`decimal.Decimal`
        and then rounded once to the nearest double.
        """
        d = {k: _num(v) for k, v in d.items()}
        family = str(d.get("family", "")).lower()
        if family == "twod":
            return cls(TwoDParams(d.get("mu", STANDARD_MU), d.get("a", STANDARD_A), d.get("b", STANDARD_B)))
        if family == "full":
            return cls(FullParams(d.get("n", 3), d.get("scale", 0.05), d.get("quad_coeff", 100.0),
                                  d.get("mu", 1.0)))
        if family == "even":
            return cls(EvenParams(d.get("n", 4), tuple(np.atleast_1d(d.get("mus", 1.0))),
                                  d.get("scale", 0.05), d.get("quad_coeff", 100.0)))
        if family == "hybrid":
            return cls(HybridParams(d.get("mu", STANDARD_MU), d.get("a", STANDARD_A),
                                    d.get("b", STANDARD_B), d.get("n1", 2), d.get("n2", 1)))
        raise ValueError(f"unknown model family {d.get('family')!r}")

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))


def _num(v):
    if isinstance(v, str) and v.lower() not in ("twod", "full", "even", "hybrid"):
        return float(Decimal(v))
    if isinstance(v, list):
        return [_num(x) for x in v]
    return v


def general_form(params: Union[FullParams, EvenParams]) -> tuple:
    """Map ``(scale, quad_coeff)`` to the ``(a, b)`` of the 2-d general form.

    ``a = scale`` and ``b = quad_coeff * scale``, so the standard ``1/20`` and
    ``100`` give ``a = 0.05``, ``b = 5``.
    """
    return params.scale, params.quad_coeff * params.scale


# -- evaluation ---------------------------------------------------------------


@dataclass(frozen=True)
class DensityEval:
    log_kernel: float
    grad: np.ndarray
    hessian: Optional[np.ndarray] = None


def _check_point(spec: ModelSpec, x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != spec.dim:
        raise DimensionError(f"expected a vector of length {spec.dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite component in x = {x.tolist()}")
    return x


def _check_result(what, value, x):
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{what} overflowed at x = {x.tolist()}")
    return value


def log_kernel(spec: ModelSpec, x) -> float:
    """Unnormalised log density of ``spec`` at ``x``."""
    x = _check_point(spec, x)
    return float(_check_result("log kernel", _kernels.log_kernel(x, *spec.terms), x))


def log_kernel_rows(spec: ModelSpec, xs) -> np.ndarray:
    """Vectorised :func:`log_kernel` over the rows of ``xs``."""
    xs = np.ascontiguousarray(xs, dtype=float)
    if xs.ndim != 2 or xs.shape[1] != spec.dim:
        raise DimensionError(f"expected an (N, {spec.dim}) array, got shape {xs.shape}")
    return _kernels.log_kernel_rows(xs, *spec.terms)


def grad_log_kernel(spec: ModelSpec, x) -> np.ndarray:
    x = _check_point(spec, x)
    return _check_result("gradient", _kernels.grad_log_kernel(x, *spec.terms), x)


def hessian_log_kernel(spec: ModelSpec, x) -> np.ndarray:
    """Analytic Hessian; symmetric by construction and sparse along the dependency graph."""
    x = _check_point(spec, x)
    return _check_result("Hessian", _kernels.hessian_log_kernel(x, *spec.terms), x)


def evaluate(spec: ModelSpec, x, hessian: bool = False) -> DensityEval:
    x = _check_point(spec, x)
    return DensityEval(
        log_kernel(spec, x),
        grad_log_kernel(spec, x),
        hessian_log_kernel(spec, x) if hessian else None,
    )


def dependency_edges(spec: ModelSpec) -> list:
    """(parent, child) index pairs of the dependency graph."""
    t = spec.terms
    return [(int(p), int(c)) for c, p in zip(t.l_ch, t.l_pa)]


# -- normalising constants and conditional structure -------------------------


def log_norm_constant(spec: ModelSpec) -> Optional[float]:
    """Log of the normalising constant, or ``None`` where none is known.

    TwoD gives ``log(sqrt(ab)/pi)``; Hybrid gives
    ``log(sqrt(a) prod sqrt(b_ji) / pi^(n/2))``.  Full and Even kernels
    return ``None``.
    """
    p = spec.params
    if isinstance(p, TwoDParams):
        return 0.5 * math.log(p.a) + 0.5 * math.log(p.b) - math.log(math.pi)
    if isinstance(p, HybridParams):
        s = 0.5 * math.log(p.a) + sum(0.5 * math.log(v) for row in p.b for v in row)
        return s - 0.5 * spec.dim * math.log(math.pi)
    return None


@dataclass(frozen=True)
class ConditionalGaussian:
    mean: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0.0:
            raise ValueError(f"variance must be positive, got {self.variance!r}")

    @property
    def sd(self) -> float:
        return math.sqrt(self.variance)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * np.log(2.0 * np.pi * self.variance) - 0.5 * (x - self.mean) ** 2 / self.variance


@dataclass(frozen=True)
class Factor:
    """One factor of the ancestral factorisation.

    A root factor (``parent is None``) is ``N(centre, 1/(2 weight))``; a
    child factor is ``N(x_parent^2, 1/(2 weight))``.
    """

    index: int
    parent: Optional[int]
    weight: float
    centre: float = 0.0

    @property
    def variance(self) -> float:
        return 1.0 / (2.0 * self.weight)

    def conditional(self, parent_value: Optional[float] = None) -> ConditionalGaussian:
        if self.parent is None:
            return ConditionalGaussian(self.centre, self.variance)
        if parent_value is None:
            raise ValueError(f"factor for index {self.index} needs the value of x[{self.parent}]")
        return ConditionalGaussian(float(parent_value) ** 2, self.variance)

    def mean_given(self, x: np.ndarray) -> np.ndarray:
        """Conditional mean evaluated on the rows (or single vector) ``x``."""
        if self.parent is None:
            return np.full(np.shape(x)[:-1], self.centre)
        return x[..., self.parent] ** 2

    # builder-style access mirrors ``conditional``
    @property
    def builder(self) -> Callable[[Optional[float]], ConditionalGaussian]:
        return self.conditional


def conditional_decomposition(spec: ModelSpec) -> list:
    """Ancestral factorisation in topological order.

    Raises :class:`NotDecomposableError` for the Full kernel.
    """
    if not spec.decomposable:
        raise NotDecomposableError("the Full Rosenbrock kernel has no closed conditional chain")
    t = spec.terms
    factors = {int(k): Factor(int(k), None, float(w), float(c)) for k, c, w in zip(t.u_idx, t.u_c, t.u_w)}
    for c, p, w in zip(t.l_ch, t.l_pa, t.l_w):
        factors[int(c)] = Factor(int(c), int(p), float(w))
    # parents always precede children in the variable ordering
    return [factors[k] for k in range(spec.dim)]


def completed_square_conditional(b: float, c: float, mu2: float, x1: float) -> ConditionalGaussian:
    """``x2 | x1`` after combining ``-b (x2 - x1^2)^2 - c (x2 - mu2)^2``."""
    prec = 2.0 * b + 2.0 * c
    return ConditionalGaussian((2.0 * b * x1 ** 2 + 2.0 * c * mu2) / prec, 1.0 / prec)


def full3d_conditional_x2(params: FullParams, x1: float) -> ConditionalGaussian:
    """Conditional law of ``x2`` given ``x1`` in the 3-d Full kernel.

    Integrating out ``x3`` leaves ``x2 | x1`` Gaussian with variance
    ``1/(2b + 2c)``, smaller than the 2-d kernel's ``1/(2b)``.
    """
    if params.n != 3:
        raise ValueError(f"only defined for the 3-d Full kernel, got n={params.n}")
    c, b = general_form(params)
    return completed_square_conditional(b, c, params.mu, x1)
