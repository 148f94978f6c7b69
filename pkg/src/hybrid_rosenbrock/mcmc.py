"""Random-walk Metropolis, MALA and simplified manifold MALA.

All three samplers share one proposal and acceptance path:

    x' = x + (h/2) Sigma(x) grad log pi(x) + N(0, h Sigma(x))

sMMALA uses the regularised inverse Hessian for ``Sigma``; MALA uses the
identity; RWM additionally drops the drift.  Hot loops run in the compiled
kernel in :mod:`hybrid_rosenbrock._kernels`; the Python-level helpers here
call the same compiled routines one step at a time.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels, io
from .errors import DivergenceError, MetricError, NonFiniteError
from .exact import RngStream
from .models import ModelSpec, grad_log_kernel, hessian_log_kernel, log_kernel

ALGORITHMS = {"rwm": _kernels.RWM, "mala": _kernels.MALA, "smmala": _kernels.SMMALA}
REGULARISATIONS = {"floor": _kernels.REG_FLOOR, "multiplicative": _kernels.REG_MULTIPLICATIVE}

CHUNK = 1 << 16


@dataclass(frozen=True)
class SamplerConfig:
    """Sampler settings.

    ``h`` is the starting step size; with ``warmup > 0`` it is adapted
    towards ``target_accept`` in windows of ``adapt_window`` steps and then
    frozen.  ``init`` defaults to the all-ones vector.
    """

    algorithm: str = "smmala"
    h: float = 0.3
    alpha: float = 1e6
    n_steps: int = 10_000
    warmup: int = 0
    target_accept: float = 0.5
    init: Optional[tuple] = None
    thin: int = 1
    regularization: str = "floor"
    adapt_window: int = 50

    def __post_init__(self):
        algo = self.algorithm.lower()
        if algo not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {sorted(ALGORITHMS)}, got {self.algorithm!r}")
        object.__setattr__(self, "algorithm", algo)
        if self.regularization not in REGULARISATIONS:
            raise ValueError(f"regularization must be one of {sorted(REGULARISATIONS)}")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise ValueError(f"h must be positive, got {self.h!r}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise ValueError(f"n_steps must be a non-negative integer, got {self.n_steps!r}")
        if int(self.warmup) != self.warmup or self.warmup < 0:
            raise ValueError(f"warmup must be a non-negative integer, got {self.warmup!r}")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError(f"target_accept must lie in (0, 1), got {self.target_accept!r}")
        if int(self.thin) != self.thin or self.thin < 1:
            raise ValueError(f"thin must be an integer >= 1, got {self.thin!r}")
        if int(self.adapt_window) != self.adapt_window or self.adapt_window < 1:
            raise ValueError("adapt_window must be a positive integer")
        for name in ("n_steps", "warmup", "thin", "adapt_window"):
            object.__setattr__(self, name, int(getattr(self, name)))
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "alpha", float(self.alpha))
        if self.init is not None:
            object.__setattr__(self, "init", tuple(float(v) for v in self.init))

    def start(self, spec: ModelSpec) -> np.ndarray:
        if self.init is None:
            return np.ones(spec.dim)
        x0 = np.array(self.init, dtype=float)
        if x0.shape != (spec.dim,):
            raise ValueError(f"init has length {x0.size}, model dimension is {spec.dim}")
        return x0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init"] = None if self.init is None else list(self.init)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if known.get("init") is not None:
            known["init"] = tuple(known["init"])
        return cls(**known)


@dataclass
class Chain:
    states: np.ndarray = field(repr=False)
    accepted: np.ndarray = field(repr=False)
    config: SamplerConfig
    rng: RngStream
    tuned_h: float
    divergences: int = 0
    start: Optional[np.ndarray] = field(default=None, repr=False)
    warmup_acceptance: Optional[float] = None
    trace: Optional[dict] = field(default=None, repr=False)

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if self.accepted.size else float("nan")

    def sidecar(self) -> dict:
        return {
            "tuned_h": self.tuned_h,
            "acceptance_rate": self.acceptance_rate,
            "divergences": self.divergences,
            "config": self.config.to_dict(),
            "seed": self.rng.seed,
            "stream_id": self.rng.stream_id,
            "warmup_acceptance": self.warmup_acceptance,
            "n_kept": int(self.states.shape[0]),
        }

    def write(self, out_dir, spec: ModelSpec, stem="chain", formats=("csv", "bin")) -> list:
        out_dir = Path(out_dir)
        written = []
        if "csv" in formats:
            written.append(io.write_matrix_csv(out_dir / f"{stem}.csv", spec.variable_names(), self.states))
        if "bin" in formats:
            written.append(io.write_binary(out_dir / f"{stem}.bin", self.states))
        side = self.sidecar()
        side["model"] = spec.to_dict()
        written.append(io.write_json(out_dir / f"{stem}.json", side))
        return written


@dataclass(frozen=True)
class Metric:
    """Proposal covariance ``Sigma = Q diag(1/lam) Q^T`` kept in factored form."""

    eigvecs: np.ndarray
    precision_eigvals: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        Q, lam = self.eigvecs, self.precision_eigvals
        return (Q / lam) @ Q.T

    @property
    def precision(self) -> np.ndarray:
        Q, lam = self.eigvecs, self.precision_eigvals
        return (Q * lam) @ Q.T

    @property
    def log_det(self) -> float:
        return float(-np.sum(np.log(self.precision_eigvals)))


def identity_metric(dim: int) -> Metric:
    return Metric(np.eye(dim), np.ones(dim))


def metric_from_hessian(H, alpha: float, regularization: str = "floor") -> Metric:
    """Regularised absolute-eigenvalue metric from a Hessian of the log density.

    With the default ``floor`` rule each eigenvalue becomes
    ``max(|lambda|, 1/alpha)``.  The ``multiplicative`` rule divides the
    eigenvalues below ``1/alpha`` by ``alpha`` instead and fails if any
    ends up non-positive.
    """
    H = np.ascontiguousarray(H, dtype=float)
    Q, lam, ok = _kernels.regularise(H, float(alpha), REGULARISATIONS[regularization])
    if not ok:
        raise MetricError("regularised Hessian is not positive definite")
    return Metric(Q, lam)


def regularized_metric(spec: ModelSpec, x, alpha: float, regularization: str = "floor") -> Metric:
    try:
        H = hessian_log_kernel(spec, x)
        return metric_from_hessian(H, alpha, regularization)
    except (MetricError, NonFiniteError, np.linalg.LinAlgError) as exc:
        raise MetricError(f"cannot build metric at x = {np.asarray(x).tolist()}: {exc}", point=x) from exc


def proposal_mean(spec: ModelSpec, x, h: float, metric: Metric, drift: bool = True) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    mode = _kernels.MALA if drift else _kernels.RWM
    g = grad_log_kernel(spec, x) if drift else np.zeros_like(x)
    mean = _kernels.proposal_mean(x, g, metric.eigvecs, metric.precision_eigvals, float(h), mode)
    if not np.all(np.isfinite(mean)):
        raise DivergenceError(f"non-finite drift at x = {x.tolist()}")
    return mean


def log_proposal_density(spec: ModelSpec, x_to, x_from, h: float, metric_from: Metric,
                         drift: bool = True) -> float:
    """``log q(x_to | x_from)`` with the metric built at ``x_from``."""
    mean = proposal_mean(spec, x_from, h, metric_from, drift)
    return float(_kernels.log_q(np.asarray(x_to, dtype=float), mean, metric_from.eigvecs,
                                metric_from.precision_eigvals, float(h)))


def propose_smmala(spec: ModelSpec, x, h: float, metric: Metric, rng: np.random.Generator = None,
                   drift: bool = True, z=None):
    """Draw one Langevin proposal; returns ``(x_prop, log_q_forward)``.

    Pass ``z`` to supply the standard-normal draw directly.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=float)
    if z is None:
        z = rng.standard_normal(x.size)
    mode = _kernels.MALA if drift else _kernels.RWM
    g = grad_log_kernel(spec, x) if drift else np.zeros_like(x)
    x_prop, mean = _kernels.propose(x, g, metric.eigvecs, metric.precision_eigvals, float(h), mode,
                                    np.asarray(z, dtype=float))
    if not np.all(np.isfinite(mean)):
        raise DivergenceError(f"non-finite drift at x = {x.tolist()}")
    if not np.all(np.isfinite(x_prop)):
        raise DivergenceError(f"non-finite proposal from x = {x.tolist()}")
    lq = float(_kernels.log_q(x_prop, mean, metric.eigvecs, metric.precision_eigvals, float(h)))
    return x_prop, lq


def log_acceptance_ratio(spec: ModelSpec, x, x_prop, log_q_fwd: float, log_q_rev: float) -> float:
    return log_kernel(spec, x_prop) + log_q_rev - log_kernel(spec, x) - log_q_fwd


def mh_accept(spec: ModelSpec, x, x_prop, log_q_fwd: float, log_q_rev: float,
              rng: np.random.Generator):
    """Metropolis-Hastings decision; returns ``(next_x, accepted)``.

    A proposal whose log ratio cannot be evaluated is rejected.
    """
    try:
        logr = log_acceptance_ratio(spec, x, x_prop, log_q_fwd, log_q_rev)
    except NonFiniteError:
        return np.asarray(x, dtype=float), False
    if not math.isfinite(logr):
        return np.asarray(x, dtype=float), False
    u = rng.random()
    if logr >= 0.0 or math.log(u) < logr:
        return np.asarray(x_prop, dtype=float), True
    return np.asarray(x, dtype=float), False


def mcmc_step(spec: ModelSpec, x, h: float, rng: np.random.Generator, algorithm: str = "smmala",
              alpha: float = 1e6, regularization: str = "floor"):
    """One full transition through the Python-level helpers."""
    x = np.asarray(x, dtype=float)
    drift = algorithm != "rwm"

    def metric_at(point):
        if algorithm == "smmala":
            return regularized_metric(spec, point, alpha, regularization)
        return identity_metric(spec.dim)

    m = metric_at(x)
    try:
        x_prop, lq_f = propose_smmala(spec, x, h, m, rng, drift=drift)
        lq_r = log_proposal_density(spec, x, x_prop, h, metric_at(x_prop), drift=drift)
    except (DivergenceError, MetricError, NonFiniteError):
        return x, False
    return mh_accept(spec, x, x_prop, lq_f, lq_r, rng)


def tune_step_size(h: float, accept_rate: float, t: int, target_accept: float = 0.5) -> float:
    """Robbins-Monro step on ``log h`` with gain ``t ** -0.6``."""
    return float(math.exp(math.log(h) + t ** -0.6 * (accept_rate - target_accept)))


def run_chain(spec: ModelSpec, config: SamplerConfig, rng: RngStream, trace: bool = False) -> Chain:
    """Warm up (adapting ``h``), then run ``config.n_steps`` frozen steps.

    Acceptance flags cover every post-warmup step; states are kept every
    ``thin`` steps.  Divergent proposals are rejected and counted.  With
    ``trace=True`` the proposals, log acceptance ratios and the random
    draws of the sampling phase are returned in ``chain.trace``.
    """
    gen = rng.generator()
    x = config.start(spec)
    if not np.all(np.isfinite(x)) or not math.isfinite(log_kernel(spec, x)):
        raise NonFiniteError(f"non-finite initial state {x.tolist()}")
    mode = ALGORITHMS[config.algorithm]
    reg = REGULARISATIONS[config.regularization]
    terms = spec.terms
    empty_p = np.empty((0, spec.dim))
    empty_r = np.empty(0)

    h = config.h
    divergences = 0
    warm_acc = []
    if config.warmup:
        W = config.adapt_window
        scratch = np.empty((W, spec.dim))
        done, t = 0, 0
        while done < config.warmup:
            m = min(W, config.warmup - done)
            z = gen.standard_normal((m, spec.dim))
            u = gen.random(m)
            acc = np.empty(m, dtype=np.bool_)
            x, _, div = _kernels.run_steps(x, h, config.alpha, mode, reg, z, u, 1, 0, *terms,
                                           scratch, acc, empty_p, empty_r)
            divergences += div
            done += m
            t += 1
            warm_acc.append(acc)
            h = tune_step_size(h, float(acc.mean()), t, config.target_accept)
    start = x.copy()

    n = config.n_steps
    states = np.empty((n // config.thin, spec.dim))
    accepted = np.empty(n, dtype=np.bool_)
    tr = None
    if trace:
        tr = {"proposals": np.empty((n, spec.dim)), "log_ratio": np.empty(n),
              "z": np.empty((n, spec.dim)), "u": np.empty(n)}
    kept = 0
    done = 0
    while done < n:
        m = min(CHUNK, n - done)
        z = gen.standard_normal((m, spec.dim))
        u = gen.random(m)
        tp, tl = (tr["proposals"][done:done + m], tr["log_ratio"][done:done + m]) if trace else (empty_p, empty_r)
        x, k, div = _kernels.run_steps(x, h, config.alpha, mode, reg, z, u, config.thin, done, *terms,
                                       states[kept:], accepted[done:done + m], tp, tl)
        if trace:
            tr["z"][done:done + m] = z
            tr["u"][done:done + m] = u
        kept += k
        divergences += div
        done += m
    if not np.all(np.isfinite(states)):
        bad = int(np.argmax(~np.all(np.isfinite(states), axis=1)))
        raise NonFiniteError(f"chain reached a non-finite state at kept index {bad}")
    return Chain(
        states=states,
        accepted=accepted,
        config=config,
        rng=rng,
        tuned_h=h,
        divergences=divergences,
        start=start,
        warmup_acceptance=float(np.concatenate(warm_acc).mean()) if warm_acc else None,
        trace=tr,
    )
