"""Chain diagnostics: integrated autocorrelation time, quantiles, KS tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import io
from .errors import ZeroVarianceError

MIN_SERIES_LENGTH = 100

# sqrt(-log(alpha / 2) / 2) for alpha = 0.01
KS_CRITICAL_1PCT = math.sqrt(-0.5 * math.log(0.005))

DEFAULT_PROBS = tuple(np.round(np.arange(0.005, 1.0, 0.005), 3))


def autocorrelation(series) -> np.ndarray:
    """Sample autocorrelation at lags ``0..N-1`` with 1/N normalisation."""
    y = np.asarray(series, dtype=float)
    y = y - y.mean()
    n = y.size
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n] / n
    if not acov[0] > 0.0:
        raise ZeroVarianceError("series has zero variance")
    return acov / acov[0]


def integrated_autocorrelation(series) -> tuple:
    """Integrated autocorrelation time ``tau = 1 + 2 sum_{l=1}^{L} rho(l)``.

    ``L`` is the last lag before the first non-positive autocorrelation
    (initial positive sequence).  Returns ``(tau, L)``.
    """
    y = np.asarray(series, dtype=float)
    if y.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if y.size < MIN_SERIES_LENGTH:
        raise ValueError(f"series needs at least {MIN_SERIES_LENGTH} values, got {y.size}")
    if not np.all(np.isfinite(y)):
        raise ValueError("series contains non-finite values")
    if np.ptp(y) == 0.0:
        raise ZeroVarianceError("series is constant")
    rho = autocorrelation(y)
    nonpos = np.flatnonzero(rho[1:] <= 0.0)
    L = int(nonpos[0]) if nonpos.size else y.size - 1
    return float(1.0 + 2.0 * rho[1:L + 1].sum()), L


@dataclass
class IatReport:
    tau_per_component: np.ndarray
    truncation_lag_per_component: np.ndarray

    @property
    def tau_max(self) -> float:
        return float(np.max(self.tau_per_component))

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.tau_per_component))


def iat_report(chain) -> IatReport:
    """Per-component ``tau`` and their maximum.

    Accepts a :class:`~hybrid_rosenbrock.mcmc.Chain` or a plain
    ``(steps, dim)`` array.
    """
    states = np.asarray(getattr(chain, "states", chain), dtype=float)
    if states.ndim != 2:
        raise ValueError("expected a (steps, dim) array of states")
    if states.shape[0] < MIN_SERIES_LENGTH:
        raise ValueError(f"chain needs at least {MIN_SERIES_LENGTH} kept states, got {states.shape[0]}")
    taus, lags = zip(*(integrated_autocorrelation(states[:, k]) for k in range(states.shape[1])))
    return IatReport(np.array(taus), np.array(lags, dtype=int))


@dataclass
class QuantileTable:
    probs: np.ndarray
    quantiles_a: np.ndarray
    quantiles_b: np.ndarray
    component: int = 0

    def max_abs_difference(self, max_prob: float = 1.0) -> float:
        m = self.probs <= max_prob + 1e-12
        return float(np.max(np.abs(self.quantiles_a[m] - self.quantiles_b[m])))

    def rows(self):
        for p, qa, qb in zip(self.probs, self.quantiles_a, self.quantiles_b):
            yield [self.component, float(p), float(qa), float(qb)]

    def write_csv(self, path, labels=("a", "b")):
        header = ["component", "prob", f"quantile_{labels[0]}", f"quantile_{labels[1]}"]
        return io.write_csv(path, header, self.rows())


def quantile_table(sample_a, sample_b, probs=DEFAULT_PROBS, component: int = 0) -> QuantileTable:
    """Empirical quantiles of two samples, linear interpolation of order statistics."""
    a = np.asarray(sample_a, dtype=float).ravel()
    b = np.asarray(sample_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("quantile_table needs two non-empty samples")
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or probs.size == 0 or np.any(probs <= 0) or np.any(probs >= 1):
        raise ValueError("probs must be a non-empty vector inside (0, 1)")
    if np.any(np.diff(probs) <= 0):
        raise ValueError("probs must be strictly increasing")
    qa = np.quantile(a, probs, method="linear")
    qb = np.quantile(b, probs, method="linear")
    # floating-point interpolation can break ties by one ulp
    return QuantileTable(probs, np.maximum.accumulate(qa), np.maximum.accumulate(qb), component)


@dataclass
class KsResult:
    statistic: float
    reject_at_1pct: bool
    critical_value: float
    n_eff_a: float
    n_eff_b: float
    deflated: bool = False

    def __iter__(self):
        # allows ``stat, reject = ks_two_sample(...)``
        return iter((self.statistic, self.reject_at_1pct))


def ks_statistic(sample_a, sample_b) -> float:
    a = np.sort(np.asarray(sample_a, dtype=float).ravel())
    b = np.sort(np.asarray(sample_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("ks_two_sample needs two non-empty samples")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def ks_two_sample(sample_a, sample_b, tau_a: float = 1.0, tau_b: float = 1.0) -> KsResult:
    """Two-sample Kolmogorov-Smirnov test at the 1% level.

    The asymptotic critical value uses effective sizes ``n / tau`` so that
    autocorrelated MCMC output is not over-penalised; pass the integrated
    autocorrelation times of each sample (1 for i.i.d. input).
    """
    d = ks_statistic(sample_a, sample_b)
    na = np.size(sample_a) / max(float(tau_a), 1.0)
    nb = np.size(sample_b) / max(float(tau_b), 1.0)
    crit = KS_CRITICAL_1PCT * math.sqrt((na + nb) / (na * nb))
    return KsResult(d, bool(d > crit), crit, na, nb, deflated=(tau_a > 1.0 or tau_b > 1.0))


@dataclass
class RunReport:
    iat: IatReport
    acceptance_rate: float
    means: np.ndarray
    variances: np.ndarray
    divergences: int = 0
    ks: Optional[list] = None
    names: Optional[Sequence[str]] = field(default=None)

    def to_dict(self) -> dict:
        names = list(self.names) if self.names else [f"x{k}" for k in range(len(self.means))]
        comps = []
        for k, name in enumerate(names):
            row = {
                "component": name,
                "tau": float(self.iat.tau_per_component[k]),
                "truncation_lag": int(self.iat.truncation_lag_per_component[k]),
                "mean": float(self.means[k]),
                "variance": float(self.variances[k]),
            }
            if self.ks is not None:
                row["ks_statistic"] = self.ks[k].statistic
                row["ks_critical"] = self.ks[k].critical_value
                row["ks_reject_1pct"] = self.ks[k].reject_at_1pct
                row["ks_deflated"] = self.ks[k].deflated
            comps.append(row)
        return {
            "tau_max": self.iat.tau_max,
            "acceptance_rate": self.acceptance_rate,
            "divergences": self.divergences,
            "components": comps,
        }

    def write_csv(self, path):
        d = self.to_dict()
        header = list(d["components"][0].keys())
        return io.write_csv(path, header, ([c[h] for h in header] for c in d["components"]))


def run_report(chain, names=None, reference=None) -> RunReport:
    """Summarise a chain; with ``reference`` (i.i.d. draws) add per-component KS tests."""
    states = np.asarray(chain.states, dtype=float)
    iat = iat_report(states)
    ks = None
    if reference is not None:
        ref = np.asarray(reference, dtype=float)
        ks = [ks_two_sample(states[:, k], ref[:, k], tau_a=iat.tau_per_component[k])
              for k in range(states.shape[1])]
    return RunReport(
        iat=iat,
        acceptance_rate=chain.acceptance_rate,
        means=states.mean(axis=0),
        variances=states.var(axis=0, ddof=1),
        divergences=chain.divergences,
        ks=ks,
        names=names,
    )
