"""Experiment drivers behind the CLI: constants, validation, sensitivity grid."""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special, stats

from . import diagnostics
from .errors import NonFiniteError, RosenbrockError
from .exact import RngStream, sample_exact
from .mcmc import SamplerConfig, run_chain
from .models import (
    STANDARD_A, STANDARD_B, STANDARD_MU, FullParams, HybridParams, ModelSpec, TwoDParams,
    conditional_decomposition, full3d_conditional_x2, log_kernel, log_kernel_rows, log_norm_constant,
)

# model number -> (n1, n2)
CATALOG = {1: (2, 1), 2: (2, 2), 3: (3, 1), 4: (2, 4), 5: (5, 1), 6: (3, 2)}

DEFAULT_SWEEP = {"mu": (-4.0, 1.0), "a": (0.005, 0.05, 0.5), "b": (0.0005, 0.05, 5.0, 50.0)}

SENSITIVITY_COLUMNS = ["model", "n1", "n2", "varied", "mu", "a", "b", "repetition", "tau_max",
                       "tau_argmax", "acceptance", "tuned_h", "divergences", "diverged"]


def catalog_model(number: int, mu=STANDARD_MU, a=STANDARD_A, b=STANDARD_B) -> ModelSpec:
    n1, n2 = CATALOG[number]
    spec = ModelSpec.hybrid(n1=n1, n2=n2, mu=mu, a=a, b=b)
    assert spec.dim == (n1 - 1) * n2 + 1
    return spec


# -- normalising constants ---------------------------------------------------


def quadrature_constant(spec: ModelSpec, n_sd: float = 8.0) -> dict:
    """Integrate a TwoD kernel numerically and invert the integral.

    The box covers ``n_sd`` standard deviations of ``x1`` and, for each
    ``x1``, ``n_sd`` conditional standard deviations of ``x2`` around
    ``x1^2``; the discarded Gaussian tail mass is bounded by
    ``2 * erfc(n_sd / sqrt 2)``.
    """
    p = spec.params
    if not isinstance(p, TwoDParams):
        raise TypeError("quadrature check is defined for the 2-d kernel")
    s1, s2 = math.sqrt(0.5 / p.a), math.sqrt(0.5 / p.b)

    def f(x2, x1):
        return math.exp(log_kernel(spec, (x1, x2)))

    integral, abserr = integrate.dblquad(
        f, p.mu - n_sd * s1, p.mu + n_sd * s1,
        lambda x1: x1 * x1 - n_sd * s2, lambda x1: x1 * x1 + n_sd * s2,
        epsabs=0.0, epsrel=1e-11,
    )
    tail = 2.0 * special.erfc(n_sd / math.sqrt(2.0))
    return {"integral": integral, "quadrature_error": abserr, "truncation_bound": tail,
            "log_constant": -math.log(integral)}


def _widened(spec: ModelSpec, inflate: float) -> ModelSpec:
    p = spec.params
    return ModelSpec(HybridParams(p.mu, p.a / inflate, np.asarray(p.b) / inflate, p.n1, p.n2))


def importance_constant(spec: ModelSpec, n_samples: int, rng: RngStream, inflate: float = 1.5,
                        chunk: int = 1_000_000) -> dict:
    """Importance-sampling estimate of a Hybrid constant.

    Draws come from the exact sampler of the same model with every
    conditional variance multiplied by ``inflate``; the proposal density is
    the product of its Gaussian factors, evaluated factor by factor.
    """
    if not isinstance(spec.params, HybridParams):
        raise TypeError("importance-sampling check is defined for Hybrid models")
    prop = _widened(spec, inflate)
    factors = conditional_decomposition(prop)
    logw = np.empty(n_samples)
    done, part = 0, 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        x = sample_exact(prop, m, RngStream(rng.seed, (rng.stream_id << 16) + part)).draws
        logq = np.zeros(m)
        for f in factors:
            v = f.variance
            logq += -0.5 * math.log(2.0 * math.pi * v) - 0.5 * (x[:, f.index] - f.mean_given(x)) ** 2 / v
        logw[done:done + m] = log_kernel_rows(spec, x) - logq
        done += m
        part += 1
    log_z = special.logsumexp(logw) - math.log(n_samples)
    w = np.exp(logw - log_z)
    rel_se = float(w.std(ddof=1) / math.sqrt(n_samples))
    return {"log_integral": float(log_z), "log_constant": float(-log_z), "relative_se": rel_se,
            "n_samples": n_samples, "inflate": inflate}


def constant_check(spec: ModelSpec, n_samples: int = 10_000_000, rng: Optional[RngStream] = None) -> dict:
    """Compare the closed-form constant with an independent numerical estimate.

    Relative error is measured on the constant itself, not on its log.
    """
    closed = log_norm_constant(spec)
    if closed is None:
        return {"model": spec.to_dict(), "available": False,
                "message": f"normalising constant unknown for the {spec.family} kernel"}
    if isinstance(spec.params, TwoDParams):
        est = quadrature_constant(spec)
        method = "adaptive-quadrature"
    else:
        est = importance_constant(spec, n_samples, rng or RngStream(0))
        method = "importance-sampling"
    rel = abs(math.expm1(est["log_constant"] - closed))
    return {"model": spec.to_dict(), "available": True, "method": method, "closed_form_log": closed,
            "closed_form": math.exp(closed), "estimate_log": est["log_constant"],
            "estimate": math.exp(est["log_constant"]), "relative_error": rel, "details": est}


# -- validation against the exact sampler -------------------------------------


@dataclass
class Validation:
    spec: ModelSpec
    chain: object
    exact: np.ndarray
    tables: list
    ks: list
    taus: np.ndarray
    qq_relative: np.ndarray

    @property
    def passed(self) -> bool:
        return not any(k.reject_at_1pct for k in self.ks)

    def summary(self, qq_tolerance: float = 0.05) -> dict:
        names = self.spec.variable_names()
        return {
            "model": self.spec.to_dict(),
            "passed": self.passed,
            "acceptance_rate": self.chain.acceptance_rate,
            "tuned_h": self.chain.tuned_h,
            "divergences": self.chain.divergences,
            "n_exact": int(self.exact.shape[0]),
            "n_mcmc_kept": int(self.chain.states.shape[0]),
            "qq_tolerance": qq_tolerance,
            "qq_passed": bool(np.all(self.qq_relative < qq_tolerance)),
            "components": [
                {"component": names[k], "tau": float(self.taus[k]), "ks_statistic": r.statistic,
                 "ks_critical": r.critical_value, "ks_reject_1pct": r.reject_at_1pct,
                 "n_eff_mcmc": r.n_eff_a, "qq_max_relative_discrepancy": float(self.qq_relative[k])}
                for k, r in enumerate(self.ks)
            ],
        }


def validate(spec: ModelSpec, config: SamplerConfig, n_exact: int, seed: int,
             probs=diagnostics.DEFAULT_PROBS, target: Optional[ModelSpec] = None) -> Validation:
    """Exact sampler versus MCMC on every one-dimensional marginal.

    ``target`` overrides the density the MCMC chain runs on (negative
    controls); the exact sample is always drawn from ``spec``.
    """
    exact = sample_exact(spec, n_exact, RngStream(seed, 0)).draws
    chain = run_chain(target or spec, config, RngStream(seed, 1))
    iat = diagnostics.iat_report(chain)
    tables, ks, rel = [], [], []
    probs = np.asarray(probs, dtype=float)
    for k in range(spec.dim):
        t = diagnostics.quantile_table(exact[:, k], chain.states[:, k], probs, component=k)
        tables.append(t)
        ks.append(diagnostics.ks_two_sample(chain.states[:, k], exact[:, k], tau_a=iat.tau_per_component[k]))
        width = t.quantiles_a[-1] - t.quantiles_a[0]
        rel.append(t.max_abs_difference(max_prob=0.995) / width)
    return Validation(spec, chain, exact, tables, ks, iat.tau_per_component, np.array(rel))


# -- Full kernel conditional check --------------------------------------------


def _window_residual_variance(x1, x2):
    A = np.column_stack([np.ones(x1.size), x1 ** 2])
    coef, *_ = np.linalg.lstsq(A, x2, rcond=None)
    resid = x2 - A @ coef
    return float(resid @ resid / (x1.size - 2))


def full_conditional_check(chain_states: np.ndarray, params: FullParams, x1_centre: float = 1.0,
                           half_width: float = 0.05, n_batches: int = 20) -> dict:
    """Empirical variance of ``x2 | x1`` near ``x1_centre`` from a Full 3-d chain.

    The ``x1``-dependence of the conditional mean inside the window is
    removed by a least-squares fit of ``x2`` on ``x1^2`` before taking the
    residual variance.  The standard error comes from ``n_batches``
    contiguous batches of the chain.
    """
    x1, x2 = chain_states[:, 0], chain_states[:, 1]
    sel = np.abs(x1 - x1_centre) < half_width
    n = int(sel.sum())
    if n < 10:
        raise RosenbrockError(f"only {n} states fall inside the conditioning window")
    emp = _window_residual_variance(x1[sel], x2[sel])
    batch = []
    for idx in np.array_split(np.arange(x1.size), n_batches):
        s = sel[idx]
        if s.sum() >= 10:
            batch.append(_window_residual_variance(x1[idx][s], x2[idx][s]))
    se = float(np.std(batch, ddof=1) / math.sqrt(len(batch))) if len(batch) > 1 else float("nan")
    theory = full3d_conditional_x2(params, x1_centre).variance
    two_d = 1.0 / (2.0 * params.quad_coeff * params.scale)
    return {"n_in_window": n, "empirical_variance": emp, "standard_error": se,
            "raw_variance": float(x2[sel].var(ddof=1)), "theory_variance": theory, "two_d_variance": two_d,
            "relative_error": abs(emp - theory) / theory}


# -- sensitivity grid -----------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    model: int
    varied: str
    mu: float = STANDARD_MU
    a: float = STANDARD_A
    b: float = STANDARD_B

    @property
    def key(self) -> str:
        return f"{self.model}|{self.mu!r}|{self.a!r}|{self.b!r}"

    def stream_id(self, repetition: int) -> int:
        return (zlib.crc32(self.key.encode()) << 32) | int(repetition)

    def spec(self) -> ModelSpec:
        return catalog_model(self.model, self.mu, self.a, self.b)


def build_grid(models: Sequence[int], sweep: Optional[dict] = None, include_standard: bool = True) -> list:
    """Standard cell plus one-at-a-time sweeps for every selected model.

    Sweep values equal to the standard value are folded into the standard
    cell.
    """
    sweep = DEFAULT_SWEEP if sweep is None else sweep
    std = {"mu": STANDARD_MU, "a": STANDARD_A, "b": STANDARD_B}
    cells = []
    for m in models:
        if m not in CATALOG:
            raise ValueError(f"unknown catalog model {m}; choose from {sorted(CATALOG)}")
        if include_standard:
            cells.append(Cell(m, "standard"))
        for name in ("mu", "a", "b"):
            for v in sweep.get(name, ()):
                if math.isclose(float(v), std[name], rel_tol=1e-12):
                    continue
                cells.append(Cell(m, name, **{name: float(v)}))
    return cells


def run_cell(cell: Cell, repetition: int, seed: int, template: SamplerConfig) -> dict:
    """One sensitivity run; overflow or a stuck chain yields a flagged row."""
    spec = cell.spec()
    n1, n2 = CATALOG[cell.model]
    row = {"model": cell.model, "n1": n1, "n2": n2, "varied": cell.varied, "mu": cell.mu, "a": cell.a,
           "b": cell.b, "repetition": repetition, "tau_max": float("nan"), "tau_argmax": None,
           "acceptance": float("nan"), "tuned_h": float("nan"), "divergences": 0, "diverged": False}
    try:
        chain = run_chain(spec, template, RngStream(seed, cell.stream_id(repetition)))
    except (NonFiniteError, FloatingPointError):
        row["diverged"] = True
        return row
    row.update(acceptance=chain.acceptance_rate, tuned_h=chain.tuned_h, divergences=chain.divergences)
    try:
        iat = diagnostics.iat_report(chain)
        row.update(tau_max=iat.tau_max, tau_argmax=spec.variable_names()[iat.argmax])
    except (RosenbrockError, ValueError):
        row["diverged"] = True
    if chain.divergences:
        row["diverged"] = True
    return row


def sensitivity(cells: Sequence[Cell], repetitions: int, seed: int, template: SamplerConfig,
                threads: int = 1) -> list:
    """Run every (cell, repetition); rows come back in grid order."""
    jobs = [(c, r) for c in cells for r in range(repetitions)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda j: run_cell(j[0], j[1], seed, template), jobs))
    return [run_cell(c, r, seed, template) for c, r in jobs]


def _cell_taus(rows, model, varied="standard", **params):
    out = []
    for r in rows:
        if r["model"] != model or r["varied"] != varied:
            continue
        if any(not math.isclose(r[k], v, rel_tol=1e-12) for k, v in params.items()):
            continue
        if math.isfinite(r["tau_max"]):
            out.append(r["tau_max"])
    return np.array(out)


def sensitivity_claims(rows, n_boot: int = 2000, seed: int = 0, level: float = 0.8) -> dict:
    """Directional orderings of ``tau_max`` at the standard parametrisation.

    (i)   mean over Models {3, 5, 6} exceeds mean over Models {1, 2, 4};
    (ii)  Models 3, 5, 6 are indistinguishable (Kruskal-Wallis on log tau, 5%);
    (iii) Model 1: tau(a=0.5) < tau(standard) < tau(a=0.005).

    Directional claims are scored by bootstrap over repetitions: a claim
    holds when at least ``level`` of the resampled mean comparisons agree.
    """
    rng = np.random.default_rng(seed)

    def boot_means(x):
        idx = rng.integers(0, x.size, size=(n_boot, x.size))
        return x[idx].mean(axis=1)

    out = {}
    high = {m: _cell_taus(rows, m) for m in (3, 5, 6)}
    low = {m: _cell_taus(rows, m) for m in (1, 2, 4)}
    if all(v.size for v in (*high.values(), *low.values())):
        bh = np.mean([boot_means(v) for v in high.values()], axis=0)
        bl = np.mean([boot_means(v) for v in low.values()], axis=0)
        frac = float(np.mean(bh > bl))
        out["i"] = {"mean_high": float(np.mean([v.mean() for v in high.values()])),
                    "mean_low": float(np.mean([v.mean() for v in low.values()])),
                    "fraction": frac, "holds": frac >= level}
        h, p = stats.kruskal(*(np.log(v) for v in high.values()))
        out["ii"] = {"means": {str(m): float(v.mean()) for m, v in high.items()},
                     "kruskal_statistic": float(h), "p_value": float(p), "holds": bool(p > 0.05)}
    lo = _cell_taus(rows, 1, "a", a=0.5)
    st = _cell_taus(rows, 1)
    hi = _cell_taus(rows, 1, "a", a=0.005)
    if lo.size and st.size and hi.size:
        bl, bs, bh = boot_means(lo), boot_means(st), boot_means(hi)
        frac = float(np.mean((bl < bs) & (bs < bh)))
        out["iii"] = {"mean_a_0.5": float(lo.mean()), "mean_standard": float(st.mean()),
                      "mean_a_0.005": float(hi.mean()), "fraction": frac, "holds": frac >= level}
    return out
