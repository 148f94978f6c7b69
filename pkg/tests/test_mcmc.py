import math

import numpy as np
import pytest
from scipy import stats

from hybrid_rosenbrock.diagnostics import iat_report, ks_two_sample
from hybrid_rosenbrock.errors import MetricError
from hybrid_rosenbrock.exact import RngStream, sample_exact
from hybrid_rosenbrock.mcmc import (
    SamplerConfig, identity_metric, log_proposal_density, mcmc_step, metric_from_hessian, mh_accept,
    propose_smmala, regularized_metric, run_chain, tune_step_size,
)
from hybrid_rosenbrock.models import ModelSpec, grad_log_kernel, hessian_log_kernel, log_kernel


# -- metric ---------------------------------------------------------------------


def test_metric_twod_origin():
    m = regularized_metric(ModelSpec.twod(), [0.0, 0.0], alpha=10.0)
    np.testing.assert_allclose(m.matrix, np.diag([10.0, 0.1]), atol=1e-14)


def test_zero_eigenvalue_gets_floor():
    m = metric_from_hessian(np.diag([0.0, -2.0]), alpha=1e6)
    assert sorted(m.precision_eigvals) == [1e-6, 2.0]
    assert m.matrix[0, 0] == pytest.approx(1e6)


def test_negative_definite_hessian_inverts_exactly():
    rng = np.random.default_rng(0)
    for _ in range(20):
        A = rng.normal(size=(5, 5))
        P = A @ A.T + 0.5 * np.eye(5)
        m = metric_from_hessian(-P, alpha=1e6)
        np.testing.assert_allclose(m.matrix, np.linalg.inv(P), atol=1e-10, rtol=1e-10)
        assert m.log_det == pytest.approx(-np.linalg.slogdet(P)[1], rel=1e-10)


def test_indefinite_hessian_uses_absolute_values():
    m = metric_from_hessian(np.diag([3.0, -0.5]), alpha=1e6)
    np.testing.assert_allclose(m.precision, np.diag([3.0, 0.5]), atol=1e-14)


def test_metric_spd_along_random_points():
    spec = ModelSpec.hybrid(3, 2)
    rng = np.random.default_rng(1)
    for x in rng.normal(scale=3, size=(200, 5)):
        m = regularized_metric(spec, x, alpha=1e6)
        assert np.all(m.precision_eigvals >= 1e-6)
        assert np.all(np.linalg.eigvalsh(m.matrix) > 0)


def test_multiplicative_regularisation():
    m = metric_from_hessian(np.diag([1e-8, -4.0]), alpha=100.0, regularization="multiplicative")
    assert sorted(m.precision_eigvals) == pytest.approx([1e-10, 4.0])
    with pytest.raises(MetricError):
        metric_from_hessian(np.diag([0.0, -4.0]), alpha=100.0, regularization="multiplicative")


def test_metric_error_carries_point():
    with pytest.raises(MetricError) as err:
        regularized_metric(ModelSpec.hybrid(5, 1), [1e200, 0, 0, 0, 0], alpha=1e6)
    assert err.value.point is not None


# -- proposal --------------------------------------------------------------------


def test_proposal_formula_identity_metric():
    spec = ModelSpec.twod()
    x = np.array([0.3, -0.4])
    z = np.array([0.7, -1.1])
    h = 0.2
    xp, lq = propose_smmala(spec, x, h, identity_metric(2), z=z)
    expected = x + h / 2 * grad_log_kernel(spec, x) + math.sqrt(h) * z
    np.testing.assert_allclose(xp, expected, rtol=1e-14)
    assert lq == pytest.approx(stats.multivariate_normal(expected - math.sqrt(h) * z, h * np.eye(2)).logpdf(xp),
                               rel=1e-12)


def test_drift_free_small_step():
    spec = ModelSpec.twod()
    x = np.ones(2)  # gradient vanishes at the mode
    xp, _ = propose_smmala(spec, x, 1e-12, identity_metric(2), np.random.default_rng(0))
    np.testing.assert_allclose(xp, x, atol=1e-5)


def test_proposal_moments():
    spec = ModelSpec.hybrid(3, 2)
    x = np.array([0.4, 0.5, -0.2, 0.1, 0.3])
    h = 0.3
    m = regularized_metric(spec, x, 1e6)
    rng = np.random.default_rng(2)
    n = 100_000
    draws = np.array([propose_smmala(spec, x, h, m, z=z)[0] for z in rng.normal(size=(n, 5))])
    mean = x + h / 2 * m.matrix @ grad_log_kernel(spec, x)
    cov = h * m.matrix
    se = np.sqrt(np.diag(cov) / n)
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 3 * se)
    np.testing.assert_allclose(np.cov(draws.T), cov, atol=4 * np.sqrt(2.0 / n) * np.max(np.diag(cov)))


def test_log_q_matches_scipy():
    spec = ModelSpec.hybrid(3, 2)
    rng = np.random.default_rng(3)
    for _ in range(20):
        x, y = rng.normal(size=(2, 5))
        m = regularized_metric(spec, x, 1e6)
        mean = x + 0.15 * m.matrix @ grad_log_kernel(spec, x)
        ref = stats.multivariate_normal(mean, 0.3 * m.matrix, allow_singular=False).logpdf(y)
        assert log_proposal_density(spec, y, x, 0.3, m) == pytest.approx(ref, rel=1e-9)


def test_proposal_rejects_nonpositive_h():
    with pytest.raises(ValueError):
        propose_smmala(ModelSpec.twod(), [0.0, 0.0], 0.0, identity_metric(2), np.random.default_rng(0))


# -- MH decision -----------------------------------------------------------------


def test_mh_uphill_always_accepted():
    spec = ModelSpec.twod()
    rng = np.random.default_rng(0)
    for _ in range(100):
        _, acc = mh_accept(spec, [0.0, 0.0], [1.0, 1.0], 0.0, 0.0, rng)
        assert acc


def test_mh_equal_density_always_accepted():
    spec = ModelSpec.twod()
    assert all(mh_accept(spec, [1.0, 1.0], [1.0, 1.0], -2.0, -2.0, np.random.default_rng(s))[1] for s in range(50))


def test_mh_rwm_rate():
    spec = ModelSpec.twod()
    x, y = np.array([1.0, 1.0]), np.array([0.0, 0.5])
    ratio = math.exp(log_kernel(spec, y) - log_kernel(spec, x))
    rng = np.random.default_rng(1)
    n = 20_000
    rate = np.mean([mh_accept(spec, x, y, 0.0, 0.0, rng)[1] for _ in range(n)])
    assert abs(rate - ratio) < 3 * math.sqrt(ratio * (1 - ratio) / n)


def test_mh_non_finite_proposal_rejected():
    x = np.array([0.0, 0.0])
    nxt, acc = mh_accept(ModelSpec.twod(), x, [np.inf, 0.0], 0.0, 0.0, np.random.default_rng(0))
    assert not acc and np.array_equal(nxt, x)


def test_detailed_balance_two_states():
    """Two-state target with an asymmetric proposal, checked by transition counts."""
    spec = ModelSpec.twod()
    s = [np.array([1.0, 1.0]), np.array([0.0, 0.8])]
    pi = np.exp([log_kernel(spec, p) for p in s])
    pi /= pi.sum()
    move = [0.7, 0.3]  # probability of proposing the other state
    lq = [[None, math.log(0.7)], [math.log(0.3), None]]
    rng = np.random.default_rng(4)
    n = 1_000_000
    counts = np.zeros((2, 2))
    state = 0
    propose = rng.random(n)
    for t in range(n):
        other = 1 - state
        if propose[t] < move[state]:
            _, acc = mh_accept(spec, s[state], s[other], lq[state][other], lq[other][state], rng)
            nxt = other if acc else state
        else:
            nxt = state
        counts[state, nxt] += 1
        state = nxt
    flow_01 = counts[0, 1] / n
    flow_10 = counts[1, 0] / n
    # the chain alternates, so the two flows differ by at most one transition
    assert abs(flow_01 - flow_10) <= 1 / n
    p_hat = counts.sum(axis=1) / n
    P = counts / counts.sum(axis=1, keepdims=True)
    exact = pi[0] * move[0] * min(1, pi[1] * 0.3 / (pi[0] * 0.7))
    se = math.sqrt(exact * (1 - exact) / n) * 10  # generous autocorrelation allowance
    assert abs(p_hat[0] * P[0, 1] - exact) < 3 * se
    assert abs(p_hat[1] * P[1, 0] - exact) < 3 * se
    assert abs(p_hat[0] - pi[0]) < 0.01


# -- chains ----------------------------------------------------------------------


def _replay_log_ratio(spec, x, xp, h, alpha):
    """Offline MH ratio from numpy/scipy primitives only."""
    def metric(p):
        w, Q = np.linalg.eigh(hessian_log_kernel(spec, p))
        lam = np.maximum(np.abs(w), 1 / alpha)
        return (Q / lam) @ Q.T

    Sx, Sp = metric(x), metric(xp)
    mf = x + h / 2 * Sx @ grad_log_kernel(spec, x)
    mr = xp + h / 2 * Sp @ grad_log_kernel(spec, xp)
    lqf = stats.multivariate_normal(mf, h * Sx).logpdf(xp)
    lqr = stats.multivariate_normal(mr, h * Sp).logpdf(x)
    return log_kernel(spec, xp) + lqr - log_kernel(spec, x) - lqf


def test_log_domain_replay():
    spec = ModelSpec.twod()
    cfg = SamplerConfig(h=0.8, n_steps=10_000)
    ch = run_chain(spec, cfg, RngStream(6), trace=True)
    x = ch.start.copy()
    worst = 0.0
    for s in range(cfg.n_steps):
        xp = ch.trace["proposals"][s]
        ref = _replay_log_ratio(spec, x, xp, cfg.h, cfg.alpha)
        got = ch.trace["log_ratio"][s]
        worst = max(worst, abs(got - ref) / max(1.0, abs(ref)))
        assert ch.accepted[s] == (ref >= 0 or math.log(ch.trace["u"][s]) < ref)
        if ch.accepted[s]:
            x = xp
    assert worst < 1e-10


def test_tuned_acceptance_hybrid_standard():
    ch = run_chain(ModelSpec.hybrid(3, 2), SamplerConfig(n_steps=50_000, warmup=5000), RngStream(7))
    assert 0.45 <= ch.acceptance_rate <= 0.55
    assert ch.divergences == 0


def test_rwm_tiny_step_accepts_everything():
    ch = run_chain(ModelSpec.twod(), SamplerConfig(algorithm="rwm", h=1e-10, n_steps=2000), RngStream(8))
    assert ch.acceptance_rate > 0.999


def test_mala_moments_on_round_twod():
    spec = ModelSpec.twod(mu=1.0, a=0.5, b=0.5)
    ch = run_chain(spec, SamplerConfig(algorithm="mala", n_steps=400_000, warmup=2000), RngStream(9))
    tau = iat_report(ch).tau_per_component
    n = ch.states.shape[0]
    x1, x2 = ch.states.T
    # x1 ~ N(1, 1); x2 | x1 ~ N(x1^2, 1), so E x2 = 2, var x2 = 1 + 4 + 2 = 7
    assert abs(x1.mean() - 1) < 3 * math.sqrt(tau[0] / n)
    assert abs(x1.var() - 1) < 3 * math.sqrt(2 * tau[0] / n)
    assert abs(x2.mean() - 2) < 3 * math.sqrt(7 * tau[1] / n)


def test_tuner_signs():
    assert tune_step_size(0.3, 1.0, 1) > 0.3
    assert tune_step_size(0.3, 0.0, 1) < 0.3
    assert tune_step_size(0.3, 0.5, 7) == pytest.approx(0.3)
    h = 0.3
    for t in range(1, 50):
        h2 = tune_step_size(h, 1.0, t)
        assert h2 > h
        h = h2


def test_tuner_matches_grid_search():
    spec = ModelSpec.hybrid(3, 2)
    tuned = run_chain(spec, SamplerConfig(n_steps=0, warmup=50_000), RngStream(10)).tuned_h
    grid = np.geomspace(0.15, 0.5, 8)
    rates = [run_chain(spec, SamplerConfig(h=h, n_steps=200_000, warmup=0), RngStream(11, k)).acceptance_rate
             for k, h in enumerate(grid)]
    # acceptance falls with h; interpolate log h at 50%
    h50 = math.exp(np.interp(0.5, rates[::-1], np.log(grid)[::-1]))
    assert abs(tuned - h50) / h50 < 0.2


def test_ks_stationarity_twod():
    spec = ModelSpec.twod()
    ch = run_chain(spec, SamplerConfig(n_steps=400_000, warmup=5000, thin=10), RngStream(12))
    ref = sample_exact(spec, 100_000, RngStream(12, 1)).draws
    tau = iat_report(ch).tau_per_component
    for k in range(2):
        assert not ks_two_sample(ch.states[:, k], ref[:, k], tau_a=tau[k]).reject_at_1pct


def test_chain_determinism():
    spec = ModelSpec.hybrid(3, 2)
    cfg = SamplerConfig(n_steps=5000, warmup=500)
    a = run_chain(spec, cfg, RngStream(13))
    b = run_chain(spec, cfg, RngStream(13))
    assert a.states.tobytes() == b.states.tobytes()
    assert np.array_equal(a.accepted, b.accepted) and a.tuned_h == b.tuned_h


def test_thinning_keeps_every_thin_th_state():
    spec = ModelSpec.hybrid(3, 2)
    full = run_chain(spec, SamplerConfig(n_steps=1003, warmup=100), RngStream(14))
    thin = run_chain(spec, SamplerConfig(n_steps=1003, warmup=100, thin=10), RngStream(14))
    assert thin.states.shape == (100, 5)
    np.testing.assert_array_equal(thin.states, full.states[9::10])
    np.testing.assert_array_equal(thin.accepted, full.accepted)


def test_thinning_across_chunks(monkeypatch):
    from hybrid_rosenbrock import mcmc
    spec = ModelSpec.twod()
    monkeypatch.setattr(mcmc, "CHUNK", 64)
    full = run_chain(spec, SamplerConfig(n_steps=997), RngStream(15))
    thin = run_chain(spec, SamplerConfig(n_steps=997, thin=7), RngStream(15))
    assert thin.states.shape[0] == 997 // 7
    np.testing.assert_array_equal(thin.states, full.states[6::7])


def test_mala_is_identity_metric_smmala():
    spec = ModelSpec.twod()
    cfg = SamplerConfig(algorithm="mala", h=0.1, n_steps=200)
    ch = run_chain(spec, cfg, RngStream(16), trace=True)
    x = ch.start.copy()
    for s in range(cfg.n_steps):
        xp_ref, _ = propose_smmala(spec, x, cfg.h, identity_metric(2), z=ch.trace["z"][s])
        np.testing.assert_allclose(ch.trace["proposals"][s], xp_ref, rtol=1e-13, atol=1e-15)
        if ch.accepted[s]:
            x = ch.trace["proposals"][s]


def test_rwm_is_mala_without_drift():
    spec = ModelSpec.twod()
    cfg = SamplerConfig(algorithm="rwm", h=0.5, n_steps=200)
    ch = run_chain(spec, cfg, RngStream(17), trace=True)
    x = ch.start.copy()
    for s in range(cfg.n_steps):
        np.testing.assert_allclose(ch.trace["proposals"][s], x + math.sqrt(cfg.h) * ch.trace["z"][s], rtol=1e-14)
        if ch.accepted[s]:
            x = ch.trace["proposals"][s]


def test_python_step_runs_all_algorithms():
    spec = ModelSpec.hybrid(3, 2)
    rng = np.random.default_rng(18)
    for algo in ("smmala", "mala", "rwm"):
        x = np.ones(5)
        acc = 0
        for _ in range(200):
            x, a = mcmc_step(spec, x, 0.2, rng, algorithm=algo)
            acc += a
        assert 0 < acc <= 200 and np.all(np.isfinite(x))


def test_divergences_counted_not_raised():
    # huge step on a stiff model: proposals overflow
    spec = ModelSpec.hybrid(5, 1, b=50.0)
    ch = run_chain(spec, SamplerConfig(algorithm="rwm", h=1e300, n_steps=200, init=(3, 9, 81, 6561, 43046721)),
                   RngStream(19))
    assert ch.divergences > 0
    assert np.all(np.isfinite(ch.states))


def test_config_validation():
    for bad in (dict(h=0.0), dict(alpha=-1.0), dict(thin=0), dict(target_accept=1.0), dict(algorithm="hmc"),
                dict(warmup=-5), dict(regularization="softabs")):
        with pytest.raises(ValueError):
            SamplerConfig(**bad)
    with pytest.raises(ValueError):
        SamplerConfig(init=(1.0, 2.0)).start(ModelSpec.hybrid(3, 2))


def test_config_round_trip():
    cfg = SamplerConfig(algorithm="MALA", h=0.7, init=(1, 2), thin=3)
    assert SamplerConfig.from_dict(cfg.to_dict()) == cfg


def test_chain_write(tmp_path):
    spec = ModelSpec.twod()
    ch = run_chain(spec, SamplerConfig(n_steps=100), RngStream(20))
    ch.write(tmp_path, spec)
    import json
    side = json.loads((tmp_path / "chain.json").read_text())
    for key in ("tuned_h", "acceptance_rate", "divergences", "config", "seed"):
        assert key in side
