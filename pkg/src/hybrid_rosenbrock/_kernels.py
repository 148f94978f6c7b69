"""Compiled inner loops.

Every Rosenbrock-family kernel is a sum of two kinds of quadratic terms:

* anchor terms ``-w * (x[k] - c)**2``
* link terms ``-w * (x[child] - x[parent]**2)**2``

so one set of compiled routines evaluates all four families from the flat
term arrays built in :mod:`hybrid_rosenbrock.models`.  The sampler kernel
below is the single code path for RWM, MALA and sMMALA.
"""

import numpy as np
from numba import njit

RWM = 0
MALA = 1
SMMALA = 2

REG_FLOOR = 0
REG_MULTIPLICATIVE = 1


@njit(cache=True, nogil=True)
def log_kernel(x, u_idx, u_c, u_w, l_ch, l_pa, l_w):
    s = 0.0
    for t in range(u_idx.shape[0]):
        r = x[u_idx[t]] - u_c[t]
        s -= u_w[t] * r * r
    for t in range(l_ch.shape[0]):
        p = x[l_pa[t]]
        r = x[l_ch[t]] - p * p
        s -= l_w[t] * r * r
    return s


@njit(cache=True, nogil=True)
def log_kernel_rows(xs, u_idx, u_c, u_w, l_ch, l_pa, l_w):
    out = np.empty(xs.shape[0])
    for k in range(xs.shape[0]):
        out[k] = log_kernel(xs[k], u_idx, u_c, u_w, l_ch, l_pa, l_w)
    return out


@njit(cache=True, nogil=True)
def grad_log_kernel(x, u_idx, u_c, u_w, l_ch, l_pa, l_w):
    g = np.zeros(x.shape[0])
    for t in range(u_idx.shape[0]):
        k = u_idx[t]
        g[k] -= 2.0 * u_w[t] * (x[k] - u_c[t])
    for t in range(l_ch.shape[0]):
        c = l_ch[t]
        p = l_pa[t]
        r = x[c] - x[p] * x[p]
        g[c] -= 2.0 * l_w[t] * r
        g[p] += 4.0 * l_w[t] * r * x[p]
    return g


@njit(cache=True, nogil=True)
def hessian_log_kernel(x, u_idx, u_c, u_w, l_ch, l_pa, l_w):
    n = x.shape[0]
    H = np.zeros((n, n))
    for t in range(u_idx.shape[0]):
        k = u_idx[t]
        H[k, k] -= 2.0 * u_w[t]
    for t in range(l_ch.shape[0]):
        c = l_ch[t]
        p = l_pa[t]
        w = l_w[t]
        H[c, c] -= 2.0 * w
        off = 4.0 * w * x[p]
        H[c, p] += off
        H[p, c] += off
        H[p, p] += 4.0 * w * (x[c] - 3.0 * x[p] * x[p])
    return H


@njit(cache=True, nogil=True)
def regularise(H, alpha, reg_mode):
    """Eigenvectors and regularised precision eigenvalues of ``-H``.

    Returns ``(Q, lam, ok)``; the metric is ``Q diag(1/lam) Q^T``.
    """
    n = H.shape[0]
    for i in range(n):
        for j in range(n):
            if not np.isfinite(H[i, j]):
                return np.eye(n), np.ones(n), False
    w, Q = np.linalg.eigh(H)
    floor = 1.0 / alpha
    lam = np.empty(n)
    for i in range(n):
        a = abs(w[i])
        if reg_mode == REG_FLOOR:
            lam[i] = a if a > floor else floor
        else:
            lam[i] = a if a >= floor else a / alpha
    ok = True
    for i in range(n):
        if not (lam[i] > 0.0 and np.isfinite(lam[i])):
            ok = False
    return Q, lam, ok


@njit(cache=True, nogil=True)
def metric_for(x, mode, alpha, reg_mode, u_idx, u_c, u_w, l_ch, l_pa, l_w):
    n = x.shape[0]
    if mode == SMMALA:
        H = hessian_log_kernel(x, u_idx, u_c, u_w, l_ch, l_pa, l_w)
        return regularise(H, alpha, reg_mode)
    return np.eye(n), np.ones(n), True


@njit(cache=True, nogil=True)
def proposal_mean(x, grad, Q, lam, h, mode):
    # x + (h/2) Sigma grad, Sigma = Q diag(1/lam) Q^T; RWM has no drift
    if mode == RWM:
        return x.copy()
    y = Q.T @ grad
    y = y / lam
    return x + 0.5 * h * (Q @ y)


@njit(cache=True, nogil=True)
def log_q(x_to, mean, Q, lam, h):
    """log N(x_to; mean, h * Q diag(1/lam) Q^T)."""
    n = x_to.shape[0]
    d = Q.T @ (x_to - mean)
    quad = 0.0
    logdet_prec = 0.0
    for i in range(n):
        quad += lam[i] * d[i] * d[i]
        logdet_prec += np.log(lam[i])
    return (-0.5 * n * np.log(2.0 * np.pi * h) + 0.5 * logdet_prec
            - 0.5 * quad / h)


@njit(cache=True, nogil=True)
def propose(x, grad, Q, lam, h, mode, z):
    mean = proposal_mean(x, grad, Q, lam, h, mode)
    y = z / np.sqrt(lam)
    return mean + np.sqrt(h) * (Q @ y), mean


@njit(cache=True, nogil=True)
def _all_finite(v):
    for i in range(v.shape[0]):
        if not np.isfinite(v[i]):
            return False
    return True


@njit(cache=True, nogil=True)
def run_steps(x0, h, alpha, mode, reg_mode, z, u, thin, step_offset,
              u_idx, u_c, u_w, l_ch, l_pa, l_w,
              out_states, out_acc, trace_prop, trace_logr):
    """Advance one chain ``z.shape[0]`` steps.

    ``step_offset`` is the number of steps already taken in this phase so
    thinning stays aligned across chunks.  Returns ``(x, n_kept,
    n_divergent)``.  Trace arrays are filled only when they have rows.
    """
    n_steps = z.shape[0]
    record = trace_prop.shape[0] > 0
    x = x0.copy()
    lp = log_kernel(x, u_idx, u_c, u_w, l_ch, l_pa, l_w)
    g = grad_log_kernel(x, u_idx, u_c, u_w, l_ch, l_pa, l_w)
    Q, lam, ok = metric_for(x, mode, alpha, reg_mode,
                            u_idx, u_c, u_w, l_ch, l_pa, l_w)
    kept = 0
    div = 0
    for s in range(n_steps):
        accepted = False
        divergent = not ok
        logr = -np.inf
        xp = x
        lpp = lp
        gp = g
        Qp = Q
        lamp = lam
        okp = ok
        if not divergent:
            xp, mean_f = propose(x, g, Q, lam, h, mode, z[s])
            if not _all_finite(xp):
                divergent = True
            else:
                lpp = log_kernel(xp, u_idx, u_c, u_w, l_ch, l_pa, l_w)
                gp = grad_log_kernel(xp, u_idx, u_c, u_w, l_ch, l_pa, l_w)
                Qp, lamp, okp = metric_for(xp, mode, alpha, reg_mode,
                                           u_idx, u_c, u_w, l_ch, l_pa, l_w)
                if not (np.isfinite(lpp) and _all_finite(gp) and okp):
                    divergent = True
                else:
                    mean_r = proposal_mean(xp, gp, Qp, lamp, h, mode)
                    lq_f = log_q(xp, mean_f, Q, lam, h)
                    lq_r = log_q(x, mean_r, Qp, lamp, h)
                    logr = lpp + lq_r - lp - lq_f
                    if not np.isfinite(logr):
                        divergent = True
                    elif logr >= 0.0 or np.log(u[s]) < logr:
                        accepted = True
        if record:
            trace_prop[s] = xp
            trace_logr[s] = logr
        if divergent:
            div += 1
        if accepted:
            x = xp
            lp = lpp
            g = gp
            Q = Qp
            lam = lamp
        out_acc[s] = accepted
        if (step_offset + s + 1) % thin == 0:
            out_states[kept] = x
            kept += 1
    return x, kept, div
