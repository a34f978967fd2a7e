"""Pure numpy primal-dual iteration kernel.

Reference semantics for the compiled kernel in _pdcore.pyx: both advance
the same state arrays in place with the same per-step operation order.

Per step, with loads s_e the l^n norm of per-terminal rates mu[:, e] and
s_i the out-sum at node i:

    mu    += eta k (lam - dPsi/dmu - (p_tail - p_head));  clamp >= 0
    kappa += eta h (gamma^- - gamma^+ - dPsi/dkappa);     clamp [0, 1]
    p     += eta g (net outflow - theta)
    lam   += eta m proj(-mu_raw);    gamma^- += eta a proj(-kappa_raw)
    gamma^+ += eta b proj(kappa_raw - 1);  all clamped >= 0

proj(v) is the positive projection: v where the dual is positive, else
max(v, 0).  Dual pumps read the pre-clamp primal value so multipliers on
active bounds converge to the exact stationarity values.  Cost values are
capped at VAL_CAP and mm1 slopes at the barrier argument so the dynamics
stay finite outside the feasible load domain.
"""

from __future__ import annotations

import numpy as np

VAL_CAP = 1e12

# Cost family codes shared with the compiled kernel.
KIND_ZERO, KIND_LINEAR, KIND_QUADRATIC, KIND_MM1 = 0, 1, 2, 3


def cost_value(kind, param, s, out=None):
    """Vectorized capped f(s) per family code."""
    s = np.asarray(s, dtype=np.float64)
    v = np.zeros_like(s) if out is None else out
    v.fill(0.0)
    lin = kind == KIND_LINEAR
    v[lin] = param[lin] * s[lin]
    quad = kind == KIND_QUADRATIC
    v[quad] = param[quad] * s[quad] ** 2
    mm1 = kind == KIND_MM1
    if np.any(mm1):
        c = param[mm1]
        load = s[mm1]
        gap = c - load
        val = np.where(gap > 0, load / np.where(gap > 0, gap, 1.0), VAL_CAP)
        v[mm1] = np.minimum(val, VAL_CAP)
    return v


def cost_deriv(kind, param, s, barrier, out=None):
    """Vectorized f'(s) per family code, mm1 capped at the barrier slope."""
    s = np.asarray(s, dtype=np.float64)
    d = np.zeros_like(s) if out is None else out
    d.fill(0.0)
    lin = kind == KIND_LINEAR
    d[lin] = param[lin]
    quad = kind == KIND_QUADRATIC
    d[quad] = 2.0 * param[quad] * s[quad]
    mm1 = kind == KIND_MM1
    if np.any(mm1):
        c = param[mm1]
        gap = c - s[mm1]
        der = np.where(gap > 0, c / np.where(gap > 0, gap * gap, 1.0), barrier)
        d[mm1] = np.minimum(der, barrier)
    return d


def edge_loads(mu, n_exp):
    """Per-edge l^n norm over terminals, factored by the max for stability."""
    mx = mu.max(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mx > 0, mu / np.where(mx > 0, mx, 1.0), 0.0)
    return mx * (ratio**n_exp).sum(axis=0) ** (1.0 / n_exp)


def _masks(n_nodes, esrc, edst):
    e = len(esrc)
    out_mask = np.zeros((n_nodes, e))
    in_mask = np.zeros((n_nodes, e))
    out_mask[esrc, np.arange(e)] = 1.0
    in_mask[edst, np.arange(e)] = 1.0
    return out_mask, in_mask


def advance(
    esrc,
    edst,
    ekind,
    eparam,
    feupd,
    nkind,
    nparam,
    elig,
    theta,
    mu,
    lam,
    p,
    kappa,
    gmin,
    gplus,
    m_rounds,
    n_exp,
    barrier,
    eta,
    gain_k,
    gain_h,
    gain_g,
    gain_m,
    gain_a,
    gain_b,
    n_steps,
):
    """Run n_steps primal-dual iterations in place."""
    n_nodes = theta.shape[1]
    out_mask, in_mask = _masks(n_nodes, esrc, edst)
    mm1 = m_rounds - 1.0
    eligf = elig.astype(np.float64)
    for _ in range(n_steps):
        s_e = edge_loads(mu, n_exp)
        s_n = out_mask @ s_e
        fpe = cost_deriv(ekind, eparam, s_e, barrier)
        fe = cost_value(ekind, eparam, s_e)
        fpn = cost_deriv(nkind, nparam, s_n, barrier)
        fn = cost_value(nkind, nparam, s_n)

        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(s_e > 0, mu / np.where(s_e > 0, s_e, 1.0), 0.0)
        coef = fpe * (1.0 + mm1 * (1.0 - kappa[edst])) + mm1 * kappa[esrc] * fpn[esrc]
        gmu = ratio ** (n_exp - 1.0) * coef
        q = p[:, esrc] - p[:, edst]
        mu_raw = mu + eta * gain_k * (lam - gmu - q)

        gkap = mm1 * (fn + in_mask @ (feupd - fe)) * eligf
        kap_raw = kappa + eta * gain_h * (gmin - gplus - gkap) * eligf

        y = mu @ out_mask.T - mu @ in_mask.T
        p += eta * gain_g * (y - theta)

        lam_dot = np.where(lam > 0, -mu_raw, np.maximum(-mu_raw, 0.0))
        np.maximum(lam + eta * gain_m * lam_dot, 0.0, out=lam)
        gm_dot = np.where(gmin > 0, -kap_raw, np.maximum(-kap_raw, 0.0)) * eligf
        np.maximum(gmin + eta * gain_a * gm_dot, 0.0, out=gmin)
        gp_dot = np.where(gplus > 0, kap_raw - 1.0, np.maximum(kap_raw - 1.0, 0.0)) * eligf
        np.maximum(gplus + eta * gain_b * gp_dot, 0.0, out=gplus)

        np.maximum(mu_raw, 0.0, out=mu)
        np.clip(kap_raw, 0.0, 1.0, out=kappa)
        kappa *= eligf
