# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled primal-dual iteration kernel.

Mirrors _pd_fallback.advance step for step: same operation order, same
cost caps, same projection semantics.  The fallback module is the
reference; any behavioral change must land there first.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport pow

cnp.import_array()

cdef double VAL_CAP = 1e12


cdef inline double _cost_value(int kind, double param, double s) noexcept nogil:
    cdef double gap, val
    if kind == 1:
        return param * s
    if kind == 2:
        return param * s * s
    if kind == 3:
        gap = param - s
        if gap > 0.0:
            val = s / gap
            return val if val < VAL_CAP else VAL_CAP
        return VAL_CAP
    return 0.0


cdef inline double _cost_deriv(int kind, double param, double s, double barrier) noexcept nogil:
    cdef double gap, der
    if kind == 1:
        return param
    if kind == 2:
        return 2.0 * param * s
    if kind == 3:
        gap = param - s
        if gap > 0.0:
            der = param / (gap * gap)
            return der if der < barrier else barrier
        return barrier
    return 0.0


def advance(
    cnp.int64_t[::1] esrc,
    cnp.int64_t[::1] edst,
    cnp.uint8_t[::1] ekind,
    double[::1] eparam,
    double[::1] feupd,
    cnp.uint8_t[::1] nkind,
    double[::1] nparam,
    cnp.uint8_t[::1] elig,
    double[:, ::1] theta,
    double[:, ::1] mu,
    double[:, ::1] lam,
    double[:, ::1] p,
    double[::1] kappa,
    double[::1] gmin,
    double[::1] gplus,
    long m_rounds,
    double n_exp,
    double barrier,
    double eta,
    double gain_k,
    double gain_h,
    double gain_g,
    double gain_m,
    double gain_a,
    double gain_b,
    long n_steps,
):
    """Run n_steps primal-dual iterations in place."""
    cdef Py_ssize_t n_terms = mu.shape[0]
    cdef Py_ssize_t n_edges = mu.shape[1]
    cdef Py_ssize_t n_nodes = theta.shape[1]
    cdef double mm1 = m_rounds - 1.0

    buf_se = np.zeros(n_edges)
    buf_fe = np.zeros(n_edges)
    buf_fpe = np.zeros(n_edges)
    buf_coef = np.zeros(n_edges)
    buf_sn = np.zeros(n_nodes)
    buf_fn = np.zeros(n_nodes)
    buf_fpn = np.zeros(n_nodes)
    buf_gk = np.zeros(n_nodes)
    buf_kraw = np.zeros(n_nodes)
    buf_muraw = np.zeros((n_terms, n_edges))
    buf_y = np.zeros((n_terms, n_nodes))
    cdef double[::1] s_e = buf_se
    cdef double[::1] fe = buf_fe
    cdef double[::1] fpe = buf_fpe
    cdef double[::1] coef = buf_coef
    cdef double[::1] s_n = buf_sn
    cdef double[::1] fn = buf_fn
    cdef double[::1] fpn = buf_fpn
    cdef double[::1] gkap = buf_gk
    cdef double[::1] kap_raw = buf_kraw
    cdef double[:, ::1] mu_raw = buf_muraw
    cdef double[:, ::1] y = buf_y

    cdef Py_ssize_t step, t, e, i, src, dst
    cdef double mx, acc, ratio, gmu, raw, dot, el, val

    with nogil:
        for step in range(n_steps):
            # per-edge l^n loads, max-factored
            for e in range(n_edges):
                mx = 0.0
                for t in range(n_terms):
                    if mu[t, e] > mx:
                        mx = mu[t, e]
                if mx > 0.0:
                    acc = 0.0
                    for t in range(n_terms):
                        acc += pow(mu[t, e] / mx, n_exp)
                    s_e[e] = mx * pow(acc, 1.0 / n_exp)
                else:
                    s_e[e] = 0.0

            for i in range(n_nodes):
                s_n[i] = 0.0
            for e in range(n_edges):
                s_n[esrc[e]] += s_e[e]

            for e in range(n_edges):
                fe[e] = _cost_value(ekind[e], eparam[e], s_e[e])
                fpe[e] = _cost_deriv(ekind[e], eparam[e], s_e[e], barrier)
            for i in range(n_nodes):
                fn[i] = _cost_value(nkind[i], nparam[i], s_n[i])
                fpn[i] = _cost_deriv(nkind[i], nparam[i], s_n[i], barrier)

            for e in range(n_edges):
                coef[e] = fpe[e] * (1.0 + mm1 * (1.0 - kappa[edst[e]])) + (
                    mm1 * kappa[esrc[e]] * fpn[esrc[e]]
                )

            # candidate rate update (applied after the dual pumps read it)
            for t in range(n_terms):
                for e in range(n_edges):
                    if s_e[e] > 0.0:
                        ratio = mu[t, e] / s_e[e]
                    else:
                        ratio = 0.0
                    gmu = pow(ratio, n_exp - 1.0) * coef[e]
                    mu_raw[t, e] = mu[t, e] + eta * gain_k * (
                        lam[t, e] - gmu - (p[t, esrc[e]] - p[t, edst[e]])
                    )

            # candidate cache update
            for i in range(n_nodes):
                gkap[i] = mm1 * fn[i]
            for e in range(n_edges):
                gkap[edst[e]] += mm1 * (feupd[e] - fe[e])
            for i in range(n_nodes):
                el = 1.0 if elig[i] else 0.0
                gkap[i] *= el
                kap_raw[i] = kappa[i] + eta * gain_h * (gmin[i] - gplus[i] - gkap[i]) * el

            # conservation potentials ascend on the pre-update rates
            for t in range(n_terms):
                for i in range(n_nodes):
                    y[t, i] = 0.0
            for e in range(n_edges):
                src = esrc[e]
                dst = edst[e]
                for t in range(n_terms):
                    y[t, src] += mu[t, e]
                    y[t, dst] -= mu[t, e]
            for t in range(n_terms):
                for i in range(n_nodes):
                    p[t, i] += eta * gain_g * (y[t, i] - theta[t, i])

            # dual pumps with positive projection on the raw primal values
            for t in range(n_terms):
                for e in range(n_edges):
                    raw = mu_raw[t, e]
                    if lam[t, e] > 0.0:
                        dot = -raw
                    else:
                        dot = -raw if raw < 0.0 else 0.0
                    val = lam[t, e] + eta * gain_m * dot
                    lam[t, e] = val if val > 0.0 else 0.0

            for i in range(n_nodes):
                el = 1.0 if elig[i] else 0.0
                raw = kap_raw[i]
                if gmin[i] > 0.0:
                    dot = -raw
                else:
                    dot = -raw if raw < 0.0 else 0.0
                val = gmin[i] + eta * gain_a * dot * el
                gmin[i] = val if val > 0.0 else 0.0
                if gplus[i] > 0.0:
                    dot = raw - 1.0
                else:
                    dot = raw - 1.0 if raw > 1.0 else 0.0
                val = gplus[i] + eta * gain_b * dot * el
                gplus[i] = val if val > 0.0 else 0.0

            # primal projections
            for t in range(n_terms):
                for e in range(n_edges):
                    raw = mu_raw[t, e]
                    mu[t, e] = raw if raw > 0.0 else 0.0
            for i in range(n_nodes):
                raw = kap_raw[i]
                if raw < 0.0:
                    raw = 0.0
                elif raw > 1.0:
                    raw = 1.0
                kappa[i] = raw * (1.0 if elig[i] else 0.0)
