"""Compiled per-observation loops for the likelihood terms.

Each kernel walks the observations once and accumulates per-group sums of
the log-density and its gradient, avoiding the temporaries of the array
versions in :mod:`bunchmix.model` (kept there as the reference route).
"""
from __future__ import annotations

import math

import numba
import numpy as np

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG_2 = math.log(2.0)


@numba.njit(cache=True, fastmath=False)
def log_ndtr(x):
    """``log Phi(x)``; asymptotic series below -20."""
    if x > 0.0:
        return math.log1p(-0.5 * math.erfc(x * _SQRT1_2))
    if x > -20.0:
        return math.log(0.5 * math.erfc(-x * _SQRT1_2))
    r = 1.0 / (x * x)
    series = 1.0 - r * (1.0 - r * (3.0 - r * (15.0 - r * 105.0)))
    return -0.5 * x * x - math.log(-x) - _LOG_SQRT_2PI + math.log(series)


@numba.njit(cache=True)
def sm_grouped(ly, gidx, la, lb, lq):
    """Per-group Singh-Maddala log-likelihood and gradient in (log a, log b, log q)."""
    G = la.shape[0]
    ll = np.zeros(G)
    ga = np.zeros(G)
    gb = np.zeros(G)
    gq = np.zeros(G)
    a = np.exp(la)
    q = np.exp(lq)
    for i in range(ly.shape[0]):
        g = gidx[i]
        ag, qg = a[g], q[g]
        t = ag * (ly[i] - lb[g])
        if t > 0.0:
            e = math.exp(-t)
            sp = t + math.log1p(e)
            sig = 1.0 / (1.0 + e)
        else:
            e = math.exp(t)
            sp = math.log1p(e)
            sig = e / (1.0 + e)
        ll[g] += la[g] + lq[g] + (ag - 1.0) * ly[i] - ag * lb[g] - (qg + 1.0) * sp
        ga[g] += 1.0 + t * (1.0 - (qg + 1.0) * sig)
        gb[g] += ag * ((qg + 1.0) * sig - 1.0)
        gq[g] += 1.0 - qg * sp
    return ll, ga, gb, gq


@numba.njit(cache=True)
def mixture_grouped(y, g_dens, gidx, u_pi, beta, omega, delta):
    """Per-group mixture log-likelihood and gradient.

    ``g_dens`` is the frozen non-bunching density at each observation.
    Gradient order: logit pi, beta, log omega, delta.  Works with densities
    rather than log-densities; the responsibility times the inverse Mills
    ratio is formed without dividing by the normal cdf, so it stays finite
    where the skewing factor underflows.
    """
    G = u_pi.shape[0]
    lp = np.zeros(G)
    g_pi = np.zeros(G)
    g_be = np.zeros(G)
    g_om = np.zeros(G)
    g_de = np.zeros(G)
    pi = np.empty(G)
    scale = np.empty(G)
    for g in range(G):
        u = u_pi[g]
        if u > 0.0:
            pi[g] = 1.0 / (1.0 + math.exp(-u))
        else:
            e = math.exp(u)
            pi[g] = e / (1.0 + e)
        scale[g] = 2.0 / (omega[g] * math.sqrt(2.0 * math.pi))
    for i in range(y.shape[0]):
        g = gidx[i]
        om, de, pg = omega[g], delta[g], pi[g]
        z = (y[i] - beta[g]) / om
        dz = de * z
        phi_z = scale[g] * math.exp(-0.5 * z * z)
        pf = pg * phi_z * 0.5 * math.erfc(-dz * _SQRT1_2)
        p = pf + (1.0 - pg) * g_dens[i]
        r = pf / p
        rm = pg * phi_z * math.exp(-0.5 * dz * dz) / (math.sqrt(2.0 * math.pi) * p)
        d = de * rm - r * z  # responsibility times d log f / dz
        lp[g] += math.log(p)
        g_pi[g] += r - pg
        g_be[g] -= d / om
        g_om[g] -= r + d * z
        g_de[g] += rm * z
    return lp, g_pi, g_be, g_om, g_de
