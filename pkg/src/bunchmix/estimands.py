"""Treatment effect on bunching customers and posterior summaries of it.

The effect inside a neighbourhood is the difference between the conditional
means of the bunching and non-bunching densities restricted to it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .distributions import SinghMaddalaParams, SkewNormalParams, sm_logpdf_arr, sn_logpdf_arr
from .model import MixtureParams, NeighborhoodSpec
from .sampler import PosteriorDraws

TINY = 1e-300


class EstimandError(ArithmeticError):
    pass


def _truncated_mean(logpdf, lo, hi, component, peak=None, epsrel=1e-10):
    """Mean of a density restricted to [lo, hi] by adaptive Gauss-Kronrod quadrature."""
    pts = None
    if peak is not None and lo < peak < hi:
        pts = [peak]
    # scale by the density at a reference point to keep both integrals O(1)
    ref = np.linspace(lo, hi, 257)
    if pts:
        ref = np.append(ref, peak)
    lref = float(np.max(logpdf(ref)))
    if not math.isfinite(lref):
        raise EstimandError(f"{component} density has no mass in [{lo}, {hi}]")

    def dens(y):
        return math.exp(float(logpdf(y)) - lref)

    kw = dict(epsabs=0.0, epsrel=epsrel, limit=500, points=pts)
    mass, _ = integrate.quad(dens, lo, hi, **kw)
    if mass * math.exp(lref) < TINY or mass <= 0:
        raise EstimandError(f"{component} density has no mass in [{lo}, {hi}]")
    # integrate (y - mid) to avoid cancellation on currency-scale supports
    mid = 0.5 * (lo + hi)
    # the centred moment can vanish, so it also gets an absolute floor
    kw["epsabs"] = 1e-13 * (hi - lo) * mass
    first, _ = integrate.quad(lambda y: (y - mid) * dens(y), lo, hi, **kw)
    return mid + first / mass


def bunching_mean(gamma: SkewNormalParams, nk: NeighborhoodSpec, epsrel=1e-10):
    return _truncated_mean(lambda y: sn_logpdf_arr(y, gamma.beta, gamma.omega, gamma.delta),
                           nk.lo, nk.hi, "bunching", peak=gamma.beta, epsrel=epsrel)


def nonbunching_mean(theta: SinghMaddalaParams, nk: NeighborhoodSpec, epsrel=1e-10):
    return _truncated_mean(lambda y: sm_logpdf_arr(y, theta.a, theta.b, theta.q),
                           nk.lo, nk.hi, "non-bunching", epsrel=epsrel)


def att(psi: MixtureParams, nk: NeighborhoodSpec, epsrel=1e-10):
    """Effect on bunchers: truncated mean of f minus truncated mean of g over ``nk``.

    Does not depend on the mixing weight.
    """
    return bunching_mean(psi.gamma, nk, epsrel) - nonbunching_mean(psi.theta, nk, epsrel)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _gl_grid(lo, hi, panels):
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mids = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mids[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    weights = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return nodes, weights


def _batch_bunching_means(beta, omega, delta, lo, hi, panels):
    nodes, w = _gl_grid(lo, hi, panels)
    mid = 0.5 * (lo + hi)
    lf = sn_logpdf_arr(nodes[None, :], beta[:, None], omega[:, None], delta[:, None])
    top = lf.max(axis=1)
    dens = np.exp(lf - top[:, None]) * w[None, :]
    mass = dens.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        means = mid + (dens @ (nodes - mid)) / mass
        log_mass = np.log(mass) + top
    return means, log_mass


def bunching_means(beta, omega, delta, nk: NeighborhoodSpec, panels=32, tol=1e-9, chunk=2048):
    """Truncated bunching means for many parameter draws at once.

    Composite 16-point Gauss-Legendre on ``panels`` and ``2 * panels``
    panels; draws where the two disagree by more than ``tol`` times the
    interval width are recomputed with adaptive quadrature.  Draws with no
    mass in the neighbourhood come back as NaN.
    """
    beta, omega, delta = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (beta, omega, delta)))
    beta, omega, delta = beta.ravel(), omega.ravel(), delta.ravel()
    out = np.empty(beta.size)
    width = nk.hi - nk.lo
    for s in range(0, beta.size, chunk):
        sl = slice(s, s + chunk)
        m1, _ = _batch_bunching_means(beta[sl], omega[sl], delta[sl], nk.lo, nk.hi, panels)
        m2, lm = _batch_bunching_means(beta[sl], omega[sl], delta[sl], nk.lo, nk.hi, 2 * panels)
        bad = ~(np.abs(m1 - m2) <= tol * width) | ~(lm > math.log(TINY))
        m2 = np.where(bad, np.nan, m2)
        for i in np.flatnonzero(bad):
            j = s + i
            try:
                m2[i] = bunching_mean(SkewNormalParams(beta[j], omega[j], delta[j]), nk)
            except (EstimandError, ValueError):
                m2[i] = np.nan
        out[sl] = m2
    return out


def _param_name(base, group):
    return base if group is None else f"{base}[{group}]"


def posterior_att(draws: PosteriorDraws, nk: NeighborhoodSpec, theta_hat: SinghMaddalaParams,
                  group=None, max_fail=0.01):
    """One effect draw per posterior draw of gamma, with theta frozen at ``theta_hat``.

    Returned in chain-major order.  Raises if more than ``max_fail`` of the
    draws fail; otherwise failing draws are dropped.
    """
    beta = draws.flat(_param_name("beta", group))
    omega = draws.flat(_param_name("omega", group))
    delta = draws.flat(_param_name("delta", group))
    g_mean = nonbunching_mean(theta_hat, nk)
    out = bunching_means(beta, omega, delta, nk) - g_mean
    bad = np.isnan(out)
    if bad.mean() > max_fail:
        raise EstimandError(f"{bad.sum()} of {bad.size} effect draws failed")
    return out[~bad]


def hdi(samples, level=0.9):
    """Shortest interval holding ``ceil(level * n)`` of the sorted samples.

    Ties go to the leftmost window.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n < 10:
        raise ValueError("hdi needs at least 10 samples")
    m = max(1, math.ceil(level * n - 1e-9))
    widths = x[m - 1:] - x[:n - m + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + m - 1])


@dataclass
class AttEstimate:
    point: float
    hdi_low: float
    hdi_high: float
    level: float
    draws: np.ndarray = field(repr=False)
    group: object = None
    threshold: float = None

    def to_dict(self):
        return {"group": self.group, "threshold": self.threshold, "point": self.point,
                "hdi_low": self.hdi_low, "hdi_high": self.hdi_high, "level": self.level,
                "n_draws": int(np.size(self.draws))}


def summarize(delta_draws, level=0.9, point="mean", group=None, threshold=None) -> AttEstimate:
    d = np.asarray(delta_draws, dtype=float)
    if point == "mean":
        pt = float(np.mean(d))
    elif point == "median":
        pt = float(np.median(d))
    else:
        raise ValueError(f"point must be 'mean' or 'median', got {point!r}")
    lo, hi = hdi(d, level)
    return AttEstimate(pt, lo, hi, level, d, group, threshold)


def endpoint_density(beta, omega, delta, nk: NeighborhoodSpec):
    """Bunching density at the two neighbourhood edges, shape ``(n_draws, 2)``."""
    beta, omega, delta = (np.asarray(v, dtype=float)[..., None] for v in (beta, omega, delta))
    edges = np.array([nk.lo, nk.hi])
    return np.exp(sn_logpdf_arr(edges, beta, omega, delta))
