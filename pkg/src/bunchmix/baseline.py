"""Kernel-density comparison estimator on either side of a threshold.

Each side of ``K`` gets its own density estimate with a linear boundary
kernel, so the estimate keeps first-order accuracy up to the edges of the
side's support.  The effect estimate is the gap between the conditional
means implied by the two one-sided densities over the neighbourhood.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .model import NeighborhoodSpec

KERNELS = ("epanechnikov", "gaussian")
# Gaussian kernel mass beyond this many bandwidths is treated as zero when
# deciding whether the boundary correction is active.
GAUSS_CUTOFF = 8.0


class BaselineError(ValueError):
    pass


@dataclass(frozen=True)
class KdeConfig:
    """Bandwidth, kernel and the (low, high) range the estimator looks at."""

    bandwidth: float = 10.0
    kernel: str = "epanechnikov"
    range: tuple = (40.0, 60.0)
    grid: int = 512

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise BaselineError("bandwidth must be positive")
        if self.kernel not in KERNELS:
            raise BaselineError(f"kernel must be one of {KERNELS}, got {self.kernel!r}")
        lo, hi = self.range
        if not lo < hi:
            raise BaselineError("range must satisfy low < high")
        if self.grid < 3:
            raise BaselineError("grid needs at least 3 points")

    def check_threshold(self, k):
        lo, hi = self.range
        if not lo < k < hi:
            raise BaselineError(f"threshold {k} must lie strictly inside the range {self.range}")


# --- kernel moments -------------------------------------------------------

def _epa_moments(vlo, vhi):
    """``a_j = int_vlo^vhi v^j K(v) dv`` for the Epanechnikov kernel, j = 0, 1, 2."""
    def prim(v):
        v2 = v * v
        return (0.75 * (v - v2 * v / 3.0), 0.75 * (v2 / 2.0 - v2 * v2 / 4.0),
                0.75 * (v2 * v / 3.0 - v2 * v2 * v / 5.0))
    lo, hi = prim(vlo), prim(vhi)
    return tuple(h - l for h, l in zip(hi, lo))


def _gauss_moments(vlo, vhi):
    """Truncated moments of the standard normal kernel; infinite edges allowed."""
    def finite(v):
        return np.where(np.isfinite(v), v, 0.0)

    def pdf(v):
        return np.where(np.isfinite(v), np.exp(-0.5 * np.square(finite(v))) / math.sqrt(2 * math.pi), 0.0)
    a0 = special.ndtr(vhi) - special.ndtr(vlo)
    a1 = pdf(vlo) - pdf(vhi)
    return a0, a1, a0 + finite(vlo) * pdf(vlo) - finite(vhi) * pdf(vhi)


# --- kernel sums ----------------------------------------------------------

def _epa_sums(w, t):
    """For each ``t``: ``sum K(v)`` and ``sum v K(v)`` over ``v = t - w``, |v| <= 1.

    ``w`` must be sorted.  Uses prefix sums of powers of ``w``.
    """
    pref = [np.concatenate([[0.0], np.cumsum(w ** k)]) for k in range(4)]
    i0 = np.searchsorted(w, t - 1.0, side="left")
    i1 = np.searchsorted(w, t + 1.0, side="right")
    s = [p[i1] - p[i0] for p in pref]  # sum of w^k over the window
    s0, s1, s2, s3 = s
    # sum v^j with v = t - w
    v1 = t * s0 - s1
    v2 = t * t * s0 - 2.0 * t * s1 + s2
    v3 = t ** 3 * s0 - 3.0 * t * t * s1 + 3.0 * t * s2 - s3
    return 0.75 * (s0 - v2), 0.75 * (v1 - v3)


def _gauss_sums(w, t, chunk=1 << 20):
    t = np.atleast_1d(t)
    k0 = np.zeros(t.shape)
    k1 = np.zeros(t.shape)
    step = max(1, chunk // max(1, w.size))
    for s in range(0, t.size, step):
        v = t[s:s + step, None] - w[None, :]
        kv = np.exp(-0.5 * v * v) / math.sqrt(2 * math.pi)
        k0[s:s + step] = kv.sum(axis=1)
        k1[s:s + step] = (kv * v).sum(axis=1)
    return k0, k1


def kde_boundary(data, eval_point, boundary, cfg: KdeConfig = None, far_edge=None):
    """One-sided density estimate with a linear boundary kernel.

    Parameters
    ----------
    data : array_like
        Observations, all on one side of ``boundary``.
    eval_point : float or array_like
        Where to evaluate; must be on the same side as the data.
    boundary : float
        Edge of the support nearest the threshold.
    cfg : KdeConfig
    far_edge : float, optional
        Opposite edge of the support, corrected the same way.  ``None``
        leaves that side open.

    Returns
    -------
    Density estimate(s) integrating to about one over the support.  Away
    from both edges the result is the plain kernel estimate.
    """
    cfg = cfg or KdeConfig()
    y = np.sort(np.asarray(data, dtype=float).ravel())
    if y.size == 0:
        raise BaselineError("kernel density estimate needs at least one observation")
    x = np.asarray(eval_point, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    above = y[0] >= boundary
    if not (above or y[-1] <= boundary):
        raise BaselineError("data straddle the boundary")
    if np.any(x < boundary) if above else np.any(x > boundary):
        raise BaselineError("evaluation point on the wrong side of the boundary")
    lo_edge, hi_edge = (boundary, far_edge) if above else (far_edge, boundary)
    lo_edge = -math.inf if lo_edge is None else lo_edge
    hi_edge = math.inf if hi_edge is None else hi_edge

    h = cfg.bandwidth
    w = (y - boundary) / h
    t = (x - boundary) / h
    if cfg.kernel == "epanechnikov":
        k0, k1 = _epa_sums(w, t)
        vlo = np.maximum(-1.0, (x - hi_edge) / h)
        vhi = np.minimum(1.0, (x - lo_edge) / h)
        active = (vlo > -1.0) | (vhi < 1.0)
        a0, a1, a2 = _epa_moments(vlo, vhi)
    else:
        k0, k1 = _gauss_sums(w, t)
        vlo = (x - hi_edge) / h
        vhi = (x - lo_edge) / h
        active = (vlo > -GAUSS_CUTOFF) | (vhi < GAUSS_CUTOFF)
        a0, a1, a2 = _gauss_moments(vlo, vhi)
    norm = y.size * h
    plain = k0 / norm
    with np.errstate(divide="ignore", invalid="ignore"):
        corrected = (a2 * k0 - a1 * k1) / ((a0 * a2 - a1 * a1) * norm)
    out = np.where(active, corrected, plain)
    return float(out[0]) if scalar else out


# --- threshold estimator --------------------------------------------------

@dataclass
class SideDensities:
    """Grids and one-sided density values, for plotting and inspection."""

    left_grid: np.ndarray
    left_density: np.ndarray
    right_grid: np.ndarray
    right_density: np.ndarray
    n_left: int
    n_right: int


def _split(data, k, cfg):
    cfg.check_threshold(k)
    y = np.asarray(data, dtype=float).ravel()
    low, high = cfg.range
    right = y[(y >= k) & (y <= high)]
    left = y[(y >= low) & (y < k)]
    if right.size == 0 or left.size == 0:
        raise BaselineError(f"need observations on both sides of {k} within {cfg.range}")
    return left, right


def side_densities(data, k, nk: NeighborhoodSpec, cfg: KdeConfig = None) -> SideDensities:
    """One-sided density estimates on grids over ``[K - a, K)`` and ``[K, K + a]``."""
    cfg = cfg or KdeConfig()
    left, right = _split(data, k, cfg)
    low, high = cfg.range
    gr = np.linspace(k, min(nk.hi, high), cfg.grid)
    gl = np.linspace(max(nk.lo, low), k, cfg.grid)
    return SideDensities(gl, kde_boundary(left, gl, k, cfg, far_edge=low), gr,
                         kde_boundary(right, gr, k, cfg, far_edge=high), left.size, right.size)


def _conditional_mean(grid, dens):
    mass = integrate.simpson(dens, x=grid)
    if not mass > 0:
        raise BaselineError("estimated density has no mass on the neighbourhood side")
    mid = 0.5 * (grid[0] + grid[-1])
    return mid + integrate.simpson((grid - mid) * dens, x=grid) / mass


def rdd_estimate(data, k, nk: NeighborhoodSpec = None, cfg: KdeConfig = None):
    """Gap between the conditional means of the right and left density estimates.

    The right side covers ``[K, K + a]`` and the left ``[K - a, K)``, each
    clipped to the configured range.
    """
    cfg = cfg or KdeConfig()
    if nk is None:
        low, high = cfg.range
        nk = NeighborhoodSpec(k, min(k - low, high - k))
    sd = side_densities(data, k, nk, cfg)
    return _conditional_mean(sd.right_grid, sd.right_density) - _conditional_mean(sd.left_grid, sd.left_density)


def density_jump(data, k, cfg: KdeConfig = None):
    """``p(K+) - p(K-)`` for the density of the whole sample."""
    cfg = cfg or KdeConfig()
    left, right = _split(data, k, cfg)
    n = np.asarray(data).size
    low, high = cfg.range
    p_right = kde_boundary(right, k, k, cfg, far_edge=high) * right.size / n
    p_left = kde_boundary(left, k, k, cfg, far_edge=low) * left.size / n
    return p_right - p_left
