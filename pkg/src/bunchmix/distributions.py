"""Parametric families used by the bunching mixture.

Singh-Maddala (Burr XII) for the non-bunching spend distribution, the
Azzalini skew-normal for the bunching component, plus the half/truncated
normal and logit-normal densities used as priors.

All array functions broadcast over ``y`` and over the parameter arguments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

LOG_2 = math.log(2.0)
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

SINGH_MADDALA = "singh_maddala"
SKEW_NORMAL = "skew_normal"
HALF_NORMAL = "half_normal"
LOGIT_NORMAL = "logit_normal"


class DomainError(ValueError):
    """Argument outside the support or parameter space of a family."""


def _finite(*xs):
    return all(math.isfinite(x) for x in xs)


@dataclass(frozen=True)
class SinghMaddalaParams:
    """Shape ``a``, scale ``b`` and shape ``q`` of a Singh-Maddala law."""

    a: float
    b: float
    q: float

    def __post_init__(self):
        if not (_finite(self.a, self.b, self.q) and self.a > 0 and self.b > 0 and self.q > 0):
            raise DomainError(f"Singh-Maddala parameters must be positive and finite, got {self}")

    def as_array(self):
        return np.array([self.a, self.b, self.q])


@dataclass(frozen=True)
class SkewNormalParams:
    """Location ``beta``, scale ``omega`` and skewness ``delta``."""

    beta: float
    omega: float
    delta: float

    def __post_init__(self):
        if not (_finite(self.beta, self.omega, self.delta) and self.omega > 0):
            raise DomainError(f"skew-normal needs finite parameters and omega > 0, got {self}")

    def as_array(self):
        return np.array([self.beta, self.omega, self.delta])


# --- Singh-Maddala --------------------------------------------------------

def _sm_parts(y, a, b, q):
    """Return ``log y``, ``t = a log(y/b)`` and ``log1p((y/b)**a)``."""
    ly = np.log(y)
    t = a * (ly - np.log(b))
    return ly, t, np.logaddexp(0.0, t)


def sm_logpdf_arr(y, a, b, q):
    ly, t, sp = _sm_parts(y, a, b, q)
    return np.log(a) + np.log(q) + (a - 1.0) * ly - a * np.log(b) - (q + 1.0) * sp


def sm_logsf_arr(y, a, b, q):
    """log survival, ``-q log1p((y/b)**a)``; zero at ``y == 0``."""
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        _, _, sp = _sm_parts(y, a, b, q)
    return -q * sp


def _check_positive(y):
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)) or np.any(~np.isfinite(y)):
        raise DomainError("Singh-Maddala density needs finite y > 0")
    return y


def sm_logpdf(y, p: SinghMaddalaParams):
    """Log-density of the Singh-Maddala distribution.

    ``log[a q y^(a-1) / (b^a (1 + (y/b)^a)^(q+1))]``, evaluated with
    ``log1p`` so that large ``(y/b)^a`` does not overflow.
    """
    y = _check_positive(y)
    return sm_logpdf_arr(y, p.a, p.b, p.q)


def sm_cdf(y, p: SinghMaddalaParams):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or np.any(np.isnan(y)):
        raise DomainError("Singh-Maddala cdf needs y >= 0")
    return -np.expm1(sm_logsf_arr(y, p.a, p.b, p.q))


def sm_quantile(u, p: SinghMaddalaParams):
    """Closed-form inverse cdf, ``b((1-u)^(-1/q) - 1)^(1/a)``."""
    u = np.asarray(u, dtype=float)
    if np.any(~((u >= 0) & (u < 1))):
        raise DomainError("quantile level must lie in [0, 1)")
    return p.b * np.expm1(-np.log1p(-u) / p.q) ** (1.0 / p.a)


def sm_sample(p: SinghMaddalaParams, rng: np.random.Generator, n: int):
    if n < 0:
        raise DomainError("sample size must be non-negative")
    return sm_quantile(rng.random(n), p)


def sm_grad_arr(y, a, b, q):
    """Partials of the log-density w.r.t. ``(a, b, q)``, stacked on the last axis."""
    ly, t, sp = _sm_parts(y, a, b, q)
    sig = special.expit(t)
    lyb = ly - np.log(b)
    da = 1.0 / a + lyb - (q + 1.0) * sig * lyb
    db = (a / b) * ((q + 1.0) * sig - 1.0)
    dq = 1.0 / q - sp
    return np.stack(np.broadcast_arrays(da, db, dq), axis=-1)


def sm_logsf_grad_arr(y, a, b, q):
    """Partials of ``log S(y)`` w.r.t. ``(a, b, q)``."""
    ly, t, sp = _sm_parts(y, a, b, q)
    sig = special.expit(t)
    da = -q * sig * (ly - np.log(b))
    db = q * sig * a / b
    dq = -sp
    return np.stack(np.broadcast_arrays(da, db, dq), axis=-1)


# --- skew-normal ----------------------------------------------------------

def norm_cdf(x):
    """Standard normal cdf via the complementary error function."""
    return special.ndtr(x)


def log_norm_cdf(x):
    """``log Phi(x)`` with an asymptotic expansion in the lower tail."""
    return special.log_ndtr(x)


def inv_mills(x):
    """``phi(x) / Phi(x)`` without underflow for very negative ``x``."""
    return np.exp(-0.5 * np.square(x) - LOG_SQRT_2PI - special.log_ndtr(x))


def sn_logpdf_arr(y, beta, omega, delta):
    z = (y - beta) / omega
    return LOG_2 - np.log(omega) - 0.5 * z * z - LOG_SQRT_2PI + special.log_ndtr(delta * z)


def sn_grad_arr(y, beta, omega, delta):
    """Partials of the skew-normal log-density w.r.t. ``(beta, omega, delta)``."""
    z = (y - beta) / omega
    m = inv_mills(delta * z)
    dz = -z + delta * m  # d logpdf / dz
    dbeta = -dz / omega
    domega = -1.0 / omega - dz * z / omega
    ddelta = m * z
    return np.stack(np.broadcast_arrays(dbeta, domega, ddelta), axis=-1)


def sn_logpdf(y, p: SkewNormalParams):
    y = np.asarray(y, dtype=float)
    return sn_logpdf_arr(y, p.beta, p.omega, p.delta)


def sn_pdf(y, p: SkewNormalParams):
    return np.exp(sn_logpdf(y, p))


def sn_cdf_arr(y, beta, omega, delta):
    z = (y - beta) / omega
    return special.ndtr(z) - 2.0 * special.owens_t(z, delta)


def sn_cdf(y, p: SkewNormalParams):
    """Skew-normal cdf, ``Phi(z) - 2 T(z, delta)`` with Owen's T function."""
    return sn_cdf_arr(np.asarray(y, dtype=float), p.beta, p.omega, p.delta)


def sn_mass_arr(lo, hi, beta, omega, delta):
    """Skew-normal mass on [lo, hi] and its partials w.r.t. (beta, log omega, delta)."""
    out = []
    for y in (lo, hi):
        z = (y - beta) / omega
        cdf = special.ndtr(z) - 2.0 * special.owens_t(z, delta)
        dens = np.exp(sn_logpdf_arr(y, beta, omega, delta))
        d_beta = -dens
        d_lomega = -dens * z * omega
        d_delta = -np.exp(-0.5 * z * z * (1.0 + delta * delta)) / (math.pi * (1.0 + delta * delta))
        out.append((cdf, d_beta, d_lomega, d_delta))
    (c_lo, b_lo, o_lo, d_lo), (c_hi, b_hi, o_hi, d_hi) = out
    return c_hi - c_lo, b_hi - b_lo, o_hi - o_lo, d_hi - d_lo


def sn_sample(p: SkewNormalParams, rng: np.random.Generator, n: int):
    """Draws via ``beta + omega (d |Z0| + sqrt(1 - d^2) Z1)``, ``d = delta / sqrt(1 + delta^2)``."""
    if n < 0:
        raise DomainError("sample size must be non-negative")
    d = p.delta / math.sqrt(1.0 + p.delta * p.delta)
    z = rng.standard_normal((2, n))
    return p.beta + p.omega * (d * np.abs(z[0]) + math.sqrt(1.0 - d * d) * z[1])


def sn_mean(p: SkewNormalParams):
    d = p.delta / math.sqrt(1.0 + p.delta * p.delta)
    return p.beta + p.omega * d * math.sqrt(2.0 / math.pi)


# --- shared surface -------------------------------------------------------

def grad_logpdf(family: str, y, params):
    """Analytic gradient of a family's log-density w.r.t. its parameters.

    ``params`` is a parameter record for the two mixture families, ``(sd,)``
    for the half-normal and ``(mu, sigma)`` for the logit-normal.  Returns
    an array whose trailing axis runs over the parameters in that order.
    """
    y = np.asarray(y, dtype=float)
    if family == SINGH_MADDALA:
        y = _check_positive(y)
        return sm_grad_arr(y, params.a, params.b, params.q)
    if family == SKEW_NORMAL:
        return sn_grad_arr(y, params.beta, params.omega, params.delta)
    if family == HALF_NORMAL:
        (sd,) = params
        halfnormal_logpdf(y, sd)  # domain check
        return (y * y / sd ** 3 - 1.0 / sd)[..., None]
    if family == LOGIT_NORMAL:
        mu, sigma = params
        logitnormal_logpdf(y, mu, sigma)
        z = (special.logit(y) - mu) / sigma
        return np.stack(np.broadcast_arrays(z / sigma, (z * z - 1.0) / sigma), axis=-1)
    raise DomainError(f"unknown family {family!r}")


def normal_logpdf(x, loc, sd):
    z = (np.asarray(x, dtype=float) - loc) / sd
    return -0.5 * z * z - np.log(sd) - LOG_SQRT_2PI


def truncnormal_logpdf(x, loc, sd):
    """Normal(loc, sd^2) truncated to ``x >= 0`` (written N+(loc, sd^2))."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or not sd > 0:
        raise DomainError("truncated normal needs x >= 0 and sd > 0")
    return normal_logpdf(x, loc, sd) - special.log_ndtr(loc / sd)


def halfnormal_logpdf(x, sd):
    """Half-normal log-density; includes the ``log 2`` folding constant."""
    return truncnormal_logpdf(x, 0.0, sd)


def logitnormal_logpdf(p, mu, sigma):
    p = np.asarray(p, dtype=float)
    if np.any(~((p > 0) & (p < 1))) or not sigma > 0:
        raise DomainError("logit-normal needs 0 < p < 1 and sigma > 0")
    return normal_logpdf(special.logit(p), mu, sigma) - np.log(p) - np.log1p(-p)


def truncnormal_sample(loc, sd, rng: np.random.Generator, size=None):
    """Draws from N+(loc, sd^2) by inversion on the truncated range."""
    loc = np.asarray(loc, dtype=float)
    lo = special.ndtr(-loc / sd)
    u = lo + (1.0 - lo) * rng.random(size if size is not None else loc.shape)
    return np.maximum(loc + sd * special.ndtri(u), 0.0)
