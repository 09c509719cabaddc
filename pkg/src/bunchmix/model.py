"""Log-posterior objectives for the two-step bunching mixture.

Step 1 fits the Singh-Maddala non-bunching law on the observations outside
every neighbourhood with a truncation-adjusted likelihood.  Step 2 fits the
mixing weight and skew-normal bunching law on the observations inside one
neighbourhood with the non-bunching parameters frozen at their step-1
posterior mean.  The hierarchical variants add random effects over groups.

Every objective is a callable mapping an unconstrained vector to
``(log density, gradient)``; non-finite values come back as ``-inf`` with a
zero gradient so the sampler rejects instead of crashing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .distributions import (
    LOG_SQRT_2PI,
    DomainError,
    SinghMaddalaParams,
    SkewNormalParams,
    sm_logpdf,
    sm_logpdf_arr,
    sm_logsf_arr,
    LOG_2,
    sn_logpdf,
    sn_mass_arr,
)
from . import _kernels
from .priors import PriorConfig, prior_term, sample_unconstrained


class ConfigError(ValueError):
    pass


class EvaluationError(ArithmeticError):
    """Parameters for which the truncation constant is not positive."""


@dataclass(frozen=True)
class NeighborhoodSpec:
    """Threshold ``k`` and half-width ``half_width``: the interval [k - a, k + a]."""

    k: float
    half_width: float

    def __post_init__(self):
        if not (0 < self.half_width < self.k) or not math.isfinite(self.k):
            raise ConfigError(f"need 0 < half_width < k, got {self}")

    @property
    def lo(self):
        return self.k - self.half_width

    @property
    def hi(self):
        return self.k + self.half_width

    def contains(self, y):
        y = np.asarray(y)
        return (y >= self.lo) & (y <= self.hi)


def check_neighborhoods(neighborhoods):
    """Sort by threshold and reject overlaps.

    Neighbourhoods may touch; a point on a shared edge belongs to the lower one.
    """
    nks = sorted(neighborhoods, key=lambda n: n.k)
    for left, right in zip(nks, nks[1:]):
        if left.hi > right.lo:
            raise ConfigError(f"neighbourhoods {left} and {right} overlap")
    return nks


@dataclass
class PartitionedData:
    neighborhoods: list
    inside: list
    outside: np.ndarray
    inside_groups: list = None
    outside_groups: np.ndarray = None


def partition(y, neighborhoods, groups=None) -> PartitionedData:
    """Split observations into one set per neighbourhood plus the complement."""
    nks = check_neighborhoods(neighborhoods)
    y = np.asarray(y, dtype=float)
    g = None if groups is None else np.asarray(groups)
    free = np.ones(y.shape, dtype=bool)
    inside, inside_g = [], []
    for nk in nks:
        m = free & nk.contains(y)
        inside.append(y[m])
        inside_g.append(None if g is None else g[m])
        free &= ~m
    return PartitionedData(nks, inside, y[free], inside_g if g is not None else None,
                           None if g is None else g[free])


@dataclass(frozen=True)
class MixtureParams:
    pi: float
    gamma: SkewNormalParams
    theta: SinghMaddalaParams

    def __post_init__(self):
        if not 0 < self.pi < 1:
            raise DomainError(f"mixing weight must lie in (0, 1), got {self.pi}")


def mixture_logpdf(y, psi: MixtureParams):
    """``log[pi f(y|gamma) + (1 - pi) g(y|theta)]`` via log-sum-exp."""
    lf = sn_logpdf(y, psi.gamma)
    lg = sm_logpdf(y, psi.theta)
    return np.logaddexp(math.log(psi.pi) + lf, math.log1p(-psi.pi) + lg)


def truncation_constant(theta: SinghMaddalaParams, neighborhoods):
    """Probability mass of the non-bunching law outside every neighbourhood."""
    lo = np.array([n.lo for n in neighborhoods])
    hi = np.array([n.hi for n in neighborhoods])
    s_lo = np.exp(sm_logsf_arr(lo, theta.a, theta.b, theta.q))
    s_hi = np.exp(sm_logsf_arr(hi, theta.a, theta.b, theta.q))
    return float(1.0 - np.sum(s_lo - s_hi))


def adjusted_loglik(theta: SinghMaddalaParams, outside, neighborhoods):
    """Singh-Maddala log-likelihood renormalised to the complement of the neighbourhoods."""
    z = truncation_constant(theta, neighborhoods)
    if not z > 0:
        raise EvaluationError(f"truncation constant {z} is not positive for {theta}")
    outside = np.asarray(outside, dtype=float)
    return float(np.sum(sm_logpdf(outside, theta)) - outside.size * math.log(z)) if outside.size else 0.0


# --- kernels --------------------------------------------------------------

def _sm_obs_terms(ly, la, lb, lq):
    """Per-observation Singh-Maddala log-density and its gradient in log-parameters."""
    a, q = np.exp(la), np.exp(lq)
    t = a * (ly - lb)
    sp = np.logaddexp(0.0, t)
    sig = special.expit(t)
    lpdf = la + lq + (a - 1.0) * ly - a * lb - (q + 1.0) * sp
    g_la = 1.0 + t * (1.0 - (q + 1.0) * sig)
    g_lb = a * ((q + 1.0) * sig - 1.0)
    g_lq = 1.0 - q * sp
    return lpdf, g_la, g_lb, g_lq


def _log_z_terms(lo_log, hi_log, la, lb, lq):
    """log Z and its gradient in log-parameters.

    ``la, lb, lq`` have shape (G,); ``lo_log, hi_log`` are the logs of the
    neighbourhood edges, shape (M,).  Returns arrays of shape (G,).
    """
    a = np.exp(la)[:, None]
    q = np.exp(lq)[:, None]
    lb = lb[:, None]

    def sf(ly):
        t = a * (ly - lb)
        sp = np.logaddexp(0.0, t)
        s = np.exp(-q * sp)
        sig = special.expit(t)
        # dS / d(log a), d(log b), d(log q)
        return s, -s * q * sig * t, s * q * sig * a, -s * q * sp

    s_lo, da_lo, db_lo, dq_lo = sf(lo_log[None, :])
    s_hi, da_hi, db_hi, dq_hi = sf(hi_log[None, :])
    z = 1.0 - np.sum(s_lo - s_hi, axis=1)
    dz = [-np.sum(d_lo - d_hi, axis=1) for d_lo, d_hi in
          ((da_lo, da_hi), (db_lo, db_hi), (dq_lo, dq_hi))]
    with np.errstate(divide="ignore", invalid="ignore"):
        log_z = np.where(z > 0, np.log(np.where(z > 0, z, 1.0)), -np.inf)
        return log_z, dz[0] / z, dz[1] / z, dz[2] / z


def _log_z_scalar(lo_log, hi_log, la, lb, lq):
    """Scalar version of :func:`_log_z_terms` for a single parameter vector."""
    a, q = math.exp(la), math.exp(lq)
    z, da, db, dq = 1.0, 0.0, 0.0, 0.0
    for edges, sign in ((lo_log, -1.0), (hi_log, 1.0)):
        for ly in edges:
            t = a * (ly - lb)
            sp = t + math.log1p(math.exp(-t)) if t > 0 else math.log1p(math.exp(t))
            sv = math.exp(-q * sp)
            sig = 1.0 / (1.0 + math.exp(-t)) if t > -700 else 0.0
            z += sign * sv
            da -= sign * sv * q * sig * t
            db += sign * sv * q * sig * a
            dq -= sign * sv * q * sp
    if not z > 0:
        return -math.inf, 0.0, 0.0, 0.0
    return math.log(z), da / z, db / z, dq / z


def _mixture_obs_terms(y, lg, u_pi, beta, omega, delta):
    """Per-observation mixture log-density and gradients.

    Returns ``(lp, d/d logit(pi), d/d beta, d/d log(omega), d/d delta)``.
    """
    z = (y - beta) / omega
    dz_ = delta * z
    lnd = special.log_ndtr(dz_)
    lf = LOG_2 - np.log(omega) - 0.5 * z * z - LOG_SQRT_2PI + lnd
    mills = np.exp(-0.5 * dz_ * dz_ - LOG_SQRT_2PI - lnd)
    lpi = special.log_expit(u_pi)
    l1m = special.log_expit(-u_pi)
    lp = np.logaddexp(lpi + lf, l1m + lg)
    r = np.exp(lpi + lf - lp)
    dz = delta * mills - z  # d lf / dz
    return (lp, r - special.expit(u_pi), -r * dz / omega, -r * (1.0 + dz * z), r * mills * z)


def _mixture_mass_terms(u_pi, beta, l_omega, delta, g_mass, nk):
    """log of the mixture mass on the neighbourhood and its gradient.

    Mass is ``pi F(nk | gamma) + (1 - pi) G(nk | theta)`` with the
    non-bunching mass ``g_mass`` held fixed.
    """
    f_mass, d_beta, d_lom, d_delta = sn_mass_arr(nk.lo, nk.hi, beta, np.exp(l_omega), delta)
    pi = special.expit(u_pi)
    c = pi * f_mass + (1.0 - pi) * g_mass
    with np.errstate(divide="ignore", invalid="ignore"):
        log_c = np.where(c > 0, np.log(np.where(c > 0, c, 1.0)), -np.inf)
        return (log_c, pi * (1.0 - pi) * (f_mass - g_mass) / c, pi * d_beta / c,
                pi * d_lom / c, pi * d_delta / c)


def _sm_mass(a, b, q, nk):
    """Singh-Maddala mass on the neighbourhood; broadcasts over parameters."""
    return (np.exp(sm_logsf_arr(nk.lo, a, b, q)) - np.exp(sm_logsf_arr(nk.hi, a, b, q)))


def _re_values(mu, log_sigma, raw, centered):
    return raw if centered else mu + float(np.exp(log_sigma)) * raw


def _re_prior_and_backprop(mu, log_sigma, raw, g_vals, centered):
    """Random-effect density N(mu, sigma^2) and the chain rule into (mu, log sigma, raw)."""
    sigma = float(np.exp(log_sigma))
    if centered:
        z = (raw - mu) / sigma
        zz = float(z @ z)
        lp = -0.5 * zz - raw.size * (log_sigma + LOG_SQRT_2PI)
        return lp, float(z.sum()) / sigma, zz - raw.size, g_vals - z / sigma
    lp = -0.5 * float(raw @ raw) - raw.size * LOG_SQRT_2PI
    return lp, float(g_vals.sum()), float(g_vals @ raw) * sigma, g_vals * sigma - raw


# --- objectives -----------------------------------------------------------

class Objective:
    """Base class: a log-posterior over an unconstrained parameter vector."""

    names: list
    dim: int

    def _eval(self, x):
        raise NotImplementedError

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        try:
            with np.errstate(all="ignore"):
                val, grad = self._eval(x)
        except (OverflowError, ZeroDivisionError, ValueError):
            return -math.inf, np.zeros(self.dim)
        if not math.isfinite(val) or not np.all(np.isfinite(grad)):
            return -math.inf, np.zeros(self.dim)
        return val, grad

    def constrain(self, x):
        raise NotImplementedError

    def unconstrain(self, c):
        raise NotImplementedError

    def prior_draw(self, rng):
        raise NotImplementedError

    def initial_points(self, chains, rng, jitter=1.0, tries=100, candidates=20):
        """One starting point per chain: the best of ``candidates`` jittered prior draws.

        Raw draws from diffuse priors can land where the likelihood is
        astronomically small and the gradient huge; warmup then shrinks the
        step size instead of escaping.  Keeping the highest-density candidate
        avoids that while chains still start at different random points.
        """
        pts = []
        for _ in range(chains):
            best, best_lp, found = None, -math.inf, 0
            for _ in range(tries):
                x = self.prior_draw(rng) + rng.uniform(-jitter, jitter, self.dim)
                lp = self(x)[0]
                if not math.isfinite(lp):
                    continue
                found += 1
                if lp > best_lp:
                    best, best_lp = x, lp
                if found == candidates:
                    break
            if best is None:
                raise EvaluationError("no finite starting point found in the prior")
            pts.append(best)
        return np.array(pts)


def _prior_sum(priors, items):
    """Sum prior terms for (name, value) pairs; returns (value, list of grads)."""
    total, grads = 0.0, []
    for name, u in items:
        v, g = prior_term(priors[name], u)
        total += v
        grads.append(g)
    return total, grads


class Step1Posterior(Objective):
    """Posterior of theta = (a, b, q) given observations outside the neighbourhoods.

    Unconstrained coordinates: ``(log a, log b, log q)``.
    """

    names = ["a", "b", "q"]
    dim = 3

    def __init__(self, outside, neighborhoods, priors: PriorConfig = None):
        self.priors = priors or PriorConfig.simulation()
        self.neighborhoods = check_neighborhoods(neighborhoods)
        y = np.asarray(outside, dtype=float)
        if np.any(y <= 0):
            raise DomainError("observations must be positive")
        self.ly = np.log(y)
        self.n = y.size
        self.gidx = np.zeros(y.size, dtype=np.int64)
        self.lo_log = np.log([n.lo for n in self.neighborhoods])
        self.hi_log = np.log([n.hi for n in self.neighborhoods])

    def loglik(self, x):
        la, lb, lq = x
        ll, ga, gb, gq = _kernels.sm_grouped(self.ly, self.gidx, np.array([la]), np.array([lb]),
                                             np.array([lq]))
        log_z, za, zb, zq = _log_z_scalar(self.lo_log, self.hi_log, la, lb, lq)
        n = self.n
        val = ll[0] - n * log_z
        grad = np.array([ga[0] - n * za, gb[0] - n * zb, gq[0] - n * zq])
        return val, grad

    def log_prior(self, x):
        val, grads = _prior_sum(self.priors, zip(("a", "b", "q"), x))
        return val, np.array([float(g) for g in grads])

    def _eval(self, x):
        pv, pg = self.log_prior(x)
        lv, lg = self.loglik(x)
        return pv + lv, pg + lg

    def constrain(self, x):
        return np.exp(x)

    def unconstrain(self, c):
        return np.log(np.asarray(c, dtype=float))

    def prior_draw(self, rng):
        return np.array([float(sample_unconstrained(self.priors[k], rng)) for k in ("a", "b", "q")])


class Step2Posterior(Objective):
    """Posterior of (pi, gamma) inside one neighbourhood with theta frozen.

    Unconstrained coordinates: ``(logit pi, log omega, delta)`` plus
    ``beta - K`` when the location is free.  Reported names are
    ``pi, beta, omega, delta``.

    With ``normalize=True`` (default) the mixture is renormalised to the
    neighbourhood, so ``pi`` keeps its meaning as the population share of
    bunchers; ``normalize=False`` uses the raw mixture density.
    """

    names = ["pi", "beta", "omega", "delta"]

    def __init__(self, inside, theta_hat: SinghMaddalaParams, nk: NeighborhoodSpec,
                 priors: PriorConfig = None, normalize=True):
        self.priors = priors or PriorConfig.simulation()
        self.nk = nk
        self.theta_hat = theta_hat
        self.y = np.asarray(inside, dtype=float)
        self.lg = sm_logpdf_arr(self.y, theta_hat.a, theta_hat.b, theta_hat.q)
        self.g_dens = np.exp(self.lg)
        self._g0 = np.zeros(self.y.size, dtype=np.int64)
        self.normalize = normalize
        self.g_mass = _sm_mass(theta_hat.a, theta_hat.b, theta_hat.q, nk)
        self.free_beta = not self.priors["beta"].fixed
        self.dim = 4 if self.free_beta else 3

    def _beta(self, x):
        off = x[3] if self.free_beta else self.priors["beta"].loc
        return self.nk.k + off

    def _eval(self, x):
        u_pi, l_om, delta = x[0], x[1], x[2]
        beta = self._beta(x)
        items = [("pi", u_pi), ("omega", l_om), ("delta", delta)]
        if self.free_beta:
            items.append(("beta", x[3]))
        pv, pgs = _prior_sum(self.priors, items)
        grad = np.array([float(g) for g in pgs])
        if self.y.size == 0:
            return pv, grad
        lp, g_pi, g_beta, g_om, g_del = _kernels.mixture_grouped(
            self.y, self.g_dens, self._g0, np.array([u_pi]), np.array([beta]),
            np.array([math.exp(l_om)]), np.array([delta]))
        val = pv + lp[0]
        gsum = [g_pi[0], g_om[0], g_del[0], g_beta[0]]
        if self.normalize:
            n = self.y.size
            lc, c_pi, c_beta, c_om, c_del = _mixture_mass_terms(
                u_pi, beta, l_om, delta, self.g_mass, self.nk)
            val -= n * float(lc)
            gsum = [gsum[0] - n * c_pi, gsum[1] - n * c_om, gsum[2] - n * c_del,
                    gsum[3] - n * c_beta]
        grad[:3] += gsum[:3]
        if self.free_beta:
            grad[3] += gsum[3]
        return val, grad

    def constrain(self, x):
        return np.array([special.expit(x[0]), self._beta(x), math.exp(x[1]), x[2]])

    def unconstrain(self, c):
        pi, beta, omega, delta = c
        x = [special.logit(pi), math.log(omega), delta]
        if self.free_beta:
            x.append(beta - self.nk.k)
        return np.array(x)

    def prior_draw(self, rng):
        keys = ["pi", "omega", "delta"] + (["beta"] if self.free_beta else [])
        return np.array([float(sample_unconstrained(self.priors[k], rng)) for k in keys])


class HierStep1Posterior(Objective):
    """Joint posterior of per-group theta_g and the log-normal random-effect hyperparameters.

    Layout: ``[mu_a, log sigma_a, mu_b, log sigma_b, mu_q, log sigma_q,
    raw_a (G), raw_b (G), raw_q (G)]``.  With ``centered=False`` (default)
    ``log a_g = mu_a + sigma_a * raw_a[g]``; with ``centered=True`` the raw
    block is ``log a_g`` itself.
    """

    HYPER = ["mu_a", "sigma_a", "mu_b", "sigma_b", "mu_q", "sigma_q"]

    def __init__(self, outside, groups, n_groups, neighborhoods, priors: PriorConfig = None,
                 labels=None, centered=False):
        self.priors = priors or PriorConfig.simulation()
        self.neighborhoods = check_neighborhoods(neighborhoods)
        y = np.asarray(outside, dtype=float)
        if np.any(y <= 0):
            raise DomainError("observations must be positive")
        self.ly = np.log(y)
        self.gidx = np.asarray(groups, dtype=np.int64)
        self.G = int(n_groups)
        if self.gidx.size and (self.gidx.min() < 0 or self.gidx.max() >= self.G):
            raise ConfigError("group codes must lie in 0..G-1")
        self.counts = np.bincount(self.gidx, minlength=self.G).astype(float)
        self.lo_log = np.log([n.lo for n in self.neighborhoods])
        self.hi_log = np.log([n.hi for n in self.neighborhoods])
        self.centered = centered
        self.labels = list(labels) if labels is not None else list(range(1, self.G + 1))
        self.dim = 6 + 3 * self.G
        self.names = self.HYPER + [f"{p}[{lab}]" for p in "abq" for lab in self.labels]

    def _split(self, x):
        G = self.G
        return x[:6], x[6:6 + G], x[6 + G:6 + 2 * G], x[6 + 2 * G:]

    def group_log_params(self, x):
        hyp, ra, rb, rq = self._split(x)
        return (_re_values(hyp[0], hyp[1], ra, self.centered),
                _re_values(hyp[2], hyp[3], rb, self.centered),
                _re_values(hyp[4], hyp[5], rq, self.centered))

    def group_loglik(self, la, lb, lq):
        """Per-group adjusted log-likelihood and gradients in log-parameters."""
        ll, ga, gb, gq = _kernels.sm_grouped(self.ly, self.gidx, la, lb, lq)
        log_z, za, zb, zq = _log_z_terms(self.lo_log, self.hi_log, la, lb, lq)
        n = self.counts
        return ll - n * log_z, ga - n * za, gb - n * zb, gq - n * zq

    def _eval(self, x):
        hyp, ra, rb, rq = self._split(x)
        la, lb, lq = self.group_log_params(x)
        ll, g_la, g_lb, g_lq = self.group_loglik(la, lb, lq)
        total = float(np.sum(ll))
        grad = np.empty(self.dim)
        for j, (raw, gv) in enumerate(((ra, g_la), (rb, g_lb), (rq, g_lq))):
            mu, ls = hyp[2 * j], hyp[2 * j + 1]
            lp, g_mu, g_ls, g_raw = _re_prior_and_backprop(mu, ls, raw, gv, self.centered)
            pm, gm = prior_term(self.priors[self.HYPER[2 * j]], mu)
            ps, gs = prior_term(self.priors[self.HYPER[2 * j + 1]], ls)
            total += lp + pm + ps
            grad[2 * j] = g_mu + gm
            grad[2 * j + 1] = g_ls + gs
            grad[6 + j * self.G:6 + (j + 1) * self.G] = g_raw
        return total, grad

    def constrain(self, x):
        hyp = x[:6]
        la, lb, lq = self.group_log_params(x)
        return np.concatenate([[hyp[0], math.exp(hyp[1]), hyp[2], math.exp(hyp[3]),
                                hyp[4], math.exp(hyp[5])], np.exp(la), np.exp(lb), np.exp(lq)])

    def unconstrain(self, c):
        c = np.asarray(c, dtype=float)
        G = self.G
        hyp = np.array([c[0], math.log(c[1]), c[2], math.log(c[3]), c[4], math.log(c[5])])
        blocks = []
        for j in range(3):
            lv = np.log(c[6 + j * G:6 + (j + 1) * G])
            blocks.append(lv if self.centered else (lv - hyp[2 * j]) / math.exp(hyp[2 * j + 1]))
        return np.concatenate([hyp, *blocks])

    def prior_draw(self, rng):
        hyp = np.array([float(sample_unconstrained(self.priors[k], rng)) for k in self.HYPER])
        z = rng.standard_normal((3, self.G))
        if self.centered:
            z = np.stack([hyp[2 * j] + math.exp(hyp[2 * j + 1]) * z[j] for j in range(3)])
        return np.concatenate([hyp, z.ravel()])


class HierStep2Posterior(Objective):
    """Joint posterior of per-group (pi_g, gamma_g) and their hyperparameters.

    Layout: ``[mu_pi, log sigma_pi, mu_omega, log sigma_omega, mu_delta,
    log sigma_delta, (log sigma_beta), raw_pi (G), raw_omega (G),
    raw_delta (G), (raw_beta (G))]``.  Random effects: ``logit pi_g``,
    ``log omega_g`` and ``delta_g`` normal; ``beta_g = K`` unless the
    ``sigma_beta`` prior is free, then ``beta_g ~ N(K + mu_beta, sigma_beta^2)``.
    ``normalize`` is as in :class:`Step2Posterior`, applied group by group.
    """

    def __init__(self, inside, groups, n_groups, theta_hats, nk: NeighborhoodSpec,
                 priors: PriorConfig = None, labels=None, centered=False, normalize=True):
        self.priors = priors or PriorConfig.simulation()
        self.nk = nk
        self.y = np.asarray(inside, dtype=float)
        self.gidx = np.asarray(groups, dtype=np.int64)
        self.G = int(n_groups)
        th = np.asarray(theta_hats, dtype=float).reshape(self.G, 3)
        self.theta_hats = th
        gi = self.gidx
        self.lg = sm_logpdf_arr(self.y, th[gi, 0], th[gi, 1], th[gi, 2]) if self.y.size else self.y
        self.g_dens = np.exp(self.lg)
        self.counts = np.bincount(gi, minlength=self.G).astype(float)
        self.normalize = normalize
        self.g_mass = _sm_mass(th[:, 0], th[:, 1], th[:, 2], nk)
        self.free_beta = not self.priors["sigma_beta"].fixed
        self.centered = centered
        self.labels = list(labels) if labels is not None else list(range(1, self.G + 1))
        self.hyper = ["mu_pi", "sigma_pi", "mu_omega", "sigma_omega", "mu_delta", "sigma_delta"]
        self.n_hyp = 7 if self.free_beta else 6
        self.n_re = 4 if self.free_beta else 3
        self.dim = self.n_hyp + self.n_re * self.G
        self.names = (self.hyper + (["sigma_beta"] if self.free_beta else [])
                      + [f"{p}[{lab}]" for p in ("pi", "beta", "omega", "delta")
                         for lab in self.labels])

    def _blocks(self, x):
        G, h = self.G, self.n_hyp
        return [x[h + j * G:h + (j + 1) * G] for j in range(self.n_re)]

    def group_values(self, x):
        """(logit pi_g, log omega_g, delta_g, beta_g) as arrays of shape (G,)."""
        blocks = self._blocks(x)
        u_pi = _re_values(x[0], x[1], blocks[0], self.centered)
        l_om = _re_values(x[2], x[3], blocks[1], self.centered)
        delta = _re_values(x[4], x[5], blocks[2], self.centered)
        mu_beta = self.priors["mu_beta"].loc
        if self.free_beta:
            beta = self.nk.k + _re_values(mu_beta, x[6], blocks[3], self.centered)
        else:
            beta = np.full(self.G, self.nk.k + mu_beta)
        return u_pi, l_om, delta, beta

    def _eval(self, x):
        G, gi = self.G, self.gidx
        u_pi, l_om, delta, beta = self.group_values(x)
        if self.y.size:
            lp, g_pi, g_beta, g_om, g_del = _kernels.mixture_grouped(
                self.y, self.g_dens, gi, u_pi, beta, np.exp(l_om), delta)
            total = float(lp.sum())
            gv = [g_pi, g_om, g_del, g_beta]
        else:
            total = 0.0
            gv = [np.zeros(G) for _ in range(4)]
        if self.normalize and self.y.size:
            n = self.counts
            lc, c_pi, c_beta, c_om, c_del = _mixture_mass_terms(
                u_pi, beta, l_om, delta, self.g_mass, self.nk)
            total -= float(np.sum(n * lc))
            gv = [gv[0] - n * c_pi, gv[1] - n * c_om, gv[2] - n * c_del, gv[3] - n * c_beta]
        grad = np.empty(self.dim)
        blocks = self._blocks(x)
        for j in range(3):
            mu, ls = x[2 * j], x[2 * j + 1]
            lp_re, g_mu, g_ls, g_raw = _re_prior_and_backprop(mu, ls, blocks[j], gv[j], self.centered)
            pm, gm = prior_term(self.priors[self.hyper[2 * j]], mu)
            ps, gs = prior_term(self.priors[self.hyper[2 * j + 1]], ls)
            total += lp_re + pm + ps
            grad[2 * j] = g_mu + gm
            grad[2 * j + 1] = g_ls + gs
            grad[self.n_hyp + j * G:self.n_hyp + (j + 1) * G] = g_raw
        if self.free_beta:
            mu_beta = self.priors["mu_beta"].loc
            lp_re, _, g_ls, g_raw = _re_prior_and_backprop(mu_beta, x[6], blocks[3], gv[3], self.centered)
            ps, gs = prior_term(self.priors["sigma_beta"], x[6])
            total += lp_re + ps
            grad[6] = g_ls + gs
            grad[self.n_hyp + 3 * G:] = g_raw
        return total, grad

    def constrain(self, x):
        u_pi, l_om, delta, beta = self.group_values(x)
        hyp = [x[0], math.exp(x[1]), x[2], math.exp(x[3]), x[4], math.exp(x[5])]
        if self.free_beta:
            hyp.append(math.exp(x[6]))
        return np.concatenate([hyp, special.expit(u_pi), beta, np.exp(l_om), delta])

    def unconstrain(self, c):
        c = np.asarray(c, dtype=float)
        G = self.G
        h = self.n_hyp
        hyp = np.array([c[0], math.log(c[1]), c[2], math.log(c[3]), c[4], math.log(c[5])]
                       + ([math.log(c[6])] if self.free_beta else []))
        pi, beta, omega, delta = (c[h + j * G:h + (j + 1) * G] for j in range(4))
        vals = [special.logit(pi), np.log(omega), delta]
        mus = [hyp[0], hyp[2], hyp[4]]
        sds = [math.exp(hyp[1]), math.exp(hyp[3]), math.exp(hyp[5])]
        if self.free_beta:
            vals.append(beta - self.nk.k)
            mus.append(self.priors["mu_beta"].loc)
            sds.append(math.exp(hyp[6]))
        if not self.centered:
            vals = [(v - m) / s for v, m, s in zip(vals, mus, sds)]
        return np.concatenate([hyp, *vals])

    def prior_draw(self, rng):
        keys = self.hyper + (["sigma_beta"] if self.free_beta else [])
        hyp = np.array([float(sample_unconstrained(self.priors[k], rng)) for k in keys])
        z = rng.standard_normal((self.n_re, self.G))
        if self.centered:
            mus = [hyp[0], hyp[2], hyp[4]] + ([self.priors["mu_beta"].loc] if self.free_beta else [])
            lss = [hyp[1], hyp[3], hyp[5]] + ([hyp[6]] if self.free_beta else [])
            z = np.stack([m + math.exp(s) * zz for m, s, zz in zip(mus, lss, z)])
        return np.concatenate([hyp, z.ravel()])
