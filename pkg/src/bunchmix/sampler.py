"""No-U-Turn Hamiltonian Monte Carlo with warmup adaptation.

Multinomial NUTS with the generalised no-U-turn criterion, dual-averaging
step-size adaptation and a diagonal inverse metric estimated in expanding
warmup windows.  Convergence diagnostics (split R-hat, ESS) live here too.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1000.0


class SamplerError(RuntimeError):
    pass


class DiagnosticError(ValueError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 3000
    samples: int = 3000
    seed: int = 0
    target_accept: float = 0.8
    max_tree_depth: int = 10

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.warmup < 100:
            raise ValueError("warmup must be >= 100")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be >= 1")


@dataclass
class PosteriorDraws:
    """Post-warmup draws, shape ``(samples, chains, params)``, constrained space."""

    draws: np.ndarray
    names: list
    divergent: np.ndarray
    step_size: np.ndarray = None
    inv_metric: np.ndarray = None
    tree_depth: np.ndarray = None
    n_leapfrog: np.ndarray = None
    accept_stat: np.ndarray = None
    energy_error: np.ndarray = None
    seeds: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 3 or self.draws.shape[2] != len(self.names):
            raise ValueError("draws must be (samples, chains, params) matching names")
        self.divergent = np.asarray(self.divergent, dtype=bool)
        if self.divergent.shape != self.draws.shape[:2]:
            raise ValueError("divergence flags must be (samples, chains)")
        self._index = {n: i for i, n in enumerate(self.names)}

    @property
    def n_samples(self):
        return self.draws.shape[0]

    @property
    def n_chains(self):
        return self.draws.shape[1]

    def __contains__(self, name):
        return name in self._index

    def get(self, name):
        """Draws of one parameter, shape ``(samples, chains)``."""
        try:
            return self.draws[:, :, self._index[name]]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def flat(self, name):
        """All draws of ``name`` pooled, in chain-major order."""
        return self.get(name).T.reshape(-1)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["chain", "iteration", *self.names, "divergent"])
            for c in range(self.n_chains):
                for s in range(self.n_samples):
                    w.writerow([c, s, *(format(v, ".17g") for v in self.draws[s, c]),
                                int(self.divergent[s, c])])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        names = header[2:-1]
        chains = 1 + max(int(r[0]) for r in body)
        samples = 1 + max(int(r[1]) for r in body)
        draws = np.empty((samples, chains, len(names)))
        div = np.zeros((samples, chains), dtype=bool)
        for r in body:
            c, s = int(r[0]), int(r[1])
            draws[s, c] = [float(v) for v in r[2:-1]]
            div[s, c] = bool(int(r[-1]))
        return cls(draws=draws, names=names, divergent=div)


def posterior_mean(draws: PosteriorDraws, name):
    x = draws.get(name)
    if x.size == 0:
        raise ValueError("no draws")
    return float(np.mean(x))


def posterior_median(draws: PosteriorDraws, name):
    x = draws.get(name)
    if x.size == 0:
        raise ValueError("no draws")
    return float(np.median(x))


# --- NUTS ---------------------------------------------------------------

class _State(NamedTuple):
    x: np.ndarray
    p: np.ndarray
    g: np.ndarray
    lp: float


class _Tree(NamedTuple):
    beg: _State
    end: _State
    prop: _State
    log_w: float
    rho: np.ndarray
    ps_beg: np.ndarray
    ps_end: np.ndarray
    valid: bool
    sum_acc: float
    n: int
    divergent: bool
    max_dh: float


def _no_uturn(rho, ps_a, ps_b):
    return rho.dot(ps_a) > 0 and rho.dot(ps_b) > 0


class _WindowSchedule:
    """Stan-style warmup windows: fast buffer, doubling slow windows, terminal buffer."""

    def __init__(self, warmup, init_buffer=75, term_buffer=50, base_window=25):
        if init_buffer + term_buffer + base_window > warmup:
            init_buffer = int(0.15 * warmup)
            term_buffer = int(0.1 * warmup)
            base_window = warmup - init_buffer - term_buffer
        self.ends = []
        start, size = init_buffer, base_window
        last = warmup - term_buffer
        while start < last:
            if start + 3 * size > last:  # fold a short tail into the final window
                size = last - start
            self.ends.append(start + size)
            start += size
            size *= 2
        self.init_buffer = init_buffer
        self.last = last

    def in_slow(self, i):
        return self.init_buffer <= i < self.last


class _Chain:
    def __init__(self, objective, x0, rng, cfg: SamplerConfig):
        self.f = objective
        self.rng = rng
        self.cfg = cfg
        self.dim = x0.size
        lp, g = self.f(x0)
        if not np.isfinite(lp):
            raise SamplerError("objective is not finite at the initial point")
        self.state = _State(np.array(x0, dtype=float), None, np.asarray(g, dtype=float), float(lp))
        self.inv_metric = np.ones(self.dim)
        self.eps = 1.0

    def _leapfrog(self, s: _State, eps):
        p = s.p + 0.5 * eps * s.g
        x = s.x + eps * (self.inv_metric * p)
        lp, g = self.f(x)
        p = p + 0.5 * eps * g
        return _State(x, p, g, lp)

    def _hamiltonian(self, s: _State):
        h = -s.lp + 0.5 * s.p.dot(self.inv_metric * s.p)
        return h if h == h else math.inf

    def _draw_momentum(self):
        return self.rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)

    def _build(self, s: _State, direction, depth, h0):
        if depth == 0:
            new = self._leapfrog(s, direction * self.eps)
            ps = self.inv_metric * new.p
            h = -new.lp + 0.5 * new.p.dot(ps)
            if not h == h:
                h = math.inf
            dh = h - h0
            div = dh > DIVERGENCE_THRESHOLD
            acc = 1.0 if dh <= 0 else math.exp(-dh)
            return _Tree(new, new, new, -dh, new.p, ps, ps, not div, acc, 1, div, abs(dh))
        first = self._build(s, direction, depth - 1, h0)
        if not first.valid:
            return first
        second = self._build(first.end, direction, depth - 1, h0)
        n = first.n + second.n
        sum_acc = first.sum_acc + second.sum_acc
        max_dh = max(first.max_dh, second.max_dh)
        if not second.valid:
            return first._replace(valid=False, n=n, sum_acc=sum_acc,
                                  divergent=second.divergent, max_dh=max_dh)
        log_w = np.logaddexp(first.log_w, second.log_w)
        prop = second.prop if math.log(self.rng.random()) < second.log_w - log_w else first.prop
        rho = first.rho + second.rho
        valid = (_no_uturn(rho, first.ps_beg, second.ps_end)
                 and _no_uturn(first.rho + second.beg.p, first.ps_beg, second.ps_beg)
                 and _no_uturn(second.rho + first.end.p, first.ps_end, second.ps_end))
        return _Tree(first.beg, second.end, prop, log_w, rho, first.ps_beg, second.ps_end,
                     valid, sum_acc, n, False, max_dh)

    def transition(self):
        s0 = self.state._replace(p=self._draw_momentum())
        h0 = self._hamiltonian(s0)
        ps0 = self.inv_metric * s0.p
        minus = plus = s0
        ps_minus = ps_plus = ps0
        rho = s0.p.copy()
        log_w = 0.0
        prop = s0
        n_leap, sum_acc, depth, divergent = 0, 0.0, 0, False
        while depth < self.cfg.max_tree_depth:
            direction = 1 if self.rng.random() < 0.5 else -1
            start = plus if direction == 1 else minus
            sub = self._build(start, direction, depth, h0)
            n_leap += sub.n
            sum_acc += sub.sum_acc
            if sub.divergent:
                divergent = True
            if not sub.valid:
                break
            depth += 1
            if sub.log_w > log_w or self.rng.random() < math.exp(sub.log_w - log_w):
                prop = sub.prop
            log_w = np.logaddexp(log_w, sub.log_w)
            if direction == 1:
                ps_far, ps_near, near_p = ps_minus, ps_plus, plus.p
                plus, ps_plus = sub.end, sub.ps_end
                new_ps_a, new_ps_b = ps_minus, ps_plus
            else:
                ps_far, ps_near, near_p = ps_plus, ps_minus, minus.p
                minus, ps_minus = sub.end, sub.ps_end
                new_ps_a, new_ps_b = ps_minus, ps_plus
            ok = (_no_uturn(rho + sub.rho, new_ps_a, new_ps_b)
                  and _no_uturn(rho + sub.beg.p, ps_far, sub.ps_beg)
                  and _no_uturn(sub.rho + near_p, ps_near, sub.ps_end))
            rho = rho + sub.rho
            if not ok:
                break
        self.state = prop._replace(p=None)
        energy_error = self._hamiltonian(prop) - h0 if prop is not s0 else 0.0
        return sum_acc / max(n_leap, 1), depth, n_leap, divergent, energy_error

    def init_step_size(self):
        """Double or halve the step size until one leapfrog step crosses 80% acceptance."""
        s0 = self.state._replace(p=self._draw_momentum())
        h0 = self._hamiltonian(s0)
        direction = 0
        for _ in range(100):
            s0 = s0._replace(p=self._draw_momentum())
            h0 = self._hamiltonian(s0)
            s1 = self._leapfrog(s0, self.eps)
            delta = h0 - self._hamiltonian(s1)
            if not np.isfinite(delta):
                delta = -math.inf
            d = 1 if delta > math.log(0.8) else -1
            if direction == 0:
                direction = d
            if d != direction:
                break
            self.eps = self.eps * 2.0 if direction == 1 else self.eps / 2.0
            if self.eps > 1e7 or self.eps < 1e-12:
                break


class _DualAveraging:
    def __init__(self, eps, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * eps)
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.t = 0
        self.hbar = 0.0
        self.log_eps_bar = 0.0

    def update(self, accept):
        self.t += 1
        eta = 1.0 / (self.t + self.t0)
        self.hbar = (1 - eta) * self.hbar + eta * (self.target - accept)
        log_eps = self.mu - math.sqrt(self.t) / self.gamma * self.hbar
        w = self.t ** (-self.kappa)
        self.log_eps_bar = w * log_eps + (1 - w) * self.log_eps_bar
        return math.exp(log_eps)

    @property
    def final(self):
        return math.exp(self.log_eps_bar)


def _run_one(objective, x0, seed_seq, cfg: SamplerConfig):
    rng = np.random.default_rng(seed_seq)
    ch = _Chain(objective, np.asarray(x0, dtype=float), rng, cfg)
    ch.init_step_size()
    da = _DualAveraging(ch.eps, cfg.target_accept)
    sched = _WindowSchedule(cfg.warmup)
    window = []
    for i in range(cfg.warmup):
        acc, *_ = ch.transition()
        ch.eps = da.update(acc)
        if sched.in_slow(i):
            window.append(ch.state.x)
        if i + 1 in sched.ends:
            w = np.asarray(window)
            n = len(w)
            var = w.var(axis=0, ddof=1) if n > 1 else np.ones(ch.dim)
            ch.inv_metric = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            window = []
            ch.init_step_size()
            da = _DualAveraging(ch.eps, cfg.target_accept)
    ch.eps = da.final
    out = np.empty((cfg.samples, ch.dim))
    stats = np.empty((cfg.samples, 5))
    for i in range(cfg.samples):
        acc, depth, n_leap, div, de = ch.transition()
        out[i] = ch.state.x
        stats[i] = (acc, depth, n_leap, div, de)
    return out, stats, ch.eps, ch.inv_metric.copy()


def run_chains(objective: Callable, init, cfg: SamplerConfig,
               constrain: Callable = None, names: Sequence[str] = None) -> PosteriorDraws:
    """Run ``cfg.chains`` independent NUTS chains on ``objective``.

    Parameters
    ----------
    objective : callable
        Maps an unconstrained vector to ``(log density, gradient)``.
    init : array_like, shape (chains, dim)
        Starting points in unconstrained space.
    constrain : callable, optional
        Maps one unconstrained vector to the vector reported in the draws.
    names : sequence of str, optional
        Labels of the constrained vector.
    """
    init = np.atleast_2d(np.asarray(init, dtype=float))
    if init.shape[0] != cfg.chains:
        raise SamplerError(f"need {cfg.chains} initial points, got {init.shape[0]}")
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    results = [_run_one(objective, init[c], children[c], cfg) for c in range(cfg.chains)]

    raw = np.stack([r[0] for r in results], axis=1)  # (S, C, dim)
    if constrain is not None:
        draws = np.apply_along_axis(constrain, 2, raw)
    else:
        draws = raw
    if names is None:
        names = [f"x[{i}]" for i in range(draws.shape[2])]
    stats = np.stack([r[1] for r in results], axis=1)
    out = PosteriorDraws(
        draws=draws, names=list(names), divergent=stats[:, :, 3] > 0,
        step_size=np.array([r[2] for r in results]),
        inv_metric=np.stack([r[3] for r in results]),
        tree_depth=stats[:, :, 1].astype(int), n_leapfrog=stats[:, :, 2].astype(int),
        accept_stat=stats[:, :, 0], energy_error=stats[:, :, 4],
        seeds=[int(c.generate_state(1)[0]) for c in children],
    )
    frac = out.divergent.mean()
    if frac > 0.1:
        msg = f"{100 * frac:.1f}% of post-warmup transitions diverged"
        logger.warning(msg)
        out.warnings.append(msg)
    return out


# --- diagnostics ----------------------------------------------------------

def _as_chains(draws, param):
    x = draws.get(param) if isinstance(draws, PosteriorDraws) else np.asarray(draws, dtype=float)
    if x.ndim != 2:
        raise DiagnosticError("expected a (samples, chains) array")
    if x.shape[1] < 2:
        raise DiagnosticError("diagnostics need at least two chains")
    if x.shape[0] < 4:
        raise DiagnosticError("diagnostics need at least four draws per chain")
    return x


def _split(x):
    half = x.shape[0] // 2
    return np.concatenate([x[:half], x[x.shape[0] - half:]], axis=1)


def rhat(draws, param=None):
    """Split-chain potential scale reduction factor.

    ``draws`` is a :class:`PosteriorDraws` (with ``param``) or a raw
    ``(samples, chains)`` array.  Constant draws give 1.
    """
    x = _split(_as_chains(draws, param))
    n = x.shape[0]
    w = x.var(axis=0, ddof=1).mean()
    b = n * x.mean(axis=0).var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else math.inf
    var_plus = (n - 1) / n * w + b / n
    return float(math.sqrt(var_plus / w))


def _autocov(x):
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, n=m, axis=0)
    ac = np.fft.irfft(f * np.conj(f), n=m, axis=0)[:n]
    return ac / n


def ess(draws, param=None):
    """Effective sample size from split chains (Geyer initial monotone sequence).

    Returns 0.0 for constant draws.
    """
    x = _split(_as_chains(draws, param))
    n, m = x.shape
    acov = _autocov(x)
    mean_var = acov[0].mean() * n / (n - 1.0)
    if mean_var == 0:
        return 0.0
    var_plus = mean_var * (n - 1.0) / n + x.mean(axis=0).var(ddof=1)
    rho = np.zeros(n)
    rho_even = 1.0
    rho[0] = rho_even
    rho_odd = 1.0 - (mean_var - acov[1].mean()) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - acov[t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[t + 2].mean()) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0:
        rho[max_t + 1] = rho_even
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = (rho[t - 1] + rho[t]) / 2.0
        t += 2
    total = n * m
    tau = -1.0 + 2.0 * rho[: max_t + 1].sum() + rho[max_t + 1: max_t + 2].sum()
    tau = max(tau, 1.0 / math.log10(total))
    return float(total / tau)


def mcse_mean(draws, param=None):
    x = _as_chains(draws, param)
    e = ess(x)
    return float(x.std(ddof=1) / math.sqrt(e)) if e > 0 else 0.0


def summary(draws: PosteriorDraws):
    """Per-parameter mean, sd, R-hat and ESS as a list of dicts."""
    rows = []
    for name in draws.names:
        x = draws.get(name)
        row = {"param": name, "mean": float(x.mean()), "sd": float(x.std(ddof=1)) if x.size > 1 else 0.0}
        if draws.n_chains >= 2 and draws.n_samples >= 4:
            row["rhat"] = rhat(draws, name)
            row["ess"] = ess(draws, name)
        rows.append(row)
    return rows
