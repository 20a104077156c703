"""Gradient-based MCMC.

The default algorithm is the multinomial no-U-turn sampler with a diagonal
mass matrix, dual-averaging step-size adaptation and windowed metric
adaptation during warmup. ``algorithm="rwm"`` selects an adaptive random-walk
Metropolis sampler that never touches the gradient, for debugging targets.

A target is any object with an integer ``dim`` and a method
``logp_grad(q) -> (float, ndarray)``. Raising ``NonFiniteValue`` (or returning
a non-finite value) marks the point as outside the support.

Each chain draws from its own Philox stream spawned from the configured seed,
so results do not depend on whether chains run sequentially or in threads.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, DivergenceRateExceeded, NonFiniteStart, NonFiniteValue

log = logging.getLogger(__name__)

MAX_DELTA_H = 1000.0


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    iterations: int = 4000
    warmup: int = 2000
    seed: int = 20201014
    target_accept: float = 0.8
    max_leapfrog: int = 1023
    algorithm: str = "nuts"
    max_divergence_rate: float = 0.10
    init_radius: float = 2.0

    def __post_init__(self):
        if self.chains < 2:
            raise ConfigError("chains must be >= 2 so split-Rhat can compare chains")
        if not 0 <= self.warmup < self.iterations:
            raise ConfigError("need 0 <= warmup < iterations")
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigError("target_accept must lie in (0, 1)")
        if self.max_leapfrog < 1:
            raise ConfigError("max_leapfrog must be >= 1")
        if self.algorithm not in ("nuts", "rwm"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")

    @property
    def retained(self) -> int:
        return self.iterations - self.warmup

    @property
    def max_depth(self) -> int:
        return max(1, int(math.floor(math.log2(self.max_leapfrog + 1))))

    def to_mapping(self) -> dict:
        return asdict(self)


STAT_NAMES = ("accept_stat", "step_size", "n_leapfrog", "tree_depth", "divergent", "lp")


@dataclass
class DrawsMatrix:
    """Retained draws on the unconstrained scale, ``(chains, draws, params)``."""

    draws: np.ndarray
    names: list[str]
    stats: dict[str, np.ndarray] = field(default_factory=dict)
    inv_metric: np.ndarray | None = None

    @property
    def chains(self) -> int:
        return self.draws.shape[0]

    @property
    def per_chain(self) -> int:
        return self.draws.shape[1]

    @property
    def R(self) -> int:
        return self.chains * self.per_chain

    def flat(self) -> np.ndarray:
        """Draws stacked chain after chain, shape ``(R, params)``."""
        return self.draws.reshape(self.R, -1)

    def divergence_rate(self) -> float:
        d = self.stats.get("divergent")
        return float(np.mean(d)) if d is not None and d.size else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["chain", "draw"] + list(self.names))
        for c in range(self.chains):
            for r in range(self.per_chain):
                w.writerow([c + 1, r + 1] + [repr(float(v)) for v in self.draws[c, r]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DrawsMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        names = rows[0][2:]
        body = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
        chains = int(body[:, 0].max()) if len(body) else 0
        draws = body[:, 2:].reshape(chains, -1, len(names))
        return cls(draws, names)


class _Point(NamedTuple):
    q: np.ndarray
    p: np.ndarray
    lp: float
    grad: np.ndarray


class _Tree(NamedTuple):
    left: _Point
    right: _Point
    ps_left: np.ndarray
    ps_right: np.ndarray
    rho: np.ndarray
    log_w: float
    sample: _Point


def _turning(ps_a: np.ndarray, ps_b: np.ndarray, rho: np.ndarray) -> bool:
    return not (ps_a @ rho > 0.0 and ps_b @ rho > 0.0)


class _Chain:
    def __init__(self, target, config: SamplerConfig, rng: np.random.Generator):
        self.target = target
        self.cfg = config
        self.rng = rng
        self.dim = int(target.dim)
        self.inv_metric = np.ones(self.dim)

    # -- target -------------------------------------------------------------

    def logp(self, q: np.ndarray) -> tuple[float, np.ndarray | None]:
        try:
            with np.errstate(all="ignore"):
                lp, g = self.target.logp_grad(q)
        except (NonFiniteValue, FloatingPointError, OverflowError):
            return -math.inf, None
        if not math.isfinite(lp) or not np.all(np.isfinite(g)):
            return -math.inf, None
        return float(lp), np.asarray(g, dtype=np.float64)

    def initial_point(self) -> _Point:
        r = self.cfg.init_radius
        for _ in range(100):
            q = self.rng.uniform(-r, r, self.dim)
            lp, g = self.logp(q)
            if g is not None:
                return _Point(q, np.zeros(self.dim), lp, g)
        raise NonFiniteStart("no finite initial point found in 100 attempts")

    # -- hamiltonian pieces ------------------------------------------------

    def kinetic(self, p: np.ndarray) -> float:
        return 0.5 * float(p @ (self.inv_metric * p))

    def momentum(self) -> np.ndarray:
        return self.rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)

    def leapfrog(self, pt: _Point, eps: float) -> _Point:
        p = pt.p + 0.5 * eps * pt.grad
        q = pt.q + eps * self.inv_metric * p
        lp, g = self.logp(q)
        if g is None:
            return _Point(q, p, -math.inf, None)
        return _Point(q, p + 0.5 * eps * g, lp, g)

    def find_step_size(self, pt: _Point, eps: float) -> float:
        log_target = math.log(0.8)

        def delta_h(e: float) -> float:
            p = self.momentum()
            start = _Point(pt.q, p, pt.lp, pt.grad)
            h0 = -pt.lp + self.kinetic(p)
            new = self.leapfrog(start, e)
            if new.grad is None:
                return -math.inf
            return h0 - (-new.lp + self.kinetic(new.p))

        direction = 1 if delta_h(eps) > log_target else -1
        for _ in range(60):
            eps = eps * 2.0 if direction > 0 else eps * 0.5
            d = delta_h(eps)
            if direction > 0 and not d > log_target:
                break
            if direction < 0 and not d < log_target:
                break
        return min(max(eps, 1e-10), 1e5)

    # -- NUTS ----------------------------------------------------------------

    def _leaf(self, start: _Point, direction: int, eps: float, h0: float) -> _Tree | None:
        pt = self.leapfrog(start, direction * eps)
        self._n_leapfrog += 1
        h = math.inf if pt.grad is None else -pt.lp + self.kinetic(pt.p)
        if not math.isfinite(h):
            h = math.inf
        delta = h - h0
        self._sum_accept += 1.0 if delta <= 0.0 else math.exp(-delta)
        if delta > MAX_DELTA_H:
            self._divergent = True
            return None
        ps = self.inv_metric * pt.p
        return _Tree(pt, pt, ps, ps, pt.p.copy(), -delta, pt)

    @staticmethod
    def _merge(left: _Tree, right: _Tree, log_w: float, sample: _Point) -> tuple[_Tree, bool]:
        rho = left.rho + right.rho
        tree = _Tree(left.left, right.right, left.ps_left, right.ps_right, rho, log_w, sample)
        turning = (_turning(left.ps_left, right.ps_right, rho)
                   or _turning(left.ps_left, right.ps_left, left.rho + right.left.p)
                   or _turning(left.ps_right, right.ps_right, right.rho + left.right.p))
        return tree, turning

    def _build(self, start: _Point, depth: int, direction: int, eps: float, h0: float) -> _Tree | None:
        if depth == 0:
            return self._leaf(start, direction, eps, h0)
        first = self._build(start, depth - 1, direction, eps, h0)
        if first is None:
            return None
        edge = first.right if direction > 0 else first.left
        second = self._build(edge, depth - 1, direction, eps, h0)
        if second is None:
            return None
        log_w = float(np.logaddexp(first.log_w, second.log_w))
        if math.log(self.rng.uniform()) < second.log_w - log_w:
            sample = second.sample
        else:
            sample = first.sample
        left, right = (first, second) if direction > 0 else (second, first)
        tree, turning = self._merge(left, right, log_w, sample)
        return None if turning else tree

    def nuts_step(self, pt: _Point, eps: float) -> tuple[_Point, dict]:
        p0 = self.momentum()
        start = _Point(pt.q, p0, pt.lp, pt.grad)
        h0 = -pt.lp + self.kinetic(p0)
        ps0 = self.inv_metric * p0
        tree = _Tree(start, start, ps0, ps0, p0.copy(), 0.0, start)
        self._n_leapfrog = 0
        self._sum_accept = 0.0
        self._divergent = False
        depth = 0
        while depth < self.cfg.max_depth:
            direction = 1 if self.rng.uniform() > 0.5 else -1
            edge = tree.right if direction > 0 else tree.left
            sub = self._build(edge, depth, direction, eps, h0)
            if sub is None:
                break
            depth += 1
            if sub.log_w > tree.log_w or self.rng.uniform() < math.exp(sub.log_w - tree.log_w):
                sample = sub.sample
            else:
                sample = tree.sample
            left, right = (tree, sub) if direction > 0 else (sub, tree)
            tree, turning = self._merge(left, right, float(np.logaddexp(tree.log_w, sub.log_w)), sample)
            if turning:
                break
        accept = self._sum_accept / max(self._n_leapfrog, 1)
        new = tree.sample
        return _Point(new.q, np.zeros(self.dim), new.lp, new.grad), {
            "accept_stat": accept,
            "step_size": eps,
            "n_leapfrog": self._n_leapfrog,
            "tree_depth": depth,
            "divergent": self._divergent,
            "lp": new.lp,
        }

    # -- random walk ---------------------------------------------------------

    def rwm_step(self, pt: _Point, scale: float) -> tuple[_Point, dict]:
        prop = pt.q + scale * np.sqrt(self.inv_metric) * self.rng.standard_normal(self.dim)
        lp, g = self.logp(prop)
        log_a = lp - pt.lp if g is not None else -math.inf
        accept = 1.0 if log_a >= 0 else math.exp(log_a)
        if math.log(self.rng.uniform()) < log_a:
            pt = _Point(prop, pt.p, lp, g)
        return pt, {"accept_stat": accept, "step_size": scale, "n_leapfrog": 0,
                    "tree_depth": 0, "divergent": False, "lp": pt.lp}

    # -- driver ------------------------------------------------------------------

    def run(self) -> tuple[np.ndarray, dict[str, np.ndarray], np.ndarray]:
        cfg = self.cfg
        nuts = cfg.algorithm == "nuts"
        pt = self.initial_point()
        eps = self.find_step_size(pt, 1.0) if nuts else 2.38 / math.sqrt(self.dim)
        adapt = _DualAveraging(eps, cfg.target_accept if nuts else 0.234)
        init_buffer, window_ends = adaptation_windows(cfg.warmup)
        welford = _Welford(self.dim)

        out = np.empty((cfg.retained, self.dim))
        stats = {k: np.empty(cfg.retained, dtype=bool if k == "divergent" else float) for k in STAT_NAMES}
        for it in range(cfg.iterations):
            pt, st = self.nuts_step(pt, eps) if nuts else self.rwm_step(pt, eps)
            if it < cfg.warmup:
                eps = adapt.update(st["accept_stat"])
                if window_ends and init_buffer <= it < window_ends[-1]:
                    welford.add(pt.q)
                if it + 1 in window_ends:
                    self.inv_metric = welford.regularized_variance()
                    welford = _Welford(self.dim)
                    if nuts:
                        eps = self.find_step_size(pt, eps)
                    adapt.restart(eps)
                if it + 1 == cfg.warmup:
                    eps = adapt.final()
            else:
                r = it - cfg.warmup
                out[r] = pt.q
                for k in STAT_NAMES:
                    stats[k][r] = st[k]
        return out, stats, self.inv_metric.copy()


class _DualAveraging:
    def __init__(self, eps: float, delta: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.delta, self.gamma, self.t0, self.kappa = delta, gamma, t0, kappa
        self.restart(eps)

    def restart(self, eps: float) -> None:
        self.mu = math.log(10.0 * eps)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept: float) -> float:
        self.counter += 1
        accept = min(1.0, accept)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = x_eta * x + (1.0 - x_eta) * self.x_bar
        return math.exp(x)

    def final(self) -> float:
        return math.exp(self.x_bar)


class _Welford:
    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x: np.ndarray) -> None:
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def regularized_variance(self) -> np.ndarray:
        n = self.n
        if n < 2:
            return np.ones_like(self.mean)
        var = self.m2 / (n - 1)
        return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


def adaptation_windows(warmup: int) -> tuple[int, list[int]]:
    """Initial fast buffer and the end iterations of the slow metric windows."""
    init, term, base = 75, 50, 25
    if warmup < 20:
        return warmup, []
    if init + term + base > warmup:
        init = int(0.15 * warmup)
        term = int(0.10 * warmup)
        base = warmup - init - term
    ends = []
    start, size = init, base
    last = warmup - term
    while True:
        end = start + size
        if end + 2 * size > last:
            ends.append(last)
            break
        ends.append(end)
        start, size = end, 2 * size
    return init, ends


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("HBSAE_NUM_THREADS", "1")))
    except ValueError:
        return 1


def chain_rngs(seed: int, chains: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(chains)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def run_chains(target, config: SamplerConfig, names: list[str] | None = None,
               progress: Callable[[int], None] | None = None) -> DrawsMatrix:
    """Run ``config.chains`` independent chains and keep the post-warmup draws."""
    if int(target.dim) < 1:
        raise ConfigError("target has no parameters")
    rngs = chain_rngs(config.seed, config.chains)

    def one(c: int):
        result = _Chain(target, config, rngs[c]).run()
        if progress is not None:
            progress(c)
        return result

    threads = min(_threads(), config.chains)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, range(config.chains)))
    else:
        results = [one(c) for c in range(config.chains)]

    draws = np.stack([r[0] for r in results])
    stats = {k: np.stack([r[1][k] for r in results]) for k in STAT_NAMES}
    inv_metric = np.stack([r[2] for r in results])
    names = list(names) if names is not None else list(getattr(target, "param_names", [])) \
        or [f"p{j}" for j in range(draws.shape[2])]
    dm = DrawsMatrix(draws, names, stats, inv_metric)
    if not np.isfinite(draws).all():
        raise NonFiniteValue("retained draws contain non-finite values")
    rate = dm.divergence_rate()
    if rate > config.max_divergence_rate:
        exc = DivergenceRateExceeded(
            f"{100 * rate:.1f}% of post-warmup transitions diverged "
            f"(limit {100 * config.max_divergence_rate:.0f}%)")
        exc.draws = dm
        raise exc
    if rate > 0:
        log.warning("%.2f%% of post-warmup transitions diverged", 100 * rate)
    return dm


class FunctionTarget:
    """Adapter turning a ``q -> (logp, grad)`` callable into a sampler target."""

    def __init__(self, fn: Callable[[np.ndarray], tuple[float, np.ndarray]], dim: int,
                 names: list[str] | None = None):
        self.fn = fn
        self.dim = dim
        self.param_names = names or [f"p{j}" for j in range(dim)]

    def logp_grad(self, q):
        return self.fn(q)
