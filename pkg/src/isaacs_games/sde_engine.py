"""Euler-Maruyama simulation of the controlled state under elementary strategies.

Noise for path ``i`` comes from a Philox stream keyed by ``(seed, i)`` and
consumed in step order, so a path depends only on the seed and its own
index: batch size, chunking and thread count do not change any path.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .dynamics import GameProblem
from .errors import EvaluationError, ExplosionError, StrategyInvariantError
from .pathspace import (
    TIME_TOL,
    ElementaryStrategy,
    SamplePath,
    active_segment,
    check_rule_order,
)

SCHEMES = ("euler_maruyama",)
MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class SimulationConfig:
    n_steps: int
    rng_seed: int = 0
    scheme: str = "euler_maruyama"
    batch_size: int = 1
    threads: int = 1
    overflow_guard: float = 1e12

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unsupported scheme {self.scheme!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def to_dict(self):
        return {"n_steps": self.n_steps, "rng_seed": self.rng_seed, "scheme": self.scheme,
                "batch_size": self.batch_size, "overflow_guard": self.overflow_guard}


@dataclass(frozen=True)
class StrategyPair:
    u: ElementaryStrategy
    v: ElementaryStrategy

    def __post_init__(self):
        if self.u.player != "one" or self.v.player != "two":
            raise ValueError("pair must be (player one, player two)")


@lru_cache(maxsize=16)
def _standard_noise(seed: int, start: int, count: int, n_steps: int, dim_noise: int) -> np.ndarray:
    out = np.empty((count, n_steps, dim_noise))
    key_hi = (int(seed) & MASK64) << 64
    for row, i in enumerate(range(start, start + count)):
        gen = np.random.Generator(np.random.Philox(key=key_hi | i))
        out[row] = gen.standard_normal(n_steps * dim_noise).reshape(n_steps, dim_noise)
    out.setflags(write=False)
    return out


def brownian_increments(seed, start, count, n_steps, dim_noise, h):
    """``N(0, h)`` increments of shape ``(count, n_steps, dim_noise)`` for paths ``start..start+count-1``."""
    return np.sqrt(h) * _standard_noise(int(seed), int(start), int(count), int(n_steps), int(dim_noise))


def time_grid(s: float, T: float, n_steps: int) -> np.ndarray:
    times = s + (T - s) * np.arange(n_steps + 1) / n_steps
    times[-1] = T
    return times


class _Runner:
    """Incremental evaluation of one strategy over a batch of growing prefixes.

    A rule is evaluated only on paths where it is still open and its
    predecessor has stopped. ``verify`` re-evaluates every rule on the
    longest prefix to confirm that stopped rules kept their times and that
    the rules stayed ordered.
    """

    def __init__(self, strategy: ElementaryStrategy, batch: int):
        self.strategy = strategy
        self.rules = strategy.rules
        self.committed = np.full((batch, len(self.rules)), np.inf)
        self.segment = np.zeros(batch, dtype=np.int64)
        self.action = np.zeros(batch, dtype=np.int64)

    def actions(self, times, prefix):
        k = times.size - 1
        ready = np.ones(prefix.shape[0], dtype=bool)
        for j, rule in enumerate(self.rules):
            need = ready & ~np.isfinite(self.committed[:, j])
            if need.all():
                self.committed[:, j] = rule.evaluate(times, prefix)
            elif need.any():
                self.committed[need, j] = rule.evaluate(times, prefix[need])
            ready = np.isfinite(self.committed[:, j])
            if not ready.any():
                break
        stopped = np.isfinite(self.committed)
        if not stopped[:, 0].all():
            active_segment(self.committed)  # raises the out-of-domain error
        if stopped[:, -1].any():
            raise StrategyInvariantError("terminal rule stopped before the horizon")
        seg = stopped[:, :-1].sum(axis=1)
        changed = seg != self.segment
        if np.any(changed):
            dec = self.committed[changed, seg[changed] - 1]
            if np.any(np.abs(dec - times[k]) > TIME_TOL):
                raise StrategyInvariantError("segment opened at a time other than its rule's stopping time")
            rows = np.nonzero(changed)[0]
            for m in np.unique(seg[changed]):
                sub = rows[seg[rows] == m]
                sel = self.strategy.segments[m - 1][1]
                self.action[sub] = sel.select(times, prefix[sub])
            self.segment = seg
        return self.action

    def verify(self, times, prefix):
        full = np.column_stack([rule.evaluate(times, prefix) for rule in self.rules])
        done = np.isfinite(self.committed)
        if np.any(full[done] != self.committed[done]):
            raise StrategyInvariantError("a rule changed its committed stopping time")
        check_rule_order(full)


def _run(problem: GameProblem, pair: StrategyPair, times, x0, dW, guard):
    B, N = dW.shape[0], dW.shape[1]
    d = problem.dim_state
    states = np.empty((B, N + 1, d))
    states[:, 0] = x0
    u_idx = np.empty((B, N), dtype=np.int64)
    v_idx = np.empty((B, N), dtype=np.int64)
    ru, rv = _Runner(pair.u, B), _Runner(pair.v, B)
    U, V = problem.u_set.points, problem.v_set.points
    for k in range(N):
        t = times[: k + 1]
        prefix = states[:, : k + 1]
        ui = ru.actions(t, prefix)
        vi = rv.actions(t, prefix)
        u_idx[:, k] = ui
        v_idx[:, k] = vi
        h = times[k + 1] - times[k]
        b, sig = problem.coefficients(times[k], states[:, k], U[ui], V[vi])
        step = b * h + (sig * dW[:, k, None, :]).sum(axis=-1)
        if not np.all(np.isfinite(step)):
            bad = np.nonzero(~np.all(np.isfinite(step), axis=1))[0]
            raise EvaluationError(
                f"non-finite coefficients at t={times[k]}, x={states[bad[0], k].tolist()}, "
                f"u={U[ui[bad[0]]].tolist()}, v={V[vi[bad[0]]].tolist()}"
            )
        states[:, k + 1] = states[:, k] + step
        over = np.abs(states[:, k + 1]).max(axis=1) > guard
        if np.any(over):
            raise ExplosionError(f"state exceeded {guard:g} at t={times[k + 1]}", np.nonzero(over)[0])
    ru.verify(times[:N], states[:, :N])
    rv.verify(times[:N], states[:, :N])
    return states, u_idx, v_idx


@dataclass
class BatchResult:
    """A batch of simulated paths stored as arrays; ``paths`` materialises SamplePath objects."""

    times: np.ndarray
    states: np.ndarray
    noise: np.ndarray
    u_index: np.ndarray
    v_index: np.ndarray
    payoffs: np.ndarray
    summary: dict = field(default_factory=dict)
    failed: tuple = ()

    @property
    def terminal(self):
        return self.states[:, -1, :]

    def path(self, i: int) -> SamplePath:
        return SamplePath(self.times, self.states[i], self.noise[i], self.u_index[i], self.v_index[i])

    @property
    def paths(self):
        return [self.path(i) for i in range(self.states.shape[0])]

    def summary_json(self) -> str:
        return json.dumps(self.summary, sort_keys=True, indent=2)


def summarize(values: np.ndarray) -> dict:
    """Mean, sample standard deviation and standard error, reduced in path-index order."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n == 0:
        return {"n": 0, "mean": float("nan"), "std": float("nan"), "std_error": float("nan")}
    mean = float(np.mean(values))
    std = float(np.std(values, ddof=1)) if n > 1 else 0.0
    return {"n": int(n), "mean": mean, "std": std, "std_error": std / np.sqrt(n)}


def _chunks(n, threads):
    if threads <= 1 or n < 2 * threads:
        return [(0, n)]
    size = -(-n // threads)
    return [(a, min(a + size, n)) for a in range(0, n, size)]


def simulate_batch(problem: GameProblem, pair: StrategyPair, s: float, x, cfg: SimulationConfig,
                   on_error: str = "raise") -> BatchResult:
    """Simulate ``cfg.batch_size`` paths from ``(s, x)`` and summarise ``g(X_T)``.

    With ``on_error='report'`` exploding paths are re-run one by one, the
    failing ones are listed in ``failed`` and excluded from the summary;
    their states are NaN.
    """
    T = problem.horizon
    if not s < T:
        raise ValueError("start time must be before the horizon")
    x0 = np.atleast_1d(np.asarray(x, dtype=float))
    if x0.shape != (problem.dim_state,) or not np.all(np.isfinite(x0)):
        raise ValueError("initial state must be a finite vector of the state dimension")
    times = time_grid(s, T, cfg.n_steps)
    h = (T - s) / cfg.n_steps
    dW = brownian_increments(cfg.rng_seed, 0, cfg.batch_size, cfg.n_steps, problem.dim_noise, h)

    def work(bounds):
        a, b = bounds
        return _run(problem, pair, times, x0, dW[a:b], cfg.overflow_guard)

    chunks = _chunks(cfg.batch_size, cfg.threads)
    failed = []
    try:
        if len(chunks) == 1:
            parts = [work(chunks[0])]
        else:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                parts = list(pool.map(work, chunks))
    except ExplosionError:
        if on_error != "report":
            raise
        parts = []
        for i in range(cfg.batch_size):
            try:
                parts.append(work((i, i + 1)))
            except ExplosionError:
                failed.append(i)
                nan = np.full((1, cfg.n_steps + 1, problem.dim_state), np.nan)
                zeros = np.zeros((1, cfg.n_steps), dtype=np.int64)
                parts.append((nan, zeros, zeros))
    states = np.concatenate([p[0] for p in parts])
    u_idx = np.concatenate([p[1] for p in parts])
    v_idx = np.concatenate([p[2] for p in parts])
    ok = np.ones(cfg.batch_size, dtype=bool)
    ok[failed] = False
    payoffs = np.full(cfg.batch_size, np.nan)
    payoffs[ok] = problem.payoff_checked(states[ok, -1, :])
    summary = summarize(payoffs[ok])
    summary.update({"failed": failed, "seed": cfg.rng_seed, "n_steps": cfg.n_steps, "s": float(s),
                    "x": x0.tolist(), "problem": problem.name})
    return BatchResult(times, states, np.asarray(dW), u_idx, v_idx, payoffs, summary, tuple(failed))


def simulate(problem: GameProblem, pair: StrategyPair, s: float, x, cfg: SimulationConfig) -> SamplePath:
    """One path (path index 0 of the seed's stream)."""
    single = SimulationConfig(cfg.n_steps, cfg.rng_seed, cfg.scheme, 1, 1, cfg.overflow_guard)
    return simulate_batch(problem, pair, s, x, single).path(0)
