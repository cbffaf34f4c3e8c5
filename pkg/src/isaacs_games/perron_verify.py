"""Stochastic semi-solution candidates, their certification, lattice operations and bumps.

A candidate pairs a function ``w(t, x)`` with a witness that produces the
responding player's strategy from a starting rule ``tau`` (and, for the
classes that allow it, the opponent's strategy). Certification simulates
the concatenated play and checks the conditional inequality between
``w(tau', X_tau')`` and ``w(rho', X_rho')`` bin by bin.

Responding players by class:

* ``super_upper``: player two, witness ``W(tau)``;
* ``super_lower``: player two, witness ``W(tau, u)``;
* ``sub_upper``: player one, witness ``W(tau, v)``;
* ``sub_lower``: player one, witness ``W(tau)``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .dynamics import GameProblem, HamiltonianQuery, generator_table
from .errors import CandidateError, ConfigError, ConstructionRefused, GameError
from .game_mc import CertificateReport, StrategyFamily, combine_verdicts, judge
from .isaacs_solver import SpaceTimeGrid, ValueGrid, feedback_tail
from .pathspace import (
    TIME_TOL,
    ElementaryStrategy,
    FirstExitRule,
    StoppingRule,
    _states_at,
    concatenate,
    mapped_response,
    switch_strategies,
)
from .sde_engine import SimulationConfig, StrategyPair, simulate_batch

CLASSES = ("super_upper", "sub_upper", "super_lower", "sub_lower")
RESPONDER = {"super_upper": "two", "super_lower": "two", "sub_upper": "one", "sub_lower": "one"}
USES_OPPONENT = {"super_upper": False, "super_lower": True, "sub_upper": True, "sub_lower": False}


def _check_class(cls: str):
    if cls not in CLASSES:
        raise CandidateError(f"class must be one of {CLASSES}")


def is_super(cls: str) -> bool:
    return cls.startswith("super")


# ---------------------------------------------------------------- grid functions


def _as_tx(t, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
    return t, x


class GridFunction:
    """Vectorised ``w(t, x)`` with ``t`` of shape ``(n,)`` and ``x`` of shape ``(n, d)``."""

    def __call__(self, t, x) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantFunction(GridFunction):
    value: float

    def __call__(self, t, x):
        t, x = _as_tx(t, x)
        return np.full(x.shape[0], float(self.value))

    def to_dict(self):
        return {"type": "constant", "value": float(self.value)}


@dataclass(frozen=True, eq=False)
class SolvedGrid(GridFunction):
    """A solved value grid, interpolated multilinearly and clamped off the grid."""

    values: ValueGrid

    def __call__(self, t, x):
        t, x = _as_tx(t, x)
        return self.values(t, x)

    def to_dict(self):
        return {"type": "value_grid", "header": self.values.header()}


@dataclass(frozen=True, eq=False)
class TimeTilted(GridFunction):
    """``base(t, x) + slope * (T - t)``."""

    base: GridFunction
    slope: float
    horizon: float

    def __call__(self, t, x):
        t, x = _as_tx(t, x)
        return self.base(t, x) + self.slope * (self.horizon - t)

    def to_dict(self):
        return {"type": "time_tilted", "base": self.base.to_dict(), "slope": float(self.slope),
                "horizon": float(self.horizon)}


@dataclass(frozen=True, eq=False)
class PointwiseMin(GridFunction):
    first: GridFunction
    second: GridFunction

    def __call__(self, t, x):
        return np.minimum(self.first(t, x), self.second(t, x))

    def to_dict(self):
        return {"type": "min", "parts": [self.first.to_dict(), self.second.to_dict()]}


@dataclass(frozen=True, eq=False)
class PointwiseMax(GridFunction):
    first: GridFunction
    second: GridFunction

    def __call__(self, t, x):
        return np.maximum(self.first(t, x), self.second(t, x))

    def to_dict(self):
        return {"type": "max", "parts": [self.first.to_dict(), self.second.to_dict()]}


def as_grid_function(w) -> GridFunction:
    if isinstance(w, GridFunction):
        return w
    if isinstance(w, ValueGrid):
        return SolvedGrid(w)
    if np.isscalar(w):
        return ConstantFunction(float(w))
    raise TypeError(f"cannot use {type(w).__name__} as a grid function")


# ---------------------------------------------------------------- test functions


@dataclass(frozen=True, eq=False)
class SmoothTestFunction:
    """Smooth ``phi(t, x)`` with analytic derivatives.

    ``quadratic``: ``a + c_t (t - t0) + p.(x - x0) + 1/2 (x - x0)^T Q (x - x0) + 1/2 r (t - t0)^2``.

    ``gaussian``: ``a + h exp(-|x - x0|^2 / (2 s^2) - (t - t0)^2 / (2 s_t^2))``.
    """

    kind: str
    t0: float
    x0: np.ndarray
    params: dict

    def __post_init__(self):
        if self.kind not in ("quadratic", "gaussian"):
            raise ValueError("test function kind must be 'quadratic' or 'gaussian'")
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, dtype=float)))

    @classmethod
    def quadratic(cls, t0, x0, a=0.0, c_t=0.0, p=None, Q=0.0, r=0.0):
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        d = x0.size
        Q = np.asarray(Q, dtype=float)
        Q = Q * np.eye(d) if Q.ndim == 0 else Q.reshape(d, d)
        p = np.zeros(d) if p is None else np.atleast_1d(np.asarray(p, dtype=float))
        return cls("quadratic", float(t0), x0, {"a": float(a), "c_t": float(c_t), "p": p, "Q": 0.5 * (Q + Q.T),
                                                "r": float(r)})

    @classmethod
    def gaussian(cls, t0, x0, a=0.0, height=1.0, scale=1.0, t_scale=1.0):
        if scale <= 0 or t_scale <= 0:
            raise ValueError("scales must be positive")
        return cls("gaussian", float(t0), x0, {"a": float(a), "height": float(height), "scale": float(scale),
                                               "t_scale": float(t_scale)})

    def _offsets(self, t, x):
        t, x = _as_tx(t, x)
        return t - self.t0, x - self.x0

    def _bump(self, dt, dx):
        p = self.params
        return p["height"] * np.exp(-(dx * dx).sum(axis=1) / (2 * p["scale"] ** 2) - dt ** 2 / (2 * p["t_scale"] ** 2))

    def __call__(self, t, x):
        dt, dx = self._offsets(t, x)
        p = self.params
        if self.kind == "quadratic":
            return (p["a"] + p["c_t"] * dt + dx @ p["p"] + 0.5 * np.einsum("ni,ij,nj->n", dx, p["Q"], dx)
                    + 0.5 * p["r"] * dt ** 2)
        return p["a"] + self._bump(dt, dx)

    def dt(self, t, x):
        dt, dx = self._offsets(t, x)
        p = self.params
        if self.kind == "quadratic":
            return p["c_t"] + p["r"] * dt
        return -self._bump(dt, dx) * dt / p["t_scale"] ** 2

    def dx(self, t, x):
        dt, dx = self._offsets(t, x)
        p = self.params
        if self.kind == "quadratic":
            return p["p"][None, :] + dx @ p["Q"]
        return -self._bump(dt, dx)[:, None] * dx / p["scale"] ** 2

    def dxx(self, t, x):
        dt, dx = self._offsets(t, x)
        p = self.params
        d = self.x0.size
        if self.kind == "quadratic":
            return np.broadcast_to(p["Q"], (dx.shape[0], d, d)).copy()
        s2 = p["scale"] ** 2
        outer = dx[:, :, None] * dx[:, None, :] / s2 ** 2
        return self._bump(dt, dx)[:, None, None] * (outer - np.eye(d)[None] / s2)

    def to_dict(self):
        params = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        return {"kind": self.kind, "t0": self.t0, "x0": self.x0.tolist(), "params": params}


# ---------------------------------------------------------------- balls


@dataclass(frozen=True)
class Ball:
    """Space-time ball ``max(|x - x0| / eps, |t - t0| / eps) < 1`` within ``[0, T)``."""

    t0: float
    x0: tuple
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("ball radius must be positive")
        object.__setattr__(self, "x0", tuple(float(c) for c in np.atleast_1d(self.x0)))

    def distance(self, t, x):
        t, x = _as_tx(t, x)
        diff = x - np.asarray(self.x0)
        return np.maximum(np.sqrt((diff * diff).sum(axis=1)), np.abs(t - self.t0)) / self.eps

    def contains(self, t, x):
        return self.distance(t, x) < 1.0

    def sample(self, rng, n, horizon, inner=0.0):
        """Uniform points with ``inner <= distance < 1``, clipped to ``[0, T)``."""
        d = len(self.x0)
        out_t, out_x = [], []
        while sum(len(a) for a in out_t) < n:
            t = self.t0 + self.eps * rng.uniform(-1, 1, size=4 * n)
            dirs = rng.standard_normal((4 * n, d))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            x = np.asarray(self.x0) + dirs * (self.eps * rng.uniform(0, 1, size=(4 * n, 1)) ** (1.0 / d))
            dist = self.distance(t, x)
            keep = (dist >= inner) & (dist < 1.0) & (t >= 0.0) & (t < horizon)
            out_t.append(t[keep])
            out_x.append(x[keep])
        return np.concatenate(out_t)[:n], np.concatenate(out_x)[:n]


# ---------------------------------------------------------------- witnesses


class Witness:
    """Produces the responding player's strategy starting at ``tau``."""

    player: str

    def produce(self, tau: StoppingRule, opponent: ElementaryStrategy | None = None) -> ElementaryStrategy:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class ConstantWitness(Witness):
    player: str
    control_set: object
    index: int

    def produce(self, tau, opponent=None):
        return ElementaryStrategy.constant(self.player, self.control_set, self.index, start=tau)

    def to_dict(self):
        return {"type": "constant", "player": self.player, "index": int(self.index)}


@dataclass(frozen=True, eq=False)
class FeedbackWitness(Witness):
    """Saddle controls of a solved grid, re-decided at fixed times after ``tau``."""

    values: ValueGrid
    problem: GameProblem
    player: str
    decision_times: tuple

    def produce(self, tau, opponent=None):
        return feedback_tail(self.values, self.problem, self.player, list(self.decision_times), tau)

    def to_dict(self):
        return {"type": "feedback", "player": self.player, "side": self.values.side,
                "boundary": self.values.boundary, "decision_times": [float(t) for t in self.decision_times]}


@dataclass(frozen=True, eq=False)
class SwitchWitness(Witness):
    """``first`` where ``pick(tau, X_tau)`` holds, ``second`` elsewhere."""

    first: Witness
    second: Witness
    pick: Callable
    description: str = "switch"

    @property
    def player(self):
        return self.first.player

    def produce(self, tau, opponent=None):
        return switch_strategies(tau, self.pick, self.first.produce(tau, opponent), self.second.produce(tau, opponent))

    def to_dict(self):
        return {"type": "switch", "rule": self.description, "first": self.first.to_dict(),
                "second": self.second.to_dict()}


@dataclass(frozen=True, eq=False)
class BumpWitness(Witness):
    """Local action on the bump region until leaving the half ball, then the base witness.

    The local strategy is the constant ``local_index`` (super side) or the
    response table applied to the opponent (sub side).
    """

    base: Witness
    base_function: GridFunction
    phi: SmoothTestFunction
    delta: float
    ball: Ball
    control_set: object
    local_index: int | None = None
    response: tuple | None = None

    @property
    def player(self):
        return self.base.player

    def _active(self, t, x):
        phi = self.phi(t, x)
        w = self.base_function(t, x)
        bump = phi - self.delta < w if self.response is None else phi + self.delta > w
        return bump & self.ball.contains(t, x)

    def produce(self, tau, opponent=None):
        first = self.base.produce(tau, opponent)
        if self.response is None:
            local = ElementaryStrategy.constant(self.player, self.control_set, self.local_index, start=tau)
        else:
            if opponent is None:
                raise CandidateError("the response-map witness needs the opponent's strategy")
            local = mapped_response(opponent, self.response, self.control_set, tau)
        head = switch_strategies(tau, self._active, local, first)
        half = self.ball.eps / 2.0
        tau1 = FirstExitRule(self.ball.x0, half, tau, self.ball.t0, half)
        return concatenate(head, self.base.produce(tau1, opponent))

    def to_dict(self):
        out = {"type": "bump", "base": self.base.to_dict(), "phi": self.phi.to_dict(), "delta": float(self.delta),
               "center": {"t": self.ball.t0, "x": list(self.ball.x0)}, "epsilon": self.ball.eps}
        if self.response is None:
            out["local_index"] = int(self.local_index)
        else:
            out["response"] = [int(i) for i in self.response]
        return out


# ---------------------------------------------------------------- candidates


def _check_levels(grid: SpaceTimeGrid, n_levels: int = 33):
    return np.unique(np.concatenate([np.linspace(grid.t0, grid.T, n_levels), [grid.T]]))


@dataclass(frozen=True, eq=False)
class SemiSolutionCandidate:
    """A grid function with a class label and witness; invariants checked at construction.

    ``bound`` caps ``|w|`` on the grid nodes at a set of time levels.
    The terminal side condition is checked exactly at every node.
    """

    w: GridFunction
    cls: str
    witness: Witness
    grid: SpaceTimeGrid
    problem: GameProblem
    bound: float

    def __post_init__(self):
        _check_class(self.cls)
        object.__setattr__(self, "w", as_grid_function(self.w))
        if self.witness.player != RESPONDER[self.cls]:
            raise CandidateError(f"class {self.cls} needs a player-{RESPONDER[self.cls]} witness")
        nodes = self.grid.node_array()
        g = self.problem.payoff_checked(nodes)
        wT = self.w(np.full(nodes.shape[0], self.grid.T), nodes)
        bad = wT < g if is_super(self.cls) else wT > g
        if np.any(bad):
            k = int(np.argmax(bad))
            raise CandidateError(f"terminal condition fails at x={nodes[k].tolist()}: w={wT[k]!r}, g={g[k]!r}")
        for t in _check_levels(self.grid):
            vals = self.w(np.full(nodes.shape[0], t), nodes)
            if not np.all(np.isfinite(vals)) or np.max(np.abs(vals)) > self.bound:
                raise CandidateError(f"|w| exceeds the declared bound {self.bound} at t={t}")

    def __call__(self, t, x):
        return self.w(t, x)

    def to_dict(self) -> dict:
        return {"cls": self.cls, "bound": float(self.bound), "grid": self.grid.to_dict(), "w": self.w.to_dict(),
                "witness": self.witness.to_dict(), "problem": self.problem.name}


def constant_candidate(problem: GameProblem, grid: SpaceTimeGrid, cls: str, value: float | None = None,
                       witness_index: int = 0) -> SemiSolutionCandidate:
    """``sup g`` (super classes) or ``inf g`` (sub classes) with a constant witness."""
    _check_class(cls)
    lo, hi = problem.payoff_bounds
    if value is None:
        value = hi if is_super(cls) else lo
    if not np.isfinite(value):
        raise CandidateError("constant candidates need finite payoff bounds")
    player = RESPONDER[cls]
    cs = problem.v_set if player == "two" else problem.u_set
    return SemiSolutionCandidate(ConstantFunction(value), cls, ConstantWitness(player, cs, witness_index), grid,
                                 problem, abs(float(value)))


def grid_candidate(values: ValueGrid, problem: GameProblem, cls: str, decision_times, slope: float = 0.0,
                   bound: float | None = None) -> SemiSolutionCandidate:
    """Solved grid tilted by ``slope (T - t)`` with the grid's feedback as witness.

    A positive slope strengthens super candidates, a negative one sub candidates.
    """
    _check_class(cls)
    w: GridFunction = SolvedGrid(values)
    if slope:
        w = TimeTilted(w, slope, values.grid.T)
    player = RESPONDER[cls]
    witness = FeedbackWitness(values, problem, player, tuple(float(t) for t in decision_times))
    if bound is None:
        bound = float(np.max(np.abs(values.values))) + abs(slope) * (values.grid.T - values.grid.t0)
    return SemiSolutionCandidate(w, cls, witness, values.grid, problem, bound)


# ---------------------------------------------------------------- certification


@dataclass
class CertifySpec:
    """Sampled part of the class definition: rules, opponents, start points and binning."""

    taus: Sequence[StoppingRule]
    rhos: Sequence[StoppingRule]
    fam_u: StrategyFamily
    fam_v: StrategyFamily
    start_points: Sequence[tuple]
    cfg: SimulationConfig
    bins: int = 16
    min_occupancy: int = 50
    threshold: float = 0.0

    def __post_init__(self):
        if not self.taus or not self.rhos or not self.start_points:
            raise ConfigError("certification needs at least one tau, one rho and one start point")
        if self.cfg.batch_size < 2:
            raise ConfigError("certification needs batch_size >= 2")
        if self.bins < 1 or self.min_occupancy < 1:
            raise ConfigError("bins and min_occupancy must be positive")


def _bin_keys(z: np.ndarray, bins: int) -> np.ndarray:
    """Lexicographic bin labels of ``z`` (rows), ``bins`` equal cells per column."""
    labels = np.zeros((z.shape[0], z.shape[1]), dtype=np.int64)
    for c in range(z.shape[1]):
        lo, hi = z[:, c].min(), z[:, c].max()
        if hi > lo:
            labels[:, c] = np.clip(((z[:, c] - lo) / (hi - lo) * bins).astype(np.int64), 0, bins - 1)
    return labels


def partition(z: np.ndarray, bins: int, min_occupancy: int) -> list:
    """Group rows into bins, merging lexicographically adjacent bins up to ``min_occupancy`` rows."""
    labels = _bin_keys(z, bins)
    order = np.lexsort(labels.T[::-1])
    sorted_labels = labels[order]
    starts = np.concatenate([[0], np.nonzero(np.any(np.diff(sorted_labels, axis=0) != 0, axis=1))[0] + 1,
                             [len(order)]])
    groups, current = [], []
    for a, b in zip(starts[:-1], starts[1:]):
        current.extend(order[a:b].tolist())
        if len(current) >= min_occupancy:
            groups.append(np.array(sorted(current)))
            current = []
    if current:
        if groups:
            groups[-1] = np.array(sorted(groups[-1].tolist() + current))
        else:
            groups.append(np.array(sorted(current)))
    return groups


def _group_stats(diff: np.ndarray, idx: np.ndarray):
    d = diff[idx]
    n = d.size
    se = float(np.std(d, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return float(np.mean(d)), se


def _case_pair(candidate: SemiSolutionCandidate, tau, u, v):
    cls = candidate.cls
    try:
        if RESPONDER[cls] == "two":
            tail = candidate.witness.produce(tau, u if USES_OPPONENT[cls] else None)
            return StrategyPair(u, concatenate(v, tail))
        tail = candidate.witness.produce(tau, v if USES_OPPONENT[cls] else None)
        return StrategyPair(concatenate(u, tail), v)
    except GameError:
        raise
    except Exception as exc:  # a witness is user code; report it against the candidate
        raise CandidateError(f"witness failed to produce a strategy: {exc}") from exc


def _run_case(candidate, problem, spec, cfg, case):
    (s, x), (ti, tau), (ri, rho), (i, u), (j, v) = case
    pair = _case_pair(candidate, tau, u, v)
    result = simulate_batch(problem, pair, s, x, cfg)
    t_tau = tau.on_batch(result.times, result.states)
    t_rho = rho.on_batch(result.times, result.states)
    if np.any(t_tau > t_rho + TIME_TOL):
        raise ConfigError(f"rule tau[{ti}] exceeds rho[{ri}] on some simulated path")
    x_tau = _states_at(result.times, result.states, t_tau)
    x_rho = _states_at(result.times, result.states, t_rho)
    w_tau = candidate.w(t_tau, x_tau)
    w_rho = candidate.w(t_rho, x_rho)
    # slack of the defining inequality, non-negative when it holds
    diff = w_tau - w_rho if is_super(candidate.cls) else w_rho - w_tau
    groups = partition(np.column_stack([t_tau, x_tau]), spec.bins, spec.min_occupancy)
    rows = []
    for g in groups:
        margin, se = _group_stats(diff, g)
        rows.append({"n": int(g.size), "tau_mean": float(np.mean(t_tau[g])), "margin": margin, "std_error": se,
                     "verdict": judge(margin, se, spec.threshold)})
    return {"s": float(s), "x": np.atleast_1d(np.asarray(x, dtype=float)).tolist(), "tau": ti, "rho": ri,
            "u": i, "v": j, "bins": rows, "verdict": combine_verdicts([r["verdict"] for r in rows])}


def certify(candidate: SemiSolutionCandidate, problem: GameProblem, spec: CertifySpec) -> CertificateReport:
    """Check the conditional inequality of the candidate's class on every sampled case.

    A case is a start point, a rule ``tau``, a rule ``rho >= tau``, and one
    strategy per player from the spec's families; the witness replaces the
    responding player's strategy from ``tau`` on. The overall verdict is the
    conjunction over cases and bins.
    """
    cases = [(sx, tr, rr, uu, vv)
             for sx in spec.start_points
             for tr in enumerate(spec.taus)
             for rr in enumerate(spec.rhos)
             for uu in enumerate(spec.fam_u)
             for vv in enumerate(spec.fam_v)]
    cell_cfg = replace(spec.cfg, threads=1)

    def work(case):
        return _run_case(candidate, problem, spec, cell_cfg, case)

    if spec.cfg.threads > 1 and len(cases) > 1:
        with ThreadPoolExecutor(max_workers=spec.cfg.threads) as pool:
            results = list(pool.map(work, cases))
    else:
        results = [work(c) for c in cases]
    all_bins = [b for r in results for b in r["bins"]]
    worst = min(all_bins, key=lambda b: b["margin"] + 3.0 * (b["std_error"] if np.isfinite(b["std_error"]) else 0.0))
    details = {"cls": candidate.cls, "cases": results, "candidate": candidate.to_dict()}
    meta = {"cfg": spec.cfg.to_dict(), "bins": spec.bins, "min_occupancy": spec.min_occupancy,
            "families": {"one": spec.fam_u.generator_spec, "two": spec.fam_v.generator_spec},
            "rules": {"tau": [_rule_dict(r) for r in spec.taus], "rho": [_rule_dict(r) for r in spec.rhos]},
            "scope": "finitely many rules, opponents and start points were sampled; class membership is not implied"}
    return CertificateReport("supermartingale", worst["margin"], worst["std_error"], float(spec.threshold),
                             combine_verdicts([r["verdict"] for r in results]), worst["margin"], details, meta)


def _rule_dict(rule):
    try:
        return rule.to_dict()
    except TypeError:
        return {"type": "opaque"}


# ---------------------------------------------------------------- lattice


def lattice_combine(a: SemiSolutionCandidate, b: SemiSolutionCandidate) -> SemiSolutionCandidate:
    """Pointwise min of super candidates or max of sub candidates with the switching witness.

    At ``tau`` the witness follows ``a``'s strategy where ``a`` attains the
    combined value (ties included) and ``b``'s elsewhere.
    """
    if a.cls != b.cls:
        raise CandidateError("cannot combine candidates of different classes")
    if not a.grid.same_as(b.grid):
        raise CandidateError("cannot combine candidates on different grids")
    if a is b:
        return a
    wa, wb = a.w, b.w
    if is_super(a.cls):
        w = PointwiseMin(wa, wb)

        def pick(t, x):
            return wa(t, x) <= wb(t, x)
        rule = "first where w1 <= w2"
    else:
        w = PointwiseMax(wa, wb)

        def pick(t, x):
            return wa(t, x) >= wb(t, x)
        rule = "first where w1 >= w2"
    witness = SwitchWitness(a.witness, b.witness, pick, rule)
    return SemiSolutionCandidate(w, a.cls, witness, a.grid, a.problem, max(a.bound, b.bound))


# ---------------------------------------------------------------- bumps


def _generator_at(problem: GameProblem, phi: SmoothTestFunction, t, x):
    """``phi_t`` and the per-pair table ``b.phi_x + 1/2 Tr(a phi_xx)`` at each sample."""
    pt = phi.dt(t, x)
    px = phi.dx(t, x)
    pxx = phi.dxx(t, x)
    tables = np.stack([generator_table(problem, HamiltonianQuery(float(t[k]), x[k], px[k], pxx[k]))
                       for k in range(t.size)])
    return pt, tables


def _check_torus(w, phi, ball, problem, eta, n_samples, rng, sign):
    t, x = ball.sample(rng, n_samples, problem.horizon, inner=0.5)
    gap = sign * (phi(t, x) - w(t, x))
    k = int(np.argmin(gap))
    if gap[k] <= eta:
        side = "above" if sign > 0 else "below"
        raise ConstructionRefused(f"test function is not {eta} {side} w on the annulus", (float(t[k]), x[k].tolist()))


def _unchanged(w, phi, ball, problem, delta, n_samples, rng, sign, grid):
    if delta != 0:
        return False
    t, x = ball.sample(rng, n_samples, problem.horizon)
    nodes = grid.node_array()
    for level in _check_levels(grid):
        inside = ball.contains(np.full(nodes.shape[0], level), nodes)
        if np.any(inside):
            t = np.concatenate([t, np.full(int(inside.sum()), level)])
            x = np.concatenate([x, nodes[inside]])
    return bool(np.all(sign * (phi(t, x) - w(t, x)) >= 0))


def bump_super(candidate: SemiSolutionCandidate, phi: SmoothTestFunction, delta: float, epsilon: float,
               eta: float, gap: float = 0.0, v_hat: int | None = None, n_samples: int = 256,
               rng_seed: int = 0) -> SemiSolutionCandidate:
    """``min(phi - delta, w)`` on the ball of radius ``epsilon`` around ``phi``'s centre.

    Sampled preconditions: some ``v_hat`` gives
    ``phi_t + max_u [b.phi_x + 1/2 Tr(a phi_xx)] < -gap`` on the ball, and
    ``phi > w + eta`` on the annulus between radii ``epsilon/2`` and ``epsilon``.
    """
    if candidate.cls != "super_upper":
        raise CandidateError("bump_super applies to super_upper candidates")
    if delta < 0 or not 0 <= delta < eta:
        raise ConstructionRefused("delta must satisfy 0 <= delta < eta")
    problem = candidate.problem
    ball = Ball(phi.t0, tuple(phi.x0.tolist()), epsilon)
    rng = np.random.default_rng(rng_seed)
    if _unchanged(candidate.w, phi, ball, problem, delta, n_samples, rng, +1, candidate.grid):
        return candidate
    t, x = ball.sample(rng, n_samples, problem.horizon)
    pt, tables = _generator_at(problem, phi, t, x)
    # worst case over samples of phi_t + max_u L(u, v) for each v
    worst = (pt[:, None] + tables.max(axis=1)).max(axis=0)
    j = int(np.argmin(worst)) if v_hat is None else int(v_hat)
    if not worst[j] < -gap:
        vals = pt + tables[:, :, j].max(axis=1)
        k = int(np.argmax(vals))
        raise ConstructionRefused(f"strict super-solution gap fails for v index {j}: {vals[k]:.4g} >= {-gap}",
                                  (float(t[k]), x[k].tolist()))
    _check_torus(candidate.w, phi, ball, problem, eta, n_samples, rng, +1)
    w = Bumped(candidate.w, phi, delta, ball, "min")
    witness = BumpWitness(candidate.witness, candidate.w, phi, delta, ball, problem.v_set, local_index=j)
    return SemiSolutionCandidate(w, candidate.cls, witness, candidate.grid, problem, candidate.bound)


def bump_sub(candidate: SemiSolutionCandidate, phi: SmoothTestFunction, delta: float, epsilon: float,
             eta: float, response: Sequence[int], gap: float = 0.0, n_samples: int = 256,
             rng_seed: int = 0) -> SemiSolutionCandidate:
    """``max(phi + delta, w)`` on the ball, with the witness answering ``v`` by ``response[v]``.

    Sampled preconditions: ``phi_t + L(response[v], v) > gap`` on the ball
    for every ``v``, and ``phi < w - eta`` on the annulus.
    """
    if candidate.cls != "sub_upper":
        raise CandidateError("bump_sub applies to sub_upper candidates")
    if delta < 0 or not 0 <= delta < eta:
        raise ConstructionRefused("delta must satisfy 0 <= delta < eta")
    problem = candidate.problem
    nu, nv = len(problem.u_set), len(problem.v_set)
    table = list(response)
    if len(table) != nv or any(r is None or not 0 <= int(r) < nu for r in table):
        missing = [k for k in range(nv) if k >= len(table) or table[k] is None or not 0 <= int(table[k]) < nu]
        raise ConstructionRefused(f"response table has no valid entry for v indices {missing}")
    table = tuple(int(r) for r in table)
    ball = Ball(phi.t0, tuple(phi.x0.tolist()), epsilon)
    rng = np.random.default_rng(rng_seed)
    if _unchanged(candidate.w, phi, ball, problem, delta, n_samples, rng, -1, candidate.grid):
        return candidate
    t, x = ball.sample(rng, n_samples, problem.horizon)
    pt, tables = _generator_at(problem, phi, t, x)
    vals = pt[:, None] + tables[:, np.array(table), np.arange(nv)]
    k, j = np.unravel_index(int(np.argmin(vals)), vals.shape)
    if not vals[k, j] > gap:
        raise ConstructionRefused(f"strict sub-solution gap fails for v index {j}: {vals[k, j]:.4g} <= {gap}",
                                  (float(t[k]), x[k].tolist()))
    _check_torus(candidate.w, phi, ball, problem, eta, n_samples, rng, -1)
    w = Bumped(candidate.w, phi, delta, ball, "max")
    witness = BumpWitness(candidate.witness, candidate.w, phi, delta, ball, problem.u_set, response=table)
    return SemiSolutionCandidate(w, candidate.cls, witness, candidate.grid, problem, candidate.bound)


@dataclass(frozen=True, eq=False)
class Bumped(GridFunction):
    """``min(phi - delta, base)`` or ``max(phi + delta, base)`` inside the ball, ``base`` outside."""

    base: GridFunction
    phi: SmoothTestFunction
    delta: float
    ball: Ball
    mode: str

    def __call__(self, t, x):
        t, x = _as_tx(t, x)
        w = self.base(t, x)
        inside = self.ball.contains(t, x)
        if not np.any(inside):
            return w
        p = self.phi(t[inside], x[inside])
        out = w.copy()
        if self.mode == "min":
            out[inside] = np.minimum(p - self.delta, w[inside])
        else:
            out[inside] = np.maximum(p + self.delta, w[inside])
        return out

    def to_dict(self):
        return {"type": "bump", "mode": self.mode, "base": self.base.to_dict(), "phi": self.phi.to_dict(),
                "delta": float(self.delta), "center": {"t": self.ball.t0, "x": list(self.ball.x0)},
                "epsilon": self.ball.eps}


def envelope_ordering(sub_values: Sequence[float], v_minus: float, se_minus: float, v_plus: float, se_plus: float,
                      super_values: Sequence[float]) -> dict:
    """Check ``max sub <= V- + 3 SE`` and ``V+ <= min super + 3 SE`` at one probe point."""
    lower = max(sub_values) if len(sub_values) else -np.inf
    upper = min(super_values) if len(super_values) else np.inf
    return {"sub_max": float(lower), "super_min": float(upper),
            "lower_ok": bool(lower <= v_minus + 3 * se_minus), "upper_ok": bool(v_plus <= upper + 3 * se_plus),
            "ordered": bool(v_minus <= v_plus)}


__all__ = [
    "CLASSES", "Ball", "BumpWitness", "Bumped", "CertifySpec", "ConstantFunction", "ConstantWitness",
    "FeedbackWitness", "GridFunction", "PointwiseMax", "PointwiseMin", "SemiSolutionCandidate",
    "SmoothTestFunction", "SolvedGrid", "SwitchWitness", "TimeTilted", "Witness", "as_grid_function",
    "bump_sub", "bump_super", "certify", "constant_candidate", "envelope_ordering", "grid_candidate",
    "lattice_combine", "partition",
]
