"""Discrete path space, stopping rules and elementary strategies.

Rules and selectors work on *batches of prefixes*: ``times`` has shape
``(k+1,)`` and ``states`` has shape ``(B, k+1, d)``. A rule returns, per
path, the grid time at which it stopped on that prefix, or ``inf`` when it
has not stopped yet. Once a rule reports a finite time it must report the
same time on every extension of the prefix; the simulator checks this.

A selector is only ever handed the prefix that ends at its decision time,
so it cannot look past the rule that opened its segment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dynamics import ControlSet
from .errors import OutOfDomainError, StrategyInvariantError

PLAYERS = ("one", "two")
TIME_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SamplePath:
    """A discrete trajectory ``t_0 < ... < t_N`` with optional noise and actions."""

    times: np.ndarray
    states: np.ndarray
    noise: np.ndarray | None = None
    u_index: np.ndarray | None = None
    v_index: np.ndarray | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if times.ndim != 1 or times.size < 1:
            raise ValueError("times must be a non-empty 1-d array")
        if np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        if states.shape[0] != times.size:
            raise ValueError("states and times must have the same length")
        if self.noise is not None and np.asarray(self.noise).shape[0] != times.size - 1:
            raise ValueError("noise must have one increment per step")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def start_time(self):
        return float(self.times[0])

    @property
    def dim(self):
        return self.states.shape[1]

    def prefix(self, k: int) -> "SamplePath":
        """Path restricted to ``times[:k+1]``; noise and actions are dropped."""
        return SamplePath(self.times[: k + 1], self.states[: k + 1])

    def index_before(self, t: float) -> int:
        """Index of the last grid time strictly before ``t``."""
        return int(np.searchsorted(self.times, t - TIME_TOL, side="left")) - 1

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > TIME_TOL * max(1.0, abs(t)):
            raise ValueError(f"{t} is not a grid time of this path")
        return i

    def to_csv(self, fh, u_set: ControlSet | None = None, v_set: ControlSet | None = None):
        """Write ``t, x_1..x_d, u_*, v_*`` rows; the action row at ``t_k`` is the one held on ``(t_k, t_{k+1}]``."""
        d = self.dim
        cols = ["t"] + [f"x_{i + 1}" for i in range(d)]
        ucols = vcols = []
        if self.u_index is not None and u_set is not None:
            ucols = [f"u_{i + 1}" for i in range(u_set.dim)]
        if self.v_index is not None and v_set is not None:
            vcols = [f"v_{i + 1}" for i in range(v_set.dim)]
        fh.write(",".join(cols + ucols + vcols) + "\n")
        n = self.times.size
        for k in range(n):
            row = [fmt(self.times[k])] + [fmt(val) for val in self.states[k]]
            if ucols:
                row += [fmt(val) for val in u_set.points[self.u_index[k]]] if k < n - 1 else [""] * len(ucols)
            if vcols:
                row += [fmt(val) for val in v_set.points[self.v_index[k]]] if k < n - 1 else [""] * len(vcols)
            fh.write(",".join(row) + "\n")


def fmt(value: float) -> str:
    """Locale-free 17-significant-digit float formatting."""
    return format(float(value), ".17g")


def as_batch(path: SamplePath):
    return path.times, path.states[None, :, :]


def _first_true(mask: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Per row, the time of the first True entry, else inf."""
    hit = mask.any(axis=1)
    first = mask.argmax(axis=1)
    return np.where(hit, times[first], np.inf)


def _states_at(times, states, taus):
    """``states[b, index(taus[b])]`` for finite taus; rows with inf get NaN."""
    out = np.full((states.shape[0], states.shape[2]), np.nan)
    finite = np.isfinite(taus)
    if np.any(finite):
        idx = np.searchsorted(times, taus[finite] - TIME_TOL)
        out[finite] = states[np.nonzero(finite)[0], idx]
    return out


# ---------------------------------------------------------------- rules


class StoppingRule:
    """Non-anticipative map from paths to grid times."""

    label = ""

    def evaluate(self, times: np.ndarray, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise TypeError(f"{type(self).__name__} has no declarative form")

    def __call__(self, path: SamplePath) -> float:
        """Stopping time on a complete path (the path's last time if never triggered)."""
        tau = float(self.evaluate(*as_batch(path))[0])
        return tau if np.isfinite(tau) else float(path.times[-1])

    def on_batch(self, times, states):
        """Complete-path evaluation for a batch; inf is replaced by the final time."""
        taus = self.evaluate(times, states)
        return np.where(np.isfinite(taus), taus, times[-1])


@dataclass(frozen=True)
class HorizonRule(StoppingRule):
    """The terminal rule ``tau = T``: never stops strictly inside a prefix."""

    label: str = "horizon"

    def evaluate(self, times, states):
        return np.full(states.shape[0], np.inf)

    def to_dict(self):
        return {"type": "horizon", "params": {}}


@dataclass(frozen=True)
class ConstantRule(StoppingRule):
    """Stops at the first grid time ``>= time``."""

    time: float
    label: str = ""

    def evaluate(self, times, states):
        hit = np.nonzero(times >= self.time - TIME_TOL)[0]
        value = times[hit[0]] if hit.size else np.inf
        return np.full(states.shape[0], value)

    def to_dict(self):
        return {"type": "constant", "params": {"time": float(self.time)}}


@dataclass(frozen=True, eq=False)
class GridTimeRule(StoppingRule):
    """The ``index``-th point of a deterministic decision-time grid."""

    times_grid: tuple
    index: int
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "times_grid", tuple(float(t) for t in self.times_grid))

    def __eq__(self, other):
        return isinstance(other, GridTimeRule) and self.times_grid == other.times_grid and self.index == other.index

    def __hash__(self):
        return hash((self.times_grid, self.index))

    def evaluate(self, times, states):
        return ConstantRule(self.times_grid[self.index]).evaluate(times, states)

    def to_dict(self):
        return {"type": "deterministic_grid", "params": {"times": list(self.times_grid), "index": int(self.index)}}


@dataclass(frozen=True, eq=False)
class FirstExitRule(StoppingRule):
    """First grid time ``t >= after(y)`` at which the path leaves an open ball.

    Space-only by default. With ``time_radius`` set, the ball is the
    space-time box ``max(|x - center|/radius, |t - time_center|/time_radius) < 1``.
    """

    center: tuple
    radius: float
    after: StoppingRule
    time_center: float | None = None
    time_radius: float | None = None
    label: str = ""

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if (self.time_radius is None) != (self.time_center is None):
            raise ValueError("time_center and time_radius go together")

    def evaluate(self, times, states):
        after = self.after.evaluate(times, states)
        diff = states - np.asarray(self.center)
        dist = (np.abs(diff[..., 0]) if diff.shape[2] == 1 else np.sqrt((diff * diff).sum(axis=2))) / self.radius
        if self.time_radius is not None:
            dist = np.maximum(dist, np.abs(times - self.time_center)[None, :] / self.time_radius)
        mask = (dist >= 1.0) & (times[None, :] >= after[:, None] - TIME_TOL)
        return _first_true(mask, times)

    def to_dict(self):
        params = {"center": list(self.center), "radius": float(self.radius), "after": self.after.to_dict()}
        if self.time_radius is not None:
            params["time_center"] = float(self.time_center)
            params["time_radius"] = float(self.time_radius)
        return {"type": "first_exit", "params": params}


@dataclass(frozen=True, eq=False)
class MinRule(StoppingRule):
    rules: tuple
    label: str = ""

    def evaluate(self, times, states):
        return np.min([r.evaluate(times, states) for r in self.rules], axis=0)

    def to_dict(self):
        return {"type": "min", "params": {"rules": [r.to_dict() for r in self.rules]}}


@dataclass(frozen=True, eq=False)
class MaxRule(StoppingRule):
    rules: tuple
    label: str = ""

    def evaluate(self, times, states):
        return np.max([r.evaluate(times, states) for r in self.rules], axis=0)

    def to_dict(self):
        return {"type": "max", "params": {"rules": [r.to_dict() for r in self.rules]}}


@dataclass(frozen=True, eq=False)
class SwitchRule(StoppingRule):
    """``first`` on paths where ``indicator(tau, y(tau))`` holds, ``second`` elsewhere.

    Both branches must not stop before ``at``; the indicator reads the
    path only at ``at``.
    """

    at: StoppingRule
    indicator: Callable
    first: StoppingRule
    second: StoppingRule
    label: str = ""

    def evaluate(self, times, states):
        tau = self.at.evaluate(times, states)
        stopped = np.isfinite(tau)
        out = np.full(states.shape[0], np.inf)
        if not np.any(stopped):
            return out
        pick = switch_mask(self.indicator, times, states, tau)
        a = self.first.evaluate(times, states)
        b = self.second.evaluate(times, states)
        out[stopped] = np.where(pick, a, b)[stopped]
        return out


def switch_mask(indicator, times, states, tau):
    """Evaluate ``indicator(t, x)`` at ``(tau, y(tau))``; False where tau is inf."""
    x_tau = _states_at(times, states, tau)
    out = np.zeros(states.shape[0], dtype=bool)
    finite = np.isfinite(tau)
    if np.any(finite):
        out[finite] = np.asarray(indicator(tau[finite], x_tau[finite]), dtype=bool)
    return out


def rule_min(a: StoppingRule, b: StoppingRule) -> StoppingRule:
    if isinstance(a, HorizonRule) or a == b:
        return b
    if isinstance(b, HorizonRule):
        return a
    if isinstance(a, ConstantRule) and isinstance(b, ConstantRule):
        return a if a.time <= b.time else b
    return MinRule((a, b))


def rule_max(a: StoppingRule, b: StoppingRule) -> StoppingRule:
    if isinstance(a, HorizonRule) or isinstance(b, HorizonRule):
        return HorizonRule()
    if a == b:
        return a
    if isinstance(a, ConstantRule) and isinstance(b, ConstantRule):
        return a if a.time >= b.time else b
    return MaxRule((a, b))


def first_exit_rule(center, radius, after: StoppingRule, time_center=None, time_radius=None) -> StoppingRule:
    """Rule stopping at the first grid time after ``after`` with ``|y(t) - center| >= radius``.

    Passing ``time_center``/``time_radius`` gives the space-time variant.
    """
    if isinstance(after, HorizonRule):
        return HorizonRule()
    return FirstExitRule(center, radius, after, time_center, time_radius)


# ---------------------------------------------------------------- selectors


class ActionSelector:
    """Chooses a control index from the prefix ending at the decision time."""

    control_set: ControlSet

    def select(self, times: np.ndarray, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise TypeError(f"{type(self).__name__} has no declarative form")


@dataclass(frozen=True, eq=False)
class ConstantSelector(ActionSelector):
    control_set: ControlSet
    index: int

    def __post_init__(self):
        if not 0 <= self.index < len(self.control_set):
            raise ValueError("selector index outside the control set")

    def select(self, times, states):
        return np.full(states.shape[0], self.index, dtype=np.int64)

    def to_dict(self):
        return {"type": "constant", "params": {"index": int(self.index)}}


@dataclass(frozen=True, eq=False)
class ThresholdSelector(ActionSelector):
    """``below`` if ``x[axis] < level`` at the decision time, else ``above``."""

    control_set: ControlSet
    axis: int
    level: float
    below: int
    above: int

    def select(self, times, states):
        x = states[:, -1, self.axis]
        return np.where(x < self.level, self.below, self.above).astype(np.int64)

    def to_dict(self):
        return {"type": "threshold", "params": {"axis": int(self.axis), "level": float(self.level),
                                                "below": int(self.below), "above": int(self.above)}}


@dataclass(frozen=True, eq=False)
class GridFeedbackSelector(ActionSelector):
    """Looks up a per-node control table at the nearest time level and node.

    States outside the grid are clamped to the boundary node.
    """

    control_set: ControlSet
    level_times: np.ndarray
    axes: tuple
    table: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "level_times", np.asarray(self.level_times, dtype=float))
        object.__setattr__(self, "axes", tuple(np.asarray(a, dtype=float) for a in self.axes))
        table = np.asarray(self.table, dtype=np.int64)
        if table.shape != (self.level_times.size,) + tuple(a.size for a in self.axes):
            raise ValueError("feedback table shape does not match the grid")
        if table.min() < 0 or table.max() >= len(self.control_set):
            raise ValueError("feedback table refers to controls outside the set")
        object.__setattr__(self, "table", table)

    def lookup(self, t, x):
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:1])
        level = np.clip(np.searchsorted(self.level_times, t), 1, self.level_times.size - 1)
        lower = self.level_times[level - 1]
        level = np.where(t - lower <= self.level_times[level] - t, level - 1, level)
        idx = [level]
        for i, axis in enumerate(self.axes):
            if axis.size == 1:
                idx.append(np.zeros(x.shape[0], dtype=np.int64))
                continue
            h = (axis[-1] - axis[0]) / (axis.size - 1)
            idx.append(np.clip(np.rint((x[:, i] - axis[0]) / h), 0, axis.size - 1).astype(np.int64))
        return self.table[tuple(idx)]

    def select(self, times, states):
        return self.lookup(np.full(states.shape[0], times[-1]), states[:, -1, :])

    def to_dict(self):
        return {"type": "grid_feedback", "params": {
            "level_times": self.level_times.tolist(),
            "axes": [a.tolist() for a in self.axes],
            "table": self.table.tolist(),
        }}


@dataclass(frozen=True, eq=False)
class PathSelector(ActionSelector):
    """User-supplied selector called once per path with a :class:`SamplePath` prefix."""

    control_set: ControlSet
    fn: Callable

    def select(self, times, states):
        return np.array([int(self.fn(SamplePath(times, s))) for s in states], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class SwitchSelector(ActionSelector):
    control_set: ControlSet
    at: StoppingRule
    indicator: Callable
    first: ActionSelector
    second: ActionSelector

    def select(self, times, states):
        tau = self.at.evaluate(times, states)
        if not np.all(np.isfinite(tau)):
            raise StrategyInvariantError("switch selector queried before its switching rule")
        pick = switch_mask(self.indicator, times, states, tau)
        out = np.empty(states.shape[0], dtype=np.int64)
        if np.any(pick):
            out[pick] = self.first.select(times, states[pick])
        if not np.all(pick):
            out[~pick] = self.second.select(times, states[~pick])
        return out


@dataclass(frozen=True, eq=False)
class MappedSelector(ActionSelector):
    """``table[inner(prefix up to decided_at)]``: a response map applied to another selector."""

    control_set: ControlSet
    table: tuple
    inner: ActionSelector
    decided_at: StoppingRule

    def select(self, times, states):
        tau = self.decided_at.evaluate(times, states)
        if not np.all(np.isfinite(tau)):
            raise StrategyInvariantError("mapped selector queried before its decision rule")
        idx = np.searchsorted(times, tau - TIME_TOL)
        inner = np.empty(states.shape[0], dtype=np.int64)
        for i in np.unique(idx):
            rows = idx == i
            inner[rows] = self.inner.select(times[: i + 1], states[rows, : i + 1])
        return np.asarray(self.table, dtype=np.int64)[inner]


# ---------------------------------------------------------------- strategies


@dataclass(frozen=True, eq=False)
class ElementaryStrategy:
    """Finitely many non-decreasing rules ``tau_0 <= ... <= tau_n = T`` and selectors.

    Segment ``k`` (1-based) holds ``xi_k`` on ``(tau_{k-1}, tau_k]``, with
    ``xi_k`` decided from the prefix up to ``tau_{k-1}``.
    """

    player: str
    control_set: ControlSet
    start_rule: StoppingRule
    segments: tuple

    def __post_init__(self):
        if self.player not in PLAYERS:
            raise ValueError(f"player must be one of {PLAYERS}")
        segs = tuple((r, s) for r, s in self.segments)
        if not segs:
            raise ValueError("a strategy needs at least one segment")
        for _, sel in segs:
            if sel.control_set != self.control_set:
                raise ValueError("selector control set differs from the strategy's")
        object.__setattr__(self, "segments", segs)

    @property
    def rules(self):
        return (self.start_rule,) + tuple(r for r, _ in self.segments)

    @property
    def selectors(self):
        return tuple(s for _, s in self.segments)

    @classmethod
    def constant(cls, player, control_set, index, start=0.0):
        start_rule = start if isinstance(start, StoppingRule) else ConstantRule(float(start))
        return cls(player, control_set, start_rule, ((HorizonRule(), ConstantSelector(control_set, index)),))

    def to_dict(self):
        return {
            "player": self.player,
            "control_set": self.control_set.to_dict(),
            "start_rule": self.start_rule.to_dict(),
            "segments": [{"rule": r.to_dict(), "selector": s.to_dict()} for r, s in self.segments],
        }

    @classmethod
    def from_dict(cls, data):
        cs = ControlSet.from_dict(data["control_set"])
        segs = tuple((rule_from_dict(seg["rule"]), selector_from_dict(seg["selector"], cs)) for seg in data["segments"])
        return cls(data["player"], cs, rule_from_dict(data["start_rule"]), segs)


def check_rule_order(taus: np.ndarray):
    """Validate a ``(B, n+1)`` table of prefix evaluations of ``tau_0..tau_n``.

    Stopped rules must form a leading block with non-decreasing times.
    """
    stopped = np.isfinite(taus)
    if np.any(stopped[:, 1:] & ~stopped[:, :-1]):
        raise StrategyInvariantError("a later rule stopped before an earlier one")
    both = stopped[:, 1:] & stopped[:, :-1]
    if np.any(both & (taus[:, 1:] < taus[:, :-1] - TIME_TOL)):
        raise StrategyInvariantError("stopping rules are not non-decreasing")


def active_segment(taus: np.ndarray, horizon_reached: bool = False) -> np.ndarray:
    """1-based segment index per path from prefix evaluations of all rules.

    The prefix ends at ``t_k`` and the segment is the one holding on
    ``(t_k, t_{k+1}]``. Raises when ``tau_0`` has not stopped.
    """
    check_rule_order(taus)
    stopped = np.isfinite(taus)
    if not np.all(stopped[:, 0]):
        raise OutOfDomainError("strategy queried before its starting rule")
    if not horizon_reached and np.any(stopped[:, -1]):
        raise StrategyInvariantError("terminal rule stopped before the horizon")
    return stopped[:, :-1].sum(axis=1)


def action_at(strategy: ElementaryStrategy, path: SamplePath, t: float) -> int:
    """Control index that ``strategy`` holds at time ``t`` on ``path``.

    Only the prefix before ``t`` is read. Raises :class:`OutOfDomainError`
    when ``t <= tau_0(path)``.
    """
    if t > path.times[-1] + TIME_TOL:
        raise OutOfDomainError("path does not cover the requested time")
    k = path.index_before(t)
    if k < 0:
        raise OutOfDomainError("strategy is undefined at or before its start")
    times, states = path.times[: k + 1], path.states[None, : k + 1]
    taus = np.array([[r.evaluate(times, states)[0] for r in strategy.rules]])
    if not np.isfinite(taus[0, 0]) or taus[0, 0] >= t - TIME_TOL:
        raise OutOfDomainError("strategy is undefined at or before its start")
    m = int(active_segment(taus)[0])
    dec = int(np.searchsorted(times, taus[0, m - 1] - TIME_TOL))
    return int(strategy.segments[m - 1][1].select(times[: dec + 1], states[:, : dec + 1])[0])


def action_point(strategy: ElementaryStrategy, path: SamplePath, t: float) -> np.ndarray:
    return strategy.control_set.points[action_at(strategy, path, t)]


def concatenate(head: ElementaryStrategy, tail: ElementaryStrategy) -> ElementaryStrategy:
    """``head`` up to ``tail.start_rule`` and ``tail`` afterwards.

    The head's rules are clipped at the switching rule and followed by the
    tail's rules; the result starts where ``head`` starts.
    """
    if head.player != tail.player:
        raise ValueError("cannot concatenate strategies of different players")
    if head.control_set != tail.control_set:
        raise ValueError("cannot concatenate strategies over different control sets")
    tau = tail.start_rule
    segs = tuple((rule_min(r, tau), s) for r, s in head.segments) + tail.segments
    return ElementaryStrategy(head.player, head.control_set, head.start_rule, segs)


def pad_segments(strategy: ElementaryStrategy, n: int) -> tuple:
    segs = list(strategy.segments)
    while len(segs) < n:
        segs.append((HorizonRule(), segs[-1][1]))
    return tuple(segs)


def switch_strategies(at: StoppingRule, indicator, first: ElementaryStrategy, second: ElementaryStrategy) -> ElementaryStrategy:
    """``first`` on ``{indicator at tau}``, ``second`` elsewhere; both must start at ``at``."""
    if first.control_set != second.control_set or first.player != second.player:
        raise ValueError("switched strategies must share player and control set")
    n = max(len(first.segments), len(second.segments))
    segs = []
    for (r1, s1), (r2, s2) in zip(pad_segments(first, n), pad_segments(second, n)):
        rule = r1 if (isinstance(r1, HorizonRule) and isinstance(r2, HorizonRule)) else SwitchRule(at, indicator, r1, r2)
        segs.append((rule, SwitchSelector(first.control_set, at, indicator, s1, s2)))
    return ElementaryStrategy(first.player, first.control_set, at, tuple(segs))


def start_later(strategy: ElementaryStrategy, tau: StoppingRule) -> ElementaryStrategy:
    """Shift a strategy so it starts at ``tau``: rules become ``max(tau, tau_k)``."""
    segs = tuple((rule_max(tau, r), s) for r, s in strategy.segments)
    return ElementaryStrategy(strategy.player, strategy.control_set, tau, segs)


def mapped_response(opponent: ElementaryStrategy, table, control_set: ControlSet, tau: StoppingRule) -> ElementaryStrategy:
    """Player-one strategy starting at ``tau`` that plays ``table[v]`` whenever the opponent plays ``v``."""
    if opponent.player != "two":
        raise ValueError("response map is applied to a player-two strategy")
    rules = opponent.rules
    segs = []
    for k, (rule, sel) in enumerate(opponent.segments):
        segs.append((rule_max(tau, rule), MappedSelector(control_set, tuple(int(i) for i in table), sel, rules[k])))
    return ElementaryStrategy("one", control_set, tau, tuple(segs))


# ---------------------------------------------------------------- declarative form


def rule_from_dict(data) -> StoppingRule:
    kind, params = data["type"], data.get("params", {})
    if kind == "horizon":
        return HorizonRule()
    if kind == "constant":
        return ConstantRule(float(params["time"]))
    if kind == "deterministic_grid":
        return GridTimeRule(tuple(params["times"]), int(params["index"]))
    if kind == "first_exit":
        return FirstExitRule(tuple(params["center"]), float(params["radius"]), rule_from_dict(params["after"]),
                             params.get("time_center"), params.get("time_radius"))
    if kind == "min":
        return MinRule(tuple(rule_from_dict(r) for r in params["rules"]))
    if kind == "max":
        return MaxRule(tuple(rule_from_dict(r) for r in params["rules"]))
    raise ValueError(f"unknown rule type {kind!r}")


def selector_from_dict(data, control_set: ControlSet) -> ActionSelector:
    kind, params = data["type"], data.get("params", {})
    if kind == "constant":
        return ConstantSelector(control_set, int(params["index"]))
    if kind == "threshold":
        return ThresholdSelector(control_set, int(params["axis"]), float(params["level"]),
                                 int(params["below"]), int(params["above"]))
    if kind == "grid_feedback":
        return GridFeedbackSelector(control_set, np.asarray(params["level_times"], dtype=float),
                                    tuple(np.asarray(a, dtype=float) for a in params["axes"]),
                                    np.asarray(params["table"], dtype=np.int64))
    raise ValueError(f"unknown selector type {kind!r}")


def decision_grid_strategy(player, control_set, selector_factory: Callable[[int], ActionSelector],
                           decision_times: Sequence[float]) -> ElementaryStrategy:
    """Strategy re-deciding at fixed times ``d_0 < d_1 < ...``; ``d_0`` is the start."""
    times = [float(t) for t in decision_times]
    if not times:
        raise ValueError("decision times must be non-empty")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("decision times must be strictly increasing")
    rules = [ConstantRule(t) for t in times[1:]] + [HorizonRule()]
    segs = tuple((r, selector_factory(k)) for k, r in enumerate(rules))
    return ElementaryStrategy(player, control_set, ConstantRule(times[0]), segs)
