"""Explicit monotone finite differences for the upper and lower Isaacs equations.

Each backward step writes the new value at a node as a minimax over
control pairs of a convex combination of neighbouring values::

    v_new(u, v) = c_0 v(x) + sum_j c_j v(x + e_j),   c_j >= 0,  sum c_j = 1

with upwind first differences and central second differences (plus the
monotone seven-point cross stencil in two dimensions). Writing the update
in this form keeps it monotone in floating point as well: every product has
a non-negative weight and every rounding step is monotone.
"""

from __future__ import annotations

import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import LOWER, UPPER, GameProblem
from .errors import CFLError, MonotonicityError
from .pathspace import (
    ConstantRule,
    ElementaryStrategy,
    GridFeedbackSelector,
    HorizonRule,
    StoppingRule,
    decision_grid_strategy,
    fmt,
)

BOUNDARIES = ("clamped_terminal", "extrapolated")
CFL_GUARD = 1e-12


def _pair_arrays(problem: GameProblem):
    U, V = problem.u_set.points, problem.v_set.points
    nu, nv = len(U), len(V)
    uu = np.repeat(U, nv, axis=0)
    vv = np.tile(V, (nu, 1))
    return uu, vv, nu, nv


def _node_coefficients(problem, t, nodes, uu, vv):
    """Drift ``(Nn, P, d)`` and ``a = sigma sigma^T`` ``(Nn, P, d, d)`` over nodes and control pairs."""
    Nn, P = nodes.shape[0], uu.shape[0]
    x = np.broadcast_to(nodes[:, None, :], (Nn, P, nodes.shape[1]))
    u = np.broadcast_to(uu[None], (Nn,) + uu.shape)
    v = np.broadcast_to(vv[None], (Nn,) + vv.shape)
    b, sig = problem.coefficients(t, x, u, v)
    a = np.einsum("...ia,...ja->...ij", sig, sig)
    return b, a


@dataclass(frozen=True, eq=False)
class SpaceTimeGrid:
    """Tensor grid on ``[t0, T] x prod [lo_i, hi_i]`` with a CFL-checked time step."""

    bounds: tuple
    nodes: tuple
    n_t: int
    t0: float
    T: float
    cfl: dict = field(default_factory=dict)

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        nodes = tuple(int(n) for n in self.nodes)
        if len(bounds) not in (1, 2) or len(nodes) != len(bounds):
            raise ValueError("grid dimension must be 1 or 2")
        if any(hi <= lo for lo, hi in bounds) or any(n < 3 for n in nodes):
            raise ValueError("each axis needs hi > lo and at least 3 nodes")
        if self.n_t < 1 or not self.T > self.t0:
            raise ValueError("need n_t >= 1 and T > t0")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "nodes", nodes)

    @property
    def dim(self):
        return len(self.bounds)

    @property
    def axes(self):
        return tuple(np.linspace(lo, hi, n) for (lo, hi), n in zip(self.bounds, self.nodes))

    @property
    def dx(self):
        return tuple((hi - lo) / (n - 1) for (lo, hi), n in zip(self.bounds, self.nodes))

    @property
    def dt(self):
        return (self.T - self.t0) / self.n_t

    @property
    def times(self):
        times = self.t0 + (self.T - self.t0) * np.arange(self.n_t + 1) / self.n_t
        times[-1] = self.T
        return times

    def node_array(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def same_as(self, other: "SpaceTimeGrid") -> bool:
        return (self.bounds, self.nodes, self.n_t, self.t0, self.T) == (other.bounds, other.nodes, other.n_t, other.t0, other.T)

    def safe_interior(self, x, margin=0.25) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return all(lo + margin * (hi - lo) <= xi <= hi - margin * (hi - lo) for xi, (lo, hi) in zip(x, self.bounds))

    def to_dict(self):
        return {"bounds": [list(b) for b in self.bounds], "nodes": list(self.nodes), "n_t": self.n_t,
                "t0": self.t0, "T": self.T, "dt": self.dt, "dx": list(self.dx), "cfl": self.cfl}

    @classmethod
    def build(cls, problem: GameProblem, bounds, nodes, n_t=None, t0=0.0, safety=0.9, n_time_samples=9):
        """Grid with ``dt <= dx^2 / (d max a_ii + dx sum_i |b_i| + eps)``.

        Coefficient bounds are sampled at every node, every control pair and
        ``n_time_samples`` times. If ``n_t`` is given and too small, raises
        :class:`CFLError`; otherwise the smallest admissible ``n_t`` (with a
        ``safety`` factor) is chosen.
        """
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        nodes = tuple(int(n) for n in nodes)
        probe = cls(bounds, nodes, 1, t0, problem.horizon)
        if problem.dim_state != probe.dim:
            raise ValueError("grid dimension differs from the state dimension")
        uu, vv, _, _ = _pair_arrays(problem)
        pts = probe.node_array()
        max_a = max_b = 0.0
        for t in np.linspace(t0, problem.horizon, n_time_samples):
            b, a = _node_coefficients(problem, float(t), pts, uu, vv)
            max_a = max(max_a, float(np.max(np.diagonal(a, axis1=-2, axis2=-1))))
            max_b = max(max_b, float(np.max(np.abs(b).sum(axis=-1))))
        dx = min(probe.dx)
        d = probe.dim
        denom = d * max_a + dx * max_b + CFL_GUARD
        dt_max = dx * dx / denom
        horizon = problem.horizon - t0
        if n_t is None:
            n_t = max(1, int(np.ceil(horizon / (safety * dt_max))))
        dt = horizon / n_t
        info = {"dt_max": dt_max, "max_a": max_a, "max_b": max_b, "ratio": dt / dt_max}
        if dt > dt_max:
            raise CFLError(f"dt={dt:.6g} exceeds the monotonicity bound {dt_max:.6g}; use n_t >= {int(np.ceil(horizon / dt_max))}")
        return cls(bounds, nodes, int(n_t), float(t0), float(problem.horizon), info)


@dataclass(eq=False)
class ValueGrid:
    """Solved values and saddle-control indices at the stored time levels."""

    grid: SpaceTimeGrid
    side: str
    level_times: np.ndarray
    values: np.ndarray
    saddle_u: np.ndarray
    saddle_v: np.ndarray
    boundary: str
    problem_name: str = ""
    payoff_bounds: tuple = (-np.inf, np.inf)
    level_steps: np.ndarray | None = None

    def node_values(self, level: int) -> np.ndarray:
        return self.values[level]

    def __call__(self, t, x) -> np.ndarray:
        """Multilinear interpolation in ``(t, x)``; clamped outside the grid."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None] if self.grid.dim == 1 and x.size != 1 else x.reshape(-1, self.grid.dim)
        n = x.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=float), (n,))
        corners = [_axis_weights(self.level_times, t)]
        for i, axis in enumerate(self.grid.axes):
            corners.append(_axis_weights(axis, x[:, i]))
        out = np.zeros(n)
        for combo in np.ndindex(*(2,) * len(corners)):
            idx = tuple(corners[a][0] + c for a, c in enumerate(combo))
            w = np.ones(n)
            for a, c in enumerate(combo):
                w = w * (corners[a][1] if c else 1.0 - corners[a][1])
            out += w * self.values[idx]
        return out

    def at(self, t: float, x) -> float:
        return float(self(np.array([t]), np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def header(self) -> dict:
        return {"grid": self.grid.to_dict(), "side": self.side, "boundary": self.boundary,
                "problem": self.problem_name, "stored_levels": int(self.level_times.size),
                "cfl": self.grid.cfl}

    def to_csv(self, fh):
        """Rows ``t, x_1..x_d, value, saddle_u, saddle_v`` at every stored level and node."""
        d = self.grid.dim
        fh.write(",".join(["t"] + [f"x_{i + 1}" for i in range(d)] + ["value", "saddle_u", "saddle_v"]) + "\n")
        pts = self.grid.node_array()
        for level, t in enumerate(self.level_times):
            vals = self.values[level].ravel()
            su = self.saddle_u[level].ravel()
            sv = self.saddle_v[level].ravel()
            tt = fmt(t)
            for j in range(pts.shape[0]):
                fh.write(",".join([tt] + [fmt(c) for c in pts[j]] + [fmt(vals[j]), str(su[j]), str(sv[j])]) + "\n")

    def csv_text(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()

    def header_json(self) -> str:
        return json.dumps(self.header(), sort_keys=True, indent=2)


def _axis_weights(axis, q):
    """Lower-corner index and interpolation weight on a sorted axis, clamped."""
    if axis.size == 1:
        return np.zeros(q.shape, dtype=np.int64), np.zeros(q.shape)
    q = np.clip(q, axis[0], axis[-1])
    i = np.clip(np.searchsorted(axis, q, side="right") - 1, 0, axis.size - 2)
    w = (q - axis[i]) / (axis[i + 1] - axis[i])
    return i, np.clip(w, 0.0, 1.0)


def _neighbours(shape, boundary):
    """Flat indices of ``x +/- e_i`` and diagonal neighbours, clamped to the grid."""
    grids = np.meshgrid(*[np.arange(n) for n in shape], indexing="ij")
    d = len(shape)

    def shifted(offsets):
        idx = [np.clip(g + o, 0, n - 1) for g, o, n in zip(grids, offsets, shape)]
        return np.ravel_multi_index(idx, shape).ravel()

    out = {}
    for i in range(d):
        for sgn in (1, -1):
            off = [0] * d
            off[i] = sgn
            out[(i, sgn)] = shifted(off)
    if d == 2:
        for s1 in (1, -1):
            for s2 in (1, -1):
                out[("x", s1, s2)] = shifted([s1, s2])
    boundary_mask = np.zeros(shape, dtype=bool)
    for i in range(d):
        sl = [slice(None)] * d
        sl[i] = 0
        boundary_mask[tuple(sl)] = True
        sl[i] = -1
        boundary_mask[tuple(sl)] = True
    return out, boundary_mask.ravel()


def _weights(b, a, dx, dt):
    """Neighbour weights ``(Nn, P, m)`` and the stencil keys, before the centre weight."""
    d = len(dx)
    keys, cols = [], []
    if d == 2:
        cross = a[..., 0, 1]
        cdiag = np.abs(cross) / (2.0 * dx[0] * dx[1])
        for i in range(2):
            if np.any(0.5 * a[..., i, i] / dx[i] ** 2 < cdiag * (1 + 1e-12) - 1e-300):
                raise MonotonicityError(
                    "diffusion matrix is not diagonally dominant on this grid; refine the grid or rotate coordinates"
                )
    for i in range(d):
        diff = 0.5 * a[..., i, i] / dx[i] ** 2
        if d == 2:
            diff = diff - cdiag
        for sgn in (1, -1):
            keys.append((i, sgn))
            upwind = np.maximum(sgn * b[..., i], 0.0) / dx[i]
            cols.append(dt * (diff + upwind))
    if d == 2:
        pos = np.where(cross > 0, cdiag, 0.0)
        neg = np.where(cross < 0, cdiag, 0.0)
        for s1, s2, w in ((1, 1, pos), (-1, -1, pos), (1, -1, neg), (-1, 1, neg)):
            keys.append(("x", s1, s2))
            cols.append(dt * w)
    return keys, np.stack(cols, axis=-1)


def _level_schedule(n_t, max_levels):
    stride = max(1, -(-n_t // max(1, max_levels - 1)))
    steps = list(range(0, n_t + 1, stride))
    if steps[-1] != n_t:
        steps.append(n_t)
    return np.asarray(steps)


def solve(problem: GameProblem, side: str, grid: SpaceTimeGrid, boundary: str = "clamped_terminal",
          terminal=None, max_stored_levels: int = 2001, threads: int = 1) -> ValueGrid:
    """Backward explicit solve of ``-v_t - H(t, x, v_x, v_xx) = 0``, ``v(T) = g``.

    ``boundary='clamped_terminal'`` pins boundary nodes to ``g``;
    ``'extrapolated'`` copies the boundary node into the missing neighbour
    (one-sided differences). ``terminal`` overrides ``g`` at the nodes.
    At most ``max_stored_levels`` time levels are kept (evenly strided,
    always including both ends).
    """
    if side not in (UPPER, LOWER):
        raise ValueError(f"unknown side {side!r}")
    if boundary not in BOUNDARIES:
        raise ValueError(f"unknown boundary {boundary!r}")
    if problem.dim_state != grid.dim:
        raise ValueError("grid dimension differs from the state dimension")
    pts = grid.node_array()
    shape = grid.nodes
    Nn = pts.shape[0]
    g_nodes = problem.payoff_checked(pts) if terminal is None else np.asarray(terminal, dtype=float).ravel()
    if g_nodes.shape != (Nn,):
        raise ValueError("terminal data does not match the grid")
    uu, vv, nu, nv = _pair_arrays(problem)
    nbrs, on_boundary = _neighbours(shape, boundary)
    clamp = boundary == "clamped_terminal"
    dx, dt = grid.dx, grid.dt
    times = grid.times
    steps = _level_schedule(grid.n_t, max_stored_levels)
    store = {int(s): i for i, s in enumerate(steps)}
    L = steps.size
    values = np.empty((L,) + shape)
    su = np.zeros((L,) + shape, dtype=np.int16 if max(nu, nv) < 32000 else np.int64)
    sv = np.zeros_like(su)

    v = g_nodes.copy()
    values[-1] = v.reshape(shape)
    chunks = [np.arange(Nn)] if threads <= 1 else np.array_split(np.arange(Nn), threads)

    def step_chunk(rows, t, v):
        b, a = _node_coefficients(problem, t, pts[rows], uu, vv)
        keys, w = _weights(b, a, dx, dt)
        centre = 1.0 - w.sum(axis=-1)
        if np.any(centre < -1e-12):
            raise CFLError(f"time step breaks monotonicity at t={t:.6g}; refine n_t")
        centre = np.maximum(centre, 0.0)
        nb = np.stack([v[nbrs[k][rows]] for k in keys], axis=-1)
        cand = centre * v[rows][:, None] + (w * nb[:, None, :]).sum(axis=-1)
        cand = cand.reshape(rows.size, nu, nv)
        if side == UPPER:
            inner = cand.max(axis=1)
            j = inner.argmin(axis=1)
            i = cand[np.arange(rows.size), :, j].argmax(axis=1)
            new = inner[np.arange(rows.size), j]
        else:
            inner = cand.min(axis=2)
            i = inner.argmax(axis=1)
            j = cand[np.arange(rows.size), i, :].argmin(axis=1)
            new = inner[np.arange(rows.size), i]
        return new, i, j

    def _advance(n, results):
        new = np.concatenate([r[0] for r in results])
        last_i = np.concatenate([r[1] for r in results])
        last_j = np.concatenate([r[2] for r in results])
        if clamp:
            new = np.where(on_boundary, g_nodes, new)
        v = new
        if n in store:
            values[store[n]] = v.reshape(shape)
            su[store[n]] = last_i.reshape(shape)
            sv[store[n]] = last_j.reshape(shape)
        if n == grid.n_t - 1:
            # the terminal level has no step of its own; reuse the last step's controls
            su[-1] = last_i.reshape(shape)
            sv[-1] = last_j.reshape(shape)
        return v

    pool = ThreadPoolExecutor(max_workers=len(chunks)) if len(chunks) > 1 else None
    try:
        for n in range(grid.n_t - 1, -1, -1):
            t = float(times[n + 1])
            if pool is None:
                results = [step_chunk(chunks[0], t, v)]
            else:
                results = list(pool.map(lambda r: step_chunk(r, t, v), chunks))
            v = _advance(n, results)
    finally:
        if pool is not None:
            pool.shutdown()
    return ValueGrid(grid, side, times[steps].copy(), values, su, sv, boundary, problem.name,
                     tuple(problem.payoff_bounds), steps)


def max_principle_violation(vg: ValueGrid) -> float:
    lo, hi = vg.payoff_bounds
    return float(max(np.max(lo - vg.values), np.max(vg.values - hi), 0.0))


def extract_feedback(vg: ValueGrid, problem: GameProblem, decision_times) -> tuple:
    """Elementary feedback strategies reading the stored saddle controls.

    Both players re-decide at the given deterministic times (constant rules),
    choosing the stored control at the nearest stored level and node.
    """
    times = [float(t) for t in decision_times]
    if not times:
        raise ValueError("decision times must be non-empty")
    axes = vg.grid.axes
    su = GridFeedbackSelector(problem.u_set, vg.level_times, axes, vg.saddle_u)
    sv = GridFeedbackSelector(problem.v_set, vg.level_times, axes, vg.saddle_v)
    u = decision_grid_strategy("one", problem.u_set, lambda k: su, times)
    v = decision_grid_strategy("two", problem.v_set, lambda k: sv, times)
    return u, v


def feedback_tail(vg: ValueGrid, problem: GameProblem, player: str, decision_times, tau: StoppingRule) -> ElementaryStrategy:
    """Feedback strategy starting at ``tau``: re-decides at ``max(tau, d_k)``."""
    from .pathspace import rule_max

    cs = problem.u_set if player == "one" else problem.v_set
    table = vg.saddle_u if player == "one" else vg.saddle_v
    sel = GridFeedbackSelector(cs, vg.level_times, vg.grid.axes, table)
    rules = [rule_max(tau, ConstantRule(float(t))) for t in decision_times[1:]] + [HorizonRule()]
    return ElementaryStrategy(player, cs, tau, tuple((r, sel) for r in rules))


def dpp_residual(vg: ValueGrid, rho: StoppingRule, problem: GameProblem, cfg, fam_u, fam_v, s: float, x,
                 threshold: float = 0.0):
    """``|inf_v sup_u E[vg(rho, X_rho)] - vg(s, x)|`` over finite families (sup-inf for the lower side)."""
    from .game_mc import dpp_report

    return dpp_report(vg, rho, problem, cfg, fam_u, fam_v, s, x, threshold)
