"""Game specification and the lower/upper Hamiltonians.

Coefficients are vectorised callables. With ``x`` of shape ``(..., d)``,
``u`` of shape ``(..., k)`` and ``v`` of shape ``(..., l)``:

* ``drift(t, x, u, v)`` returns ``(..., d)``,
* ``diffusion(t, x, u, v)`` returns ``(..., d, d_noise)``,
* ``payoff(x)`` returns ``(...)``.

``t`` is a float. Leading dimensions broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import EvaluationError

UPPER = "upper"
LOWER = "lower"

MAX_CONTROL_POINTS = 256


@dataclass(frozen=True, eq=False)
class ControlSet:
    """A finite (hence compact) set of control values."""

    points: np.ndarray
    label: str = ""
    max_points: int = MAX_CONTROL_POINTS

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("control set must be a non-empty list of equal-length vectors")
        if pts.shape[0] > self.max_points:
            raise ValueError(f"control set has {pts.shape[0]} points, cap is {self.max_points}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("control points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def linspace(cls, lo, hi, n, label=""):
        return cls(np.linspace(lo, hi, n), label=label)

    @classmethod
    def singleton(cls, value=0.0, label=""):
        return cls(np.atleast_1d(np.asarray(value, dtype=float))[None, :], label=label)

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]

    def __eq__(self, other):
        if not isinstance(other, ControlSet):
            return NotImplemented
        return self.points.shape == other.points.shape and bool(np.all(self.points == other.points))

    def __hash__(self):
        return hash(self.points.tobytes())

    def to_dict(self):
        return {"label": self.label, "points": self.points.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["points"], dtype=float), label=data.get("label", ""))


@dataclass(frozen=True, eq=False)
class GameProblem:
    """Full specification of a two-player zero-sum stochastic differential game.

    ``payoff_bounds`` is the declared ``(g_min, g_max)``; it is checked on
    audited samples and used by the solver's maximum-principle check.
    """

    dim_state: int
    dim_noise: int
    drift: Callable
    diffusion: Callable
    payoff: Callable
    u_set: ControlSet
    v_set: ControlSet
    horizon: float
    payoff_bounds: tuple = (-np.inf, np.inf)
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim_state < 1 or self.dim_noise < 1:
            raise ValueError("state and noise dimensions must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        lo, hi = self.payoff_bounds
        if lo > hi:
            raise ValueError("payoff bounds are inverted")

    def payoff_checked(self, x):
        """Evaluate g and verify the declared bounds."""
        values = np.asarray(self.payoff(np.asarray(x, dtype=float)), dtype=float)
        lo, hi = self.payoff_bounds
        if not np.all(np.isfinite(values)):
            raise EvaluationError("payoff is not finite on the given states")
        if np.any(values < lo) or np.any(values > hi):
            raise EvaluationError(f"payoff leaves declared bounds [{lo}, {hi}]")
        return values

    def coefficients(self, t, x, u, v):
        """Return ``(b, sigma)`` broadcast over leading axes."""
        b = np.asarray(self.drift(t, x, u, v), dtype=float)
        sig = np.asarray(self.diffusion(t, x, u, v), dtype=float)
        lead = np.broadcast_shapes(x.shape[:-1], u.shape[:-1], v.shape[:-1])
        b = np.broadcast_to(b, lead + (self.dim_state,))
        sig = np.broadcast_to(sig, lead + (self.dim_state, self.dim_noise))
        return b, sig


@dataclass(frozen=True)
class HamiltonianQuery:
    t: float
    x: np.ndarray
    p: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        if M.shape != (p.size, p.size) or x.shape != p.shape:
            raise ValueError("query shapes are inconsistent")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "M", 0.5 * (M + M.T))
        object.__setattr__(self, "t", float(self.t))

    @classmethod
    def make(cls, t, x, p, M=None):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if M is None:
            M = np.zeros((p.size, p.size))
        return cls(t, x, p, M)


def generator_table(problem: GameProblem, q: HamiltonianQuery) -> np.ndarray:
    """``b.p + 1/2 Tr(sigma sigma^T M)`` for every control pair, shape ``(|U|, |V|)``."""
    U, V = problem.u_set.points, problem.v_set.points
    nu, nv = len(U), len(V)
    uu = np.broadcast_to(U[:, None, :], (nu, nv, U.shape[1]))
    vv = np.broadcast_to(V[None, :, :], (nu, nv, V.shape[1]))
    xx = np.broadcast_to(q.x, (nu, nv, q.x.size))
    b, sig = problem.coefficients(q.t, xx, uu, vv)
    table = b @ q.p + 0.5 * np.einsum("...ia,ij,...ja->...", sig, q.M, sig)
    bad = ~np.isfinite(table)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise EvaluationError(
            f"non-finite coefficients at t={q.t}, x={q.x.tolist()}, u={U[i].tolist()}, v={V[j].tolist()}"
        )
    return table


def minimax(table: np.ndarray, side: str):
    """Exact discrete minimax of a ``(|U|, |V|)`` table with lowest-index tie-breaking.

    Returns ``(value, (u_index, v_index))``. For the upper side the outer
    optimiser is player two (inf over columns); for the lower side it is
    player one (sup over rows).
    """
    if side == UPPER:
        inner = table.max(axis=0)
        j = int(np.argmin(inner))
        i = int(np.argmax(table[:, j]))
        return float(inner[j]), (i, j)
    if side == LOWER:
        inner = table.min(axis=1)
        i = int(np.argmax(inner))
        j = int(np.argmin(table[i, :]))
        return float(inner[i]), (i, j)
    raise ValueError(f"unknown side {side!r}")


def hamiltonian(problem: GameProblem, side: str, q: HamiltonianQuery):
    """Evaluate H^+ (``side='upper'``) or H^- (``side='lower'``) at ``q``.

    Returns ``(value, (u_point, v_point))`` where the pair is the outer
    optimiser's point and the inner optimiser's response to it.
    """
    value, (i, j) = minimax(generator_table(problem, q), side)
    return value, (problem.u_set.points[i].copy(), problem.v_set.points[j].copy())


@dataclass
class AuditReport:
    lipschitz_drift: float
    lipschitz_diffusion: float
    growth_ratio: float
    n_samples: int
    radius: float
    nonfinite: list
    payoff_violations: int

    @property
    def clean(self):
        return not self.nonfinite and self.payoff_violations == 0

    def to_dict(self):
        return {
            "lipschitz_drift": self.lipschitz_drift,
            "lipschitz_diffusion": self.lipschitz_diffusion,
            "growth_ratio": self.growth_ratio,
            "n_samples": self.n_samples,
            "radius": self.radius,
            "nonfinite": self.nonfinite,
            "payoff_violations": self.payoff_violations,
        }


def _sample_ball(rng, n, d, radius):
    direction = rng.standard_normal((n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.uniform(size=(n, 1)) ** (1.0 / d)
    return direction * r


def audit_coefficients(problem: GameProblem, radius: float, n_samples: int, rng_seed: int = 0) -> AuditReport:
    """Empirical check of the local Lipschitz and linear growth hypotheses.

    Samples ``n_samples`` pairs ``(x, y)`` in the closed ball of the given
    radius together with random times and controls. Reports the largest
    observed ratios; non-finite evaluations are listed rather than raised.
    This cannot prove either condition.
    """
    if radius <= 0 or n_samples < 2:
        raise ValueError("radius must be positive and n_samples >= 2")
    rng = np.random.default_rng(rng_seed)
    d = problem.dim_state
    x = _sample_ball(rng, n_samples, d, radius)
    y = _sample_ball(rng, n_samples, d, radius)
    t = rng.uniform(0.0, problem.horizon, size=n_samples)
    ui = rng.integers(len(problem.u_set), size=n_samples)
    vi = rng.integers(len(problem.v_set), size=n_samples)
    u = problem.u_set.points[ui]
    v = problem.v_set.points[vi]

    nonfinite = []
    lip_b = lip_s = growth = 0.0
    with np.errstate(all="ignore"):
        for k in range(n_samples):
            bx, sx = problem.coefficients(t[k], x[k], u[k], v[k])
            by, sy = problem.coefficients(t[k], y[k], u[k], v[k])
            if not (np.all(np.isfinite(bx)) and np.all(np.isfinite(sx)) and np.all(np.isfinite(by)) and np.all(np.isfinite(sy))):
                nonfinite.append({"t": float(t[k]), "x": x[k].tolist(), "y": y[k].tolist(),
                                  "u": u[k].tolist(), "v": v[k].tolist()})
                continue
            dist = np.linalg.norm(x[k] - y[k])
            if dist > 0:
                lip_b = max(lip_b, float(np.linalg.norm(bx - by) / dist))
                lip_s = max(lip_s, float(np.linalg.norm(sx - sy) / dist))
            for z, bz, sz in ((x[k], bx, sx), (y[k], by, sy)):
                growth = max(growth, float((np.linalg.norm(bz) + np.linalg.norm(sz)) / (1.0 + np.linalg.norm(z))))

    lo, hi = problem.payoff_bounds
    with np.errstate(all="ignore"):
        gvals = np.asarray(problem.payoff(np.concatenate([x, y])), dtype=float)
    violations = int(np.sum(~np.isfinite(gvals) | (gvals < lo) | (gvals > hi)))
    return AuditReport(lip_b, lip_s, growth, n_samples, float(radius), nonfinite, violations)
