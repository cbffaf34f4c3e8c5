"""Monte-Carlo game values over finite strategy families.

Every cell of an estimate matrix is simulated with the same seed, so path
``i`` sees the same Brownian increments under every strategy pair (common
random numbers). Matrix minimax statements are then exact, and paired
differences have small variance.
"""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .dynamics import LOWER, UPPER, ControlSet, GameProblem, HamiltonianQuery, hamiltonian
from .errors import IsaacsConditionError
from .pathspace import (
    PLAYERS,
    ConstantRule,
    ConstantSelector,
    ElementaryStrategy,
    HorizonRule,
    StoppingRule,
    ThresholdSelector,
    _states_at,
    first_exit_rule,
    fmt,
    rule_max,
)
from .sde_engine import BatchResult, SimulationConfig, StrategyPair, simulate_batch, summarize

VERDICTS = ("pass", "fail", "inconclusive")
KINDS = ("value_estimate", "ordering", "half_dpp_super", "half_dpp_sub", "dpp", "saddle", "supermartingale")
HALF_DPP_SIDES = ("super_upper", "sub_upper", "super_lower", "sub_lower")


# ---------------------------------------------------------------- reports


def judge(margin: float, std_error: float, threshold: float) -> str:
    """Verdict for an inequality whose slack is ``margin`` (non-negative when it holds).

    ``pass`` when ``margin >= -(threshold + 3 * std_error)``, ``fail`` below
    that, ``inconclusive`` when either number is not finite.
    """
    if not (math.isfinite(margin) and math.isfinite(std_error)):
        return "inconclusive"
    return "pass" if margin >= -(threshold + 3.0 * std_error) else "fail"


def combine_verdicts(verdicts: Sequence[str]) -> str:
    verdicts = list(verdicts)
    if "fail" in verdicts:
        return "fail"
    if "inconclusive" in verdicts or not verdicts:
        return "inconclusive"
    return "pass"


def _clean(obj):
    """JSON-safe copy: numpy scalars and arrays become Python values, non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


@dataclass
class CertificateReport:
    kind: str
    estimate: float
    std_error: float
    threshold: float
    verdict: str
    margin: float
    details: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown report kind {self.kind!r}")
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return _clean({
            "kind": self.kind, "estimate": self.estimate, "std_error": self.std_error,
            "threshold": self.threshold, "verdict": self.verdict, "margin": self.margin,
            "details": self.details, "meta": self.meta,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


# ---------------------------------------------------------------- families


def describe_strategy(strategy: ElementaryStrategy) -> dict:
    try:
        return strategy.to_dict()
    except TypeError:
        return {"player": strategy.player, "type": "opaque", "segments": len(strategy.segments)}


@dataclass(frozen=True, eq=False)
class StrategyFamily:
    """A non-empty finite list of strategies of one player over one control set."""

    player: str
    members: tuple
    generator_spec: dict = field(default_factory=dict)

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("a strategy family must be non-empty")
        if self.player not in PLAYERS:
            raise ValueError(f"player must be one of {PLAYERS}")
        cs = members[0].control_set
        for m in members:
            if m.player != self.player:
                raise ValueError("family members must belong to the family's player")
            if m.control_set != cs:
                raise ValueError("family members must share one control set")
        object.__setattr__(self, "members", members)

    def __len__(self):
        return len(self.members)

    def __getitem__(self, i):
        return self.members[i]

    def __iter__(self):
        return iter(self.members)

    @property
    def control_set(self) -> ControlSet:
        return self.members[0].control_set

    def extend(self, other: "StrategyFamily") -> "StrategyFamily":
        if other.player != self.player:
            raise ValueError("cannot merge families of different players")
        spec = {"type": "union", "parts": [self.generator_spec, other.generator_spec]}
        return StrategyFamily(self.player, self.members + other.members, spec)

    def to_dict(self) -> dict:
        return {"player": self.player, "generator_spec": self.generator_spec,
                "members": [describe_strategy(m) for m in self.members]}


def constant_family(player: str, control_set: ControlSet, start: float = 0.0) -> StrategyFamily:
    """One constant strategy per control point."""
    members = tuple(ElementaryStrategy.constant(player, control_set, i, start) for i in range(len(control_set)))
    return StrategyFamily(player, members, {"type": "constant", "start": float(start)})


def random_strategy(player: str, control_set: ControlSet, rng: np.random.Generator, s: float, T: float,
                    center, scale: float = 1.0, max_segments: int = 4) -> ElementaryStrategy:
    """Random elementary strategy with up to ``max_segments`` segments.

    Each intermediate rule is either a deterministic time or the first exit
    from a ball around ``center`` after the previous rule, with radii growing
    so the rules stay ordered. Selectors are constants or thresholds on one
    state coordinate.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    d = center.size
    n_seg = int(rng.integers(1, max_segments + 1))
    cuts = np.sort(rng.uniform(s, T, size=n_seg - 1))
    radii = np.sort(rng.uniform(0.1, 1.0, size=n_seg - 1)) * scale
    start = ConstantRule(float(s))
    prev: StoppingRule = start
    rules = []
    for k in range(n_seg - 1):
        if rng.uniform() < 0.5:
            rule = rule_max(prev, ConstantRule(float(cuts[k])))
        else:
            rule = first_exit_rule(tuple(center.tolist()), float(radii[k]), prev)
        rules.append(rule)
        prev = rule
    rules.append(HorizonRule())
    n = len(control_set)
    segs = []
    for rule in rules:
        if rng.uniform() < 0.5:
            sel = ConstantSelector(control_set, int(rng.integers(n)))
        else:
            axis = int(rng.integers(d))
            level = float(center[axis] + scale * rng.standard_normal())
            sel = ThresholdSelector(control_set, axis, level, int(rng.integers(n)), int(rng.integers(n)))
        segs.append((rule, sel))
    return ElementaryStrategy(player, control_set, start, tuple(segs))


def random_family(player: str, control_set: ControlSet, n: int, seed: int, s: float, T: float, center,
                  scale: float = 1.0, max_segments: int = 4) -> StrategyFamily:
    """``n`` random elementary strategies drawn from ``seed``."""
    if n < 1:
        raise ValueError("family size must be positive")
    rng = np.random.default_rng(seed)
    members = tuple(random_strategy(player, control_set, rng, s, T, center, scale, max_segments) for _ in range(n))
    spec = {"type": "random", "n": int(n), "seed": int(seed), "s": float(s), "T": float(T),
            "center": np.atleast_1d(np.asarray(center, dtype=float)).tolist(), "scale": float(scale),
            "max_segments": int(max_segments)}
    return StrategyFamily(player, members, spec)


def feedback_family(vg, problem: GameProblem, decision_times) -> tuple:
    """Singleton families holding the feedback pair read off a solved grid."""
    from .isaacs_solver import extract_feedback

    u, v = extract_feedback(vg, problem, decision_times)
    spec = {"type": "feedback", "side": vg.side, "decision_times": [float(t) for t in decision_times]}
    return StrategyFamily("one", (u,), spec), StrategyFamily("two", (v,), spec)


def user_family(player: str, members, description: str = "user") -> StrategyFamily:
    return StrategyFamily(player, tuple(members), {"type": "user", "description": description})


# ---------------------------------------------------------------- estimation

Functional = Callable[[BatchResult], np.ndarray]


def payoff_functional(result: BatchResult) -> np.ndarray:
    return result.payoffs


def stopped_functional(w: Callable, rho: StoppingRule) -> Functional:
    """Per-path ``w(rho, X_rho)`` where ``rho`` is evaluated on the complete path."""

    def functional(result: BatchResult) -> np.ndarray:
        taus = rho.on_batch(result.times, result.states)
        x = _states_at(result.times, result.states, taus)
        return np.asarray(w(taus, x), dtype=float)

    return functional


def _check_batch(cfg: SimulationConfig):
    if cfg.batch_size < 2:
        raise ValueError("estimates need batch_size >= 2")


def _cell_config(cfg: SimulationConfig) -> SimulationConfig:
    return replace(cfg, threads=1)


def _simulate_values(problem, u, v, s, x, cfg, functional):
    result = simulate_batch(problem, StrategyPair(u, v), s, x, cfg)
    return np.asarray(functional(result), dtype=float)


def estimate_value(problem: GameProblem, u: ElementaryStrategy, v: ElementaryStrategy, s: float, x,
                   cfg: SimulationConfig) -> tuple:
    """Sample mean and standard error of ``g(X_T)``."""
    _check_batch(cfg)
    stats = summarize(_simulate_values(problem, u, v, s, x, cfg, payoff_functional))
    return stats["mean"], stats["std_error"]


def estimate_samples(problem: GameProblem, fam_u: StrategyFamily, fam_v: StrategyFamily, s: float, x,
                     cfg: SimulationConfig, functional: Functional | None = None) -> np.ndarray:
    """Per-path values for every pair, shape ``(|fam_u|, |fam_v|, batch)``.

    Cells run in parallel over ``cfg.threads`` workers; each cell is a pure
    function of its pair and the seed, so the result does not depend on the
    thread count.
    """
    _check_batch(cfg)
    if fam_u.player != "one" or fam_v.player != "two":
        raise ValueError("families must be (player one, player two)")
    functional = functional or payoff_functional
    cell_cfg = _cell_config(cfg)
    cells = [(i, j) for i in range(len(fam_u)) for j in range(len(fam_v))]
    out = np.empty((len(fam_u), len(fam_v), cfg.batch_size))

    def work(cell):
        i, j = cell
        return _simulate_values(problem, fam_u[i], fam_v[j], s, x, cell_cfg, functional)

    if cfg.threads > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            values = list(pool.map(work, cells))
    else:
        values = [work(c) for c in cells]
    for (i, j), vals in zip(cells, values):
        out[i, j] = vals
    return out


def _moments(samples: np.ndarray):
    n = samples.shape[-1]
    mean = samples.mean(axis=-1)
    std = samples.std(axis=-1, ddof=1) if n > 1 else np.zeros(mean.shape)
    return mean, std / np.sqrt(n)


@dataclass
class ValueEstimates:
    """Discrete sup-inf and inf-sup of an estimate matrix.

    ``upper_choice = (i, j)``: player two's minimising column ``j`` and
    player one's best row against it. ``lower_choice`` likewise with the
    roles swapped.
    """

    v_plus: float
    v_minus: float
    se_plus: float
    se_minus: float
    upper_choice: tuple
    lower_choice: tuple
    means: np.ndarray
    std_errors: np.ndarray
    fam_u: StrategyFamily | None = None
    fam_v: StrategyFamily | None = None

    @property
    def ordered(self) -> bool:
        return self.v_minus <= self.v_plus

    def to_csv(self, fh):
        """Estimate matrix rows ``u_index, v_index, mean, std_error``."""
        fh.write("u_index,v_index,mean,std_error\n")
        for i in range(self.means.shape[0]):
            for j in range(self.means.shape[1]):
                fh.write(f"{i},{j},{fmt(self.means[i, j])},{fmt(self.std_errors[i, j])}\n")

    def csv_text(self) -> str:
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()

    def to_dict(self) -> dict:
        out = {
            "v_plus": self.v_plus, "v_minus": self.v_minus, "se_plus": self.se_plus, "se_minus": self.se_minus,
            "upper_choice": list(self.upper_choice), "lower_choice": list(self.lower_choice),
            "means": self.means, "std_errors": self.std_errors,
        }
        if self.fam_u is not None:
            out["fam_u"] = self.fam_u.generator_spec
            out["fam_v"] = self.fam_v.generator_spec
        return _clean(out)


def matrix_values(means: np.ndarray, ses: np.ndarray) -> ValueEstimates:
    """Exact minimax of a ``(|U|, |V|)`` matrix; ties go to the lowest index."""
    col_max = means.max(axis=0)
    j = int(np.argmin(col_max))
    i = int(np.argmax(means[:, j]))
    row_min = means.min(axis=1)
    a = int(np.argmax(row_min))
    b = int(np.argmin(means[a, :]))
    return ValueEstimates(float(col_max[j]), float(row_min[a]), float(ses[i, j]), float(ses[a, b]),
                          (i, j), (a, b), means, ses)


def upper_lower_values(problem: GameProblem, fam_u: StrategyFamily, fam_v: StrategyFamily, s: float, x,
                       cfg: SimulationConfig, functional: Functional | None = None) -> ValueEstimates:
    """``V+ = min_j max_i`` and ``V- = max_i min_j`` of the estimate matrix."""
    means, ses = _moments(estimate_samples(problem, fam_u, fam_v, s, x, cfg, functional))
    est = matrix_values(means, ses)
    est.fam_u, est.fam_v = fam_u, fam_v
    return est


def family_size_sweep(problem: GameProblem, fam_u: StrategyFamily, fam_v: StrategyFamily, s: float, x,
                      cfg: SimulationConfig, sizes: Sequence[int], functional: Functional | None = None) -> list:
    """``V+`` and ``V-`` on the leading ``n`` members of each family, for each ``n`` in ``sizes``.

    The full matrix is simulated once; the nested sub-matrices share its
    paths, so the rows show how the values move as the families grow.
    """
    means, ses = _moments(estimate_samples(problem, fam_u, fam_v, s, x, cfg, functional))
    rows = []
    for n in sizes:
        if n < 1:
            raise ValueError("family sizes must be positive")
        nu, nv = min(n, len(fam_u)), min(n, len(fam_v))
        est = matrix_values(means[:nu, :nv], ses[:nu, :nv])
        rows.append({"n_u": nu, "n_v": nv, "v_plus": est.v_plus, "v_minus": est.v_minus,
                     "se_plus": est.se_plus, "se_minus": est.se_minus})
    return rows


@dataclass
class BestResponse:
    index: int
    member: ElementaryStrategy
    value: float
    std_error: float
    values: np.ndarray
    std_errors: np.ndarray
    margins: np.ndarray


def best_response(problem: GameProblem, fixed: ElementaryStrategy, opponent_family: StrategyFamily, sense: str,
                  s: float, x, cfg: SimulationConfig) -> BestResponse:
    """Optimise the opponent's payoff against a fixed strategy over a family.

    ``margins`` holds each member's shortfall from the optimum (non-negative).
    """
    if sense not in ("maximize", "minimize"):
        raise ValueError("sense must be 'maximize' or 'minimize'")
    if fixed.player == opponent_family.player:
        raise ValueError("the fixed strategy and the family must belong to different players")
    solo = StrategyFamily(fixed.player, (fixed,), {"type": "fixed"})
    if fixed.player == "one":
        samples = estimate_samples(problem, solo, opponent_family, s, x, cfg)[0]
    else:
        samples = estimate_samples(problem, opponent_family, solo, s, x, cfg)[:, 0]
    means, ses = _moments(samples)
    k = int(np.argmax(means) if sense == "maximize" else np.argmin(means))
    margins = np.abs(means - means[k])
    return BestResponse(k, opponent_family[k], float(means[k]), float(ses[k]), means, ses, margins)


# ---------------------------------------------------------------- certificates


def isaacs_gap(problem: GameProblem, s: float, x, n_queries: int = 64, rng_seed: int = 0,
               spread: float = 2.0, grad_scale: float = 3.0) -> float:
    """Largest sampled ``H+ - H-`` around ``(s, x)``."""
    rng = np.random.default_rng(rng_seed)
    x0 = np.atleast_1d(np.asarray(x, dtype=float))
    d = x0.size
    gap = 0.0
    for _ in range(n_queries):
        t = float(rng.uniform(s, problem.horizon))
        y = x0 + spread * rng.uniform(-1, 1, size=d)
        p = grad_scale * rng.standard_normal(d)
        m = rng.standard_normal((d, d))
        q = HamiltonianQuery.make(t, y, p, m + m.T)
        hp, _ = hamiltonian(problem, UPPER, q)
        hm, _ = hamiltonian(problem, LOWER, q)
        gap = max(gap, hp - hm)
    return gap


def check_saddle(problem: GameProblem, pair: tuple, dev_u: StrategyFamily, dev_v: StrategyFamily, s: float, x,
                 cfg: SimulationConfig, epsilon: float, isaacs_tol: float = 1e-9, n_queries: int = 64,
                 rng_seed: int = 0) -> CertificateReport:
    """Test a strategy pair as an ``epsilon``-saddle point against deviation families.

    For each player-one deviation the margin is ``J(u*, v*) - J(u, v*)``;
    for each player-two deviation it is ``J(u*, v) - J(u*, v*)``. Standard
    errors are those of the paired per-path differences.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    gap = isaacs_gap(problem, s, x, n_queries, rng_seed)
    if gap > isaacs_tol:
        raise IsaacsConditionError(
            f"sampled H+ - H- reaches {gap:.3g} > {isaacs_tol:g}; the saddle test needs the Isaacs condition, "
            "use upper_lower_values for this problem"
        )
    u_star, v_star = pair
    cell_cfg = _cell_config(cfg)
    base = _simulate_values(problem, u_star, v_star, s, x, cell_cfg, payoff_functional)
    rows = estimate_samples(problem, StrategyFamily("one", dev_u.members), StrategyFamily("two", (v_star,)),
                            s, x, cfg)[:, 0]
    cols = estimate_samples(problem, StrategyFamily("one", (u_star,)), StrategyFamily("two", dev_v.members),
                            s, x, cfg)[0]
    du_mean, du_se = _moments(base[None, :] - rows)
    dv_mean, dv_se = _moments(cols - base[None, :])
    members = []
    for side, mean, se in (("one", du_mean, du_se), ("two", dv_mean, dv_se)):
        for k in range(mean.size):
            members.append({"player": side, "index": k, "margin": float(mean[k]), "std_error": float(se[k]),
                            "verdict": judge(float(mean[k]), float(se[k]), epsilon)})
    worst = min(members, key=lambda m: m["margin"] + 3.0 * m["std_error"])
    base_stats = summarize(base)
    details = {
        "base_value": base_stats["mean"], "base_std_error": base_stats["std_error"],
        "isaacs_gap": gap, "deviations": members,
        "families": {"one": dev_u.generator_spec, "two": dev_v.generator_spec},
        "worst": {"player": worst["player"], "index": worst["index"]},
    }
    meta = {"s": float(s), "x": np.atleast_1d(np.asarray(x, dtype=float)).tolist(), "cfg": cfg.to_dict(),
            "problem": problem.name, "sampled": "finitely many deviations"}
    return CertificateReport("saddle", base_stats["mean"], worst["std_error"], float(epsilon),
                             combine_verdicts([m["verdict"] for m in members]), worst["margin"], details, meta)


def _half_dpp_margin(side: str, w_sx: float, est: ValueEstimates):
    if side == "super_upper":
        return w_sx - est.v_plus, est.se_plus, est.v_plus
    if side == "sub_upper":
        return est.v_plus - w_sx, est.se_plus, est.v_plus
    if side == "super_lower":
        return w_sx - est.v_minus, est.se_minus, est.v_minus
    if side == "sub_lower":
        return est.v_minus - w_sx, est.se_minus, est.v_minus
    raise ValueError(f"side must be one of {HALF_DPP_SIDES}")


def _w_at(w, s, x) -> float:
    x0 = np.atleast_1d(np.asarray(x, dtype=float))
    return float(np.asarray(w(np.array([float(s)]), x0[None, :]))[0])


def check_half_dpp(problem: GameProblem, w: Callable, side: str, rho: StoppingRule, fam_u: StrategyFamily,
                   fam_v: StrategyFamily, s: float, x, cfg: SimulationConfig,
                   threshold: float = 0.0) -> CertificateReport:
    """Half dynamic-programming inequality for a grid function ``w(t, x)``.

    The upper sides compare ``w(s, x)`` with ``min_v max_u E[w(rho, X_rho)]``
    over the families, the lower sides with ``max_u min_v``. Super sides
    require ``w(s, x)`` to dominate, sub sides to be dominated.
    """
    if side not in HALF_DPP_SIDES:
        raise ValueError(f"side must be one of {HALF_DPP_SIDES}")
    est = upper_lower_values(problem, fam_u, fam_v, s, x, cfg, stopped_functional(w, rho))
    w_sx = _w_at(w, s, x)
    margin, se, value = _half_dpp_margin(side, w_sx, est)
    kind = "half_dpp_super" if side.startswith("super") else "half_dpp_sub"
    details = {"side": side, "w_start": w_sx, "inner": est.to_dict(), "rho": _rule_spec(rho)}
    meta = {"s": float(s), "x": np.atleast_1d(np.asarray(x, dtype=float)).tolist(), "cfg": cfg.to_dict(),
            "problem": problem.name, "families": {"one": fam_u.generator_spec, "two": fam_v.generator_spec}}
    return CertificateReport(kind, value, se, float(threshold), judge(margin, se, threshold), margin, details, meta)


def _rule_spec(rule: StoppingRule):
    try:
        return rule.to_dict()
    except TypeError:
        return {"type": "opaque"}


def dpp_report(vg, rho: StoppingRule, problem: GameProblem, cfg: SimulationConfig, fam_u: StrategyFamily,
               fam_v: StrategyFamily, s: float, x, threshold: float = 0.0) -> CertificateReport:
    """Two-sided dynamic-programming residual of a solved grid.

    Uses ``min_v max_u`` for an upper grid and ``max_u min_v`` for a lower
    one; the residual is the absolute gap to ``vg(s, x)``.
    """
    est = upper_lower_values(problem, fam_u, fam_v, s, x, cfg, stopped_functional(vg, rho))
    value, se = (est.v_plus, est.se_plus) if vg.side == UPPER else (est.v_minus, est.se_minus)
    w_sx = _w_at(vg, s, x)
    residual = abs(value - w_sx)
    details = {"residual": residual, "w_start": w_sx, "side": vg.side, "inner": est.to_dict(),
               "rho": _rule_spec(rho)}
    meta = {"s": float(s), "x": np.atleast_1d(np.asarray(x, dtype=float)).tolist(), "cfg": cfg.to_dict(),
            "problem": problem.name, "families": {"one": fam_u.generator_spec, "two": fam_v.generator_spec}}
    return CertificateReport("dpp", value, se, float(threshold), judge(-residual, se, threshold), -residual,
                             details, meta)


def ordering_report(est: ValueEstimates) -> CertificateReport:
    """``V- <= V+`` on the shared matrix; exact, so the standard error is zero."""
    margin = est.v_plus - est.v_minus
    return CertificateReport("ordering", margin, 0.0, 0.0, "pass" if margin >= 0 else "fail", margin,
                             {"v_plus": est.v_plus, "v_minus": est.v_minus})
