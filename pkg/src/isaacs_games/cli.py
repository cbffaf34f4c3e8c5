"""Config-driven experiment runner.

Usage::

    isaacs-games run CONFIG.json [--out DIR] [--strict] [--threads N]
    isaacs-games list-presets
    isaacs-games validate CONFIG.json

Each stage writes its artifacts to the output directory; ``manifest.json``
records the config, versions, seeds, wall times and per-stage verdicts, and
``summary.csv`` lists every reported number with the artifact it came from.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import platform
import sys
import time
from dataclasses import dataclass, field
from importlib import metadata, resources
from pathlib import Path

import jsonschema
import numpy as np

from .dynamics import LOWER, UPPER, GameProblem
from .errors import ConfigError, GameError
from .game_mc import (
    CertificateReport,
    combine_verdicts,
    constant_family,
    dpp_report,
    feedback_family,
    judge,
    random_family,
    check_saddle,
    upper_lower_values,
)
from .isaacs_solver import SpaceTimeGrid, ValueGrid, solve
from .pathspace import ConstantRule, HorizonRule, first_exit_rule, fmt, rule_min
from .perron_verify import CertifySpec, certify, constant_candidate, grid_candidate
from .presets import DEFAULT_GRIDS, DESCRIPTIONS, PRESETS, get_preset, inline_problem
from .sde_engine import SimulationConfig

DEFAULTS = {
    "grid": {"boundary": "clamped_terminal", "max_stored_levels": 2001},
    "mc": {"seed": 0, "batch_size": 2000, "n_steps": 100},
    "families": {"random_size": 10, "random_seed": 1, "decision_times": 20},
    "tolerances": {"value": 0.02, "dpp": 0.03, "saddle": 0.03, "certify": 0.02},
    "dpp": {"exit_radius": 0.5, "cap_fraction": 0.5},
    "convergence": {"nodes": [101, 201, 401]},
}
SAFE_MARGIN = 0.25


def load_schema() -> dict:
    return json.loads(resources.files("isaacs_games").joinpath("config_schema.json").read_text())


@dataclass
class ExperimentConfig:
    """A validated config with defaults filled in and the problem built."""

    raw: dict
    name: str
    problem: GameProblem
    grid: dict
    mc: dict
    families: dict
    tolerances: dict
    dpp: dict
    convergence: dict
    pipeline: list
    probes: list
    output_dir: str | None = None

    def sim_config(self, threads: int = 1) -> SimulationConfig:
        return SimulationConfig(int(self.mc["n_steps"]), int(self.mc["seed"]), batch_size=int(self.mc["batch_size"]),
                                threads=threads)


def _merged(section: str, raw: dict) -> dict:
    out = dict(DEFAULTS.get(section, {}))
    out.update(raw.get(section, {}))
    return out


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate against the schema and the semantic rules; raise :class:`ConfigError` with field paths."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))
    horizon = float(raw.get("horizon", 1.0))
    if "preset" in raw:
        if raw["preset"] not in PRESETS:
            raise ConfigError(f"preset: unknown preset {raw['preset']!r}; available: {sorted(PRESETS)}")
        problem = get_preset(raw["preset"], horizon)
        grid = dict(DEFAULT_GRIDS[raw["preset"]])
    else:
        spec = dict(raw["problem"])
        spec.setdefault("horizon", horizon)
        try:
            problem = inline_problem(spec)
        except ConfigError as exc:
            raise ConfigError(f"problem: {exc}") from None
        grid = {}
    grid.update(DEFAULTS["grid"])
    grid.update(raw.get("grid", {}))
    if "bounds" not in grid or "nodes" not in grid:
        raise ConfigError("grid: bounds and nodes are required for inline problems")
    d = problem.dim_state
    if len(grid["bounds"]) != d or len(grid["nodes"]) != d:
        raise ConfigError(f"grid: bounds and nodes need {d} entries")
    for i, (lo, hi) in enumerate(grid["bounds"]):
        if not lo < hi:
            raise ConfigError(f"grid/bounds/{i}: lower bound must be below upper bound")
    probes = []
    for k, probe in enumerate(raw["probes"]):
        x = [float(c) for c in probe["x"]]
        t = float(probe["t"])
        if len(x) != d:
            raise ConfigError(f"probes/{k}/x: expected {d} coordinates")
        if not t < problem.horizon:
            raise ConfigError(f"probes/{k}/t: must be before the horizon {problem.horizon}")
        for i, (lo, hi) in enumerate(grid["bounds"]):
            pad = SAFE_MARGIN * (hi - lo)
            if not lo + pad <= x[i] <= hi - pad:
                raise ConfigError(f"probes/{k}/x/{i}: {x[i]} is outside the safe interior [{lo + pad}, {hi - pad}]")
        probes.append((t, x))
    name = raw.get("name") or raw.get("preset") or problem.name
    return ExperimentConfig(raw, name, problem, grid, _merged("mc", raw), _merged("families", raw),
                            _merged("tolerances", raw), _merged("dpp", raw), _merged("convergence", raw),
                            list(raw["pipeline"]), probes, raw.get("output_dir"))


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return parse_config(raw)


# ---------------------------------------------------------------- stages


@dataclass
class StageResult:
    name: str
    status: str = "ok"
    verdicts: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    error: str | None = None
    wall_time: float = 0.0


class Runner:
    """Executes the pipeline stages in order and writes artifacts."""

    def __init__(self, cfg: ExperimentConfig, out: Path, threads: int = 1):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.grids: dict[str, ValueGrid] = {}
        self.space_time = None

    # helpers

    def write(self, name: str, text: str, stage: StageResult) -> str:
        _write_text(self.out / name, text)
        stage.artifacts.append(name)
        return name

    def write_report(self, name: str, report: CertificateReport, stage: StageResult) -> str:
        stage.verdicts.append(report.verdict)
        return self.write(name, report.to_json() + "\n", stage)

    def grid(self, nodes=None) -> SpaceTimeGrid:
        g = self.cfg.grid
        if nodes is None and self.space_time is not None:
            return self.space_time
        built = SpaceTimeGrid.build(self.cfg.problem, g["bounds"], nodes or g["nodes"], g.get("n_t"))
        if nodes is None:
            self.space_time = built
        return built

    def solved(self, side: str) -> ValueGrid:
        if side not in self.grids:
            g = self.cfg.grid
            self.grids[side] = solve(self.cfg.problem, side, self.grid(), g["boundary"], None,
                                     int(g["max_stored_levels"]), self.threads)
        return self.grids[side]

    def decision_times(self, s: float):
        n = int(self.cfg.families["decision_times"])
        return np.linspace(s, self.cfg.problem.horizon, n + 1)[:-1]

    def families(self, s, x, with_feedback=True):
        p = self.cfg.problem
        fam = self.cfg.families
        fu = constant_family("one", p.u_set)
        fv = constant_family("two", p.v_set)
        if fam["random_size"] > 0:
            seed = int(fam["random_seed"])
            fu = fu.extend(random_family("one", p.u_set, fam["random_size"], seed, s, p.horizon, x))
            fv = fv.extend(random_family("two", p.v_set, fam["random_size"], seed + 1, s, p.horizon, x))
        if with_feedback:
            for side in (UPPER, LOWER):
                if side in self.grids:
                    gu, gv = feedback_family(self.grids[side], p, self.decision_times(s))
                    fu, fv = fu.extend(gu), fv.extend(gv)
        return fu, fv

    # stages

    def solve_stage(self, side: str, stage: StageResult):
        vg = self.solved(side)
        self.write(f"{side}.grid.csv", vg.csv_text(), stage)
        self.write(f"{side}.grid.json", vg.header_json() + "\n", stage)
        for k, (t, x) in enumerate(self.cfg.probes):
            stage.rows.append((f"probe{k}", f"v_{side}", vg.at(t, x), "", "", f"{side}.grid.csv"))
        stage.verdicts.append("pass")

    def values_stage(self, stage: StageResult):
        p = self.cfg.problem
        mc = self.cfg.sim_config(self.threads)
        tol = float(self.cfg.tolerances["value"])
        for k, (s, x) in enumerate(self.cfg.probes):
            fu, fv = self.families(s, x)
            est = upper_lower_values(p, fu, fv, s, x, mc)
            checks = {"ordered": "pass" if est.v_minus <= est.v_plus else "fail"}
            if UPPER in self.grids:
                vp = self.grids[UPPER].at(s, x)
                checks["upper_grid"] = judge(vp - est.v_plus, est.se_plus, tol)
            if LOWER in self.grids:
                vm = self.grids[LOWER].at(s, x)
                checks["lower_grid"] = judge(est.v_minus - vm, est.se_minus, tol)
            verdict = combine_verdicts(list(checks.values()))
            report = CertificateReport("value_estimate", est.v_plus, est.se_plus, tol, verdict,
                                       est.v_plus - est.v_minus,
                                       {"estimates": est.to_dict(), "checks": checks,
                                        "families": {"one": fu.generator_spec, "two": fv.generator_spec}},
                                       {"s": s, "x": x, "cfg": mc.to_dict(), "problem": p.name})
            name = f"values_p{k}.cert.json"
            self.write_report(name, report, stage)
            self.write(f"values_p{k}.matrix.csv", est.csv_text(), stage)
            stage.rows.append((f"probe{k}", "V_plus", est.v_plus, est.se_plus, verdict, name))
            stage.rows.append((f"probe{k}", "V_minus", est.v_minus, est.se_minus, verdict, name))

    def dpp_stage(self, stage: StageResult):
        p = self.cfg.problem
        vg = self.solved(UPPER)
        mc = self.cfg.sim_config(self.threads)
        for k, (s, x) in enumerate(self.cfg.probes):
            cap = s + float(self.cfg.dpp["cap_fraction"]) * (p.horizon - s)
            rho = rule_min(first_exit_rule(tuple(x), float(self.cfg.dpp["exit_radius"]), ConstantRule(s)),
                           ConstantRule(cap))
            gu, gv = feedback_family(vg, p, self.decision_times(s))
            fu = gu.extend(constant_family("one", p.u_set))
            fv = gv.extend(constant_family("two", p.v_set))
            report = dpp_report(vg, rho, p, mc, fu, fv, s, x, float(self.cfg.tolerances["dpp"]))
            name = f"dpp_p{k}.cert.json"
            self.write_report(name, report, stage)
            stage.rows.append((f"probe{k}", "dpp_residual", report.details["residual"], report.std_error,
                               report.verdict, name))

    def saddle_stage(self, stage: StageResult):
        p = self.cfg.problem
        vg = self.solved(UPPER)
        mc = self.cfg.sim_config(self.threads)
        fam = self.cfg.families
        n = max(int(fam["random_size"]), 1)
        for k, (s, x) in enumerate(self.cfg.probes):
            pair = tuple(f[0] for f in feedback_family(vg, p, self.decision_times(s)))
            du = random_family("one", p.u_set, n, int(fam["random_seed"]) + 2, s, p.horizon, x)
            dv = random_family("two", p.v_set, n, int(fam["random_seed"]) + 3, s, p.horizon, x)
            report = check_saddle(p, pair, du, dv, s, x, mc, float(self.cfg.tolerances["saddle"]))
            name = f"saddle_p{k}.cert.json"
            self.write_report(name, report, stage)
            stage.rows.append((f"probe{k}", "saddle_margin", report.margin, report.std_error, report.verdict, name))

    def certify_stage(self, stage: StageResult):
        p = self.cfg.problem
        mc = self.cfg.sim_config(self.threads)
        grid = self.grid()
        candidates = [("super_upper_const", constant_candidate(p, grid, "super_upper")),
                      ("sub_lower_const", constant_candidate(p, grid, "sub_lower"))]
        if UPPER in self.grids:
            candidates.append(("super_upper_grid",
                               grid_candidate(self.grids[UPPER], p, "super_upper", self.decision_times(0.0))))
        if LOWER in self.grids:
            candidates.append(("sub_lower_grid",
                               grid_candidate(self.grids[LOWER], p, "sub_lower", self.decision_times(0.0))))
        fam = self.cfg.families
        for k, (s, x) in enumerate(self.cfg.probes):
            fu = random_family("one", p.u_set, 2, int(fam["random_seed"]) + 4, s, p.horizon, x)
            fv = random_family("two", p.v_set, 2, int(fam["random_seed"]) + 5, s, p.horizon, x)
            mid = s + 0.5 * (p.horizon - s)
            late = mid + 0.5 * (p.horizon - mid)
            spec = CertifySpec([ConstantRule(s), ConstantRule(mid)], [ConstantRule(late), HorizonRule()],
                               fu, fv, [(s, x)], mc, threshold=float(self.cfg.tolerances["certify"]))
            for label, cand in candidates:
                report = certify(cand, p, spec)
                name = f"certify_{label}_p{k}.cert.json"
                self.write_report(name, report, stage)
                stage.rows.append((f"probe{k}", f"certify_{label}", report.margin, report.std_error,
                                   report.verdict, name))

    def convergence_stage(self, stage: StageResult):
        p = self.cfg.problem
        g = self.cfg.grid
        nodes_list = [int(n) for n in self.cfg.convergence["nodes"]]
        table = []
        for n in nodes_list:
            grid = SpaceTimeGrid.build(p, g["bounds"], [n] * p.dim_state)
            vg = solve(p, UPPER, grid, g["boundary"], None, int(g["max_stored_levels"]), self.threads)
            table.append([vg.at(t, x) for t, x in self.cfg.probes])
        table = np.asarray(table)
        buf = io.StringIO()
        buf.write("nodes," + ",".join(f"probe{k}" for k in range(len(self.cfg.probes))) + "\n")
        for n, row in zip(nodes_list, table):
            buf.write(f"{n}," + ",".join(fmt(v) for v in row) + "\n")
        self.write("convergence.csv", buf.getvalue(), stage)
        diffs = np.abs(np.diff(table, axis=0))
        contracting = bool(np.all(diffs[1:] <= diffs[:-1] + 1e-12)) if len(diffs) > 1 else True
        verdict = "pass" if contracting else "inconclusive"
        report = CertificateReport("value_estimate", float(table[-1, 0]), float(diffs[-1].max()), 0.0, verdict,
                                   float(-diffs[-1].max()), {"nodes": nodes_list, "values": table,
                                                              "successive_differences": diffs},
                                   {"problem": p.name})
        name = "convergence.cert.json"
        self.write_report(name, report, stage)
        for k in range(len(self.cfg.probes)):
            stage.rows.append((f"probe{k}", "refinement_difference", float(diffs[-1, k]), "", verdict, name))

    def run_stage(self, name: str) -> StageResult:
        stage = StageResult(name)
        start = time.perf_counter()
        try:
            if name == "solve_upper":
                self.solve_stage(UPPER, stage)
            elif name == "solve_lower":
                self.solve_stage(LOWER, stage)
            elif name == "values":
                self.values_stage(stage)
            elif name == "dpp":
                self.dpp_stage(stage)
            elif name == "saddle":
                self.saddle_stage(stage)
            elif name == "certify":
                self.certify_stage(stage)
            elif name == "convergence_sweep":
                self.convergence_stage(stage)
            else:
                raise ConfigError(f"unknown stage {name!r}")
        except GameError as exc:
            stage.status = "error"
            stage.error = f"{type(exc).__name__}: {exc}"
        stage.wall_time = time.perf_counter() - start
        return stage


def _write_text(path: Path, text: str):
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _versions() -> dict:
    out = {"python": platform.python_version(), "numpy": np.__version__}
    for pkg in ("artifact", "scipy", "jsonschema"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def run(cfg: ExperimentConfig, out: Path, strict: bool = False, threads: int = 1) -> int:
    """Run the pipeline; return 0 iff every verdict is acceptable and no stage errored."""
    out.mkdir(parents=True, exist_ok=True)
    runner = Runner(cfg, out, threads)
    stages = []
    for name in cfg.pipeline:
        stage = runner.run_stage(name)
        stages.append(stage)
        if stage.status == "error":
            break
    acceptable = {"pass"} if strict else {"pass", "inconclusive"}
    ok = all(s.status == "ok" and all(v in acceptable for v in s.verdicts) for s in stages)
    ok = ok and len(stages) == len(cfg.pipeline)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["stage", "item", "quantity", "value", "std_error", "verdict", "artifact"])
    for s in stages:
        for item, quantity, value, se, verdict, artifact in s.rows:
            writer.writerow([s.name, item, quantity, fmt(value), fmt(se) if se != "" else "", verdict, artifact])
    _write_text(out / "summary.csv", buf.getvalue())

    manifest = {
        "config": cfg.raw,
        "name": cfg.name,
        "versions": _versions(),
        "seeds": {"mc": cfg.mc["seed"], "families": cfg.families["random_seed"]},
        "strict": strict,
        "stages": [{"name": s.name, "status": s.status, "verdict": combine_verdicts(s.verdicts) if s.verdicts else None,
                    "verdicts": s.verdicts, "artifacts": s.artifacts, "error": s.error,
                    "wall_time": s.wall_time} for s in stages],
        "skipped": cfg.pipeline[len(stages):],
        "exit_status": 0 if ok else 1,
        "summary": "summary.csv",
    }
    _write_text(out / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="isaacs-games", description="Zero-sum stochastic differential game toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the configured pipeline")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="output directory (default: config's output_dir or ./out)")
    p_run.add_argument("--strict", action="store_true", help="treat inconclusive verdicts as failures")
    p_run.add_argument("--threads", type=int, default=1)
    sub.add_parser("list-presets", help="list the shipped presets")
    p_val = sub.add_parser("validate", help="validate a config file")
    p_val.add_argument("config")
    args = parser.parse_args(argv)

    if args.command == "list-presets":
        for name in PRESETS:
            print(f"{name}: {DESCRIPTIONS[name]}")
        return 0
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "validate":
        print(f"ok: {cfg.name} ({cfg.problem.name}), stages: {', '.join(cfg.pipeline)}")
        return 0
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    out = Path(args.out or cfg.output_dir or "out")
    status = run(cfg, out, args.strict, args.threads)
    print(f"{'ok' if status == 0 else 'failed'}: artifacts in {out}")
    return status


if __name__ == "__main__":
    sys.exit(main())
