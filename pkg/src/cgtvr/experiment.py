"""Configuration-driven experiments: algorithms x topologies x seeds.

A config is a TOML or JSON document with sections ``problem``, ``topologies``
(or a single ``topology``), ``algorithms``, ``seeds``, ``stop`` and optionally
``tuning`` and ``diagnostics``.  See ``examples/desk.toml``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .network import topology_from_config, topology_label
from .optimizers import ALGORITHMS, CLIPPED, R0Rule, RunConfig, run
from .problems import problem_from_config

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

OUTPUT_ENV = "CGTVR_OUTPUT_DIR"
CSV_HEADER = ("t", "data_pass", "grad_norm_sq", "grad_map_sq", "objective",
              "consensus_error", "L_min", "restarts_total", "potential")
THETA_GRID = (1e-3, 1e-1, 1e1, 1e3)
STEPSIZE_GRID = (1e-8, 1e-6, 1e-4, 1e-2, 1.0, 1e2)


@dataclass
class AlgorithmSpec:
    name: str
    grid: tuple
    key: str  # "theta" or "stepsize"
    options: dict = field(default_factory=dict)

    @property
    def label(self):
        return self.options.get("label", self.name)


@dataclass
class ExperimentConfig:
    problem: dict
    topologies: list
    algorithms: list
    seeds: list
    stop: dict
    output_dir: Path
    tuning: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    name: str = "experiment"


def load_config_file(path):
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}", key="config") from exc
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text.decode("utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}", key="config") from exc


def _algorithm_spec(entry, idx):
    if not isinstance(entry, dict) or "name" not in entry:
        raise ConfigurationError(f"algorithms[{idx}] needs a name", key=f"algorithms[{idx}].name")
    name = entry["name"]
    if name not in ALGORITHMS:
        raise ConfigurationError(f"unknown algorithm {name!r}", key=f"algorithms[{idx}].name")
    key = "theta" if name in CLIPPED else "stepsize"
    if key in entry:
        grid = (float(entry[key]),)
    else:
        default = THETA_GRID if key == "theta" else STEPSIZE_GRID
        grid = tuple(float(v) for v in entry.get(f"{key}Grid", default))
    if not grid or any(not v > 0 for v in grid):
        raise ConfigurationError(f"{key} values must be positive", key=f"algorithms[{idx}].{key}")
    options = {k: v for k, v in entry.items() if k not in ("name", key, f"{key}Grid")}
    return AlgorithmSpec(name, grid, key, options)


def parse_config(raw, base_dir=".") -> ExperimentConfig:
    if "problem" not in raw:
        raise ConfigurationError("missing [problem] section", key="problem")
    problem = dict(raw["problem"])
    topologies = raw.get("topologies") or ([raw["topology"]] if "topology" in raw else None)
    if not topologies:
        raise ConfigurationError("missing topology", key="topologies")
    for k, topo in enumerate(topologies):
        if "kind" not in topo:
            raise ConfigurationError("topology needs a kind", key=f"topologies[{k}].kind")
    algs = raw.get("algorithms")
    if not algs:
        raise ConfigurationError("at least one algorithm is required", key="algorithms")
    algorithms = [_algorithm_spec(a, k) for k, a in enumerate(algs)]
    seeds = raw.get("seeds", raw.get("experiment", {}).get("seeds"))
    if not seeds:
        raise ConfigurationError("at least one seed is required", key="seeds")
    exp = raw.get("experiment", {})
    out = os.environ.get(OUTPUT_ENV) or exp.get("outputDir") or raw.get("outputDir", "output")
    out = Path(out)
    if not out.is_absolute():
        out = (Path(base_dir) / out).resolve()
    return ExperimentConfig(problem=problem, topologies=topologies, algorithms=algorithms,
                            seeds=[int(s) for s in seeds], stop=dict(raw.get("stop", {})),
                            output_dir=out, tuning=dict(raw.get("tuning", {})),
                            diagnostics=dict(raw.get("diagnostics", {})),
                            name=exp.get("name", raw.get("name", "experiment")))


def build_problem(cfg: ExperimentConfig):
    try:
        return problem_from_config(cfg.problem)
    except ConfigurationError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigurationError(f"invalid problem: {exc}", key="problem") from exc


def build_mixing(topo_cfg, m, idx=0):
    try:
        mixing = topology_from_config(topo_cfg, m)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigurationError(f"invalid topology: {exc}", key=f"topologies[{idx}]") from exc
    if mixing.m != m:
        raise ConfigurationError(f"topology has {mixing.m} agents, problem has {m}",
                                 key=f"topologies[{idx}].m")
    return mixing


def load_experiment(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(load_config_file(path), base_dir=path.parent)


def _r0_rule(opt):
    if opt is None:
        return R0Rule()
    try:
        return R0Rule(**opt)
    except TypeError as exc:
        raise ConfigurationError(f"bad r0Rule: {exc}", key="r0Rule") from exc


def run_config(spec: AlgorithmSpec, value, seed, stop, overrides=None) -> RunConfig:
    """Translate one cell of the experiment into a ``RunConfig``."""
    o = dict(spec.options)
    o.update(overrides or {})
    kw = dict(algorithm=spec.name, seed=int(seed), r0_rule=_r0_rule(o.get("r0Rule")),
              delta=o.get("delta"), d_radius=o.get("dRadius"), tau=o.get("tau"),
              batch=o.get("batch"), restart_prob=o.get("restartProb"),
              init=o.get("init", stop.get("init", "unit")),
              track_potential=bool(o.get("trackPotential", False)),
              record_history=bool(o.get("recordHistory", False)),
              max_iterations=int(stop.get("maxIterations", 1000)),
              grad_map_threshold=stop.get("gradMapThreshold"),
              data_pass_budget=stop.get("dataPassBudget"))
    kw[spec.key] = float(value)
    return RunConfig(**kw)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def emit_metrics_csv(rows, path):
    """Write the fixed-schema metrics table; floats use round-trip ``repr``."""
    if not rows:
        raise ValueError("empty trajectory")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])


def read_metrics_csv(path):
    """Columns of a metrics CSV as float arrays (blank cells become NaN)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = {k: [] for k in reader.fieldnames or []}
        for row in reader:
            for k, v in row.items():
                cols[k].append(float(v) if v not in ("", None) else math.nan)
    return {k: np.array(v, dtype=float) for k, v in cols.items()}


def relative_target(result, factor):
    return factor * result.rows[0].grad_norm_sq


def score(result, rel_target):
    """Tuning score: data passes to reach the target, then final gradient norm."""
    if result.diverged or not result.rows:
        return (math.inf, math.inf)
    passes = result.passes_to(relative_target(result, rel_target))
    return (passes, result.final.grad_norm_sq)


def tune(spec, problem, mixing, stop, seeds, rel_target):
    """Best grid value on ``seeds`` (median score), and the per-value scores."""
    if len(spec.grid) == 1:
        return spec.grid[0], []
    table = []
    for value in spec.grid:
        scores = []
        for seed in seeds:
            cfg = run_config(spec, value, seed, stop)
            res = run(spec.name, problem, mixing, cfg, raise_on_divergence=False)
            scores.append(score(res, rel_target))
        passes = float(np.median([s[0] for s in scores]))
        final = float(np.median([s[1] for s in scores]))
        table.append(dict(value=value, passes=passes, final_grad_norm_sq=final))
    best = min(table, key=lambda e: (e["passes"], e["final_grad_norm_sq"]))
    return best["value"], table


def cell_name(spec, topo_cfg, seed):
    return f"{spec.label}_{topology_label(topo_cfg)}_{seed}"


def run_experiment(cfg: ExperimentConfig, write_plots=True):
    """Run every (algorithm, topology, seed) cell and write CSVs, a summary JSON
    and SVG plots.  Returns the summary dict."""
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ConfigurationError(f"output directory {out} is not writable", key="outputDir")
    problem = build_problem(cfg)
    rel_target = float(cfg.tuning.get("relativeTarget", 1e-4))
    tune_seeds = cfg.tuning.get("seeds", cfg.seeds[:1])
    summary = dict(name=cfg.name, problem=cfg.problem, seeds=cfg.seeds,
                   relative_target=rel_target, cells=[], tuning=[])
    for k, topo_cfg in enumerate(cfg.topologies):
        mixing = build_mixing(topo_cfg, problem.m, k)
        label = topology_label(topo_cfg)
        csvs = {}
        for spec in cfg.algorithms:
            value, table = tune(spec, problem, mixing, cfg.stop, tune_seeds, rel_target)
            if table:
                summary["tuning"].append(dict(algorithm=spec.label, topology=label,
                                              key=spec.key, chosen=value, table=table))
            for seed in cfg.seeds:
                rc = run_config(spec, value, seed, cfg.stop)
                res = run(spec.name, problem, mixing, rc, raise_on_divergence=False)
                name = cell_name(spec, topo_cfg, seed)
                path = out / f"{name}.csv"
                if res.rows:
                    emit_metrics_csv(res.rows, path)
                    csvs.setdefault(spec.label, path)
                final = res.rows[-1] if res.rows else None
                summary["cells"].append(dict(
                    algorithm=spec.label, topology=label, seed=seed, eta=mixing.eta, c=mixing.c,
                    **{spec.key: value}, rows=len(res.rows), diverged=res.diverged,
                    error=res.error, csv=path.name if res.rows else None,
                    passes_to_target=(res.passes_to(relative_target(res, rel_target))
                                      if res.rows else math.inf),
                    min_grad_map_sq=res.min_grad_map_sq() if res.rows else None,
                    t_out=res.t_out,
                    final=None if final is None else dict(
                        data_pass=final.data_pass, grad_norm_sq=final.grad_norm_sq,
                        objective=final.objective, consensus_error=final.consensus_error,
                        restarts_total=final.restarts_total)))
                log.info("%s: %d rows%s", name, len(res.rows), " (diverged)" if res.diverged else "")
        if write_plots and csvs:
            from .plotting import render_svg
            for metric in ("grad_norm_sq", "objective", "consensus_error"):
                render_svg(list(csvs.values()), metric, out / f"{metric}_{label}.svg",
                           labels=list(csvs.keys()))
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def check_bounds(cfg: ExperimentConfig):
    """Run the clipped algorithms with full history and evaluate every
    runtime-verifiable bound.  Returns a list of report dicts."""
    from . import diagnostics as dg

    problem = build_problem(cfg)
    diag = cfg.diagnostics
    f_star = diag.get("fStar", problem.f_star if problem.f_star is not None else 0.0)
    reports = []
    for k, topo_cfg in enumerate(cfg.topologies):
        mixing = build_mixing(topo_cfg, problem.m, k)
        params = dg.potential_constants(mixing.eta, problem.m)
        for spec in cfg.algorithms:
            if spec.name not in CLIPPED:
                continue
            theta = spec.grid[0]
            if diag.get("thetaFromTheory"):
                theta = params.theta0
            results = []
            for seed in cfg.seeds:
                rc = run_config(spec, theta, seed, cfg.stop,
                                overrides=dict(recordHistory=True, trackPotential=True))
                results.append(run(spec.name, problem, mixing, rc, potential_params=params))
            tag = f"{spec.label}/{topology_label(topo_cfg)}"
            for k, res in enumerate(results):
                for name, (excess, count) in dg.check_runtime_invariants(res, problem).items():
                    reports.append(dict(check=f"{tag}/{name}", bound=0.0, observed=excess,
                                        seeds=[cfg.seeds[k]],
                                        status="pass" if count == 0 else "fail",
                                        violations=count))
            dfs = np.array([dg.run_delta_f(r, problem, f_star) for r in results])
            rep = dg.min_grad_map_check(results, dfs, theta, params.theta0)
            rep["check"] = f"{tag}/{rep['check']}"
            reports.append(rep)
            rep = dg.clip_frequency_check(results)
            rep["check"] = f"{tag}/{rep['check']}"
            reports.append(rep)
            if spec.name == "cgtvr_stag":
                for rep in dg.restart_bound_check(results, results[0].config, dfs, params.theta0):
                    rep["check"] = f"{tag}/{rep['check']}"
                    reports.append(rep)
            eps = float(diag.get("epsilon", 1e-2))
            rep = dg.escape_radius_check(results, problem, float(dfs.max()), eps,
                                         float(diag.get("p", 1.0)))
            rep["check"] = f"{tag}/{rep['check']}"
            reports.append(rep)
            L_traj = results[0].column("L_min")
            reports.append(dict(check=f"{tag}/harmonic_effective_L",
                                bound=float(np.nanmax(L_traj)),
                                observed=dg.harmonic_effective_L(L_traj), seeds=cfg.seeds[:1],
                                status="pass" if dg.harmonic_effective_L(L_traj)
                                <= np.nanmax(L_traj) * (1 + 1e-12) else "fail"))
    return reports


def write_report(reports, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(reports), fh, indent=2, sort_keys=True)
        fh.write("\n")
