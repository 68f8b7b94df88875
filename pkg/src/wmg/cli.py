"""Command-line interface: analyze graphs, verify gradients, run the studies.

Commands compute everything first and only then write their artifacts, each
through an atomic write-then-rename, so a failing command never leaves
partial output files.  All randomness flows from the --seed argument and
outputs are byte-identical across reruns with the same inputs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import multiprocessing
import os
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import figures
from .chain import ReducibleChainError, SingularFundamentalError, analyze_chain
from .graph import (
    GraphFormatError,
    GraphValidationError,
    graph_doc,
    load_graph,
)
from .gradients import verify_all_gradients
from .kemeny import kemeny_constants
from .optimizer import OptimizerConfig
from .passage import passage_moments
from .surveillance import (
    MODES,
    GridSpec,
    grid_4x4_spec,
    grid_8x8_spec,
    grid_cells,
    run_surveillance_study,
)
from .traffic import (
    POLICY_KINDS,
    CascadeConfig,
    PolicyKind,
    aggregate_cascades,
    gen_geometric_graph,
    run_cascade,
)

log = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-4


@dataclass(frozen=True)
class CommandResult:
    """Exit code, written artifact paths, and wall time of one command."""

    exit_code: int
    artifacts: tuple
    wall_time: float


class CommandError(Exception):
    """Validation or feasibility failure; maps to exit code 1."""


def _atomic_write(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, bytes):
        tmp.write_bytes(data)
    else:
        tmp.write_text(data)
    os.replace(tmp, path)
    return path


def _json_text(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _matrix(mat: np.ndarray):
    return [[float(x) for x in row] for row in np.asarray(mat)]


def _vector(vec: np.ndarray):
    return [float(x) for x in np.asarray(vec)]


def _finish(outputs: dict, t0: float) -> CommandResult:
    written = tuple(str(_atomic_write(Path(p), data)) for p, data in outputs.items())
    for p in written:
        print(p)
    return CommandResult(0, written, time.monotonic() - t0)


# ---------------------------------------------------------------------------
# analyze

def cmd_analyze(graph_path, out_dir) -> CommandResult:
    """Compute passage moments and scalar summaries for one graph file."""
    t0 = time.monotonic()
    graph = load_graph(graph_path)
    analysis = analyze_chain(graph)
    moments = passage_moments(graph, analysis)
    summary = kemeny_constants(analysis, moments, graph)

    out = Path(out_dir)
    outputs = {
        out / "stationary.json": _json_text({
            "stationary": _vector(analysis.stationary),
            "occupancy": _vector(analysis.weighted_stationary),
            "step_weight": _vector(analysis.step_weight),
            "weight_rate": analysis.weight_rate,
            "cond": analysis.cond,
        }),
        out / "moments.json": _json_text({
            "lengths": _matrix(moments.lengths),
            "means": _matrix(moments.means),
            "second_moments": _matrix(moments.second_moments),
            "variances": _matrix(moments.variances),
        }),
        out / "kemeny.json": _json_text({
            "kemeny": summary.kemeny,
            "kemeny_weighted": summary.kemeny_weighted,
            "kemeny_var": summary.kemeny_var,
            "kemeny_var_weighted": summary.kemeny_var_weighted,
            "surprise": summary.surprise,
            "resistance": summary.resistance,
        }),
        out / "moments.png": figures.moment_heatmaps(moments),
    }
    return _finish(outputs, t0)


# ---------------------------------------------------------------------------
# check-gradients

def cmd_check_gradients(graph_path, out_dir, step: float = 1e-6,
                        direction_seed: int = 0) -> CommandResult:
    """Verify every analytic derivative against central finite differences."""
    t0 = time.monotonic()
    graph = load_graph(graph_path)
    rows = verify_all_gradients(graph, step=step, direction_seed=direction_seed)

    out = Path(out_dir)
    outputs = {
        out / "gradients.csv": _csv_text(
            ("quantity", "parameter", "rel_err", "step"),
            [(r.quantity, r.wrt, repr(r.rel_err), repr(r.step)) for r in rows]),
        out / "gradients.png": figures.gradient_residual_bars(rows, GRADIENT_TOLERANCE),
    }
    result = _finish(outputs, t0)
    worst = max(r.rel_err for r in rows)
    if worst > GRADIENT_TOLERANCE:
        print(f"worst relative error {worst:.3e} exceeds {GRADIENT_TOLERANCE:g}",
              file=sys.stderr)
        return replace(result, exit_code=1)
    return result


# ---------------------------------------------------------------------------
# surveil

def _load_grid_spec(spec_arg: str, seed: int | None) -> GridSpec:
    if spec_arg == "4x4":
        spec = grid_4x4_spec()
    elif spec_arg == "8x8":
        spec = grid_8x8_spec()
    else:
        path = Path(spec_arg)
        doc = json.loads(path.read_text())
        doc["obstacles"] = tuple(tuple(o) for o in doc.get("obstacles", ()))
        for key in ("weight_range", "cv_low_band", "cv_high_band"):
            if key in doc:
                doc[key] = tuple(doc[key])
        spec = GridSpec(**doc)
    if seed is not None:
        spec = replace(spec, seed=seed)
    return spec


def _study_config(mode: str, seed: int, iterations: int | None,
                  config_path: str | None) -> OptimizerConfig:
    if config_path is not None:
        config = OptimizerConfig.from_json(config_path)
    elif mode == "min-variance":
        config = OptimizerConfig(seed=seed, iterations=4000, step_gain=1.0, probe_gain=0.1)
    else:
        config = OptimizerConfig(seed=seed, iterations=3000, step_gain=3.0, probe_gain=0.2)
    return config.with_overrides(seed=seed, iterations=iterations)


def cmd_surveil(spec_arg, mode, out_dir, seed: int | None = None,
                iterations: int | None = None, config_path=None) -> CommandResult:
    """Run one grid surveillance study and write its table, trace, and figures."""
    t0 = time.monotonic()
    if mode not in MODES:
        raise CommandError(f"mode must be one of {MODES}")
    spec = _load_grid_spec(spec_arg, seed)
    config = _study_config(mode, spec.seed, iterations, config_path)
    try:
        study = run_surveillance_study(spec, config, mode)
    except RuntimeError as exc:
        raise CommandError(str(exc)) from exc

    cells = grid_cells(spec)
    occupancy = analyze_chain(replace(study.graph, P=study.policy_P)).weighted_stationary
    cv = study.graph.cv_matrix() if spec.stochastic else None

    policy_doc = {
        "mode": mode,
        "seed": spec.seed,
        "P": _matrix(study.policy_P),
        "mu": _vector(study.mu),
        "weights": _matrix(study.graph.W),
        "dominant_edges": [list(e) for e in study.structure.dominant_edges],
        "is_hamiltonian_cycle": study.structure.is_hamiltonian_cycle,
        "cv_correlation": study.cv_correlation,
        "components_direction": study.components_direction,
    }

    out = Path(out_dir)
    outputs = {
        out / "study_summary.csv": _csv_text(
            ("policy", "K_W", "sqrtV_W", "S", "gain"),
            [(r.policy, repr(r.kemeny_weighted), repr(r.sqrt_var_weighted),
              repr(r.surprise), repr(r.gain)) for r in study.rows]),
        out / f"trace_{mode}.csv": _csv_text(
            ("iter", "objective", "residual"),
            [(int(it), repr(val), repr(res)) for it, val, res in study.trace]),
        out / f"policy_{mode}.json": _json_text(policy_doc),
        out / f"policy_{mode}.png": figures.grid_policy_figure(
            cells, study.policy_P, occupancy, obstacles=spec.obstacles,
            title=f"{mode} policy (surprise {study.structure.surprise:.3f})", cv=cv),
        out / f"trace_{mode}.png": figures.trace_figure(study.trace),
    }
    return _finish(outputs, t0)


# ---------------------------------------------------------------------------
# cascade

def _cascade_worker(payload):
    """Run the cascades of one seed (top level so worker pools can pick it up)."""
    (seed, n, degree, weight_range, policies, destinations, removals, opt_kwargs) = payload
    graph = gen_geometric_graph(n, degree, seed=seed, weight_range=weight_range)
    graph = replace(graph, destinations=tuple(destinations))
    config = CascadeConfig(seed=seed, removals=removals, weight_range=weight_range,
                           optimizer=OptimizerConfig(**opt_kwargs))
    runs = {}
    for kind in policies:
        policy = PolicyKind(kind, destinations=tuple(destinations)
                            if kind == "locally-supervised" else ())
        runs[kind] = run_cascade(graph, policy, config)
    return seed, graph, runs


def cmd_cascade(instance_path, out_dir, policy: str = "all", seeds: int = 150,
                removals: int | None = None, jobs: int = 1) -> CommandResult:
    """Run seeded failure cascades and write per-step rows, summary, figures."""
    t0 = time.monotonic()
    doc = json.loads(Path(instance_path).read_text())
    n = int(doc.get("n", 10))
    degree = float(doc.get("degree", 5))
    destinations = tuple(int(d) for d in doc.get("destinations", (2, 5, 9)))
    weight_range = tuple(doc.get("weight_range", (1.0, 3.0)))
    budget = int(removals if removals is not None else doc.get("removals", 5))
    opt_kwargs = doc.get("optimizer", {})
    policies = list(POLICY_KINDS) if policy == "all" else [policy]
    for kind in policies:
        if kind not in POLICY_KINDS:
            raise CommandError(f"unknown policy {kind!r}")
    if any(not 0 <= d < n for d in destinations):
        raise CommandError("instance destinations out of range")

    payloads = [(seed, n, degree, weight_range, policies, destinations, budget,
                 opt_kwargs) for seed in range(seeds)]
    if jobs > 1:
        with multiprocessing.Pool(jobs) as pool:
            collected = pool.map(_cascade_worker, payloads)
    else:
        collected = [_cascade_worker(p) for p in payloads]
    collected.sort(key=lambda item: item[0])

    runs_by_policy = {kind: [] for kind in policies}
    run_rows = []
    instance_docs = {}
    for seed, graph, runs in collected:
        instance_docs[seed] = graph
        for kind in policies:
            run = runs[kind]
            runs_by_policy[kind].append(run)
            for s in run.steps:
                run_rows.append((seed, s.step, kind, "ok", repr(s.d_kemeny),
                                 repr(s.d_variance), repr(s.max_dpi_dest)))
            run_rows.append((seed, len(run.steps) + 1, kind, run.reason, "", "", ""))

    summary = aggregate_cascades(runs_by_policy)

    out = Path(out_dir)
    outputs = {
        out / "cascade_runs.csv": _csv_text(
            ("seed", "step", "policy", "status", "dK", "dV", "max_dpi_dest"), run_rows),
        out / "cascade_summary.csv": _csv_text(
            ("policy", "runs", "successful_runs", "mean_dK", "mean_dV",
             "mean_dpi", "max_dpi_dest"),
            [(r.policy, r.runs, r.successful_runs, repr(r.mean_d_kemeny),
              repr(r.mean_d_variance), repr(r.mean_dpi), repr(r.max_dpi_dest))
             for r in summary]),
        out / "cascade_box.png": figures.cascade_boxplot(runs_by_policy),
        out / "cascade_dpi.png": figures.cascade_dpi_bars(runs_by_policy, n),
    }
    for seed, graph in instance_docs.items():
        outputs[out / "instances" / f"instance_{seed}.json"] = _json_text(graph_doc(graph))
    return _finish(outputs, t0)


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wmg",
        description="Weighted Markovian graphs: passage moments, gradients, "
                    "surveillance and traffic-recovery studies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="passage moments and scalar summaries")
    p.add_argument("graph", help="graph file (JSON or CSV edge list)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("check-gradients", help="finite-difference gradient audit")
    p.add_argument("graph")
    p.add_argument("--out", required=True)
    p.add_argument("--step", type=float, default=1e-6, help="base FD step")
    p.add_argument("--seed", type=int, default=0, help="routing-direction seed")

    p = sub.add_parser("surveil", help="grid surveillance study")
    p.add_argument("spec", help="'4x4', '8x8', or a grid-spec JSON file")
    p.add_argument("--mode", choices=MODES, default="max-surprise")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--config", default=None, help="optimizer config JSON")
    p.add_argument("--out", required=True)

    p = sub.add_parser("cascade", help="sequential edge-failure study")
    p.add_argument("instance", help="instance config JSON")
    p.add_argument("--policy", default="all",
                   choices=("all",) + POLICY_KINDS)
    p.add_argument("--seeds", type=int, default=150, help="number of seeded runs")
    p.add_argument("--removals", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1, help="seed-level parallelism")
    p.add_argument("--out", required=True)
    return parser


def _dispatch(args) -> CommandResult:
    if args.command == "analyze":
        return cmd_analyze(args.graph, args.out)
    if args.command == "check-gradients":
        return cmd_check_gradients(args.graph, args.out, step=args.step,
                                   direction_seed=args.seed)
    if args.command == "surveil":
        return cmd_surveil(args.spec, args.mode, args.out, seed=args.seed,
                           iterations=args.iterations, config_path=args.config)
    if args.command == "cascade":
        return cmd_cascade(args.instance, args.out, policy=args.policy,
                           seeds=args.seeds, removals=args.removals, jobs=args.jobs)
    raise CommandError(f"unknown command {args.command}")


def main(argv=None) -> int:
    level = os.environ.get("WMG_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        result = _dispatch(args)
    except (GraphFormatError, GraphValidationError, ReducibleChainError,
            SingularFundamentalError, CommandError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2
    log.info("finished in %.2fs", result.wall_time)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
