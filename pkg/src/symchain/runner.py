"""Experiment runner: seeds x cells fan-out, artifact layout, and reporting.

Disk layout under the output root::

    config.ini                      byte-for-byte snapshot of the input config
    cells/<cell>/seed_<k>/
        curve.csv                   per-iteration learning curve
        checkpoint.json             final policy bundle
        meta.json                   run metadata (iterations, eval means, wall clock)
        eval/ep_###.csv             deterministic evaluation episode traces
        STATUS                      "ok" or "failed: <reason>" -- written last
    report/                         summary tables, shaping deltas, order-size
                                    reference values, pricing notes, figures/

Runs are independent jobs; a diverged run is marked failed and the rest
continue.  Because STATUS is written last, artifacts of completed runs stay
valid no matter how a later run dies.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from symchain import plots
from symchain.baselines import EoqInputs, eoq
from symchain.config import Cell, ExperimentConfig, parse_config, serialize_config
from symchain.env import RewardMode, default_params
from symchain.metrics import (
    SUMMARY_COLUMNS,
    GroupKey,
    SummaryRow,
    TraceRecord,
    read_trace_csv,
    write_trace_csv,
)
from symchain.policy import PolicyNet
from symchain.training import (
    CURVE_COLUMNS,
    AgentConfig,
    ConvergenceRule,
    CurveRow,
    EnvSetup,
    PolicyActor,
    TrainingDiverged,
    architecture,
    evaluate,
    train,
)

# The evaluation protocol is fixed here and nowhere else: every cell measures
# its final policy the same way, with randomness drawn from a reserved stream
# that cannot collide with training streams (same entropy, reserved spawn key).
EVAL_EPISODES = 100
_EVAL_STREAM_KEY = 0x45564131
OUT_ROOT_ENV = "SYMCHAIN_OUT_ROOT"
BUNDLE_VERSION = 1


def eval_seed_sequence(train_seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=train_seed, spawn_key=(_EVAL_STREAM_KEY,))


def resolve_out_dir(config: ExperimentConfig, cli_out: str | None = None) -> Path:
    if cli_out:
        return Path(cli_out)
    if config.out_dir:
        return Path(config.out_dir)
    env_root = os.environ.get(OUT_ROOT_ENV)
    if env_root:
        return Path(env_root)
    return Path("runs")


@dataclass
class RunArtifacts:
    cell: str
    seed: int
    run_dir: str
    status: str
    error: str | None
    curve_csv: str | None
    checkpoint: str | None
    meta_json: str | None
    trace_files: list[str]


def _env_setup_for(config: ExperimentConfig, cell: Cell) -> EnvSetup:
    r, f = default_params()
    params = (replace(r, horizon=config.horizon), replace(f, horizon=config.horizon))
    return EnvSetup(
        params=params,
        reward_mode=RewardMode(cell.reward_mode),
        demand=cell.demand,
        initial_price=config.initial_price,
        strict_actions=config.strict_actions,
    )


def _agent_config_for(config: ExperimentConfig, cell: Cell) -> AgentConfig:
    return AgentConfig(
        algorithm=cell.algorithm,
        architecture=cell.architecture,
        hidden=config.hidden,
        reward_scale=config.reward_scale,
    )


def write_curve_csv(path, rows: list[CurveRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_COLUMNS)
        for row in rows:
            writer.writerow([getattr(row, c) for c in CURVE_COLUMNS])


def read_curve_csv(path) -> list[CurveRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CURVE_COLUMNS:
            raise ValueError(f"unexpected curve header in {path}")
        for rec in reader:
            rows.append(CurveRow(
                iteration=int(rec["iteration"]),
                policy_id=rec["policy_id"],
                mean_episode_reward=float(rec["mean_episode_reward"]),
                std=float(rec["std"]),
                episodes=int(rec["episodes"]),
                env_steps=int(rec["env_steps"]),
            ))
    return rows


def save_bundle(path, cell: Cell, policies: dict[str, PolicyNet], meta: dict) -> None:
    payload = {
        "format_version": BUNDLE_VERSION,
        "cell": cell.name,
        "meta": meta,
        "policies": {
            pid: {
                "meta": pol.meta(),
                "tensors": {
                    name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
                    for name, arr in pol.tensors().items()
                },
            }
            for pid, pol in policies.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_bundle(path) -> tuple[Cell, dict[str, PolicyNet], dict]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != BUNDLE_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('format_version')}")
    cell = Cell.from_name(payload["cell"])
    policies = {}
    for pid, entry in payload["policies"].items():
        tensors = {
            name: np.array(t["data"], dtype=np.float64).reshape(t["shape"])
            for name, t in entry["tensors"].items()
        }
        policies[pid] = PolicyNet.from_checkpoint(entry["meta"], tensors)
    return cell, policies, payload.get("meta", {})


def run_single(config: ExperimentConfig, cell: Cell, seed: int, out_root) -> RunArtifacts:
    """Train, evaluate, and persist one (cell, seed) job."""
    run_dir = Path(out_root) / "cells" / cell.name / f"seed_{seed:03d}"
    run_dir.mkdir(parents=True, exist_ok=True)
    curve_path = run_dir / "curve.csv"
    started = time.time()

    env_setup = _env_setup_for(config, cell)
    agent_cfg = _agent_config_for(config, cell)
    stopping = ConvergenceRule(config.convergence_window, config.convergence_tol)
    try:
        result = train(env_setup, agent_cfg, seed, stopping=stopping, iteration_cap=config.iteration_cap)
    except TrainingDiverged as exc:
        write_curve_csv(curve_path, exc.curve)
        (run_dir / "STATUS").write_text(f"failed: {exc}\n", encoding="utf-8")
        return RunArtifacts(cell.name, seed, str(run_dir), "failed", str(exc), str(curve_path), None, None, [])

    write_curve_csv(curve_path, result.curve)

    arch = architecture(cell.architecture)
    actors = [PolicyActor(result.policies[pid]) for pid in arch.ids]
    eval_result = evaluate(
        env_setup, cell.architecture, actors, eval_seed_sequence(seed),
        episodes=EVAL_EPISODES, deterministic=True,
    )
    eval_dir = run_dir / "eval"
    eval_dir.mkdir(exist_ok=True)
    trace_files = []
    for i, trace in enumerate(eval_result.traces):
        trace_path = eval_dir / f"ep_{i:03d}.csv"
        write_trace_csv(trace_path, trace)
        trace_files.append(str(trace_path))

    checkpoint_path = run_dir / "checkpoint.json"
    save_bundle(checkpoint_path, cell, result.policies, {
        "seed": seed,
        "iterations": result.iterations,
        "converged": result.converged,
        "initial_price": config.initial_price,
        "horizon": config.horizon,
    })

    meta_path = run_dir / "meta.json"
    meta = {
        "cell": cell.name,
        "seed": seed,
        "iterations": result.iterations,
        "converged": result.converged,
        "stopped_at": result.stopped_at,
        "eval_episodes": EVAL_EPISODES,
        "eval_mean_total": eval_result.mean_total,
        "eval_mean_per_policy": {pid: eval_result.mean(pid) for pid in eval_result.policy_ids},
        "wall_clock_s": round(time.time() - started, 3),
    }
    meta_path.write_text(json.dumps(meta, indent=2), encoding="utf-8")
    (run_dir / "STATUS").write_text("ok\n", encoding="utf-8")
    return RunArtifacts(
        cell.name, seed, str(run_dir), "ok", None,
        str(curve_path), str(checkpoint_path), str(meta_path), trace_files,
    )


def _job(payload: tuple[str, str, int, str]) -> RunArtifacts:
    config_text, cell_name, seed, out_root = payload
    return run_single(parse_config(config_text), Cell.from_name(cell_name), seed, out_root)


def run(config: ExperimentConfig, out_dir=None, config_text: str | None = None) -> list[RunArtifacts]:
    """Execute the full matrix and assemble the report.

    ``config_text``, when given, is written verbatim as the config snapshot;
    otherwise the canonical serialization is used.  Jobs run sequentially by
    default or across processes when the config asks for more.
    """
    out_root = resolve_out_dir(config, out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    snapshot = config_text if config_text is not None else serialize_config(config)
    (out_root / "config.ini").write_text(snapshot, encoding="utf-8")

    jobs = [(cell, seed) for cell in config.cells() for seed in config.seeds]
    artifacts: list[RunArtifacts] = []
    if config.jobs > 1:
        canonical = serialize_config(config)
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            futures = [
                pool.submit(_job, (canonical, cell.name, seed, str(out_root)))
                for cell, seed in jobs
            ]
            artifacts = [f.result() for f in futures]
    else:
        for cell, seed in jobs:
            artifacts.append(run_single(config, cell, seed, out_root))
    report(out_root)
    return artifacts


# -- reporting -----------------------------------------------------------------

@dataclass
class ReportPaths:
    report_dir: str
    summary_csv: str
    summary_txt: str
    deltas_csv: str
    eoq_csv: str
    pricing_txt: str
    figures: list[str]


def _format_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def line(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    out = [line(headers), line(["-" * w for w in widths])]
    out.extend(line(r) for r in rows)
    return "\n".join(out) + "\n"


def _fmt(value, digits=3) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def report(out_root) -> ReportPaths:
    """Aggregate all completed runs under ``out_root`` into tables and figures."""
    out_root = Path(out_root)
    cells_dir = out_root / "cells"
    if not cells_dir.is_dir():
        raise ValueError(f"no runs found under {out_root}")

    records: list[TraceRecord] = []
    curves: dict[str, dict[str, list[np.ndarray]]] = {}
    first_trace: dict[str, object] = {}
    failed: list[tuple[str, int, str]] = []
    seen_any = False
    for cell_dir in sorted(p for p in cells_dir.iterdir() if p.is_dir()):
        cell = Cell.from_name(cell_dir.name)
        for run_dir in sorted(cell_dir.glob("seed_*")):
            status_path = run_dir / "STATUS"
            seed = int(run_dir.name.split("_")[1])
            if not status_path.exists():
                failed.append((cell.name, seed, "incomplete (no STATUS)"))
                continue
            seen_any = True
            status = status_path.read_text(encoding="utf-8").strip()
            if status != "ok":
                failed.append((cell.name, seed, status))
                continue
            curve_rows = read_curve_csv(run_dir / "curve.csv")
            per_pid: dict[str, list[float]] = {}
            for row in curve_rows:
                per_pid.setdefault(row.policy_id, []).append(row.mean_episode_reward)
            cell_curves = curves.setdefault(cell.name, {})
            for pid, series in per_pid.items():
                cell_curves.setdefault(pid, []).append(np.asarray(series))
            key = GroupKey(cell.architecture, cell.algorithm, cell.reward_mode, cell.demand)
            for trace_path in sorted((run_dir / "eval").glob("ep_*.csv")):
                trace = read_trace_csv(trace_path)
                records.append(TraceRecord(key, seed, trace))
                first_trace.setdefault(cell.name, trace)
    if not seen_any and not failed:
        raise ValueError(f"no completed or failed runs under {out_root}")

    report_dir = out_root / "report"
    figures_dir = report_dir / "figures"
    figures_dir.mkdir(parents=True, exist_ok=True)

    from symchain.metrics import summarize  # local import keeps module load light

    summary_rows = summarize(records) if records else []

    summary_csv = report_dir / "summary.csv"
    with open(summary_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in summary_rows:
            writer.writerow(["" if (v := getattr(row, c)) is None else v for c in SUMMARY_COLUMNS])

    headers = [
        "cell", "reward mean+-std", "inv R", "inv F", "price R", "price F",
        "stockout R", "stockout F", "backlog R", "backlog F", "whip R", "whip F",
    ]
    text_rows = []
    for row in summary_rows:
        cell_name = f"{row.demand}-{row.architecture}-{row.algorithm}-{row.reward_mode}"
        text_rows.append([
            cell_name,
            f"{row.mean_episode_reward:.1f}+-{row.std_episode_reward:.1f}",
            _fmt(row.mean_inventory_retailer, 2), _fmt(row.mean_inventory_factory, 2),
            _fmt(row.mean_price_retailer, 2), _fmt(row.mean_price_factory, 2),
            _fmt(row.stockout_steps_retailer, 2), _fmt(row.stockout_steps_factory, 2),
            _fmt(row.backlog_steps_retailer, 2), _fmt(row.backlog_steps_factory, 2),
            _fmt(row.bullwhip_retailer, 2), _fmt(row.bullwhip_factory, 2),
        ])
    summary_text = _format_table(headers, text_rows)
    if failed:
        summary_text += "\nfailed runs:\n"
        for cell_name, seed, reason in failed:
            summary_text += f"  {cell_name} seed {seed}: {reason}\n"
    summary_txt = report_dir / "summary.txt"
    summary_txt.write_text(summary_text, encoding="utf-8")

    deltas_csv = report_dir / "shaping_deltas.csv"
    _write_shaping_deltas(deltas_csv, summary_rows)

    eoq_csv = report_dir / "eoq.csv"
    _write_eoq_table(eoq_csv, out_root)

    pricing_txt = report_dir / "pricing_comparison.txt"
    pricing_txt.write_text(_pricing_comparison(summary_rows), encoding="utf-8")

    figure_paths: list[str] = []
    for cell_name, per_pid in sorted(curves.items()):
        path = figures_dir / f"learning_curves_{cell_name}.png"
        plots.save_learning_curves(per_pid, path, title=cell_name)
        figure_paths.append(str(path))
    for cell_name, trace in sorted(first_trace.items()):
        path = figures_dir / f"trace_{cell_name}.png"
        plots.save_trace_panels(trace, path, title=cell_name)
        figure_paths.append(str(path))
    if summary_rows:
        labels = [f"{r.demand}-{r.architecture}-{r.algorithm}-{r.reward_mode}" for r in summary_rows]
        path = figures_dir / "prices.png"
        plots.save_price_comparison(
            labels,
            [r.mean_price_retailer for r in summary_rows],
            [r.mean_price_factory for r in summary_rows],
            path,
        )
        figure_paths.append(str(path))

    return ReportPaths(
        report_dir=str(report_dir),
        summary_csv=str(summary_csv),
        summary_txt=str(summary_txt),
        deltas_csv=str(deltas_csv),
        eoq_csv=str(eoq_csv),
        pricing_txt=str(pricing_txt),
        figures=figure_paths,
    )


def _write_shaping_deltas(path, summary_rows: list[SummaryRow]) -> None:
    """Mean-inventory shift between unshaped and cross-penalized runs."""
    by_combo: dict[tuple[str, str, str], dict[str, SummaryRow]] = {}
    for row in summary_rows:
        by_combo.setdefault((row.demand, row.architecture, row.algorithm), {})[row.reward_mode] = row
    header = [
        "demand", "architecture", "algorithm",
        "baseline_factory_inventory", "baseline_retailer_inventory",
        "colla_factory_inventory", "colla_retailer_inventory",
        "delta_factory_inventory", "delta_retailer_inventory",
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for (demand, arch, algo), modes in sorted(by_combo.items()):
            base, colla = modes.get("baseline"), modes.get("colla")
            if base is None or colla is None:
                continue
            writer.writerow([
                demand, arch, algo,
                base.mean_inventory_factory, base.mean_inventory_retailer,
                colla.mean_inventory_factory, colla.mean_inventory_retailer,
                colla.mean_inventory_factory - base.mean_inventory_factory,
                colla.mean_inventory_retailer - base.mean_inventory_retailer,
            ])


def _write_eoq_table(path, out_root: Path) -> None:
    """Reference order sizes for each demand regime and node."""
    config_path = out_root / "config.ini"
    order_cost = 1.0
    demands = ("high", "low")
    if config_path.exists():
        cfg = parse_config(config_path.read_text(encoding="utf-8"))
        order_cost = cfg.eoq_order_cost
        demands = cfg.demands
    regime_rate = {"high": 10.0, "low": 2.0}
    retailer, factory = default_params()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["demand", "node", "demand_rate", "order_cost", "holding_cost", "stockout_cost", "q_star", "q_star_rounded"])
        for regime in demands:
            rate = regime_rate[regime]
            for node, params in (("retailer", retailer), ("factory", factory)):
                q = eoq(EoqInputs(rate, order_cost, params.holding_cost, params.stockout_cost))
                writer.writerow([regime, node, rate, order_cost, params.holding_cost, params.stockout_cost, q, round(q)])


def _pricing_comparison(summary_rows: list[SummaryRow]) -> str:
    """Directional note: do shared controllers price above per-node ones?

    Informational only; flaky by nature, so deviations are noted, never fatal.
    """
    low = [r for r in summary_rows if r.demand == "low"]
    homo = [r for r in low if r.architecture == "homo"]
    hetero = [r for r in low if r.architecture == "hetero"]
    lines = ["directional pricing check (low demand): homogeneous expected to price above heterogeneous", ""]
    if not homo or not hetero:
        lines.append("insufficient data: need both architectures on low demand")
        return "\n".join(lines) + "\n"
    homo_price = float(np.mean([(r.mean_price_retailer + r.mean_price_factory) / 2 for r in homo]))
    hetero_price = float(np.mean([(r.mean_price_retailer + r.mean_price_factory) / 2 for r in hetero]))
    lines.append(f"homogeneous mean price:   {homo_price:.3f}")
    lines.append(f"heterogeneous mean price: {hetero_price:.3f}")
    if homo_price > hetero_price:
        lines.append("observed: matches the expected direction")
    else:
        lines.append("observed: deviates from the expected direction (noted; non-gating)")
    return "\n".join(lines) + "\n"


def eval_rollout(
    checkpoint_path,
    steps: int,
    seed: int,
    out_dir,
    demand: str | None = None,
    deterministic: bool = True,
) -> dict:
    """Roll a saved policy for an arbitrary number of steps and plot the trace.

    The episode horizon is stretched to ``steps`` so long behavioral windows
    (for example 500 days) come from one uninterrupted rollout.
    """
    cell, policies, meta = load_bundle(checkpoint_path)
    r, f = default_params()
    params = (replace(r, horizon=steps), replace(f, horizon=steps))
    env_setup = EnvSetup(
        params=params,
        reward_mode=RewardMode(cell.reward_mode),
        demand=demand or cell.demand,
        initial_price=float(meta.get("initial_price", 0.0)),
    )
    arch = architecture(cell.architecture)
    actors = [PolicyActor(policies[pid]) for pid in arch.ids]
    result = evaluate(
        env_setup, cell.architecture, actors, eval_seed_sequence(seed),
        episodes=1, deterministic=deterministic,
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace = result.traces[0]
    csv_path = out_dir / f"rollout_{cell.name}_steps{steps}_seed{seed}.csv"
    png_path = out_dir / f"rollout_{cell.name}_steps{steps}_seed{seed}.png"
    write_trace_csv(csv_path, trace)
    plots.save_trace_panels(trace, png_path, title=f"{cell.name} ({steps} steps)")
    return {"trace_csv": str(csv_path), "figure": str(png_path), "mean_total": result.mean_total}
