"""Post-hoc analysis of episode traces.

Provides the order-variance amplification ratio (the classic upstream
"whip" statistic), per-group summary rows, convergence detection for
learning curves, and the frozen CSV schema for traces.

Sample statistics use the n-1 denominator throughout.  Stockout/backlog
counts are steps with a nonzero event; total quantities are reported
alongside because a single bad step can dominate the cost.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

TRACE_COLUMNS = [
    "t",
    "demand",
    "retailer_order",
    "factory_order",
    "retailer_price",
    "factory_price",
    "retailer_inventory",
    "factory_inventory",
    "retailer_stockout",
    "factory_stockout",
    "retailer_backlog",
    "factory_backlog",
    "retailer_reward",
    "factory_reward",
]


@dataclass(frozen=True)
class TraceStep:
    """One step of an episode; inventory is the level held when the step began."""

    t: int
    demand: float
    retailer_order: float
    factory_order: float
    retailer_price: float
    factory_price: float
    retailer_inventory: float
    factory_inventory: float
    retailer_stockout: float
    factory_stockout: float
    retailer_backlog: float
    factory_backlog: float
    retailer_reward: float
    factory_reward: float


@dataclass(frozen=True)
class EpisodeTrace:
    """A full episode of step records."""

    steps: tuple[TraceStep, ...]

    def __post_init__(self):
        for step in self.steps:
            for f in fields(TraceStep):
                if not np.isfinite(getattr(step, f.name)):
                    raise ValueError(f"non-finite {f.name} in trace at t={step.t}")

    def __len__(self) -> int:
        return len(self.steps)

    def column(self, name: str) -> np.ndarray:
        if name not in TRACE_COLUMNS:
            raise KeyError(name)
        return np.array([getattr(s, name) for s in self.steps], dtype=np.float64)

    @property
    def total_reward(self) -> float:
        return float(self.column("retailer_reward").sum() + self.column("factory_reward").sum())


def write_trace_csv(path, trace: EpisodeTrace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for step in trace.steps:
            writer.writerow([getattr(step, c) for c in TRACE_COLUMNS])


def read_trace_csv(path) -> EpisodeTrace:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header in {path}")
        steps = []
        for row in reader:
            values = [float(v) for v in row]
            steps.append(TraceStep(int(values[0]), *values[1:]))
    return EpisodeTrace(tuple(steps))


def bullwhip_ratio(orders, demands) -> float:
    """Var(orders) / Var(demands) with sample (n-1) variances.

    Values above 1 mean the node amplifies demand variability upstream.
    Raises if the series are shorter than 2, misaligned, or the demand
    variance is zero (the ratio is undefined).
    """
    orders = np.asarray(orders, dtype=np.float64)
    demands = np.asarray(demands, dtype=np.float64)
    if orders.shape != demands.shape or orders.ndim != 1:
        raise ValueError("orders and demands must be aligned 1-D series")
    if orders.size < 2:
        raise ValueError("need at least two observations")
    denom = demands.var(ddof=1)
    if denom == 0.0:
        raise ValueError("demand variance is zero; ratio undefined")
    return float(orders.var(ddof=1) / denom)


@dataclass(frozen=True)
class GroupKey:
    """Experiment cell labels used to group traces in summaries."""

    architecture: str
    algorithm: str
    reward_mode: str
    demand: str


@dataclass(frozen=True)
class TraceRecord:
    key: GroupKey
    seed: int
    trace: EpisodeTrace


@dataclass(frozen=True)
class SummaryRow:
    architecture: str
    algorithm: str
    reward_mode: str
    demand: str
    n_seeds: int
    n_episodes: int
    mean_episode_reward: float
    std_episode_reward: float
    mean_inventory_retailer: float
    mean_inventory_factory: float
    mean_price_retailer: float
    mean_price_factory: float
    stockout_steps_retailer: float
    stockout_steps_factory: float
    stockout_qty_retailer: float
    stockout_qty_factory: float
    backlog_steps_retailer: float
    backlog_steps_factory: float
    backlog_qty_retailer: float
    backlog_qty_factory: float
    bullwhip_retailer: float | None
    bullwhip_factory: float | None


SUMMARY_COLUMNS = [f.name for f in fields(SummaryRow)]


def _group_ratio(orders: np.ndarray, demands: np.ndarray) -> float | None:
    if orders.size < 2 or demands.var(ddof=1) == 0.0:
        return None
    return bullwhip_ratio(orders, demands)


def summarize(records) -> list[SummaryRow]:
    """Aggregate trace records into one row per group.

    Episode rewards are averaged per seed first; the reported mean/std are
    across seeds.  Inventories and prices are averaged over every step of
    every episode in the group.  Stockout/backlog statistics are per-episode
    means.  Raises on an empty input or an empty group.
    """
    records = list(records)
    if not records:
        raise ValueError("no trace records to summarize")
    groups: dict[GroupKey, list[TraceRecord]] = {}
    for rec in records:
        groups.setdefault(rec.key, []).append(rec)

    rows = []
    for key, recs in sorted(groups.items(), key=lambda kv: repr(kv[0])):
        if not recs:
            raise ValueError(f"empty group {key}")
        by_seed: dict[int, list[float]] = {}
        for rec in recs:
            by_seed.setdefault(rec.seed, []).append(rec.trace.total_reward)
        seed_means = np.array([np.mean(v) for v in by_seed.values()])

        def concat(column: str) -> np.ndarray:
            return np.concatenate([rec.trace.column(column) for rec in recs])

        def per_episode(column: str, reducer) -> float:
            return float(np.mean([reducer(rec.trace.column(column)) for rec in recs]))

        orders1, orders2 = concat("retailer_order"), concat("factory_order")
        demand = concat("demand")
        rows.append(SummaryRow(
            architecture=key.architecture,
            algorithm=key.algorithm,
            reward_mode=key.reward_mode,
            demand=key.demand,
            n_seeds=len(by_seed),
            n_episodes=len(recs),
            mean_episode_reward=float(seed_means.mean()),
            std_episode_reward=float(seed_means.std(ddof=1)) if seed_means.size > 1 else 0.0,
            mean_inventory_retailer=float(concat("retailer_inventory").mean()),
            mean_inventory_factory=float(concat("factory_inventory").mean()),
            mean_price_retailer=float(concat("retailer_price").mean()),
            mean_price_factory=float(concat("factory_price").mean()),
            stockout_steps_retailer=per_episode("retailer_stockout", lambda c: np.count_nonzero(c)),
            stockout_steps_factory=per_episode("factory_stockout", lambda c: np.count_nonzero(c)),
            stockout_qty_retailer=per_episode("retailer_stockout", np.sum),
            stockout_qty_factory=per_episode("factory_stockout", np.sum),
            backlog_steps_retailer=per_episode("retailer_backlog", lambda c: np.count_nonzero(c)),
            backlog_steps_factory=per_episode("factory_backlog", lambda c: np.count_nonzero(c)),
            backlog_qty_retailer=per_episode("retailer_backlog", np.sum),
            backlog_qty_factory=per_episode("factory_backlog", np.sum),
            bullwhip_retailer=_group_ratio(orders1, demand),
            bullwhip_factory=_group_ratio(orders2, orders1),
        ))
    return rows


def convergence_check(curve, window: int, tol: float) -> tuple[bool, int | None]:
    """First index where the sliding-window mean settles, if any.

    A curve counts as settled at index i once the mean over the last
    ``window`` points moved by less than ``tol`` times the window's mean
    absolute value relative to the window one step earlier.  An exactly
    unchanged window mean always counts as settled.
    """
    if window < 2:
        raise ValueError("window must be at least 2")
    arr = np.asarray(curve, dtype=np.float64)
    for i in range(window, arr.size):
        current = arr[i - window + 1 : i + 1].mean()
        previous = arr[i - window : i].mean()
        change = abs(current - previous)
        scale = np.abs(arr[i - window + 1 : i + 1]).mean()
        if change == 0.0 or change < tol * scale:
            return True, i
    return False, None
