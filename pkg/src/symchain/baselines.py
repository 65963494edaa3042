"""Classical non-learning policies and the economic order quantity.

These give the learned agents something honest to beat: a base-stock rule,
a constant-order rule, a uniform-random policy, and a scripted replay that
keeps the retailer's shelf pinned at a fixed level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from symchain.demand import DemandModel, make_rng, sample
from symchain.env import (
    EchelonParams,
    JointAction,
    RewardMode,
    SupplyChain,
    default_params,
    observe_heterogeneous,
)
from symchain.metrics import EpisodeTrace, TraceStep


@dataclass(frozen=True)
class EoqInputs:
    """Inputs to the order-size formula; all strictly positive.

    ``order_cost`` is the fixed cost per order placed (setup, transport,
    admin), not the unit purchase price.
    """

    demand_rate: float
    order_cost: float
    holding_cost: float
    stockout_cost: float

    def __post_init__(self):
        for f in ("demand_rate", "order_cost", "holding_cost", "stockout_cost"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be strictly positive")


def eoq(inputs: EoqInputs) -> float:
    """Economic order quantity with a stockout-cost correction factor.

    sqrt(2 * D * Oc / Hc) * sqrt((Hc + Sc) / Sc); the second factor tends to
    1 as the stockout cost dominates the holding cost.
    """
    d, oc, hc, sc = (
        inputs.demand_rate,
        inputs.order_cost,
        inputs.holding_cost,
        inputs.stockout_cost,
    )
    return math.sqrt(2.0 * d * oc / hc) * math.sqrt((hc + sc) / sc)


@dataclass(frozen=True)
class BaseStock:
    """Order up to a target level each period; sell at a fixed price."""

    target: float
    price: float = 3.0


@dataclass(frozen=True)
class ConstantOrder:
    """Order the same quantity at the same price every period."""

    quantity: float
    price: float


class Random:
    """Uniform orders and prices over the legal ranges, from an owned generator."""

    def __init__(self, seed: int, order_range=(0.0, 20.0), price_range=(0.0, 6.0)):
        self.rng = make_rng(seed)
        self.order_range = order_range
        self.price_range = price_range


HeuristicPolicy = BaseStock | ConstantOrder | Random


def heuristic_action(policy: HeuristicPolicy, obs: np.ndarray) -> np.ndarray:
    """(order, price) for one node given its own observation vector.

    Only the leading inventory component of the observation is consulted;
    orders are clamped into [0, 20].
    """
    inventory = float(np.asarray(obs)[0])
    if isinstance(policy, BaseStock):
        order = min(max(policy.target - inventory, 0.0), 20.0)
        return np.array([order, policy.price])
    if isinstance(policy, ConstantOrder):
        return np.array([policy.quantity, policy.price])
    if isinstance(policy, Random):
        order = policy.rng.uniform(*policy.order_range)
        price = policy.rng.uniform(*policy.price_range)
        return np.array([order, price])
    raise TypeError(f"unknown heuristic policy {policy!r}")


def replay_pinned_retailer(
    pin: float,
    steps: int,
    demand: DemandModel,
    seed: int,
    params: tuple[EchelonParams, EchelonParams] | None = None,
    reward_mode: RewardMode = RewardMode.BASELINE,
    retailer_price: float = 6.0,
    factory_policy: HeuristicPolicy = BaseStock(target=10.0, price=3.0),
    initial_price: float = 0.0,
) -> EpisodeTrace:
    """Roll a scripted retailer that holds its shelf at ``pin`` units.

    Each step the retailer orders exactly the incoming demand plus whatever
    tops the shelf back up to the pin (the script sees the step's demand, as
    a replay may), clamped to the legal order range.  The factory follows
    the given heuristic.  Returns the full episode trace.
    """
    pair = params if params is not None else default_params()
    pair = (replace(pair[0], horizon=steps), replace(pair[1], horizon=steps))
    env = SupplyChain(pair, reward_mode=reward_mode)
    state = env.reset(initial_price)
    rng = make_rng(seed)
    order_lo, order_hi = pair[0].order_range

    rows: list[TraceStep] = []
    while not env.done:
        d = sample(demand, rng)
        q1 = min(max(pin - state.retailer.inventory + d, order_lo), order_hi)
        factory_action = heuristic_action(factory_policy, observe_heterogeneous(state, 2))
        action = JointAction(
            retailer_order=q1,
            retailer_price=retailer_price,
            factory_order=float(factory_action[0]),
            factory_price=float(factory_action[1]),
        )
        pre = state
        outcome = env.step(action, d)
        state = outcome.next_state
        info = outcome.info
        rows.append(TraceStep(
            t=pre.t,
            demand=info.retailer.demand,
            retailer_order=info.retailer.order,
            factory_order=info.factory.order,
            retailer_price=info.retailer.price,
            factory_price=info.factory.price,
            retailer_inventory=pre.retailer.inventory,
            factory_inventory=pre.factory.inventory,
            retailer_stockout=info.retailer.stockout,
            factory_stockout=info.factory.stockout,
            retailer_backlog=info.retailer.backlog,
            factory_backlog=info.factory.backlog,
            retailer_reward=outcome.rewards[0],
            factory_reward=outcome.rewards[1],
        ))
    return EpisodeTrace(tuple(rows))
