"""Two-echelon supply chain simulator.

A retailer buys from a factory and sells to customers; the factory buys raw
stock at a fixed cost and sells to the retailer.  The retailer's order is the
factory's demand.  Each node earns sales revenue and pays holding, overstock
("backlog"), stockout, and purchasing costs every step.

The transition is deterministic given the customer demand for the step, so
all stochasticity lives outside this module: callers draw demand themselves
and pass it to :func:`step`.  That keeps episodes replayable and lets tests
drive the dynamics with scripted demand.

Conventions:

* "backlog" here is an overstock penalty, charged on inventory held above a
  node's threshold; it is not a backorder queue.  Unmet demand is lost and
  charged once via the stockout cost.
* Inventory never goes negative: demand beyond on-hand stock is recorded as
  the step's stockout level and the balance is floored at zero.
* Rewards are computed from the inventory held at the start of the step,
  before orders arrive and demand is served.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class ConfigurationError(ValueError):
    """Raised for invalid echelon parameters (inverted ranges, negative costs)."""


class EpisodeFinished(RuntimeError):
    """Raised when stepping a chain past its horizon."""


class ActionRangeError(ValueError):
    """Raised in strict mode when an action component is outside its legal range."""


@dataclass(frozen=True)
class EchelonParams:
    """Economic constants for one node of the chain.

    ``purchase_cost`` is either a fixed unit cost or ``None``, meaning the
    node pays whatever its upstream partner currently charges per unit.
    """

    sales_price_range: tuple[float, float] = (0.0, 6.0)
    order_range: tuple[float, float] = (0.0, 20.0)
    purchase_cost: float | None = None
    holding_cost: float = 0.2
    initial_inventory: float = 10.0
    capacity: float = 19.0
    stockout_cost: float = 140.0
    backlog_cost: float = 1.0
    backlog_threshold: float = 20.0
    horizon: int = 30

    def validate(self) -> None:
        lo, hi = self.sales_price_range
        if lo > hi:
            raise ConfigurationError(f"inverted sales price range ({lo}, {hi})")
        lo, hi = self.order_range
        if lo > hi:
            raise ConfigurationError(f"inverted order range ({lo}, {hi})")
        for name in ("holding_cost", "stockout_cost", "backlog_cost"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"negative {name}")
        if self.purchase_cost is not None and self.purchase_cost < 0:
            raise ConfigurationError("negative purchase_cost")
        if self.capacity < 0:
            raise ConfigurationError("negative capacity")
        if self.initial_inventory < 0:
            raise ConfigurationError("negative initial_inventory")
        if self.backlog_threshold < 0:
            raise ConfigurationError("negative backlog_threshold")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be at least 1")


def default_retailer_params() -> EchelonParams:
    """Retailer constants: pays the factory's current price, high stockout cost."""
    return EchelonParams(
        purchase_cost=None,
        holding_cost=0.2,
        initial_inventory=10.0,
        capacity=19.0,
        stockout_cost=140.0,
        backlog_cost=1.0,
        backlog_threshold=20.0,
        horizon=30,
    )


def default_factory_params() -> EchelonParams:
    """Factory constants: fixed raw-material cost, larger store, softer stockout cost."""
    return EchelonParams(
        purchase_cost=0.2,
        holding_cost=0.2,
        initial_inventory=10.0,
        capacity=59.0,
        stockout_cost=70.0,
        backlog_cost=1.0,
        backlog_threshold=60.0,
        horizon=30,
    )


def default_params() -> tuple[EchelonParams, EchelonParams]:
    """(retailer, factory) pair with the standard two-echelon constants."""
    return default_retailer_params(), default_factory_params()


@dataclass(frozen=True)
class EchelonState:
    """One node's view of itself.

    ``demand_history`` holds the last three realized demands, oldest first;
    ``stockout_level`` is the unmet demand of the step just completed, and
    ``backlog_level`` is the current inventory overage above the node's
    threshold (recomputed from ``inventory`` every step, never accumulated).
    """

    inventory: float
    backlog_level: float
    stockout_level: float
    demand_history: tuple[float, float, float]


@dataclass(frozen=True)
class ChainState:
    """Full simulator state: both nodes plus the shared upstream price.

    ``upstream_price`` is the factory's most recent sale price, i.e. the unit
    cost the retailer paid last step.  It is the only price signal both nodes
    can observe.
    """

    retailer: EchelonState
    factory: EchelonState
    upstream_price: float
    t: int


@dataclass(frozen=True)
class JointAction:
    """Order quantity and sale price for each node, in natural units."""

    retailer_order: float
    retailer_price: float
    factory_order: float
    factory_price: float


class RewardMode(Enum):
    """Selects how much each node is penalized for the partner's stockouts."""

    BASELINE = "baseline"
    PEARSO = "pearso"
    PEAFSO = "peafso"
    COLLA = "colla"


@dataclass(frozen=True)
class EchelonStepInfo:
    """What one node experienced during a step, for traces and analysis."""

    demand: float
    sold: float
    order: float
    price: float
    stockout: float
    backlog: float


@dataclass(frozen=True)
class StepInfo:
    retailer: EchelonStepInfo
    factory: EchelonStepInfo


@dataclass(frozen=True)
class StepOutcome:
    next_state: ChainState
    rewards: tuple[float, float]
    info: StepInfo


def _fresh_echelon(params: EchelonParams) -> EchelonState:
    return EchelonState(
        inventory=float(params.initial_inventory),
        backlog_level=0.0,
        stockout_level=0.0,
        demand_history=(0.0, 0.0, 0.0),
    )


def reset(
    params: tuple[EchelonParams, EchelonParams], initial_price: float = 0.0
) -> ChainState:
    """Build the start-of-episode state.

    Raises :class:`ConfigurationError` for invalid parameters or an initial
    price outside the factory's sale range.
    """
    retailer, factory = params
    retailer.validate()
    factory.validate()
    if retailer.horizon != factory.horizon:
        raise ConfigurationError("echelon horizons differ")
    if factory.purchase_cost is None:
        raise ConfigurationError("factory purchase cost must be a fixed unit cost")
    lo, hi = factory.sales_price_range
    if not (lo <= initial_price <= hi):
        raise ConfigurationError(
            f"initial price {initial_price} outside factory range ({lo}, {hi})"
        )
    return ChainState(
        retailer=_fresh_echelon(retailer),
        factory=_fresh_echelon(factory),
        upstream_price=float(initial_price),
        t=0,
    )


def _sanitize_order(raw: float, bounds: tuple[float, float], strict: bool, label: str) -> float:
    lo, hi = bounds
    if strict and not (lo <= raw <= hi):
        raise ActionRangeError(f"{label} {raw} outside [{lo}, {hi}]")
    clipped = min(max(raw, lo), hi)
    return float(int(round(clipped)))


def _sanitize_price(raw: float, bounds: tuple[float, float], strict: bool, label: str) -> float:
    lo, hi = bounds
    if strict and not (lo <= raw <= hi):
        raise ActionRangeError(f"{label} {raw} outside [{lo}, {hi}]")
    return float(min(max(raw, lo), hi))


def sanitize_action(
    action: JointAction,
    params: tuple[EchelonParams, EchelonParams],
    strict: bool = False,
) -> JointAction:
    """Clamp the action into its legal box and round orders to whole units.

    In strict mode an out-of-range component raises instead of clamping;
    by default learners are allowed to explore outside and get clipped.
    """
    retailer, factory = params
    return JointAction(
        retailer_order=_sanitize_order(action.retailer_order, retailer.order_range, strict, "retailer order"),
        retailer_price=_sanitize_price(action.retailer_price, retailer.sales_price_range, strict, "retailer price"),
        factory_order=_sanitize_order(action.factory_order, factory.order_range, strict, "factory order"),
        factory_price=_sanitize_price(action.factory_price, factory.sales_price_range, strict, "factory price"),
    )


def retailer_reward(
    state_pre: EchelonState,
    action: JointAction,
    demand: float,
    params: EchelonParams | None = None,
) -> float:
    """Retailer profit for one step, from its pre-transition inventory.

    Revenue is billed on the full demand; the shortfall is charged separately
    through the stockout cost.  The purchase cost per unit is the factory's
    price set this step.
    """
    p = params if params is not None else default_retailer_params()
    i1 = state_pre.inventory
    return (
        action.retailer_price * demand
        - p.holding_cost * i1
        - p.backlog_cost * max(i1 - p.backlog_threshold, 0.0)
        - p.stockout_cost * max(demand - i1, 0.0)
        - action.factory_price * action.retailer_order
    )


def factory_reward(
    state_pre: EchelonState,
    action: JointAction,
    retailer_order: float,
    params: EchelonParams | None = None,
) -> float:
    """Factory profit for one step; its demand is the retailer's order."""
    p = params if params is not None else default_factory_params()
    if p.purchase_cost is None:
        raise ConfigurationError("factory purchase cost must be a fixed unit cost")
    i2 = state_pre.inventory
    return (
        action.factory_price * retailer_order
        - p.holding_cost * i2
        - p.backlog_cost * max(i2 - p.backlog_threshold, 0.0)
        - p.stockout_cost * max(retailer_order - i2, 0.0)
        - p.purchase_cost * action.factory_order
    )


def apply_shaping(
    mode: RewardMode,
    base: tuple[float, float],
    demand: float,
    i1_pre: float,
    q1: float,
    i2_pre: float,
    retailer_stockout_cost: float = 140.0,
    factory_stockout_cost: float = 70.0,
) -> tuple[float, float]:
    """Cross-penalize each node for the partner's stockout, without moving profit.

    COLLA penalizes both directions; PEARSO charges only the factory for the
    retailer's stockout; PEAFSO charges only the retailer for the factory's.
    BASELINE leaves rewards untouched.
    """
    r1, r2 = base
    factory_short = max(q1 - i2_pre, 0.0)
    retailer_short = max(demand - i1_pre, 0.0)
    if mode is RewardMode.BASELINE:
        return r1, r2
    if mode is RewardMode.PEARSO:
        return r1, r2 - retailer_stockout_cost * retailer_short
    if mode is RewardMode.PEAFSO:
        return r1 - factory_stockout_cost * factory_short, r2
    if mode is RewardMode.COLLA:
        return (
            r1 - factory_stockout_cost * factory_short,
            r2 - retailer_stockout_cost * retailer_short,
        )
    raise ValueError(f"unknown reward mode {mode!r}")


def _advance(state: EchelonState, order: float, demand: float, params: EchelonParams) -> EchelonState:
    inv = state.inventory
    stockout = max(demand - inv, 0.0)
    next_inv = max(inv + order - demand, 0.0)
    h = state.demand_history
    return EchelonState(
        inventory=next_inv,
        backlog_level=max(next_inv - params.backlog_threshold, 0.0),
        stockout_level=stockout,
        demand_history=(h[1], h[2], float(demand)),
    )


def step(
    state: ChainState,
    action: JointAction,
    customer_demand: float,
    params: tuple[EchelonParams, EchelonParams] | None = None,
    reward_mode: RewardMode = RewardMode.BASELINE,
    strict: bool = False,
) -> StepOutcome:
    """Advance the chain one step under the given action and customer demand.

    The retailer's (sanitized) order becomes the factory's demand.  Orders
    arrive and demand is served within the step; rewards are assessed on the
    inventories held when the step began.
    """
    pair = params if params is not None else default_params()
    retailer_p, factory_p = pair
    if state.t >= retailer_p.horizon:
        raise EpisodeFinished(f"episode ended at t={retailer_p.horizon}")
    if not np.isfinite(customer_demand) or customer_demand < 0:
        raise ValueError(f"customer demand must be finite and >= 0, got {customer_demand}")

    act = sanitize_action(action, pair, strict=strict)
    d1 = float(customer_demand)
    d2 = act.retailer_order

    i1, i2 = state.retailer.inventory, state.factory.inventory
    r1 = retailer_reward(state.retailer, act, d1, retailer_p)
    r2 = factory_reward(state.factory, act, d2, factory_p)
    r1, r2 = apply_shaping(
        reward_mode,
        (r1, r2),
        d1,
        i1,
        act.retailer_order,
        i2,
        retailer_stockout_cost=retailer_p.stockout_cost,
        factory_stockout_cost=factory_p.stockout_cost,
    )

    next_state = ChainState(
        retailer=_advance(state.retailer, act.retailer_order, d1, retailer_p),
        factory=_advance(state.factory, act.factory_order, d2, factory_p),
        upstream_price=act.factory_price,
        t=state.t + 1,
    )
    info = StepInfo(
        retailer=EchelonStepInfo(
            demand=d1,
            sold=min(d1, i1),
            order=act.retailer_order,
            price=act.retailer_price,
            stockout=max(d1 - i1, 0.0),
            backlog=max(i1 - retailer_p.backlog_threshold, 0.0),
        ),
        factory=EchelonStepInfo(
            demand=d2,
            sold=min(d2, i2),
            order=act.factory_order,
            price=act.factory_price,
            stockout=max(d2 - i2, 0.0),
            backlog=max(i2 - factory_p.backlog_threshold, 0.0),
        ),
    )
    return StepOutcome(next_state=next_state, rewards=(r1, r2), info=info)


def observe_heterogeneous(state: ChainState, echelon: int) -> np.ndarray:
    """One node's private observation plus the shared upstream price.

    Element order is a frozen contract:
    (inventory, backlog, stockout, demand[t-2], demand[t-1], demand[t], price).
    """
    if echelon == 1:
        own = state.retailer
    elif echelon == 2:
        own = state.factory
    else:
        raise ValueError(f"echelon must be 1 or 2, got {echelon}")
    h = own.demand_history
    return np.array(
        [own.inventory, own.backlog_level, own.stockout_level, h[0], h[1], h[2], state.upstream_price],
        dtype=np.float64,
    )


def observe_homogeneous(state: ChainState) -> np.ndarray:
    """The joint observation a single shared controller sees.

    Element order is a frozen contract: inventories, backlogs, stockouts and
    the three demand lags interleaved retailer-first, then the shared price.
    """
    r, f = state.retailer, state.factory
    rh, fh = r.demand_history, f.demand_history
    return np.array(
        [
            r.inventory,
            f.inventory,
            r.backlog_level,
            f.backlog_level,
            r.stockout_level,
            f.stockout_level,
            rh[0],
            fh[0],
            rh[1],
            fh[1],
            rh[2],
            fh[2],
            state.upstream_price,
        ],
        dtype=np.float64,
    )


class SupplyChain:
    """Stateful wrapper with a reset/step protocol around the pure functions.

    Holds the parameter pair, reward mode and current state; demand is still
    supplied by the caller on every step.  Instances are single-threaded but
    independent of each other.
    """

    def __init__(
        self,
        params: tuple[EchelonParams, EchelonParams] | None = None,
        reward_mode: RewardMode = RewardMode.BASELINE,
        strict_actions: bool = False,
    ):
        self.params = params if params is not None else default_params()
        self.reward_mode = reward_mode
        self.strict_actions = strict_actions
        self.state: ChainState | None = None

    @property
    def horizon(self) -> int:
        return self.params[0].horizon

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.t >= self.horizon

    def reset(self, initial_price: float = 0.0) -> ChainState:
        self.state = reset(self.params, initial_price)
        return self.state

    def step(self, action: JointAction, customer_demand: float) -> StepOutcome:
        if self.state is None:
            raise RuntimeError("call reset() before step()")
        outcome = step(
            self.state,
            action,
            customer_demand,
            params=self.params,
            reward_mode=self.reward_mode,
            strict=self.strict_actions,
        )
        self.state = outcome.next_state
        return outcome
