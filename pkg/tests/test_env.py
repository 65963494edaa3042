"""Simulator tests: transitions, rewards, shaping, observations.

The expected values come from independent literal transcriptions of the
balance and profit equations (the ``oracle_*`` helpers below), evaluated by
hand for the spot cases and exhaustively on small grids.
"""

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symchain.env import (
    ActionRangeError,
    ChainState,
    ConfigurationError,
    EchelonParams,
    EchelonState,
    EpisodeFinished,
    JointAction,
    RewardMode,
    SupplyChain,
    apply_shaping,
    default_factory_params,
    default_params,
    default_retailer_params,
    factory_reward,
    observe_heterogeneous,
    observe_homogeneous,
    reset,
    retailer_reward,
    step,
)


# -- independent oracle: literal transcription of the balance/profit rules ----

def oracle_next_inventory(i, q, d):
    return max(i + q - d, 0.0)


def oracle_retailer_reward(sp1, d, i1, sp2, q1):
    return sp1 * d - 0.2 * i1 - max(i1 - 20, 0.0) - 140 * max(d - i1, 0.0) - sp2 * q1


def oracle_factory_reward(sp2, q1, i2, q2):
    return sp2 * q1 - 0.2 * i2 - max(i2 - 60, 0.0) - 70 * max(q1 - i2, 0.0) - 0.2 * q2


def oracle_colla(r1, r2, d, i1, q1, i2):
    return r1 - 70 * max(q1 - i2, 0.0), r2 - 140 * max(d - i1, 0.0)


def make_state(i1=10.0, i2=10.0, price=0.0, t=0, h1=(0.0, 0.0, 0.0), h2=(0.0, 0.0, 0.0)):
    retailer = EchelonState(i1, max(i1 - 20.0, 0.0), 0.0, h1)
    factory = EchelonState(i2, max(i2 - 60.0, 0.0), 0.0, h2)
    return ChainState(retailer, factory, price, t)


class TestReset:
    def test_default_start(self):
        state = reset(default_params(), 0.0)
        assert state.retailer.inventory == 10.0
        assert state.factory.inventory == 10.0
        assert state.retailer.backlog_level == 0.0
        assert state.factory.stockout_level == 0.0
        assert state.retailer.demand_history == (0.0, 0.0, 0.0)
        assert state.t == 0

    def test_reset_is_deterministic(self):
        assert reset(default_params(), 1.5) == reset(default_params(), 1.5)

    def test_negative_capacity_rejected(self):
        bad = replace(default_retailer_params(), capacity=-1.0)
        with pytest.raises(ConfigurationError):
            reset((bad, default_factory_params()))

    def test_inverted_range_rejected(self):
        bad = replace(default_retailer_params(), order_range=(20.0, 0.0))
        with pytest.raises(ConfigurationError):
            reset((bad, default_factory_params()))

    def test_negative_cost_rejected(self):
        bad = replace(default_factory_params(), stockout_cost=-5.0)
        with pytest.raises(ConfigurationError):
            reset((default_retailer_params(), bad))

    def test_initial_price_outside_factory_range(self):
        with pytest.raises(ConfigurationError):
            reset(default_params(), 7.0)

    def test_factory_needs_fixed_purchase_cost(self):
        bad = replace(default_factory_params(), purchase_cost=None)
        with pytest.raises(ConfigurationError):
            reset((default_retailer_params(), bad))


class TestStep:
    def test_inventory_balance(self):
        out = step(make_state(i1=10.0), JointAction(5, 3.0, 0, 3.0), 7.0)
        assert out.next_state.retailer.inventory == 8.0

    def test_order_equal_to_demand_holds_inventory(self):
        out = step(make_state(i1=10.0), JointAction(4, 3.0, 0, 3.0), 4.0)
        assert out.next_state.retailer.inventory == 10.0

    def test_flooring_records_stockout(self):
        out = step(make_state(i1=3.0), JointAction(0, 3.0, 0, 3.0), 5.0)
        assert out.next_state.retailer.inventory == 0.0
        assert out.next_state.retailer.stockout_level == 2.0
        assert out.info.retailer.stockout == 2.0
        assert out.info.retailer.sold == 3.0

    def test_factory_demand_is_retailer_order(self):
        out = step(make_state(i2=10.0), JointAction(6, 3.0, 2, 3.0), 1.0)
        assert out.info.factory.demand == 6.0
        assert out.next_state.factory.inventory == 10.0 + 2 - 6

    def test_upstream_price_updates_to_factory_price(self):
        out = step(make_state(price=1.0), JointAction(0, 3.0, 0, 4.5), 0.0)
        assert out.next_state.upstream_price == 4.5

    def test_demand_history_shifts(self):
        state = make_state()
        for d in (3.0, 1.0, 4.0):
            state = step(state, JointAction(d, 3.0, 0, 3.0), d).next_state
        assert state.retailer.demand_history == (3.0, 1.0, 4.0)
        # the factory's demand history records the retailer's orders
        assert state.factory.demand_history == (3.0, 1.0, 4.0)

    def test_step_past_horizon_raises(self):
        state = make_state(t=30)
        with pytest.raises(EpisodeFinished):
            step(state, JointAction(0, 0.0, 0, 0.0), 0.0)

    def test_negative_demand_rejected(self):
        with pytest.raises(ValueError):
            step(make_state(), JointAction(0, 0.0, 0, 0.0), -1.0)

    def test_orders_are_quantized_to_whole_units(self):
        out = step(make_state(), JointAction(4.6, 3.0, 2.3, 3.0), 0.0)
        assert out.info.retailer.order == 5.0
        assert out.info.factory.order == 2.0

    def test_out_of_range_clamped_by_default(self):
        out = step(make_state(), JointAction(25.0, 8.0, -3.0, -1.0), 0.0)
        assert out.info.retailer.order == 20.0
        assert out.info.retailer.price == 6.0
        assert out.info.factory.order == 0.0
        assert out.info.factory.price == 0.0

    def test_strict_mode_raises_on_out_of_range(self):
        with pytest.raises(ActionRangeError):
            step(make_state(), JointAction(25.0, 3.0, 0.0, 3.0), 0.0, strict=True)

    def test_backlog_level_recomputed_from_new_inventory(self):
        out = step(make_state(i1=18.0), JointAction(20, 3.0, 0, 3.0), 0.0)
        assert out.next_state.retailer.inventory == 38.0
        assert out.next_state.retailer.backlog_level == 18.0
        # the step's own penalty used the pre-step level, which was below threshold
        assert out.info.retailer.backlog == 0.0


class TestRewards:
    def test_retailer_reward_profitable_case(self):
        state = EchelonState(15.0, 0.0, 0.0, (0, 0, 0))
        action = JointAction(10, 5.0, 0, 3.0)
        assert retailer_reward(state, action, 10.0) == pytest.approx(17.0, abs=1e-9)

    def test_retailer_reward_stockout_case(self):
        state = EchelonState(3.0, 0.0, 0.0, (0, 0, 0))
        action = JointAction(5, 6.0, 0, 2.0)
        assert retailer_reward(state, action, 5.0) == pytest.approx(-260.6, abs=1e-9)

    def test_retailer_reward_zero_case(self):
        state = EchelonState(0.0, 0.0, 0.0, (0, 0, 0))
        assert retailer_reward(state, JointAction(0, 0.0, 0, 0.0), 0.0) == 0.0

    def test_factory_reward_profitable_case(self):
        state = EchelonState(30.0, 0.0, 0.0, (0, 0, 0))
        action = JointAction(10, 5.0, 10, 3.0)
        assert factory_reward(state, action, 10.0) == pytest.approx(22.0, abs=1e-9)

    def test_factory_reward_stockout_case(self):
        state = EchelonState(5.0, 0.0, 0.0, (0, 0, 0))
        action = JointAction(12, 5.0, 0, 4.0)
        assert factory_reward(state, action, 12.0) == pytest.approx(-443.0, abs=1e-9)

    def test_factory_reward_zero_case(self):
        state = EchelonState(0.0, 0.0, 0.0, (0, 0, 0))
        assert factory_reward(state, JointAction(0, 0.0, 0, 0.0), 0.0) == 0.0

    def test_rewards_use_pre_transition_inventory(self):
        state = make_state(i1=15.0)
        out = step(state, JointAction(10, 5.0, 0, 3.0), 10.0)
        assert out.rewards[0] == pytest.approx(17.0, abs=1e-9)


class TestShaping:
    def test_baseline_is_identity(self):
        assert apply_shaping(RewardMode.BASELINE, (3.5, -2.0), 9, 1, 8, 2) == (3.5, -2.0)

    def test_colla_cross_penalties(self):
        shaped = apply_shaping(RewardMode.COLLA, (0.0, 0.0), 5.0, 3.0, 12.0, 5.0)
        assert shaped == pytest.approx((-490.0, -280.0), abs=1e-9)

    def test_no_stockout_means_no_change(self):
        base = (7.0, 11.0)
        for mode in RewardMode:
            assert apply_shaping(mode, base, 2.0, 5.0, 3.0, 9.0) == base

    def test_pearso_penalizes_factory_only(self):
        shaped = apply_shaping(RewardMode.PEARSO, (1.0, 1.0), 5.0, 3.0, 12.0, 5.0)
        assert shaped == (1.0, 1.0 - 140.0 * 2.0)

    def test_peafso_penalizes_retailer_only(self):
        shaped = apply_shaping(RewardMode.PEAFSO, (1.0, 1.0), 5.0, 3.0, 12.0, 5.0)
        assert shaped == (1.0 - 70.0 * 7.0, 1.0)


class TestObservations:
    def test_heterogeneous_length_and_reset_values(self):
        state = reset(default_params(), 2.5)
        obs = observe_heterogeneous(state, 1)
        assert obs.shape == (7,)
        assert obs.tolist() == [10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.5]

    def test_homogeneous_length_and_reset_values(self):
        state = reset(default_params(), 2.5)
        obs = observe_homogeneous(state)
        assert obs.shape == (13,)
        assert obs.tolist() == [10, 10, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 2.5]

    def test_echelons_share_only_the_price(self):
        state = make_state(i1=4.0, i2=9.0, price=1.5, h1=(1, 2, 3), h2=(4, 5, 6))
        o1 = observe_heterogeneous(state, 1)
        o2 = observe_heterogeneous(state, 2)
        assert o1[6] == o2[6] == 1.5
        assert not np.array_equal(o1[:6], o2[:6])

    def test_invalid_echelon_index(self):
        state = reset(default_params())
        with pytest.raises(ValueError):
            observe_heterogeneous(state, 3)

    def test_homogeneous_is_fixed_permutation_of_heterogeneous(self):
        rng = np.random.default_rng(7)
        # interleave own fields retailer-first, then one shared price
        perm = [(1, 0), (2, 0), (1, 1), (2, 1), (1, 2), (2, 2),
                (1, 3), (2, 3), (1, 4), (2, 4), (1, 5), (2, 5), (1, 6)]
        for _ in range(200):
            state = make_state(
                i1=rng.uniform(0, 30), i2=rng.uniform(0, 70), price=rng.uniform(0, 6),
                h1=tuple(rng.uniform(0, 20, 3)), h2=tuple(rng.uniform(0, 20, 3)),
            )
            o1 = observe_heterogeneous(state, 1)
            o2 = observe_heterogeneous(state, 2)
            homo = observe_homogeneous(state)
            rebuilt = [o1[j] if e == 1 else o2[j] for e, j in perm]
            assert homo.tolist() == rebuilt


class TestInvariantsAndProperties:
    @given(
        i=st.integers(0, 200), q=st.integers(0, 20), d=st.integers(0, 15),
    )
    @settings(max_examples=200)
    def test_material_balance_without_flooring(self, i, q, d):
        if i + q - d < 0:
            return
        out = step(make_state(i1=float(i)), JointAction(q, 3.0, 0, 3.0), float(d))
        assert out.next_state.retailer.inventory - i == q - d

    @given(
        i_low=st.floats(0, 100), extra=st.floats(0.001, 50), d=st.floats(0, 15),
    )
    @settings(max_examples=200)
    def test_retailer_reward_non_increasing_in_inventory_beyond_demand(self, i_low, extra, d):
        i1 = max(i_low, d)
        action = JointAction(5, 4.0, 0, 2.0)
        lo = retailer_reward(EchelonState(i1, 0, 0, (0, 0, 0)), action, d)
        hi = retailer_reward(EchelonState(i1 + extra, 0, 0, (0, 0, 0)), action, d)
        assert hi <= lo + 1e-12

    def test_reward_decomposition_against_term_accumulator(self):
        # independent per-term accumulation over a random integer episode
        rng = np.random.default_rng(11)
        env = SupplyChain()
        state = env.reset(0.0)
        total_env = 0.0
        terms = dict(revenue=0.0, holding=0.0, backlog=0.0, stockout=0.0, purchase=0.0)
        for _ in range(30):
            q1, q2 = int(rng.integers(0, 21)), int(rng.integers(0, 21))
            sp1, sp2 = float(rng.integers(0, 7)), float(rng.integers(0, 7))
            d = float(rng.integers(0, 16))
            i1, i2 = state.retailer.inventory, state.factory.inventory
            terms["revenue"] += sp1 * d + sp2 * q1
            terms["holding"] += 0.2 * i1 + 0.2 * i2
            terms["backlog"] += max(i1 - 20, 0.0) + max(i2 - 60, 0.0)
            terms["stockout"] += 140 * max(d - i1, 0.0) + 70 * max(q1 - i2, 0.0)
            terms["purchase"] += sp2 * q1 + 0.2 * q2
            out = env.step(JointAction(q1, sp1, q2, sp2), d)
            state = out.next_state
            total_env += out.rewards[0] + out.rewards[1]
        expected = (
            terms["revenue"] - terms["holding"] - terms["backlog"]
            - terms["stockout"] - terms["purchase"]
        )
        assert total_env == pytest.approx(expected, abs=1e-9)

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=60)
    def test_shaping_neutrality_without_stockouts(self, seed):
        rng = np.random.default_rng(seed)
        streams = {}
        for mode in RewardMode:
            env = SupplyChain(reward_mode=mode)
            state = env.reset(0.0)
            gen = np.random.default_rng(seed)  # identical action/demand draws per mode
            rewards = []
            for _ in range(12):
                i1, i2 = state.retailer.inventory, state.factory.inventory
                d = float(gen.integers(0, max(int(i1), 1)))         # <= pre inventory
                q1 = float(gen.integers(0, max(min(int(i2), 20), 1)))  # <= factory stock
                out = env.step(JointAction(q1, 4.0, float(gen.integers(0, 8)), 3.0), d)
                assert out.info.retailer.stockout == 0.0
                assert out.info.factory.stockout == 0.0
                rewards.append(out.rewards)
                state = out.next_state
            streams[mode] = rewards
        baseline = streams[RewardMode.BASELINE]
        for mode in RewardMode:
            assert streams[mode] == baseline

    def test_small_grid_oracle_agreement(self):
        # spot the full acceptance grid's corners plus a random slice here
        rng = np.random.default_rng(5)
        for _ in range(2000):
            i1 = int(rng.integers(0, 26)); i2 = int(rng.integers(0, 26))
            q1 = int(rng.integers(0, 21)); q2 = int(rng.integers(0, 21))
            d = int(rng.integers(0, 16))
            sp1 = int(rng.integers(0, 7)); sp2 = int(rng.integers(0, 7))
            out = step(make_state(i1=float(i1), i2=float(i2)), JointAction(q1, sp1, q2, sp2), float(d))
            assert out.next_state.retailer.inventory == oracle_next_inventory(i1, q1, d)
            assert out.next_state.factory.inventory == oracle_next_inventory(i2, q2, q1)
            assert out.rewards[0] == oracle_retailer_reward(sp1, d, i1, sp2, q1)
            assert out.rewards[1] == oracle_factory_reward(sp2, q1, i2, q2)


class TestSupplyChainWrapper:
    def test_episode_protocol(self):
        env = SupplyChain()
        env.reset(0.0)
        assert not env.done
        for _ in range(30):
            env.step(JointAction(2, 3.0, 2, 3.0), 2.0)
        assert env.done
        with pytest.raises(EpisodeFinished):
            env.step(JointAction(2, 3.0, 2, 3.0), 2.0)

    def test_step_before_reset(self):
        env = SupplyChain()
        with pytest.raises(RuntimeError):
            env.step(JointAction(0, 0, 0, 0), 0.0)
