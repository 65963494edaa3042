"""Training and evaluation orchestration for both agent architectures.

A *homogeneous* run trains one shared policy on the joint observation and
the summed reward; a *heterogeneous* run trains one policy per node, each
seeing only its own observation and reward, updated simultaneously.  Either
way the trainer owns every source of randomness through sub-streams of a
single 64-bit seed, so runs are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from symchain import metrics
from symchain.autodiff import AdamState, Mlp
from symchain.demand import DemandModel, demand_model, sample
from symchain.env import (
    EchelonParams,
    JointAction,
    RewardMode,
    SupplyChain,
    default_params,
    observe_heterogeneous,
    observe_homogeneous,
)
from symchain.metrics import EpisodeTrace, TraceStep
from symchain.policy import BoxSpace, PolicyNet
from symchain.ppo import RolloutBatch, compute_gae, ppo_update
from symchain.sac import SacAgent, sac_update


class TrainingDiverged(RuntimeError):
    """Raised when an update produces non-finite values; carries the partial curve."""

    def __init__(self, message: str, curve: list):
        super().__init__(message)
        self.curve = curve


@dataclass(frozen=True)
class ConvergenceRule:
    """Stop once the sliding-window mean moves by less than tol of its magnitude."""

    window: int = 20
    tol: float = 0.01


@dataclass(frozen=True)
class EnvSetup:
    """Everything needed to build identical environments for a run."""

    params: tuple[EchelonParams, EchelonParams] | None = None
    reward_mode: RewardMode = RewardMode.BASELINE
    demand: DemandModel | str = "low"
    initial_price: float = 0.0
    strict_actions: bool = False

    def chain_params(self) -> tuple[EchelonParams, EchelonParams]:
        return self.params if self.params is not None else default_params()

    def make_demand(self) -> DemandModel:
        return demand_model(self.demand) if isinstance(self.demand, str) else self.demand

    def make_env(self) -> SupplyChain:
        return SupplyChain(self.chain_params(), self.reward_mode, self.strict_actions)


@dataclass(frozen=True)
class AgentConfig:
    """Hyperparameters for one learner; arch-dependent defaults fill in lazily.

    ``reward_scale`` multiplies rewards inside the learners only (TD targets
    and value regression); logged and evaluated rewards stay in raw units.
    """

    algorithm: str
    architecture: str
    gamma: float = 0.99
    hidden: tuple[int, ...] = (256, 256)
    reward_scale: float = 1.0
    # on-policy
    clip: float = 0.3
    kl_target: float = 0.01
    gae_lambda: float = 0.95
    ppo_epochs: int = 10
    train_batch: int = 4000
    ppo_lr: float | None = None
    minibatch: int | None = None
    # off-policy
    tau: float = 0.005
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    entropy_lr: float = 3e-4
    replay_capacity: int = 100_000
    sac_batch: int = 256
    warmup: int = 1000
    episodes_per_iteration: int = 10

    def __post_init__(self):
        if self.algorithm not in ("sac", "ppo"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.architecture not in ("homo", "hetero"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must be in (0, 1)")
        if self.clip <= 0.0:
            raise ValueError("clip must be positive")
        if not (0.0 < self.tau < 1.0 or self.tau in (0.0, 1.0)):
            raise ValueError("tau must be in [0, 1]")

    @property
    def resolved_ppo_lr(self) -> float:
        if self.ppo_lr is not None:
            return self.ppo_lr
        return 1e-4 if self.architecture == "homo" else 5e-5

    @property
    def resolved_minibatch(self) -> int:
        if self.minibatch is not None:
            return self.minibatch
        return 512 if self.architecture == "homo" else 128


@dataclass(frozen=True)
class CurveRow:
    """One learning-curve record; the on-disk CSV mirrors these fields."""

    iteration: int
    policy_id: str
    mean_episode_reward: float
    std: float
    episodes: int
    env_steps: int


CURVE_COLUMNS = ["iteration", "policy_id", "mean_episode_reward", "std", "episodes", "env_steps"]


@dataclass
class TrainResult:
    curve: list[CurveRow]
    policies: dict[str, PolicyNet]
    iterations: int
    converged: bool
    stopped_at: int | None


# -- architectures -----------------------------------------------------------

def _safe_scale(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return np.where(arr == 0.0, 1.0, arr)


class _Homogeneous:
    """One shared controller: joint observation, 4-component action."""

    ids = ("homogeneous",)

    def observe(self, state):
        return [observe_homogeneous(state)]

    def spaces(self, params):
        r, f = params
        low = [r.order_range[0], f.order_range[0], r.sales_price_range[0], f.sales_price_range[0]]
        high = [r.order_range[1], f.order_range[1], r.sales_price_range[1], f.sales_price_range[1]]
        return [BoxSpace(low, high)]

    def obs_scales(self, params):
        r, f = params
        ro, fo = r.order_range[1], f.order_range[1]
        return [
            _safe_scale(
                [r.capacity, f.capacity, r.capacity, f.capacity, ro, fo,
                 ro, fo, ro, fo, ro, fo, f.sales_price_range[1]]
            )
        ]

    def assemble(self, actions) -> JointAction:
        a = actions[0]
        return JointAction(
            retailer_order=a[0], retailer_price=a[2], factory_order=a[1], factory_price=a[3]
        )

    def split_rewards(self, r1: float, r2: float):
        return [r1 + r2]


class _Heterogeneous:
    """One controller per node, each seeing only its own side plus the price."""

    ids = ("retailer", "factory")

    def observe(self, state):
        return [observe_heterogeneous(state, 1), observe_heterogeneous(state, 2)]

    def spaces(self, params):
        out = []
        for p in params:
            out.append(BoxSpace(
                [p.order_range[0], p.sales_price_range[0]],
                [p.order_range[1], p.sales_price_range[1]],
            ))
        return out

    def obs_scales(self, params):
        r, f = params
        price_hi = f.sales_price_range[1]
        out = []
        for p in params:
            o = p.order_range[1]
            out.append(_safe_scale([p.capacity, p.capacity, o, o, o, o, price_hi]))
        return out

    def assemble(self, actions) -> JointAction:
        a1, a2 = actions
        return JointAction(
            retailer_order=a1[0], retailer_price=a1[1], factory_order=a2[0], factory_price=a2[1]
        )

    def split_rewards(self, r1: float, r2: float):
        return [r1, r2]


def architecture(name: str):
    if name == "homo":
        return _Homogeneous()
    if name == "hetero":
        return _Heterogeneous()
    raise ValueError(f"unknown architecture {name!r}")


def _spawn_generators(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


# -- trainers -----------------------------------------------------------------

class _PpoTrainer:
    def __init__(self, env_setup: EnvSetup, cfg: AgentConfig, arch, rngs):
        params = env_setup.chain_params()
        spaces = arch.spaces(params)
        scales = arch.obs_scales(params)
        self.cfg = cfg
        self.arch = arch
        self.env = env_setup.make_env()
        self.initial_price = env_setup.initial_price
        self.action_rngs = rngs["action"]
        self.update_rngs = rngs["update"]
        self.policies = []
        self.value_nets = []
        self.policy_opts = []
        self.value_opts = []
        for i, pid in enumerate(arch.ids):
            init = rngs["init"][i]
            obs_dim = scales[i].size
            self.policies.append(PolicyNet(
                obs_dim, spaces[i], hidden=cfg.hidden, activation="tanh",
                std_mode="global", rng=init, obs_scale=scales[i],
            ))
            self.value_nets.append(Mlp([obs_dim, *cfg.hidden, 1], activation="tanh", rng=init))
            self.policy_opts.append(AdamState(lr=cfg.resolved_ppo_lr))
            self.value_opts.append(AdamState(lr=cfg.resolved_ppo_lr))
        self.env_steps = 0

    def named_policies(self):
        return dict(zip(self.arch.ids, self.policies))

    def iterate(self, demand: DemandModel, demand_rng: np.random.Generator):
        cfg = self.cfg
        n_pol = len(self.policies)
        batch_obs = [[] for _ in range(n_pol)]
        batch_u = [[] for _ in range(n_pol)]
        batch_logp = [[] for _ in range(n_pol)]
        batch_val = [[] for _ in range(n_pol)]
        batch_adv = [[] for _ in range(n_pol)]
        batch_ret = [[] for _ in range(n_pol)]
        episode_rewards = [[] for _ in range(n_pol)]

        collected = 0
        while collected < cfg.train_batch:
            state = self.env.reset(self.initial_price)
            ep_obs = [[] for _ in range(n_pol)]
            ep_u = [[] for _ in range(n_pol)]
            ep_logp = [[] for _ in range(n_pol)]
            ep_rew = [[] for _ in range(n_pol)]
            while not self.env.done:
                obs_list = self.arch.observe(state)
                actions = []
                for i, policy in enumerate(self.policies):
                    a_env, logp, u = policy.act(obs_list[i], rng=self.action_rngs[i])
                    ep_obs[i].append(policy.scale_obs(obs_list[i]))
                    ep_u[i].append(u)
                    # updates work in tanh space; add the affine constant back
                    ep_logp[i].append(logp + policy.space.affine_logdet())
                    actions.append(a_env)
                outcome = self.env.step(self.arch.assemble(actions), sample(demand, demand_rng))
                state = outcome.next_state
                for i, r in enumerate(self.arch.split_rewards(*outcome.rewards)):
                    ep_rew[i].append(r)
            collected += self.env.horizon
            self.env_steps += self.env.horizon
            for i in range(n_pol):
                obs_mat = np.asarray(ep_obs[i])
                values = self.value_nets[i].forward(obs_mat)[:, 0]
                raw = np.asarray(ep_rew[i])
                adv, ret = compute_gae(raw * cfg.reward_scale, values, cfg.gamma, cfg.gae_lambda)
                batch_obs[i].append(obs_mat)
                batch_u[i].append(np.asarray(ep_u[i]))
                batch_logp[i].append(np.asarray(ep_logp[i]))
                batch_val[i].append(values)
                batch_adv[i].append(adv)
                batch_ret[i].append(ret)
                episode_rewards[i].append(float(raw.sum()))

        rows = []
        for i, pid in enumerate(self.arch.ids):
            batch = RolloutBatch(
                obs=np.concatenate(batch_obs[i]),
                u=np.concatenate(batch_u[i]),
                logp=np.concatenate(batch_logp[i]),
                values=np.concatenate(batch_val[i]),
                advantages=np.concatenate(batch_adv[i]),
                returns=np.concatenate(batch_ret[i]),
            )
            ppo_update(
                batch,
                self.policies[i],
                self.value_nets[i],
                self.policy_opts[i],
                self.value_opts[i],
                rng=self.update_rngs[i],
                clip=cfg.clip,
                vf_loss_coeff=1.0,
                epochs=cfg.ppo_epochs,
                minibatch=cfg.resolved_minibatch,
                kl_target=cfg.kl_target,
            )
            rewards = np.asarray(episode_rewards[i])
            rows.append((pid, float(rewards.mean()), float(rewards.std()), rewards.size, self.env_steps))
        return rows


class _SacTrainer:
    def __init__(self, env_setup: EnvSetup, cfg: AgentConfig, arch, rngs):
        params = env_setup.chain_params()
        spaces = arch.spaces(params)
        scales = arch.obs_scales(params)
        self.cfg = cfg
        self.arch = arch
        self.env = env_setup.make_env()
        self.initial_price = env_setup.initial_price
        self.action_rngs = rngs["action"]
        self.update_rngs = rngs["update"]
        self.agents = [
            SacAgent(
                obs_dim=scales[i].size,
                space=spaces[i],
                obs_scale=scales[i],
                hidden=cfg.hidden,
                actor_lr=cfg.actor_lr,
                critic_lr=cfg.critic_lr,
                entropy_lr=cfg.entropy_lr,
                replay_capacity=cfg.replay_capacity,
                rng=rngs["init"][i],
            )
            for i in range(len(arch.ids))
        ]
        self.env_steps = 0

    def named_policies(self):
        return {pid: agent.actor for pid, agent in zip(self.arch.ids, self.agents)}

    def iterate(self, demand: DemandModel, demand_rng: np.random.Generator):
        cfg = self.cfg
        n_pol = len(self.agents)
        episode_rewards = [[] for _ in range(n_pol)]
        for _ in range(cfg.episodes_per_iteration):
            state = self.env.reset(self.initial_price)
            totals = np.zeros(n_pol)
            while not self.env.done:
                obs_list = self.arch.observe(state)
                actions = []
                tanh_actions = []
                scaled_obs = []
                for i, agent in enumerate(self.agents):
                    a_env, _, u = agent.actor.act(obs_list[i], rng=self.action_rngs[i])
                    actions.append(a_env)
                    tanh_actions.append(np.tanh(u))
                    scaled_obs.append(agent.actor.scale_obs(obs_list[i]))
                outcome = self.env.step(self.arch.assemble(actions), sample(demand, demand_rng))
                state = outcome.next_state
                done = self.env.done
                next_obs_list = self.arch.observe(state)
                rewards = self.arch.split_rewards(*outcome.rewards)
                for i, agent in enumerate(self.agents):
                    agent.buffer.add(
                        scaled_obs[i],
                        tanh_actions[i],
                        rewards[i],
                        agent.actor.scale_obs(next_obs_list[i]),
                        done,
                    )
                    totals[i] += rewards[i]
                    sac_update(
                        agent,
                        self.update_rngs[i],
                        batch_size=cfg.sac_batch,
                        gamma=cfg.gamma,
                        tau=cfg.tau,
                        warmup=cfg.warmup,
                        reward_scale=cfg.reward_scale,
                    )
                self.env_steps += 1
            for i in range(n_pol):
                episode_rewards[i].append(float(totals[i]))
        rows = []
        for i, pid in enumerate(self.arch.ids):
            rewards = np.asarray(episode_rewards[i])
            rows.append((pid, float(rewards.mean()), float(rewards.std()), rewards.size, self.env_steps))
        return rows


def train(
    env_setup: EnvSetup,
    agent_config: AgentConfig,
    seed: int,
    stopping: ConvergenceRule | None = None,
    iteration_cap: int = 500,
) -> TrainResult:
    """Run one seeded training job until convergence or the iteration cap.

    The learning curve carries one row per iteration per policy stream with
    raw (unscaled) episode rewards.  Non-finite updates abort the run with
    :class:`TrainingDiverged`, which carries the partial curve.
    """
    if iteration_cap < 1:
        raise ValueError("iteration_cap must be at least 1")
    arch = architecture(agent_config.architecture)
    n_pol = len(arch.ids)
    gens = _spawn_generators(seed, 1 + 3 * n_pol)
    rngs = {
        "init": gens[1 : 1 + n_pol],
        "action": gens[1 + n_pol : 1 + 2 * n_pol],
        "update": gens[1 + 2 * n_pol :],
    }
    demand_rng = gens[0]
    demand = env_setup.make_demand()
    if agent_config.algorithm == "ppo":
        trainer = _PpoTrainer(env_setup, agent_config, arch, rngs)
    else:
        trainer = _SacTrainer(env_setup, agent_config, arch, rngs)

    curve: list[CurveRow] = []
    totals: list[float] = []
    converged = False
    stopped_at: int | None = None
    iterations = 0
    for it in range(iteration_cap):
        try:
            rows = trainer.iterate(demand, demand_rng)
        except FloatingPointError as exc:
            raise TrainingDiverged(str(exc), curve) from exc
        iterations = it + 1
        for pid, mean, std, n_eps, steps in rows:
            curve.append(CurveRow(it, pid, mean, std, n_eps, steps))
        totals.append(sum(row[1] for row in rows))
        if stopping is not None:
            hit, at = metrics.convergence_check(totals, stopping.window, stopping.tol)
            if hit and at == len(totals) - 1:
                converged = True
                stopped_at = it
                break
    return TrainResult(
        curve=curve,
        policies=trainer.named_policies(),
        iterations=iterations,
        converged=converged,
        stopped_at=stopped_at,
    )


# -- evaluation ----------------------------------------------------------------

class PolicyActor:
    """Adapter giving trained policies the plain act(obs, rng, deterministic) shape."""

    def __init__(self, policy: PolicyNet):
        self.policy = policy

    def act(self, obs, rng, deterministic):
        action, _, _ = self.policy.act(obs, rng=None if deterministic else rng, deterministic=deterministic)
        return action


class RandomActor:
    """Uniform draws over the action box; the comparison floor for learners."""

    def __init__(self, space: BoxSpace):
        self.space = space

    def act(self, obs, rng, deterministic):
        return rng.uniform(self.space.low, self.space.high)


@dataclass
class EvalResult:
    policy_ids: tuple[str, ...]
    episode_rewards: dict[str, np.ndarray]
    traces: list[EpisodeTrace]

    def mean(self, policy_id: str) -> float:
        return float(self.episode_rewards[policy_id].mean())

    @property
    def mean_total(self) -> float:
        return float(sum(arr.mean() for arr in self.episode_rewards.values()))


def evaluate(
    env_setup: EnvSetup,
    architecture_name: str,
    actors: list,
    seed,
    episodes: int = 100,
    deterministic: bool = True,
    collect_traces: bool = True,
) -> EvalResult:
    """Roll fresh episodes under the given actors and record per-step traces.

    ``seed`` may be an int or a ``numpy.random.SeedSequence``; demand and any
    stochastic acting draw from sub-streams of it, so evaluations are
    reproducible and independent of training randomness.
    """
    arch = architecture(architecture_name)
    if len(actors) != len(arch.ids):
        raise ValueError(f"expected {len(arch.ids)} actors for {architecture_name}")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    demand_ss, action_ss = ss.spawn(2)
    demand_rng = np.random.Generator(np.random.PCG64(demand_ss))
    action_rng = np.random.Generator(np.random.PCG64(action_ss))
    demand = env_setup.make_demand()
    env = env_setup.make_env()

    rewards_per_policy = [[] for _ in arch.ids]
    traces: list[EpisodeTrace] = []
    for _ in range(episodes):
        state = env.reset(env_setup.initial_price)
        totals = np.zeros(len(arch.ids))
        steps: list[TraceStep] = []
        while not env.done:
            obs_list = arch.observe(state)
            actions = [actor.act(obs_list[i], action_rng, deterministic) for i, actor in enumerate(actors)]
            pre = state
            outcome = env.step(arch.assemble(actions), sample(demand, demand_rng))
            state = outcome.next_state
            for i, r in enumerate(arch.split_rewards(*outcome.rewards)):
                totals[i] += r
            if collect_traces:
                info = outcome.info
                steps.append(TraceStep(
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
        for i in range(len(arch.ids)):
            rewards_per_policy[i].append(totals[i])
        if collect_traces:
            traces.append(EpisodeTrace(tuple(steps)))
    return EvalResult(
        policy_ids=arch.ids,
        episode_rewards={pid: np.asarray(vals) for pid, vals in zip(arch.ids, rewards_per_policy)},
        traces=traces,
    )
