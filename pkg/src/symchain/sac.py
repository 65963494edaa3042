"""Off-policy learner: twin soft critics, auto-tuned entropy temperature,
Polyak-averaged targets, and a prioritized replay ring buffer.

Critics condition on observations plus tanh-space actions in (-1, 1); the
affine map onto physical order/price ranges is applied outside the learner.
"""

from __future__ import annotations

import logging

import numpy as np

from symchain import autodiff as ad
from symchain.autodiff import AdamState, GradTape, Mlp, adam_step
from symchain.policy import BoxSpace, PolicyNet

log = logging.getLogger(__name__)


class ReplayBuffer:
    """Fixed-capacity ring of transitions with proportional prioritization.

    Sampling probability follows (priority + eps)^alpha; importance weights
    (n * p)^-beta are normalized by their batch maximum.  New transitions
    enter at the current maximum priority so they are seen at least once.
    """

    def __init__(
        self,
        capacity: int,
        obs_dim: int,
        act_dim: int,
        alpha: float = 0.6,
        beta: float = 0.4,
        eps: float = 1e-6,
    ):
        self.capacity = int(capacity)
        self.alpha = alpha
        self.beta = beta
        self.eps = eps
        self.obs = np.zeros((capacity, obs_dim))
        self.act = np.zeros((capacity, act_dim))
        self.rew = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.priority = np.zeros(capacity)
        self.size = 0
        self.pos = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, act, rew, next_obs, done) -> None:
        i = self.pos
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.priority[i] = self.priority[: self.size].max() if self.size else 1.0
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        scaled = (self.priority[: self.size] + self.eps) ** self.alpha
        probs = scaled / scaled.sum()
        idx = rng.choice(self.size, size=batch, p=probs)
        weights = (self.size * probs[idx]) ** (-self.beta)
        weights = weights / weights.max()
        return idx, {
            "obs": self.obs[idx],
            "act": self.act[idx],
            "rew": self.rew[idx],
            "next_obs": self.next_obs[idx],
            "done": self.done[idx],
            "weights": weights,
        }

    def update_priorities(self, idx: np.ndarray, td_abs: np.ndarray) -> None:
        self.priority[idx] = np.abs(td_abs)


def polyak_update(target: Mlp, online: Mlp, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, elementwise."""
    for t, o in zip(target.parameters(), online.parameters()):
        t[...] = tau * o + (1.0 - tau) * t


def bellman_targets(
    rewards: np.ndarray,
    dones: np.ndarray,
    next_q_min: np.ndarray,
    next_logp: np.ndarray,
    alpha: float,
    gamma: float,
) -> np.ndarray:
    """Soft TD targets: r + gamma * (1 - done) * (min_Q' - alpha * log pi')."""
    return rewards + gamma * (1.0 - dones) * (next_q_min - alpha * next_logp)


class SacAgent:
    """One actor with twin critics, their targets, and a temperature."""

    def __init__(
        self,
        obs_dim: int,
        space: BoxSpace,
        obs_scale: np.ndarray,
        hidden: tuple[int, ...] = (256, 256),
        actor_lr: float = 3e-4,
        critic_lr: float = 3e-4,
        entropy_lr: float = 3e-4,
        replay_capacity: int = 100_000,
        rng: np.random.Generator | None = None,
    ):
        if rng is None:
            rng = np.random.default_rng(0)
        self.actor = PolicyNet(
            obs_dim, space, hidden=hidden, activation="relu", std_mode="state",
            rng=rng, obs_scale=obs_scale,
        )
        q_widths = [obs_dim + space.dim, *hidden, 1]
        self.q1 = Mlp(q_widths, activation="relu", rng=rng)
        self.q2 = Mlp(q_widths, activation="relu", rng=rng)
        self.q1_target = Mlp(q_widths, activation="relu", rng=rng)
        self.q2_target = Mlp(q_widths, activation="relu", rng=rng)
        self.q1_target.copy_from(self.q1)
        self.q2_target.copy_from(self.q2)
        self.log_alpha = np.zeros(())
        self.target_entropy = -float(space.dim)
        self.actor_opt = AdamState(lr=actor_lr)
        self.q1_opt = AdamState(lr=critic_lr)
        self.q2_opt = AdamState(lr=critic_lr)
        self.alpha_opt = AdamState(lr=entropy_lr)
        self.buffer = ReplayBuffer(replay_capacity, obs_dim, space.dim)
        self._warned_warmup = False

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))


def sac_update(
    agent: SacAgent,
    rng: np.random.Generator,
    batch_size: int = 256,
    gamma: float = 0.99,
    tau: float = 0.005,
    warmup: int = 1000,
    reward_scale: float = 1.0,
) -> dict | None:
    """One gradient step on critics, actor and temperature, plus target blend.

    A no-op (with a one-time warning) until the buffer holds ``warmup``
    transitions.  Rewards are multiplied by ``reward_scale`` inside the
    learner only; everything logged elsewhere stays in raw units.
    """
    buf = agent.buffer
    if len(buf) < warmup:
        if not agent._warned_warmup:
            log.warning("replay buffer below warm-up size (%d < %d); skipping updates", len(buf), warmup)
            agent._warned_warmup = True
        return None

    idx, b = buf.sample(batch_size, rng)
    rewards = b["rew"] * reward_scale

    # Targets from the frozen critics and a fresh policy sample (no gradients).
    mu2, log_std2 = agent.actor.dist(b["next_obs"])
    u2 = mu2 + np.exp(log_std2) * rng.standard_normal(mu2.shape)
    a2 = np.tanh(u2)
    logp2 = agent.actor.tanh_logp(u2, mu2, log_std2)
    q_in2 = np.concatenate([b["next_obs"], a2], axis=1)
    next_q = np.minimum(agent.q1_target.forward(q_in2)[:, 0], agent.q2_target.forward(q_in2)[:, 0])
    y = bellman_targets(rewards, b["done"], next_q, logp2, agent.alpha, gamma)

    q_in = np.concatenate([b["obs"], b["act"]], axis=1)
    weights = b["weights"][:, None]
    td_abs = np.zeros(batch_size)
    critic_losses = []
    for q_net, opt in ((agent.q1, agent.q1_opt), (agent.q2, agent.q2_opt)):
        tape = GradTape()
        bound = q_net.bind(tape)
        err = ad.sub(bound(tape.const(q_in)), tape.const(y[:, None]))
        loss = ad.mean_all(ad.mul(tape.const(weights), ad.square(err)))
        if not np.isfinite(loss.value):
            raise FloatingPointError(f"non-finite critic loss {loss.value}")
        tape.backward(loss)
        adam_step(opt, q_net.parameters(), bound.grads())
        td_abs += 0.5 * np.abs(err.value[:, 0])
        critic_losses.append(float(loss.value))
    buf.update_priorities(idx, td_abs)

    # Actor: maximize min-Q of a reparameterized sample minus entropy cost.
    xi = rng.standard_normal((batch_size, agent.actor.space.dim))
    tape = GradTape()
    bound_actor = agent.actor.bind(tape)
    a_node, logp_node = bound_actor.rsample_logp(b["obs"], xi)
    q_input = ad.concat_cols(tape.const(b["obs"]), a_node)
    q_min = ad.minimum(agent.q1.bind(tape)(q_input), agent.q2.bind(tape)(q_input))
    actor_loss = ad.mean_all(ad.sub(ad.mul(tape.const(agent.alpha), logp_node), q_min))
    if not np.isfinite(actor_loss.value):
        raise FloatingPointError(f"non-finite actor loss {actor_loss.value}")
    tape.backward(actor_loss)
    adam_step(agent.actor_opt, agent.actor.parameters(), bound_actor.grads())

    # Temperature: drive policy entropy toward the target.
    logp_detached = logp_node.value[:, 0]
    tape = GradTape()
    la = tape.leaf(agent.log_alpha)
    alpha_loss = ad.mean_all(
        ad.mul(ad.mul(tape.const(-1.0), la), tape.const(logp_detached + agent.target_entropy))
    )
    tape.backward(alpha_loss)
    adam_step(agent.alpha_opt, [agent.log_alpha], [la.grad])

    polyak_update(agent.q1_target, agent.q1, tau)
    polyak_update(agent.q2_target, agent.q2, tau)

    return {
        "critic_loss": float(np.mean(critic_losses)),
        "actor_loss": float(actor_loss.value),
        "alpha": agent.alpha,
        "alpha_loss": float(alpha_loss.value),
        "mean_entropy": float(-logp_detached.mean()),
    }
