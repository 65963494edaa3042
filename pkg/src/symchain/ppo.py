"""On-policy learner: clipped-surrogate policy updates with GAE.

The update works on pre-squash action samples, so importance ratios compare
Gaussian densities of the same fixed samples under old and new parameters;
the tanh correction cancels in the ratio but is kept in both log-probs for
consistency with what the policy reports elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from symchain import autodiff as ad
from symchain.autodiff import AdamState, GradTape, Mlp, adam_step
from symchain.policy import PolicyNet


@dataclass
class RolloutBatch:
    """Flattened on-policy experience for one policy stream.

    ``returns`` must equal ``advantages + values`` elementwise; advantages
    are raw (unnormalized) GAE estimates.
    """

    obs: np.ndarray        # (n, obs_dim), already observation-scaled
    u: np.ndarray          # (n, act_dim) pre-squash samples
    logp: np.ndarray       # (n,) tanh-space log-probs at collection time
    values: np.ndarray     # (n,)
    advantages: np.ndarray # (n,)
    returns: np.ndarray    # (n,)

    def __post_init__(self):
        n = self.obs.shape[0]
        for name in ("u", "logp", "values", "advantages", "returns"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} length does not match obs")
        if not np.all(np.isfinite(self.advantages)):
            raise ValueError("advantages must be finite")
        if not np.allclose(self.returns, self.advantages + self.values, atol=1e-9):
            raise ValueError("returns must equal advantages + values")


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    gamma: float,
    lam: float,
    terminal_value: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and value targets for one episode.

    With ``lam = 1`` this reduces to discounted returns minus values.  The
    bootstrap for the state after the last step is ``terminal_value`` (zero
    at a true episode end).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape or rewards.ndim != 1:
        raise ValueError("rewards and values must be aligned 1-D sequences")
    n = rewards.size
    advantages = np.zeros(n, dtype=np.float64)
    next_value = terminal_value
    next_adv = 0.0
    for t in range(n - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        next_adv = delta + gamma * lam * next_adv
        advantages[t] = next_adv
        next_value = values[t]
    return advantages, advantages + values


def clipped_objective(ratios: np.ndarray, advantages: np.ndarray, clip: float) -> np.ndarray:
    """Per-sample clipped surrogate: min(r*A, clip(r, 1-c, 1+c)*A)."""
    ratios = np.asarray(ratios, dtype=np.float64)
    advantages = np.asarray(advantages, dtype=np.float64)
    return np.minimum(ratios * advantages, np.clip(ratios, 1.0 - clip, 1.0 + clip) * advantages)


def ppo_update(
    batch: RolloutBatch,
    policy: PolicyNet,
    value_net: Mlp,
    policy_opt: AdamState,
    value_opt: AdamState,
    rng: np.random.Generator,
    clip: float = 0.3,
    vf_loss_coeff: float = 1.0,
    epochs: int = 10,
    minibatch: int = 128,
    kl_target: float = 0.01,
) -> dict:
    """Run the clipped-surrogate update over the batch; returns statistics.

    Advantages are standardized over the whole batch before use.  A NaN/Inf
    loss aborts immediately with a diagnostic rather than corrupting the
    networks.  The approximate KL between old and new policies is reported
    against ``kl_target`` but does not gate the update.
    """
    n = batch.obs.shape[0]
    adv = batch.advantages
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    policy_losses: list[float] = []
    value_losses: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, minibatch):
            mb = order[start : start + minibatch]
            tape = GradTape()
            bound_policy = policy.bind(tape)
            bound_value = value_net.bind(tape)

            logp_new = bound_policy.logp(batch.obs[mb], batch.u[mb])
            ratio = ad.exp(ad.sub(logp_new, tape.const(batch.logp[mb][:, None])))
            adv_node = tape.const(adv[mb][:, None])
            surrogate = ad.minimum(
                ad.mul(ratio, adv_node),
                ad.mul(ad.clip(ratio, 1.0 - clip, 1.0 + clip), adv_node),
            )
            policy_loss = ad.mul(tape.const(-1.0), ad.mean_all(surrogate))

            v = bound_value(tape.const(batch.obs[mb]))
            value_loss = ad.mean_all(ad.square(ad.sub(v, tape.const(batch.returns[mb][:, None]))))
            total = ad.add(policy_loss, ad.mul(tape.const(vf_loss_coeff), value_loss))

            if not np.isfinite(total.value):
                raise FloatingPointError(
                    f"non-finite update loss (policy={policy_loss.value}, value={value_loss.value})"
                )
            tape.backward(total)
            adam_step(policy_opt, policy.parameters(), bound_policy.grads())
            adam_step(value_opt, value_net.parameters(), bound_value.grads())
            policy_losses.append(float(policy_loss.value))
            value_losses.append(float(value_loss.value))

    mu, log_std = policy.dist(batch.obs)
    logp_after = policy.tanh_logp(batch.u, mu, log_std)
    approx_kl = float(np.mean(batch.logp - logp_after))
    return {
        "policy_loss": float(np.mean(policy_losses)),
        "value_loss": float(np.mean(value_losses)),
        "approx_kl": approx_kl,
        "kl_target": kl_target,
        "kl_exceeded": approx_kl > kl_target,
    }
