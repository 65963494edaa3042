"""Stochastic box-action policies: Gaussian heads squashed through tanh.

Pre-squash samples ``u`` live in an unbounded space; ``tanh(u)`` maps them to
(-1, 1) and an affine map stretches each component onto its legal range, so
every emitted action is inside the box by construction.  Log-probabilities in
tanh space carry the usual ``log(1 - tanh(u)^2)`` correction; the affine
log-determinant is a constant added only to the log-probs reported to
callers, so internal losses can stay in tanh space.

Two head styles are supported: a state-dependent log-std (the off-policy
learner's choice) and a single learned global log-std vector (on-policy).
"""

from __future__ import annotations

import numpy as np

from symchain import autodiff as ad
from symchain.autodiff import GradTape, Mlp, Node

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_TANH_EPS = 1e-6
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class BoxSpace:
    """Per-component closed action bounds."""

    def __init__(self, low, high):
        self.low = np.asarray(low, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)
        if self.low.shape != self.high.shape:
            raise ValueError("low/high shape mismatch")
        if np.any(self.low >= self.high):
            raise ValueError("each low bound must be below its high bound")

    @property
    def dim(self) -> int:
        return self.low.size

    def from_tanh(self, a: np.ndarray) -> np.ndarray:
        """Map tanh-space values in (-1, 1) onto the box."""
        return self.low + (np.asarray(a) + 1.0) * 0.5 * (self.high - self.low)

    def affine_logdet(self) -> float:
        return float(np.sum(np.log((self.high - self.low) / 2.0)))

    def contains(self, action: np.ndarray) -> bool:
        a = np.asarray(action)
        return bool(np.all(a >= self.low) and np.all(a <= self.high))


class PolicyNet:
    """MLP backbone with a squashed-Gaussian head.

    ``std_mode`` is ``"state"`` (backbone emits mean and log-std per action
    dim) or ``"global"`` (backbone emits the mean; one learned log-std vector
    is shared across states).  ``obs_scale`` divides raw observations before
    the backbone so inputs stay near unit magnitude.
    """

    def __init__(
        self,
        obs_dim: int,
        space: BoxSpace,
        hidden: tuple[int, ...] = (256, 256),
        activation: str = "relu",
        std_mode: str = "state",
        rng: np.random.Generator | None = None,
        obs_scale: np.ndarray | None = None,
    ):
        if std_mode not in ("state", "global"):
            raise ValueError(f"unknown std_mode {std_mode!r}")
        self.obs_dim = int(obs_dim)
        self.space = space
        self.std_mode = std_mode
        out = space.dim * 2 if std_mode == "state" else space.dim
        self.mlp = Mlp([self.obs_dim, *hidden, out], activation=activation, rng=rng)
        self.log_std = np.zeros(space.dim, dtype=np.float64) if std_mode == "global" else None
        if obs_scale is None:
            obs_scale = np.ones(self.obs_dim, dtype=np.float64)
        self.obs_scale = np.asarray(obs_scale, dtype=np.float64)
        if self.obs_scale.shape != (self.obs_dim,):
            raise ValueError("obs_scale must match the observation width")

    # -- numpy paths ------------------------------------------------------

    def scale_obs(self, obs: np.ndarray) -> np.ndarray:
        return np.asarray(obs, dtype=np.float64) / self.obs_scale

    def dist(self, obs_scaled: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Mean and log-std for scaled observations, shape (n, dim) each."""
        out = self.mlp.forward(np.atleast_2d(obs_scaled))
        d = self.space.dim
        if self.std_mode == "state":
            mu, log_std = out[:, :d], np.clip(out[:, d:], LOG_STD_MIN, LOG_STD_MAX)
        else:
            mu = out
            log_std = np.broadcast_to(self.log_std, mu.shape)
        return mu, log_std

    def tanh_logp(self, u: np.ndarray, mu: np.ndarray, log_std: np.ndarray) -> np.ndarray:
        """Row log-density of squashed samples, in tanh space."""
        std = np.exp(log_std)
        z = (u - mu) / std
        gauss = -0.5 * z * z - log_std - _HALF_LOG_2PI
        t = np.tanh(u)
        corr = np.log(1.0 + _TANH_EPS - t * t)
        return np.sum(gauss - corr, axis=1)

    def act(
        self,
        obs: np.ndarray,
        rng: np.random.Generator | None = None,
        deterministic: bool = False,
    ) -> tuple[np.ndarray, float, np.ndarray]:
        """Action in env units, its log-prob, and the pre-squash sample.

        Deterministic mode squashes the mean.  The returned log-prob accounts
        for the full tanh-plus-affine transform into env units.
        """
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape != (self.obs_dim,):
            raise ValueError(f"expected observation of width {self.obs_dim}, got {obs.shape}")
        mu, log_std = self.dist(self.scale_obs(obs)[None, :])
        if deterministic:
            u = mu
        else:
            if rng is None:
                raise ValueError("stochastic action selection needs an rng")
            u = mu + np.exp(log_std) * rng.standard_normal(mu.shape)
        logp = float(self.tanh_logp(u, mu, log_std)[0]) - self.space.affine_logdet()
        action = self.space.from_tanh(np.tanh(u[0]))
        return action, logp, u[0]

    # -- tape paths ---------------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        params = self.mlp.parameters()
        if self.log_std is not None:
            params = params + [self.log_std]
        return params

    def bind(self, tape: GradTape) -> "BoundPolicy":
        return BoundPolicy(self, tape)

    # -- checkpointing -------------------------------------------------------

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.mlp.weights, self.mlp.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        if self.log_std is not None:
            out["log_std"] = self.log_std
        return out

    def meta(self) -> dict:
        return {
            "obs_dim": self.obs_dim,
            "hidden": self.mlp.widths[1:-1],
            "activation": self.mlp.activation,
            "std_mode": self.std_mode,
            "low": self.space.low.tolist(),
            "high": self.space.high.tolist(),
            "obs_scale": self.obs_scale.tolist(),
        }

    @classmethod
    def from_checkpoint(cls, meta: dict, tensors: dict[str, np.ndarray]) -> "PolicyNet":
        net = cls(
            obs_dim=meta["obs_dim"],
            space=BoxSpace(meta["low"], meta["high"]),
            hidden=tuple(meta["hidden"]),
            activation=meta["activation"],
            std_mode=meta["std_mode"],
            obs_scale=np.asarray(meta["obs_scale"]),
        )
        for i in range(len(net.mlp.weights)):
            net.mlp.weights[i][...] = tensors[f"w{i}"]
            net.mlp.biases[i][...] = tensors[f"b{i}"]
        if net.log_std is not None:
            net.log_std[...] = tensors["log_std"]
        return net


class BoundPolicy:
    """A policy's parameters lifted onto a tape for one update pass."""

    def __init__(self, policy: PolicyNet, tape: GradTape):
        self.policy = policy
        self.tape = tape
        self.bound_mlp = policy.mlp.bind(tape)
        self.log_std_node = tape.leaf(policy.log_std) if policy.log_std is not None else None

    def dist(self, obs_scaled: np.ndarray) -> tuple[Node, Node]:
        out = self.bound_mlp(self.tape.const(obs_scaled))
        d = self.policy.space.dim
        if self.policy.std_mode == "state":
            mu = ad.slice_cols(out, 0, d)
            log_std = ad.clip(ad.slice_cols(out, d, 2 * d), LOG_STD_MIN, LOG_STD_MAX)
        else:
            mu = out
            ones = self.tape.const(np.ones((obs_scaled.shape[0], 1)))
            log_std = ad.matmul(ones, _as_row(self.tape, self.log_std_node))
        return mu, log_std

    def logp(self, obs_scaled: np.ndarray, u: np.ndarray) -> Node:
        """Tanh-space log-prob of fixed pre-squash samples; shape (n, 1)."""
        mu, log_std = self.dist(obs_scaled)
        u_node = self.tape.const(u)
        return _tanh_logp_nodes(self.tape, u_node, mu, log_std)

    def rsample_logp(self, obs_scaled: np.ndarray, xi: np.ndarray) -> tuple[Node, Node]:
        """Reparameterized tanh-space action and its log-prob; both on-tape."""
        mu, log_std = self.dist(obs_scaled)
        u = ad.add(mu, ad.mul(ad.exp(log_std), self.tape.const(xi)))
        return ad.tanh(u), _tanh_logp_nodes(self.tape, u, mu, log_std)

    def grads(self) -> list[np.ndarray]:
        out = self.bound_mlp.grads()
        if self.log_std_node is not None:
            g = self.log_std_node.grad
            out = out + [g if g is not None else np.zeros_like(self.policy.log_std)]
        return out


def _as_row(tape: GradTape, vec: Node) -> Node:
    # (d,) leaf viewed as a (1, d) row without copying history
    return ad._unary(vec, vec.value[None, :], lambda g: g[0])


def _tanh_logp_nodes(tape: GradTape, u: Node, mu: Node, log_std: Node) -> Node:
    std = ad.exp(log_std)
    z = ad.div(ad.sub(u, mu), std)
    gauss = ad.sub(ad.sub(ad.mul(tape.const(-0.5), ad.square(z)), log_std), tape.const(_HALF_LOG_2PI))
    corr = ad.log(ad.sub(tape.const(1.0 + _TANH_EPS), ad.square(ad.tanh(u))))
    return ad.sum_cols(ad.sub(gauss, corr))
