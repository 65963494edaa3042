"""Seeded customer-demand generators.

Two stochastic regimes are supported: a high-volume Poisson stream and a
low-volume rounded truncated-normal stream, plus a scripted sequence for
deterministic replays.  All draws go through an explicit
``numpy.random.Generator`` (PCG64), so a 64-bit seed fully determines the
demand stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ScriptExhausted(RuntimeError):
    """Raised when a scripted demand sequence runs out of values."""


@dataclass(frozen=True)
class HighPoisson:
    """Poisson demand; integer draws with the given mean."""

    mean: float = 10.0

    def __post_init__(self):
        if self.mean <= 0:
            raise ValueError("mean must be positive")


@dataclass(frozen=True)
class LowNormal:
    """Normal demand floored at zero and rounded to the nearest whole unit.

    Negative draws are physically meaningless, so the sample is truncated at
    zero before rounding (ties round up).
    """

    mean: float = 2.0
    std: float = 1.0

    def __post_init__(self):
        if self.mean <= 0:
            raise ValueError("mean must be positive")
        if self.std <= 0:
            raise ValueError("std must be positive")


@dataclass
class Scripted:
    """Replays a fixed demand sequence; raises once exhausted."""

    values: tuple[float, ...]
    _cursor: int = field(default=0, repr=False)

    def __init__(self, values):
        vals = tuple(float(v) for v in values)
        if any(v < 0 for v in vals):
            raise ValueError("scripted demand values must be >= 0")
        self.values = vals
        self._cursor = 0


DemandModel = HighPoisson | LowNormal | Scripted


def sample(model: DemandModel, rng: np.random.Generator) -> float:
    """Draw the next demand from the model using the supplied generator."""
    if isinstance(model, HighPoisson):
        return float(rng.poisson(model.mean))
    if isinstance(model, LowNormal):
        x = max(rng.normal(model.mean, model.std), 0.0)
        return float(math.floor(x + 0.5))
    if isinstance(model, Scripted):
        if model._cursor >= len(model.values):
            raise ScriptExhausted(f"scripted demand exhausted after {len(model.values)} values")
        value = model.values[model._cursor]
        model._cursor += 1
        return value
    raise TypeError(f"unknown demand model {model!r}")


def make_rng(seed: int) -> np.random.Generator:
    """Generator for one demand stream; identical seeds reproduce identical streams."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent sub-streams for fanning one seed out across runs."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def demand_model(regime: str) -> DemandModel:
    """Model for a named regime: 'high' or 'low'."""
    if regime == "high":
        return HighPoisson(10.0)
    if regime == "low":
        return LowNormal(2.0, 1.0)
    raise ValueError(f"unknown demand regime {regime!r} (expected 'high' or 'low')")
