"""Experiment configuration: sectioned key/value files with a strict schema.

The file format is INI-style with three sections; every key is optional and
falls back to a documented default, but unknown sections or keys are errors
so typos cannot silently change an experiment.  List-valued keys take comma
separators and expand into the cross product of experiment cells.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields

DEMANDS = ("high", "low")
ARCHITECTURES = ("homo", "hetero")
ALGORITHMS = ("sac", "ppo")
REWARD_MODES = ("baseline", "pearso", "peafso", "colla")


class ConfigError(ValueError):
    """Raised for unknown keys, malformed values, or violated invariants."""


@dataclass(frozen=True)
class Cell:
    """One point of the experiment matrix."""

    demand: str
    architecture: str
    algorithm: str
    reward_mode: str

    @property
    def name(self) -> str:
        return f"{self.demand}-{self.architecture}-{self.algorithm}-{self.reward_mode}"

    @classmethod
    def from_name(cls, name: str) -> "Cell":
        parts = name.split("-")
        if len(parts) != 4:
            raise ConfigError(f"malformed cell name {name!r}")
        return cls(*parts)


@dataclass(frozen=True)
class ExperimentConfig:
    demands: tuple[str, ...] = ("low",)
    architectures: tuple[str, ...] = ("hetero",)
    algorithms: tuple[str, ...] = ("sac",)
    reward_modes: tuple[str, ...] = ("baseline",)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    horizon: int = 30
    initial_price: float = 0.0
    iteration_cap: int = 500
    convergence_window: int = 20
    convergence_tol: float = 0.01
    hidden: tuple[int, ...] = (256, 256)
    reward_scale: float = 1.0
    strict_actions: bool = False
    out_dir: str | None = None
    eoq_order_cost: float = 1.0
    jobs: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.iteration_cap < 1:
            raise ConfigError("iteration_cap must be >= 1")
        if self.convergence_window < 2:
            raise ConfigError("convergence_window must be >= 2")
        if self.convergence_tol < 0:
            raise ConfigError("convergence_tol must be >= 0")
        if self.eoq_order_cost <= 0:
            raise ConfigError("eoq_order_cost must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        _check_members("demand", self.demands, DEMANDS)
        _check_members("architecture", self.architectures, ARCHITECTURES)
        _check_members("algorithm", self.algorithms, ALGORITHMS)
        _check_members("reward_mode", self.reward_modes, REWARD_MODES)

    def cells(self) -> list[Cell]:
        return [
            Cell(d, arch, algo, mode)
            for d in self.demands
            for arch in self.architectures
            for algo in self.algorithms
            for mode in self.reward_modes
        ]


def _check_members(label: str, values, allowed) -> None:
    if not values:
        raise ConfigError(f"{label} list must be non-empty")
    for v in values:
        if v not in allowed:
            raise ConfigError(f"unknown {label} {v!r} (allowed: {', '.join(allowed)})")


_SCHEMA = {
    "experiment": (
        "demand", "architecture", "algorithm", "reward_mode",
        "seeds", "horizon", "initial_price",
    ),
    "training": (
        "iteration_cap", "convergence_window", "convergence_tol",
        "hidden", "reward_scale", "strict_actions",
    ),
    "output": ("directory", "eoq_order_cost", "jobs"),
}


def _str_list(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def _int_list(raw: str, label: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in _str_list(raw))
    except ValueError as exc:
        raise ConfigError(f"{label} must be a comma list of integers: {raw!r}") from exc


def _bool(raw: str, label: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"{label} must be a boolean, got {raw!r}")


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    kwargs: dict = {}

    def get(section: str, key: str) -> str | None:
        return parser.get(section, key, fallback=None)

    try:
        if (raw := get("experiment", "demand")) is not None:
            kwargs["demands"] = _str_list(raw)
        if (raw := get("experiment", "architecture")) is not None:
            kwargs["architectures"] = _str_list(raw)
        if (raw := get("experiment", "algorithm")) is not None:
            kwargs["algorithms"] = _str_list(raw)
        if (raw := get("experiment", "reward_mode")) is not None:
            kwargs["reward_modes"] = _str_list(raw)
        if (raw := get("experiment", "seeds")) is not None:
            kwargs["seeds"] = _int_list(raw, "seeds")
        if (raw := get("experiment", "horizon")) is not None:
            kwargs["horizon"] = int(raw)
        if (raw := get("experiment", "initial_price")) is not None:
            kwargs["initial_price"] = float(raw)
        if (raw := get("training", "iteration_cap")) is not None:
            kwargs["iteration_cap"] = int(raw)
        if (raw := get("training", "convergence_window")) is not None:
            kwargs["convergence_window"] = int(raw)
        if (raw := get("training", "convergence_tol")) is not None:
            kwargs["convergence_tol"] = float(raw)
        if (raw := get("training", "hidden")) is not None:
            kwargs["hidden"] = _int_list(raw, "hidden")
        if (raw := get("training", "reward_scale")) is not None:
            kwargs["reward_scale"] = float(raw)
        if (raw := get("training", "strict_actions")) is not None:
            kwargs["strict_actions"] = _bool(raw, "strict_actions")
        if (raw := get("output", "directory")) is not None:
            kwargs["out_dir"] = raw.strip()
        if (raw := get("output", "eoq_order_cost")) is not None:
            kwargs["eoq_order_cost"] = float(raw)
        if (raw := get("output", "jobs")) is not None:
            kwargs["jobs"] = int(raw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical text form; parse(serialize(c)) == c."""
    lines = [
        "[experiment]",
        f"demand = {','.join(config.demands)}",
        f"architecture = {','.join(config.architectures)}",
        f"algorithm = {','.join(config.algorithms)}",
        f"reward_mode = {','.join(config.reward_modes)}",
        f"seeds = {','.join(str(s) for s in config.seeds)}",
        f"horizon = {config.horizon}",
        f"initial_price = {config.initial_price}",
        "",
        "[training]",
        f"iteration_cap = {config.iteration_cap}",
        f"convergence_window = {config.convergence_window}",
        f"convergence_tol = {config.convergence_tol}",
        f"hidden = {','.join(str(h) for h in config.hidden)}",
        f"reward_scale = {config.reward_scale}",
        f"strict_actions = {str(config.strict_actions).lower()}",
        "",
        "[output]",
    ]
    if config.out_dir is not None:
        lines.append(f"directory = {config.out_dir}")
    lines.append(f"eoq_order_cost = {config.eoq_order_cost}")
    lines.append(f"jobs = {config.jobs}")
    lines.append("")
    return "\n".join(lines)
