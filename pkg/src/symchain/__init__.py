"""Two-echelon supply-chain control: simulator, learners, baselines, runner."""

from symchain.env import (
    ChainState,
    EchelonParams,
    EchelonState,
    JointAction,
    RewardMode,
    StepOutcome,
    SupplyChain,
    default_params,
    observe_heterogeneous,
    observe_homogeneous,
    reset,
    step,
)
from symchain.demand import HighPoisson, LowNormal, Scripted, demand_model, sample
from symchain.baselines import EoqInputs, eoq
from symchain.metrics import EpisodeTrace, bullwhip_ratio, convergence_check, summarize
from symchain.training import AgentConfig, ConvergenceRule, EnvSetup, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AgentConfig",
    "ChainState",
    "ConvergenceRule",
    "EchelonParams",
    "EchelonState",
    "EnvSetup",
    "EoqInputs",
    "EpisodeTrace",
    "HighPoisson",
    "JointAction",
    "LowNormal",
    "RewardMode",
    "Scripted",
    "StepOutcome",
    "SupplyChain",
    "bullwhip_ratio",
    "convergence_check",
    "default_params",
    "demand_model",
    "eoq",
    "evaluate",
    "observe_heterogeneous",
    "observe_homogeneous",
    "reset",
    "sample",
    "step",
    "summarize",
    "train",
]
