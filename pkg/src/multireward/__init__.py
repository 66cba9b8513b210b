"""Multi-reward conditioned rationale generation on a small recurrent policy.

Subpackages and modules:

* ``vocab``: token table with one control token per (reward, bin)
* ``rewards``: plausibility, diversity, consistency and task-correctness scorers
* ``policy``: the recurrent policy, its KL-regularized objective and sampling
* ``pool``: the growing data pool, quantile binning and batch sampling
* ``trainer``: SFT, single-reward, Classic, Additive and baseline training loops
* ``evaluation``: greedy evaluation, normalized relative gain and t-tests
* ``cli``: the ``multireward`` command
"""
from .evaluation import MetricsReport, avg_nrg, compare, evaluate, nrg
from .policy import BACKEND, PolicyModel
from .pool import DataPool, Instance, ScheduleState
from .rewards import RewardSpec, ScoringContext, default_rewards
from .trainer import TrainConfig
from .vocab import Vocabulary, build_vocab, register_control_tokens

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DataPool",
    "Instance",
    "MetricsReport",
    "PolicyModel",
    "RewardSpec",
    "ScheduleState",
    "ScoringContext",
    "TrainConfig",
    "Vocabulary",
    "avg_nrg",
    "build_vocab",
    "compare",
    "default_rewards",
    "evaluate",
    "nrg",
    "register_control_tokens",
]
