"""Trainable recurrent policy, frozen reference, decoding and objective.

The forward/backward kernels come from the compiled ``_kernels`` extension
when it is importable and from the numpy ``_fallback`` module otherwise.
Set ``MULTIREWARD_PURE_PYTHON=1`` to force the fallback.
"""
from .model import BACKEND, CheckpointError, PolicyModel, ReferenceModel, get_backend, snapshot_reference
from .objective import (
    LossBreakdown,
    TrainingError,
    entropy,
    kl_per_token,
    log_prob,
    loss_and_grad,
    reference_logprobs,
    train_step,
)
from .sampling import GREEDY, SamplingConfig, generate, nucleus, sample, softmax

__all__ = [
    "BACKEND",
    "CheckpointError",
    "GREEDY",
    "LossBreakdown",
    "PolicyModel",
    "ReferenceModel",
    "SamplingConfig",
    "TrainingError",
    "entropy",
    "generate",
    "get_backend",
    "kl_per_token",
    "log_prob",
    "loss_and_grad",
    "nucleus",
    "reference_logprobs",
    "sample",
    "snapshot_reference",
    "softmax",
    "train_step",
]
