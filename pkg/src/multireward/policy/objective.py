"""Training objective: cross-entropy + beta * KL(reference || policy) - alpha * entropy."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import PolicyModel, ReferenceModel, get_backend, pack

PROB_EPS = 1e-12

# (control ids, input ids, target ids)
Example = tuple[Sequence[int], Sequence[int], Sequence[int]]


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossBreakdown:
    cross_entropy: float
    kl_penalty: float
    entropy_bonus: float
    total: float
    n_tokens: int


def kl_per_token(ref: Sequence[float], policy: Sequence[float]) -> float:
    """KL(ref || policy) with ``log`` clamped at 1e-12; zero ``ref`` entries add nothing."""
    r = np.asarray(ref, dtype=np.float64)
    q = np.asarray(policy, dtype=np.float64)
    if r.shape != q.shape:
        raise ValueError("distributions have different supports")
    mask = r > 0
    rm = r[mask]
    kl = float(np.sum(rm * (np.log(np.maximum(rm, PROB_EPS)) - np.log(np.maximum(q[mask], PROB_EPS)))))
    return max(kl, 0.0)


def entropy(dist: Sequence[float]) -> float:
    p = np.asarray(dist, dtype=np.float64)
    nz = p[p > 0]
    return float(max(-np.sum(nz * np.log(nz)), 0.0))


def conditioning_prefix(model: PolicyModel, control_ids: Sequence[int], input_ids: Sequence[int]) -> list[int]:
    return [*control_ids, model.bos_id, *input_ids]


def log_prob(
    model: PolicyModel,
    input_ids: Sequence[int],
    control_ids: Sequence[int],
    target_ids: Sequence[int],
    backend: str | None = None,
) -> np.ndarray:
    """Per-token ``log p(target_t | controls, bos, input, target_<t)``."""
    if len(target_ids) == 0:
        raise ValueError("target must be nonempty")
    prefix = conditioning_prefix(model, control_ids, input_ids)
    seq = prefix + list(target_ids)
    model._check_ids(seq)
    logp = _forward(model, [seq], [len(prefix)], backend)
    return logp[np.arange(len(target_ids)), np.asarray(target_ids)]


def _forward(model: PolicyModel, seqs, prefix_lens, backend=None) -> np.ndarray:
    tokens, offsets, prefix = pack(seqs, prefix_lens)
    E, W, U, c = model.views()
    return get_backend(backend).forward_logprobs(E, W, U, c, tokens, offsets, prefix)


def _sequences(model: PolicyModel, batch: Sequence[Example], with_controls: bool):
    seqs, prefix_lens = [], []
    for controls, inp, target in batch:
        if len(target) == 0:
            raise ValueError("target must be nonempty")
        prefix = conditioning_prefix(model, controls if with_controls else (), inp)
        seqs.append(prefix + list(target))
        prefix_lens.append(len(prefix))
    return seqs, prefix_lens


def reference_logprobs(reference: PolicyModel, batch: Sequence[Example], backend: str | None = None) -> np.ndarray:
    """Reference next-token log-probs at every target position, read without control tokens."""
    seqs, prefix_lens = _sequences(reference, batch, with_controls=False)
    return _forward(reference, seqs, prefix_lens, backend)


def loss_and_grad(
    model: PolicyModel,
    batch: Sequence[Example],
    beta: float = 0.0,
    alpha: float = 0.0,
    ref_logp: np.ndarray | None = None,
    params: np.ndarray | None = None,
    backend: str | None = None,
) -> tuple[LossBreakdown, np.ndarray]:
    """Token-averaged loss components and the gradient of their combined total.

    ``params`` evaluates at an alternative parameter vector (used by gradient
    checks); it defaults to the model's own parameters.
    """
    if not batch:
        raise ValueError("empty batch")
    if beta != 0.0 and ref_logp is None:
        raise ValueError("beta > 0 needs reference log-probs")
    params = model.params if params is None else params
    seqs, prefix_lens = _sequences(model, batch, with_controls=True)
    for s in seqs:
        model._check_ids(s)
    tokens, offsets, prefix = pack(seqs, prefix_lens)
    n_tokens = int((np.diff(offsets) - prefix).sum())
    grad = np.zeros_like(params)
    E, W, U, c = model.views(params)
    gE, gW, gU, gc = model.views(grad)
    ref = np.ascontiguousarray(ref_logp) if beta != 0.0 else None
    ce, kl, ent = get_backend(backend).loss_grad(
        E, W, U, c, tokens, offsets, prefix, ref, float(beta), float(alpha), 1.0 / n_tokens, gE, gW, gU, gc
    )
    ce, kl, ent = ce / n_tokens, max(kl / n_tokens, 0.0), ent / n_tokens
    total = ce + beta * kl - alpha * ent
    return LossBreakdown(ce, kl, ent, total, n_tokens), grad


def train_step(
    model: PolicyModel,
    reference: ReferenceModel | None,
    batch: Sequence[Example],
    beta: float,
    alpha: float,
    optimizer,
    backend: str | None = None,
) -> LossBreakdown:
    """One optimizer micro-step on ``batch``; returns the pre-step loss.

    The policy reads each example's control tokens; the reference reads the
    same example without them.
    """
    if beta < 0 or alpha < 0:
        raise ValueError("beta and alpha must be nonnegative")
    ref_logp = None
    if beta != 0.0:
        if reference is None:
            raise ValueError("beta > 0 needs a reference model")
        ref_logp = reference_logprobs(reference, batch, backend)
    loss, grad = loss_and_grad(model, batch, beta, alpha, ref_logp, backend=backend)
    if not (math.isfinite(loss.total) and np.all(np.isfinite(grad))):
        raise TrainingError(f"non-finite loss at update {optimizer.t}: {loss}")
    optimizer.step(model.params, grad)
    return loss
