"""Greedy and nucleus (top-p) decoding, batched over prompts."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import PolicyModel
from .objective import conditioning_prefix


@dataclass(frozen=True)
class SamplingConfig:
    strategy: str = "top-p"
    p: float = 0.7
    temperature: float = 1.0
    max_length: int = 24

    def __post_init__(self):
        if self.strategy not in ("greedy", "top-p"):
            raise ValueError(f"unknown sampling strategy {self.strategy!r}")
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"p must be in (0, 1], got {self.p}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.max_length < 1:
            raise ValueError("max_length must be >= 1")


GREEDY = SamplingConfig(strategy="greedy")


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=-1, keepdims=True)


def nucleus(probs: np.ndarray, p: float) -> np.ndarray:
    """Keep the smallest high-probability prefix with mass >= p, renormalized.

    Works row-wise on ``(B, V)`` or on a single ``(V,)`` distribution. Ties in
    probability keep vocabulary order.
    """
    probs = np.asarray(probs, dtype=np.float64)
    single = probs.ndim == 1
    probs = np.atleast_2d(probs)
    order = np.argsort(-probs, axis=1, kind="stable")
    sorted_p = np.take_along_axis(probs, order, axis=1)
    cum = np.cumsum(sorted_p, axis=1)
    keep = np.minimum((cum < p).sum(axis=1) + 1, probs.shape[1])
    mask_sorted = np.arange(probs.shape[1])[None, :] < keep[:, None]
    out = np.zeros_like(probs)
    np.put_along_axis(out, order, np.where(mask_sorted, sorted_p, 0.0), axis=1)
    out /= out.sum(axis=1, keepdims=True)
    return out[0] if single else out


def _draw(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(probs.shape[0])
    cum = np.cumsum(probs, axis=1)
    idx = (cum < u[:, None] * cum[:, -1:]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def generate(
    model: PolicyModel,
    prefixes: Sequence[Sequence[int]],
    config: SamplingConfig,
    rng: np.random.Generator | None = None,
) -> list[list[int]]:
    """Decode a continuation for each conditioning prefix.

    Prefixes are grouped by length and run as batches. Each continuation stops
    at EOS (not included in the output) or at ``config.max_length`` tokens.
    """
    if config.strategy == "top-p" and rng is None:
        raise ValueError("top-p sampling needs an rng")
    out: list[list[int] | None] = [None] * len(prefixes)
    groups: dict[int, list[int]] = {}
    for i, pre in enumerate(prefixes):
        model._check_ids(pre)
        groups.setdefault(len(pre), []).append(i)
    for length in sorted(groups):
        idx = groups[length]
        h = model.read_prefix(np.asarray([prefixes[i] for i in idx], dtype=np.int64))
        done = np.zeros(len(idx), dtype=bool)
        gen = [[] for _ in idx]
        for _ in range(config.max_length):
            logits = model.logits(h)
            if config.strategy == "greedy":
                nxt = np.argmax(logits, axis=1)
            else:
                probs = nucleus(softmax(logits, config.temperature), config.p)
                nxt = _draw(probs, rng)
            for j in np.flatnonzero(~done):
                if nxt[j] == model.eos_id:
                    done[j] = True
                else:
                    gen[j].append(int(nxt[j]))
            if done.all():
                break
            h = model.step(h, nxt)
        for j, i in enumerate(idx):
            out[i] = gen[j]
    return out


def sample(
    model: PolicyModel,
    input_ids: Sequence[int],
    control_ids: Sequence[int],
    config: SamplingConfig,
    rng: np.random.Generator | None = None,
) -> list[int]:
    return generate(model, [conditioning_prefix(model, control_ids, input_ids)], config, rng)[0]
