"""Adam with linear warmup/decay, global-norm clipping and gradient accumulation."""
from __future__ import annotations

import numpy as np


class Adam:
    def __init__(
        self,
        size: int,
        lr: float,
        total_steps: int,
        warmup_steps: int = 0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        clip_norm: float | None = 1.0,
        accumulation: int = 1,
    ):
        if accumulation < 1:
            raise ValueError("accumulation must be >= 1")
        self.lr = lr
        self.total_steps = max(int(total_steps), 1)
        self.warmup_steps = int(warmup_steps)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.accumulation = accumulation
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.pending = np.zeros(size)
        self.n_pending = 0
        self.t = 0

    def learning_rate(self, t: int | None = None) -> float:
        """Learning rate for update ``t`` (0-based): linear warmup, then linear decay."""
        t = self.t if t is None else t
        if t < self.warmup_steps:
            return self.lr * (t + 1) / self.warmup_steps
        remaining = self.total_steps - t
        span = max(self.total_steps - self.warmup_steps, 1)
        return self.lr * max(remaining, 1) / span

    def step(self, params: np.ndarray, grad: np.ndarray) -> bool:
        """Add ``grad``; apply an update once ``accumulation`` grads are pending.

        Returns True when parameters were updated.
        """
        self.pending += grad
        self.n_pending += 1
        if self.n_pending < self.accumulation:
            return False
        g = self.pending / self.n_pending
        if self.clip_norm is not None:
            norm = float(np.sqrt(g @ g))
            if norm > self.clip_norm:
                g = g * (self.clip_norm / norm)
        lr = self.learning_rate()
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        params -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
        self.pending[:] = 0.0
        self.n_pending = 0
        return True
