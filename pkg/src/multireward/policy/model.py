"""Single-layer recurrent policy with a flat parameter vector."""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _fallback

if os.environ.get("MULTIREWARD_PURE_PYTHON"):
    _kernels = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels
        BACKEND = "cython"
    except ImportError:
        _kernels = _fallback
        BACKEND = "python"

CHECKPOINT_FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def get_backend(name: str | None = None):
    """Return the kernel module: ``"cython"``, ``"python"`` or the import-time default."""
    if name is None:
        return _kernels
    if name == "python":
        return _fallback
    if name == "cython":
        from . import _kernels as compiled
        return compiled
    raise ValueError(f"unknown backend {name!r}")


class PolicyModel:
    """Next-token model ``p(. | prefix)`` over a fixed vocabulary.

    Parameters live in one float64 vector laid out as token embeddings
    ``E (V, H)``, recurrent weights ``W (H, H)``, output projection ``U (V, H)``
    and output bias ``c (V,)``. There is no recurrent bias, so a token with a
    zero embedding read from the zero initial state leaves the state at zero.
    """

    def __init__(self, vocab_size: int, hidden: int, bos_id: int, eos_id: int, params: np.ndarray | None = None):
        self.vocab_size = int(vocab_size)
        self.hidden = int(hidden)
        self.bos_id = int(bos_id)
        self.eos_id = int(eos_id)
        n = self.n_params(self.vocab_size, self.hidden)
        if params is None:
            params = np.zeros(n)
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (n,):
            raise CheckpointError(f"expected {n} parameters, got shape {params.shape}")
        self.params = params

    @staticmethod
    def n_params(vocab_size: int, hidden: int) -> int:
        return 2 * vocab_size * hidden + hidden * hidden + vocab_size

    @classmethod
    def initialize(
        cls,
        vocab_size: int,
        hidden: int,
        bos_id: int,
        eos_id: int,
        seed: int = 0,
        zero_embeddings: Sequence[int] = (),
        embed_scale: float = 0.1,
    ) -> "PolicyModel":
        model = cls(vocab_size, hidden, bos_id, eos_id)
        rng = np.random.default_rng(seed)
        E, W, U, _ = model.views()
        E[:] = rng.normal(0.0, embed_scale, size=E.shape)
        q, _ = np.linalg.qr(rng.normal(size=(hidden, hidden)))
        W[:] = 0.9 * q
        U[:] = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=U.shape)
        E[list(zero_embeddings)] = 0.0
        return model

    def views(self, flat: np.ndarray | None = None):
        """Reshaped views ``(E, W, U, c)`` into ``flat`` (default: the parameters)."""
        flat = self.params if flat is None else flat
        V, H = self.vocab_size, self.hidden
        i = 0
        E = flat[i : i + V * H].reshape(V, H)
        i += V * H
        W = flat[i : i + H * H].reshape(H, H)
        i += H * H
        U = flat[i : i + V * H].reshape(V, H)
        i += V * H
        c = flat[i : i + V]
        return E, W, U, c

    def copy(self) -> "PolicyModel":
        return PolicyModel(self.vocab_size, self.hidden, self.bos_id, self.eos_id, self.params.copy())

    # -- inference helpers ---------------------------------------------------

    def initial_state(self, batch: int) -> np.ndarray:
        return np.zeros((batch, self.hidden))

    def step(self, h: np.ndarray, tokens: np.ndarray) -> np.ndarray:
        E, W, _, _ = self.views()
        return np.tanh(E[tokens] + h @ W.T)

    def logits(self, h: np.ndarray) -> np.ndarray:
        _, _, U, c = self.views()
        return h @ U.T + c

    def read_prefix(self, prefixes: np.ndarray) -> np.ndarray:
        """Run equal-length prefixes ``(B, P)`` and return the final states."""
        h = self.initial_state(prefixes.shape[0])
        for i in range(prefixes.shape[1]):
            h = self.step(h, prefixes[:, i])
        return h

    def next_token_distribution(self, prefix: Sequence[int]) -> np.ndarray:
        self._check_ids(prefix)
        h = self.read_prefix(np.asarray([list(prefix)], dtype=np.int64))
        z = self.logits(h)[0]
        z = z - z.max()
        p = np.exp(z)
        return p / p.sum()

    def _check_ids(self, ids: Sequence[int]) -> None:
        for i in ids:
            if not 0 <= int(i) < self.vocab_size:
                raise ValueError(f"token id {i} out of range [0, {self.vocab_size})")

    # -- serialization -------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "version": CHECKPOINT_FORMAT_VERSION,
            "vocab_size": self.vocab_size,
            "hidden": self.hidden,
            "bos_id": self.bos_id,
            "eos_id": self.eos_id,
            "params": self.params.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PolicyModel":
        if doc.get("version") != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
        return cls(doc["vocab_size"], doc["hidden"], doc["bos_id"], doc["eos_id"], np.asarray(doc["params"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PolicyModel":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise CheckpointError(f"checkpoint not found: {path}") from None
        return cls.from_json(doc)


class ReferenceModel(PolicyModel):
    """A frozen policy. Its parameter buffer is read-only."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.params = self.params.copy()
        self.params.flags.writeable = False

    def copy(self) -> "ReferenceModel":
        return ReferenceModel(self.vocab_size, self.hidden, self.bos_id, self.eos_id, self.params)


def snapshot_reference(model: PolicyModel) -> ReferenceModel:
    return ReferenceModel(model.vocab_size, model.hidden, model.bos_id, model.eos_id, model.params)


def pack(sequences: Sequence[Sequence[int]], prefix_lens: Sequence[int]):
    """Pack sequences for the kernels: ``(tokens, offsets, prefix)`` as int64 arrays."""
    lengths = [len(s) for s in sequences]
    for s, p in zip(sequences, prefix_lens):
        if p < 1 or p >= len(s):
            raise ValueError(f"prefix length {p} invalid for a sequence of length {len(s)}")
    tokens = np.fromiter((t for s in sequences for t in s), dtype=np.int64, count=sum(lengths))
    offsets = np.zeros(len(sequences) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    return tokens, offsets, np.asarray(prefix_lens, dtype=np.int64)
