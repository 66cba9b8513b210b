"""Reward functions for generated rationales.

Four rewards are provided: plausibility (fact-set n-gram overlap), diversity
(product of unique/total n-gram ratios for n = 2..4), consistency (gain in
gold-label probability from seeing the rationale) and task correctness.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Hashable, Mapping, Sequence

import numpy as np

PLAUSIBILITY = "plau"
DIVERSITY = "div"
CONSISTENCY = "cons"
CORRECTNESS = "acc"
PRODUCT = "prod"

PREDICTOR_FORMAT_VERSION = 1
FACTSET_FORMAT_VERSION = 1


class RewardError(ValueError):
    pass


class UntrainedPredictorError(RuntimeError):
    pass


@dataclass(frozen=True)
class Generation:
    """The pieces of one scored output, as token strings."""

    question: tuple[str, ...]
    rationale: tuple[str, ...]
    predicted: str | None
    gold: str


Scorer = Callable[[Generation, "ScoringContext"], float]


@dataclass(frozen=True)
class RewardSpec:
    name: str
    range: tuple[float, float]
    bins: int
    scorer: Scorer | None = field(default=None, compare=False)
    value_binned: bool = False

    def __post_init__(self):
        lo, hi = self.range
        if not lo < hi:
            raise RewardError(f"reward {self.name!r}: empty range {self.range}")
        if self.bins < 2:
            raise RewardError(f"reward {self.name!r}: needs at least 2 bins")

    def normalize(self, value: float) -> float:
        """Map a score onto [0, 1] via its range (the NRG map)."""
        lo, hi = self.range
        return (value - lo) / (hi - lo)


# ---------------------------------------------------------------------------
# answer parsing


def parse_answer(generation: Sequence[Hashable], delim: Hashable) -> tuple[list, Hashable | None]:
    """Split a generation on the last delimiter.

    Returns ``(rationale, label)``. ``label`` is the first token after the
    last delimiter, or None if there is no delimiter or nothing follows it.
    Without a delimiter the whole generation is treated as rationale.
    """
    seq = list(generation)
    for i in range(len(seq) - 1, -1, -1):
        if seq[i] == delim:
            label = seq[i + 1] if i + 1 < len(seq) else None
            return seq[:i], label
    return seq, None


# ---------------------------------------------------------------------------
# diversity


def _ngrams(tokens: Sequence[Hashable], n: int) -> list[tuple]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def diversity(rationale: Sequence[Hashable]) -> float:
    """Product over n = 2, 3, 4 of unique n-grams / total n-grams.

    An order with no n-grams at all contributes a neutral factor of 1.
    """
    # unrolled: this runs once per generation in every scoring round
    t = tuple(rationale)
    length = len(t)
    if length < 2:
        return 1.0
    t1 = t[1:]
    score = len(set(zip(t, t1))) / (length - 1)
    if length >= 3:
        t2 = t[2:]
        score *= len(set(zip(t, t1, t2))) / (length - 2)
        if length >= 4:
            score *= len(set(zip(t, t1, t2, t[3:]))) / (length - 3)
    return score


# ---------------------------------------------------------------------------
# task correctness


def task_correctness(predicted: str | None, gold: str) -> float:
    return 1.0 if predicted is not None and predicted == gold else 0.0


# ---------------------------------------------------------------------------
# plausibility


@dataclass(frozen=True)
class PlausibilityOracle:
    """Scores a rationale by the fraction of its n-grams found in a fact set."""

    facts: frozenset[tuple[str, ...]]
    n: int = 2

    def __post_init__(self):
        if not self.facts:
            raise RewardError("plausibility oracle needs a nonempty fact set")
        if any(len(f) != self.n for f in self.facts):
            raise RewardError(f"every fact must be a {self.n}-gram")

    def __call__(self, rationale: Sequence[str]) -> float:
        grams = _ngrams(list(rationale), self.n)
        if not grams:
            return 0.0
        return sum(g in self.facts for g in grams) / len(grams)

    def to_json(self) -> dict:
        return {
            "version": FACTSET_FORMAT_VERSION,
            "n": self.n,
            "facts": sorted(list(f) for f in self.facts),
        }

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "PlausibilityOracle":
        if doc.get("version") != FACTSET_FORMAT_VERSION:
            raise RewardError(f"unsupported fact-set version {doc.get('version')!r}")
        return cls(frozenset(tuple(f) for f in doc["facts"]), int(doc["n"]))


def plausibility(oracle: PlausibilityOracle, rationale: Sequence[str]) -> float:
    return oracle(rationale)


# ---------------------------------------------------------------------------
# consistency predictors


class BagClassifier:
    """Mean-pooled token embeddings -> affine map -> softmax over choices."""

    def __init__(self, vocab_size: int, labels: Sequence[str], dim: int = 16, seed: int = 0):
        self.vocab_size = vocab_size
        self.labels = list(labels)
        self.dim = dim
        rng = np.random.default_rng(seed)
        self.emb = rng.normal(0.0, 0.1, size=(vocab_size, dim))
        self.weight = rng.normal(0.0, 0.1, size=(len(self.labels), dim))
        self.bias = np.zeros(len(self.labels))
        self.trained = False

    def _pool(self, batch: Sequence[Sequence[int]]) -> np.ndarray:
        # row-normalized bag-of-tokens matrix, so pooled = counts @ emb
        counts = np.zeros((len(batch), self.vocab_size))
        for i, ids in enumerate(batch):
            if len(ids):
                np.add.at(counts[i], np.asarray(ids, dtype=np.int64), 1.0 / len(ids))
        return counts

    def _forward(self, counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pooled = counts @ self.emb
        logits = pooled @ self.weight.T + self.bias
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        return pooled, probs

    def predict_proba(self, batch: Sequence[Sequence[int]]) -> np.ndarray:
        if not self.trained:
            raise UntrainedPredictorError("consistency predictor queried before training")
        return self._forward(self._pool(batch))[1]

    def _targets(self, gold: Sequence[str]) -> np.ndarray:
        index = {lab: i for i, lab in enumerate(self.labels)}
        return np.array([index[g] for g in gold])

    def _loss_grad(self, counts: np.ndarray, y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        n = len(y)
        pooled, probs = self._forward(counts)
        loss = float(-np.log(np.maximum(probs[np.arange(n), y], 1e-300)).mean())
        dlogits = probs.copy()
        dlogits[np.arange(n), y] -= 1.0
        dlogits /= n
        grads = {
            "emb": counts.T @ (dlogits @ self.weight),
            "weight": dlogits.T @ pooled,
            "bias": dlogits.sum(axis=0),
        }
        return loss, grads

    def loss_and_grad(self, batch: Sequence[Sequence[int]], gold: Sequence[str]) -> tuple[float, dict[str, np.ndarray]]:
        """Mean cross-entropy and its gradient with respect to ``emb``, ``weight`` and ``bias``."""
        return self._loss_grad(self._pool(batch), self._targets(gold))

    def fit(self, batch: Sequence[Sequence[int]], gold: Sequence[str], epochs: int, lr: float) -> list[float]:
        """Full-batch Adam on the cross-entropy; returns the per-epoch loss."""
        y = self._targets(gold)
        counts = self._pool(batch)
        names = ("emb", "weight", "bias")
        m = {k: np.zeros_like(getattr(self, k)) for k in names}
        v = {k: np.zeros_like(getattr(self, k)) for k in names}
        b1, b2, eps = 0.9, 0.999, 1e-8
        history = []
        for step in range(1, epochs + 1):
            loss, grads = self._loss_grad(counts, y)
            history.append(loss)
            for k in names:
                g, p = grads[k], getattr(self, k)
                m[k] *= b1
                m[k] += (1 - b1) * g
                v[k] *= b2
                v[k] += (1 - b2) * g * g
                p -= lr * (m[k] / (1 - b1**step)) / (np.sqrt(v[k] / (1 - b2**step)) + eps)
        self.trained = True
        return history

    def to_json(self) -> dict:
        return {
            "labels": self.labels,
            "dim": self.dim,
            "emb": self.emb.tolist(),
            "weight": self.weight.tolist(),
            "bias": self.bias.tolist(),
            "trained": self.trained,
        }

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "BagClassifier":
        emb = np.asarray(doc["emb"], dtype=np.float64)
        model = cls(emb.shape[0], doc["labels"], int(doc["dim"]))
        model.emb = emb
        model.weight = np.asarray(doc["weight"], dtype=np.float64)
        model.bias = np.asarray(doc["bias"], dtype=np.float64)
        model.trained = bool(doc["trained"])
        return model


@dataclass
class ConsistencyPredictors:
    with_rationale: BagClassifier
    without_rationale: BagClassifier

    @property
    def labels(self) -> list[str]:
        return self.with_rationale.labels

    def to_json(self) -> dict:
        return {
            "version": PREDICTOR_FORMAT_VERSION,
            "m_qr": self.with_rationale.to_json(),
            "m_q": self.without_rationale.to_json(),
        }

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "ConsistencyPredictors":
        if doc.get("version") != PREDICTOR_FORMAT_VERSION:
            raise RewardError(f"unsupported predictor version {doc.get('version')!r}")
        return cls(BagClassifier.from_json(doc["m_qr"]), BagClassifier.from_json(doc["m_q"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ConsistencyPredictors":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PredictorConfig:
    dim: int = 16
    epochs: int = 400
    lr: float = 0.05
    seed: int = 0


def train_consistency_predictors(
    questions: Sequence[Sequence[int]],
    rationales: Sequence[Sequence[int]],
    gold: Sequence[str],
    labels: Sequence[str],
    vocab_size: int,
    config: PredictorConfig = PredictorConfig(),
) -> ConsistencyPredictors:
    """Fit the with-rationale and question-only answer predictors on seed data.

    ``labels`` is the answer label space; it must hold at least two labels and
    contain every gold answer.
    """
    if not questions:
        raise RewardError("no training data for consistency predictors")
    if not len(questions) == len(rationales) == len(gold):
        raise RewardError("questions, rationales and gold answers differ in length")
    labels = list(dict.fromkeys(labels))
    if len(labels) < 2:
        raise RewardError(f"need at least 2 distinct answer labels, got {labels}")
    missing = set(gold) - set(labels)
    if missing:
        raise RewardError(f"gold answers {sorted(missing)} are not in the label set")
    m_qr = BagClassifier(vocab_size, labels, config.dim, seed=config.seed)
    m_q = BagClassifier(vocab_size, labels, config.dim, seed=config.seed + 1)
    m_qr.fit([list(q) + list(r) for q, r in zip(questions, rationales)], gold, config.epochs, config.lr)
    m_q.fit([list(q) for q in questions], gold, config.epochs, config.lr)
    return ConsistencyPredictors(m_qr, m_q)


def consistency(
    predictors: ConsistencyPredictors,
    question: Sequence[int],
    rationale: Sequence[int],
    gold: str,
) -> float:
    """P(gold | question, rationale) - P(gold | question)."""
    k = predictors.labels.index(gold)
    p_with = predictors.with_rationale.predict_proba([list(question) + list(rationale)])[0, k]
    p_without = predictors.without_rationale.predict_proba([list(question)])[0, k]
    return float(p_with - p_without)


# ---------------------------------------------------------------------------
# scoring


@dataclass
class ScoringContext:
    """Frozen scorers plus the vocabulary they read token ids through."""

    vocab: Any
    oracle: PlausibilityOracle | None = None
    predictors: ConsistencyPredictors | None = None


def _score_plausibility(gen: Generation, ctx: ScoringContext) -> float:
    if ctx.oracle is None:
        raise RewardError("plausibility scoring needs an oracle")
    return ctx.oracle(gen.rationale)


def _score_diversity(gen: Generation, ctx: ScoringContext) -> float:
    return diversity(gen.rationale)


def _score_consistency(gen: Generation, ctx: ScoringContext) -> float:
    if ctx.predictors is None:
        raise UntrainedPredictorError("consistency scoring needs trained predictors")
    return consistency(
        ctx.predictors,
        ctx.vocab.encode(gen.question),
        ctx.vocab.encode(gen.rationale),
        gen.gold,
    )


def _score_correctness(gen: Generation, ctx: ScoringContext) -> float:
    return task_correctness(gen.predicted, gen.gold)


def default_rewards(rationale_bins: int = 5, correctness_bins: int = 2) -> list[RewardSpec]:
    """Plausibility, diversity, consistency and task correctness, in that order."""
    return [
        RewardSpec(PLAUSIBILITY, (0.0, 1.0), rationale_bins, _score_plausibility),
        RewardSpec(DIVERSITY, (0.0, 1.0), rationale_bins, _score_diversity),
        RewardSpec(CONSISTENCY, (-1.0, 1.0), rationale_bins, _score_consistency),
        RewardSpec(CORRECTNESS, (0.0, 1.0), correctness_bins, _score_correctness, value_binned=True),
    ]


def product_reward(components: Sequence[RewardSpec], bins: int = 5) -> RewardSpec:
    """A single reward equal to the product of the components' normalized scores."""
    components = list(components)

    def score(gen: Generation, ctx: ScoringContext) -> float:
        value = combine_product({spec.name: spec.scorer(gen, ctx) for spec in components}, components)
        return min(max(value, 0.0), 1.0)

    return RewardSpec(PRODUCT, (0.0, 1.0), bins, score)


def combine_product(scores: Mapping[str, float], specs: Sequence[RewardSpec]) -> float:
    value = 1.0
    for spec in specs:
        value *= spec.normalize(scores[spec.name])
    return value


def score_generation(gen: Generation, rewards: Sequence[RewardSpec], ctx: ScoringContext) -> dict[str, float]:
    scores = {}
    for spec in rewards:
        value = float(spec.scorer(gen, ctx))
        lo, hi = spec.range
        if not (lo - 1e-12 <= value <= hi + 1e-12) or math.isnan(value):
            raise RewardError(f"reward {spec.name!r} produced {value} outside {spec.range}")
        scores[spec.name] = min(max(value, lo), hi)
    return scores


def score_instance(instance, rewards: Sequence[RewardSpec], ctx: ScoringContext) -> dict[str, float]:
    """Score an instance's generation under every reward in ``rewards``."""
    return score_generation(instance_generation(instance, ctx.vocab), rewards, ctx)


def instance_generation(instance, vocab) -> Generation:
    if instance.generation is None:
        raise RewardError(f"instance {instance.id} has no generation to score")
    tokens = vocab.decode(instance.generation)
    rationale, label = parse_answer(tokens, vocab.tokens[vocab.delim_id])
    return Generation(tuple(vocab.decode(instance.question)), tuple(rationale), label, instance.gold)
