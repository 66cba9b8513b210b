"""Synthetic multiple-choice rationale task with exactly computable rewards.

A question is a short sequence of symbols ``x0 .. x{m-1}``; the gold answer is
the label of the symbol in the last position. Silver rationales are drawn from
a small template grammar. Every template is built from fact-set bigrams, so
silver rationales are fully plausible, but their quality varies:

* informative cores name the answer symbol (``the last item is w2``), vague
  cores do not (``look at the end``), which moves consistency;
* repetitive rationales state the core twice, which lowers diversity.

The question-only consistency predictor pools token embeddings and cannot see
order, so it can only guess from symbol frequencies.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .pool import Instance
from .rewards import PlausibilityOracle, RewardSpec, default_rewards, product_reward
from .vocab import DELIM, Vocabulary, build_vocab, register_control_tokens

TASK_FORMAT_VERSION = 1
LABELS = tuple(f"({chr(ord('a') + i)})" for i in range(26))


class TaskError(ValueError):
    pass


@dataclass(frozen=True)
class TaskParams:
    choices: int = 4
    question_length: int = 6
    p_informative: float = 0.35
    p_repetitive: float = 0.6

    def __post_init__(self):
        if not 2 <= self.choices <= len(LABELS):
            raise TaskError(f"choices must be in [2, {len(LABELS)}], got {self.choices}")
        if self.question_length < 1:
            raise TaskError("question_length must be >= 1")
        for name in ("p_informative", "p_repetitive"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise TaskError(f"{name} must be a probability, got {value}")


CLOSINGS = (("so", "pick", "it"), ("hence", "choose", "that"))
VAGUE_CORES = (("the", "last", "item", "decides"), ("look", "at", "the", "end"))


def informative_cores(word: str) -> tuple[tuple[str, ...], ...]:
    return (("the", "last", "item", "is", word), ("sequence", "ends", "with", word))


class SyntheticTask:
    def __init__(self, params: TaskParams = TaskParams()):
        self.params = params
        m = params.choices
        self.symbols = tuple(f"x{i}" for i in range(m))
        self.words = tuple(f"w{i}" for i in range(m))
        self.labels = LABELS[:m]

    def gold_index(self, question: tuple[str, ...]) -> int:
        return self.symbols.index(question[-1])

    def gold_label(self, question: tuple[str, ...]) -> str:
        return self.labels[self.gold_index(question)]

    def rationale(self, answer: int, informative: bool, repetitive: bool, core_choice: int, closing_choice: int) -> tuple[str, ...]:
        cores = informative_cores(self.words[answer]) if informative else VAGUE_CORES
        core = cores[core_choice]
        body = core + core if repetitive else core
        return body + CLOSINGS[closing_choice]

    def all_rationales(self):
        for answer, inf, rep, cc, cl in itertools.product(range(len(self.symbols)), (True, False), (True, False), (0, 1), (0, 1)):
            yield self.rationale(answer, inf, rep, cc, cl)

    def fact_set(self) -> frozenset[tuple[str, str]]:
        facts = set()
        for r in self.all_rationales():
            facts.update(zip(r, r[1:]))
        return frozenset(facts)

    def oracle(self) -> PlausibilityOracle:
        return PlausibilityOracle(self.fact_set(), 2)

    def corpus(self) -> list[list[str]]:
        """Every content token in a fixed order, for building the vocabulary."""
        words = []
        for r in self.all_rationales():
            words.extend(r)
        return [list(self.symbols), list(self.labels), words]

    def build_vocab(self, rewards: list[RewardSpec] | None = None) -> Vocabulary:
        rewards = conditioning_rewards() if rewards is None else rewards
        return register_control_tokens(build_vocab(self.corpus()), rewards)

    def sample_silver(self, question: tuple[str, ...], rng: np.random.Generator) -> list[str]:
        p = self.params
        answer = self.gold_index(question)
        informative = bool(rng.random() < p.p_informative)
        repetitive = bool(rng.random() < p.p_repetitive)
        core_choice = int(rng.integers(2))
        closing_choice = int(rng.integers(2))
        return list(self.rationale(answer, informative, repetitive, core_choice, closing_choice)) + [DELIM, self.labels[answer]]

    def generate_splits(self, sizes: dict[str, int], seed: int, vocab: Vocabulary) -> dict[str, list[Instance]]:
        """Disjoint splits of distinct questions, each with one silver generation."""
        for name, n in sizes.items():
            if n < 1:
                raise TaskError(f"split {name!r} needs at least one instance, got {n}")
        total = sum(sizes.values())
        space = len(self.symbols) ** self.params.question_length
        if total > space:
            raise TaskError(f"{total} distinct questions requested but only {space} exist")
        rng = np.random.default_rng(seed)
        seen: set[tuple[str, ...]] = set()
        out: dict[str, list[Instance]] = {}
        for name, n in sizes.items():
            split = []
            while len(split) < n:
                q = tuple(self.symbols[i] for i in rng.integers(len(self.symbols), size=self.params.question_length))
                if q in seen:
                    continue
                seen.add(q)
                gen = self.sample_silver(q, rng)
                split.append(
                    Instance(
                        id=f"{name}-{len(split):05d}",
                        question=vocab.encode(q),
                        choices=list(self.labels),
                        gold=self.gold_label(q),
                        generation=vocab.encode(gen),
                    )
                )
            out[name] = split
        return out

    def to_json(self) -> dict:
        return {"version": TASK_FORMAT_VERSION, "params": asdict(self.params)}

    @classmethod
    def from_json(cls, doc: dict) -> "SyntheticTask":
        if doc.get("version") != TASK_FORMAT_VERSION:
            raise TaskError(f"unsupported task version {doc.get('version')!r}")
        return cls(TaskParams(**doc["params"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")


def conditioning_rewards(rationale_bins: int = 5, correctness_bins: int = 2) -> list[RewardSpec]:
    """The four rewards plus the product baseline's combined reward; all get control tokens."""
    base = default_rewards(rationale_bins, correctness_bins)
    return base + [product_reward(base, rationale_bins)]
