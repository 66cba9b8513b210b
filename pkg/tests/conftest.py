from __future__ import annotations

import numpy as np
import pytest

from multireward.pool import Instance
from multireward.rewards import PredictorConfig, ScoringContext, parse_answer, train_consistency_predictors
from multireward.task import SyntheticTask, conditioning_rewards
from multireward.trainer import Environment


def make_environment(sizes: dict[str, int], seed: int = 3, epochs: int = 150):
    """Synthetic task, vocabulary, splits, trained predictors and an Environment."""
    task = SyntheticTask()
    rewards = conditioning_rewards()
    vocab = task.build_vocab(rewards)
    splits = task.generate_splits(sizes, seed, vocab)
    train = splits["train"]
    rationales = [parse_answer(i.generation, vocab.delim_id)[0] for i in train]
    predictors = train_consistency_predictors(
        [i.question for i in train],
        rationales,
        [i.gold for i in train],
        list(task.labels),
        vocab.size,
        PredictorConfig(epochs=epochs),
    )
    ctx = ScoringContext(vocab, task.oracle(), predictors)
    env = Environment(vocab, rewards, ctx, train, splits.get("val", []))
    return task, env, splits


@pytest.fixture(scope="session")
def small_env():
    return make_environment({"train": 60, "val": 20, "test": 20})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def scored_instances(scores: list[float], name: str = "r", prefix: str = "i") -> list[Instance]:
    return [
        Instance(f"{prefix}{k:04d}", [0], ["(a)", "(b)"], "(a)", [0], scores={name: s})
        for k, s in enumerate(scores)
    ]


# -- acceptance report ---------------------------------------------------------------

_CRITERIA: list[str] = []


@pytest.fixture
def report_criterion():
    """Record and print a one-line verdict for an acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        _CRITERIA.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
