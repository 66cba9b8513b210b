"""Greedy held-out evaluation, normalized relative gain and run comparison."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .policy import GREEDY, PolicyModel, SamplingConfig, generate
from .policy.objective import conditioning_prefix
from .pool import Instance, ScheduleState, best_prefix
from .rewards import (
    CONSISTENCY,
    CORRECTNESS,
    DIVERSITY,
    PLAUSIBILITY,
    RewardSpec,
    ScoringContext,
    instance_generation,
    score_generation,
)
from .vocab import ControlTokenTable, Vocabulary

ACCURACY_RANGE = (0.0, 100.0)
SIGNIFICANCE_LEVEL = 0.05


class EvaluationError(ValueError):
    pass


def nrg(value: float, lo: float, hi: float) -> float:
    """Normalized relative gain ``(value - lo) / (hi - lo)``."""
    if not lo < hi:
        raise EvaluationError(f"empty range [{lo}, {hi}]")
    if not lo <= value <= hi:
        raise EvaluationError(f"value {value} outside [{lo}, {hi}]")
    return (value - lo) / (hi - lo)


def avg_nrg(acc: float, plau: float, div: float, cons: float) -> float:
    """Average NRG in percent of accuracy (0-100), plausibility, diversity and consistency."""
    parts = [
        nrg(acc, *ACCURACY_RANGE),
        nrg(plau, 0.0, 1.0),
        nrg(div, 0.0, 1.0),
        nrg(cons, -1.0, 1.0),
    ]
    return 100.0 * sum(parts) / len(parts)


@dataclass
class MetricsReport:
    n: int
    accuracy: float
    rewards: dict[str, float]
    avg_nrg: float
    parse_failures: int
    per_instance: dict[str, list[float | None]] = field(default_factory=dict)
    ids: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "rewards": self.rewards,
            "avg_nrg": self.avg_nrg,
            "parse_failures": self.parse_failures,
            "ids": self.ids,
            "per_instance": self.per_instance,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "MetricsReport":
        return cls(
            n=doc["n"],
            accuracy=doc["accuracy"],
            rewards=dict(doc["rewards"]),
            avg_nrg=doc["avg_nrg"],
            parse_failures=doc["parse_failures"],
            per_instance={k: list(v) for k, v in doc.get("per_instance", {}).items()},
            ids=list(doc.get("ids", [])),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "MetricsReport":
        return cls.from_json(json.loads(Path(path).read_text()))

    def summary(self) -> str:
        parts = [f"n={self.n}", f"acc={self.accuracy:.2f}"]
        parts += [f"{k}={v:.2f}" for k, v in self.rewards.items() if k != CORRECTNESS]
        parts += [f"avg_nrg={self.avg_nrg:.2f}", f"parse_failures={self.parse_failures}"]
        return " ".join(parts)


def combined_scores(report: MetricsReport, rewards: Sequence[RewardSpec]) -> list[float]:
    """Per-instance mean of normalized rewards; a missing rationale score counts as the range minimum."""
    out = []
    for i in range(report.n):
        total = 0.0
        for spec in rewards:
            value = report.per_instance[spec.name][i]
            total += 0.0 if value is None else spec.normalize(value)
        out.append(total / len(rewards))
    return out


def score_outputs(
    instances: Sequence[Instance],
    generations: Sequence[Sequence[int]],
    rewards: Sequence[RewardSpec],
    ctx: ScoringContext,
    vocab: Vocabulary,
) -> MetricsReport:
    per: dict[str, list[float | None]] = {spec.name: [] for spec in rewards}
    failures = 0
    for inst, gen in zip(instances, generations):
        probe = Instance(inst.id, inst.question, inst.choices, inst.gold, list(gen))
        parsed = instance_generation(probe, vocab)
        scores = score_generation(parsed, rewards, ctx)
        failed = parsed.predicted is None
        failures += failed
        for spec in rewards:
            # broken outputs with no rationale at all are kept out of rationale means
            skip = failed and not parsed.rationale and spec.name != CORRECTNESS
            per[spec.name].append(None if skip else scores[spec.name])
    means = {}
    for spec in rewards:
        vals = [v for v in per[spec.name] if v is not None]
        means[spec.name] = float(np.mean(vals)) if vals else spec.range[0]
    accuracy = 100.0 * means.get(CORRECTNESS, 0.0)
    if all(k in means for k in (PLAUSIBILITY, DIVERSITY, CONSISTENCY, CORRECTNESS)):
        agg = avg_nrg(accuracy, means[PLAUSIBILITY], means[DIVERSITY], means[CONSISTENCY])
    else:
        agg = 100.0 * float(np.mean([spec.normalize(means[spec.name]) for spec in rewards]))
    return MetricsReport(
        n=len(instances),
        accuracy=accuracy,
        rewards=means,
        avg_nrg=agg,
        parse_failures=failures,
        per_instance=per,
        ids=[inst.id for inst in instances],
    )


def evaluate(
    model: PolicyModel,
    instances: Sequence[Instance],
    rewards: Sequence[RewardSpec],
    table: ControlTokenTable,
    schedule: ScheduleState,
    ctx: ScoringContext,
    controls: Sequence[int] | None = None,
    config: SamplingConfig = GREEDY,
) -> MetricsReport:
    """Greedy-decode every instance under best-bin conditioning and score it.

    ``controls`` overrides the conditioning tokens (e.g. worst bins).
    """
    prefix = best_prefix(schedule, table) if controls is None else list(controls)
    prompts = [conditioning_prefix(model, prefix, inst.question) for inst in instances]
    gens = generate(model, prompts, config)
    return score_outputs(instances, gens, rewards, ctx, ctx.vocab)


def welch_t(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Welch's t statistic and Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise EvaluationError("each sample needs at least 2 values")
    va = a.var(ddof=1) / len(a)
    vb = b.var(ddof=1) / len(b)
    if va + vb == 0.0:
        raise EvaluationError("both samples have zero variance")
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (
        (va**2 / (len(a) - 1) if va else 0.0) + (vb**2 / (len(b) - 1) if vb else 0.0)
    )
    return float(t), float(df)


def t_test_one_tailed(a: Sequence[float], b: Sequence[float]) -> float:
    """One-tailed p-value for mean(a) > mean(b) under Welch's unequal-variance t-test."""
    t, df = welch_t(a, b)
    return float(stats.t.sf(t, df))


def compare(a: Sequence[float], b: Sequence[float], level: float = SIGNIFICANCE_LEVEL) -> dict:
    p = t_test_one_tailed(a, b)
    return {
        "mean_a": float(np.mean(a)),
        "mean_b": float(np.mean(b)),
        "p_value": p,
        "significant": p < level,
        "verdict": "significant" if p < level else "not-significant",
    }
