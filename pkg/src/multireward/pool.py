"""The growing data pool: scored instances, per-reward bins and batch sampling."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .rewards import RewardSpec, ScoringContext, parse_answer, score_instance
from .vocab import ControlTokenTable, Vocabulary

SEED = "silver-seed"
SAMPLED = "sampled"


class PoolError(ValueError):
    pass


@dataclass
class Instance:
    id: str
    question: list[int]
    choices: list[str]
    gold: str
    generation: list[int] | None = None
    predicted: str | None = None
    scores: dict[str, float] | None = None
    bins: dict[str, int] | None = None
    origin: str = SEED
    step: int | None = None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "question": list(self.question),
            "choices": list(self.choices),
            "gold": self.gold,
            "generation": None if self.generation is None else list(self.generation),
            "predicted": self.predicted,
            "scores": self.scores,
            "bins": self.bins,
            "origin": self.origin,
            "step": self.step,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "Instance":
        return cls(
            id=str(doc["id"]),
            question=[int(t) for t in doc["question"]],
            choices=list(doc["choices"]),
            gold=doc["gold"],
            generation=None if doc.get("generation") is None else [int(t) for t in doc["generation"]],
            predicted=doc.get("predicted"),
            scores=doc.get("scores"),
            bins=doc.get("bins"),
            origin=doc.get("origin", SEED),
            step=doc.get("step"),
        )


def predicted_label(generation: Sequence[int], vocab: Vocabulary) -> str | None:
    _, label = parse_answer(generation, vocab.delim_id)
    return None if label is None else vocab.tokens[label]


def read_jsonl(path: str | Path) -> list[Instance]:
    with open(path) as f:
        return [Instance.from_json(json.loads(line)) for line in f if line.strip()]


def write_jsonl(instances: Iterable[Instance], path: str | Path) -> None:
    with open(path, "w") as f:
        for inst in instances:
            f.write(json.dumps(inst.to_json(), sort_keys=False) + "\n")


@dataclass(frozen=True)
class ScheduleState:
    """Active rewards in conditioning order, and where new rewards are inserted."""

    active: tuple[str, ...] = ()
    direction: str = "right"

    def __post_init__(self):
        if self.direction not in ("left", "right"):
            raise PoolError(f"insertion direction must be left or right, got {self.direction!r}")
        if len(set(self.active)) != len(self.active):
            raise PoolError(f"duplicate rewards in schedule {self.active}")

    def activate(self, reward: str) -> "ScheduleState":
        if reward in self.active:
            return self
        if self.direction == "right":
            return replace(self, active=self.active + (reward,))
        return replace(self, active=(reward,) + self.active)


@dataclass
class DataPool:
    instances: list[Instance]
    rewards: dict[str, RewardSpec] = field(default_factory=dict)
    generation_counter: int = 0
    questions: dict[str, Instance] = field(default_factory=dict)
    _ids: set[str] = field(default_factory=set, repr=False)

    def __len__(self) -> int:
        return len(self.instances)

    def scored(self, reward: str) -> list[Instance]:
        return [i for i in self.instances if i.scores is not None and reward in i.scores]


def init_pool(seeds: Sequence[Instance], vocab: Vocabulary, rewards: Sequence[RewardSpec] = ()) -> DataPool:
    """Start a pool from seed instances that each carry a gold generation."""
    if not seeds:
        raise PoolError("seed set is empty")
    instances, ids = [], set()
    for inst in seeds:
        if inst.id in ids:
            raise PoolError(f"duplicate instance id {inst.id!r}")
        if inst.generation is None:
            raise PoolError(f"seed {inst.id!r} has no gold generation")
        ids.add(inst.id)
        instances.append(
            replace(
                inst,
                predicted=predicted_label(inst.generation, vocab),
                origin=SEED,
                scores=None,
                bins=None,
                step=None,
            )
        )
    questions = {inst.id: inst for inst in instances}
    return DataPool(instances, {r.name: r for r in rewards}, 0, questions, ids)


def add_generations(
    pool: DataPool,
    sampled: Sequence[tuple[str, Sequence[int]]],
    step: int,
    vocab: Vocabulary,
) -> int:
    """Append sampled generations for known questions; returns the count added."""
    for qid, _ in sampled:
        if qid not in pool.questions:
            raise PoolError(f"unknown question id {qid!r}")
    for qid, gen in sampled:
        q = pool.questions[qid]
        pool.generation_counter += 1
        new_id = f"{qid}#s{pool.generation_counter}"
        if new_id in pool._ids:
            raise PoolError(f"id collision {new_id!r}")
        pool._ids.add(new_id)
        gen = [int(t) for t in gen]
        pool.instances.append(
            Instance(
                id=new_id,
                question=list(q.question),
                choices=list(q.choices),
                gold=q.gold,
                generation=gen,
                predicted=predicted_label(gen, vocab),
                origin=SAMPLED,
                step=step,
            )
        )
    return len(sampled)


def score_pending(pool: DataPool, rewards: Sequence[RewardSpec], ctx: ScoringContext) -> int:
    """Score every instance missing any of ``rewards``. Scorers are frozen, so scores are cached."""
    n = 0
    for inst in pool.instances:
        missing = [r for r in rewards if inst.scores is None or r.name not in inst.scores]
        if missing:
            scores = dict(inst.scores or {})
            scores.update(score_instance(inst, missing, ctx))
            inst.scores = scores
            n += 1
    return n


def quantile_bins(scores: Sequence[float], ids: Sequence[str], k: int) -> list[int]:
    """Equal-mass bins from a descending sort (ties by id); bin 1 holds the top scores."""
    n = len(scores)
    order = sorted(range(n), key=lambda i: (-scores[i], ids[i]))
    base, extra = divmod(n, k)
    bins = [0] * n
    pos = 0
    for b in range(k):
        size = base + (1 if b < extra else 0)
        for i in order[pos : pos + size]:
            bins[i] = b + 1
        pos += size
    return bins


def value_bins(scores: Sequence[float]) -> list[int]:
    return [1 if s == 1 else 2 for s in scores]


def bin_by_reward(pool: DataPool, reward: RewardSpec) -> dict[str, int]:
    """Assign every instance a bin for ``reward`` and record it on the instance."""
    for inst in pool.instances:
        if inst.scores is None or reward.name not in inst.scores:
            raise PoolError(f"instance {inst.id!r} is not scored for {reward.name!r}")
    scores = [inst.scores[reward.name] for inst in pool.instances]
    if reward.value_binned:
        bins = value_bins(scores)
    else:
        bins = quantile_bins(scores, [inst.id for inst in pool.instances], reward.bins)
    out = {}
    for inst, b in zip(pool.instances, bins):
        inst.bins = {**(inst.bins or {}), reward.name: b}
        out[inst.id] = b
    return out


def control_prefix(instance: Instance, schedule: ScheduleState, table: ControlTokenTable) -> list[int]:
    prefix = []
    for name in schedule.active:
        if instance.bins is None or name not in instance.bins:
            raise PoolError(f"instance {instance.id!r} has no bin for active reward {name!r}")
        prefix.append(table[(name, instance.bins[name])])
    return prefix


def best_prefix(schedule: ScheduleState, table: ControlTokenTable) -> list[int]:
    return [table.best(name) for name in schedule.active]


def worst_prefix(schedule: ScheduleState, table: ControlTokenTable) -> list[int]:
    return [table.worst(name) for name in schedule.active]


def training_example(instance: Instance, prefix: Sequence[int], eos_id: int):
    return (list(prefix), list(instance.question), list(instance.generation) + [eos_id])


def draw_instances(instances: Sequence[Instance], batch_size: int, rng: np.random.Generator) -> list[Instance]:
    """Uniform draw; without replacement unless the batch is larger than the pool."""
    if not instances:
        raise PoolError("cannot sample from an empty pool")
    idx = rng.choice(len(instances), size=batch_size, replace=batch_size > len(instances))
    return [instances[i] for i in idx]


def sample_batch(
    instances: Sequence[Instance],
    schedule: ScheduleState,
    table: ControlTokenTable,
    batch_size: int,
    rng: np.random.Generator,
    eos_id: int,
):
    """Uniformly drawn ``(controls, input, target)`` examples, each with its own bins' prefix."""
    chosen = draw_instances(instances, batch_size, rng)
    return [training_example(inst, control_prefix(inst, schedule, table), eos_id) for inst in chosen]
