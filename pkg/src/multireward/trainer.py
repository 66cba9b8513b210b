"""Training algorithms: SFT, single-reward Quark, Classic and Additive multi-reward
conditioning, and the product / filtering baselines.

All reward-conditioned variants share one loop. Every ``explore_every`` steps the
current policy samples ``samples_per_instance`` generations per training question
(conditioned on the best bin of every active reward), the new generations are
scored, the pool is re-binned, and training continues on uniform batches drawn
from the whole pool, each example prefixed with its own bins' control tokens.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .evaluation import evaluate
from .optim import Adam
from .policy import PolicyModel, SamplingConfig, generate, snapshot_reference, train_step
from .policy.objective import conditioning_prefix
from .pool import (
    SEED,
    DataPool,
    Instance,
    ScheduleState,
    add_generations,
    best_prefix,
    bin_by_reward,
    control_prefix,
    draw_instances,
    init_pool,
    score_pending,
    training_example,
)
from .rewards import CORRECTNESS, PRODUCT, RewardSpec, ScoringContext, combine_product
from .vocab import Vocabulary

log = logging.getLogger(__name__)

ALGORITHMS = ("sft", "quark", "classic", "additive", "product", "filt-acc", "filt-all")
ORDER_MODES = ("explicit", "weak-first", "strong-first")
CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    algorithm: str = "classic"
    rewards: list[str] = field(default_factory=lambda: ["plau", "div", "cons", "acc"])
    beta: float = 0.05
    alpha: float = 0.05
    lr: float = 0.01
    warmup_steps: int = 100
    clip_norm: float = 1.0
    grad_accumulation: int = 1
    batch_size: int = 16
    total_steps: int = 2000
    explore_every: int = 200
    samples_per_instance: int = 2
    additive_interval: int = 200
    order: str = "explicit"
    direction: str = "right"
    thresholds: dict[str, float] = field(default_factory=dict)
    top_p: float = 0.7
    temperature: float = 1.0
    max_length: int = 24
    hidden: int = 64
    seed: int = 0
    version: int = CONFIG_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.order not in ORDER_MODES:
            raise ConfigError(f"unknown order mode {self.order!r}")
        if self.direction not in ("left", "right"):
            raise ConfigError(f"direction must be left or right, got {self.direction!r}")
        for name in ("explore_every", "additive_interval", "batch_size", "total_steps", "samples_per_instance",
                     "grad_accumulation", "max_length", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.beta < 0 or self.alpha < 0:
            raise ConfigError("beta and alpha must be nonnegative")
        if len(set(self.rewards)) != len(self.rewards):
            raise ConfigError(f"duplicate rewards {self.rewards}")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "version" not in doc:
            raise ConfigError("config is missing the 'version' field")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def sampling(self) -> SamplingConfig:
        return SamplingConfig("top-p", self.top_p, self.temperature, self.max_length)


@dataclass
class RunLog:
    records: list[dict] = field(default_factory=list)

    def append(self, record: dict) -> None:
        if self.records and record["step"] < self.records[-1]["step"]:
            raise ValueError("run log steps must be nondecreasing")
        self.records.append(record)

    def write(self, path: str | Path) -> None:
        with open(path, "w") as f:
            for rec in self.records:
                f.write(json.dumps(rec) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "RunLog":
        with open(path) as f:
            return cls([json.loads(line) for line in f if line.strip()])


@dataclass
class Environment:
    """Everything a run reads but never trains: data, vocabulary and frozen scorers."""

    vocab: Vocabulary
    rewards: list[RewardSpec]
    ctx: ScoringContext
    train: list[Instance]
    val: list[Instance] = field(default_factory=list)

    def reward(self, name: str) -> RewardSpec:
        for spec in self.rewards:
            if spec.name == name:
                return spec
        raise ConfigError(f"unknown reward {name!r}")

    @property
    def eval_rewards(self) -> list[RewardSpec]:
        return [r for r in self.rewards if r.name != PRODUCT]


# ---------------------------------------------------------------------------
# schedules and ordering


def classic_schedule(rewards: Sequence[str]) -> Callable[[int], ScheduleState]:
    state = ScheduleState(tuple(rewards))
    return lambda step: state


def additive_active_count(step: int, interval: int, n_rewards: int) -> int:
    return min(n_rewards, math.ceil((step + 1) / interval))


def additive_schedule(rewards: Sequence[str], interval: int, direction: str) -> Callable[[int], ScheduleState]:
    """Reward ``i`` (0-based) joins the prefix at step ``i * interval``, on the given side."""
    states = []
    state = ScheduleState((), direction)
    for name in rewards:
        state = state.activate(name)
        states.append(state)

    def at(step: int) -> ScheduleState:
        return states[additive_active_count(step, interval, len(rewards)) - 1]

    return at


def reward_strength(value: float, reward_range: tuple[float, float]) -> float:
    """Headroom of an SFT score: ``(max - value) / (max - min)``."""
    lo, hi = reward_range
    if not lo < hi:
        raise ConfigError(f"empty range {reward_range}")
    if not lo <= value <= hi:
        raise ConfigError(f"value {value} outside {reward_range}")
    return (hi - value) / (hi - lo)


def determine_order(strengths: dict[str, float], mode: str, explicit: Sequence[str] | None = None) -> list[str]:
    """Order rewards by headroom.

    ``weak-first`` puts the largest headroom (weakest SFT reward) first and
    ``strong-first`` the smallest; ties go to the lexicographically smaller name
    in both modes. ``explicit`` returns the given list unchanged.
    """
    if not strengths:
        raise ConfigError("no rewards to order")
    if mode == "explicit":
        return list(explicit if explicit is not None else strengths)
    if mode == "weak-first":
        return sorted(strengths, key=lambda k: (-strengths[k], k))
    if mode == "strong-first":
        return sorted(strengths, key=lambda k: (strengths[k], k))
    raise ConfigError(f"unknown order mode {mode!r}")


# ---------------------------------------------------------------------------
# filters


def filt_acc_keep(inst: Instance) -> bool:
    return inst.scores is not None and inst.scores.get(CORRECTNESS) == 1.0


def filt_all_keep(thresholds: dict[str, float]) -> Callable[[Instance], bool]:
    def keep(inst: Instance) -> bool:
        if not filt_acc_keep(inst):
            return False
        return all(inst.scores[name] >= tau for name, tau in thresholds.items())

    return keep


def filtered_instances(pool: DataPool, keep: Callable[[Instance], bool]) -> list[Instance]:
    """Instances passing ``keep``; falls back to the seeds when nothing passes."""
    kept = [inst for inst in pool.instances if keep(inst)]
    if kept:
        return kept
    log.warning("filter removed every instance; falling back to seed data")
    return [inst for inst in pool.instances if inst.origin == SEED]


# ---------------------------------------------------------------------------
# training loops


def _optimizer(model: PolicyModel, cfg: TrainConfig) -> Adam:
    updates = max(cfg.total_steps // cfg.grad_accumulation, 1)
    return Adam(
        model.params.size,
        cfg.lr,
        total_steps=updates,
        warmup_steps=min(cfg.warmup_steps, updates),
        clip_norm=cfg.clip_norm,
        accumulation=cfg.grad_accumulation,
    )


def _val_record(model: PolicyModel, env: Environment, schedule: ScheduleState) -> dict:
    if not env.val:
        return {}
    report = evaluate(model, env.val, env.eval_rewards, env.vocab.control, schedule, env.ctx)
    return {"val": report.rewards, "val_avg_nrg": report.avg_nrg}


def train_sft(env: Environment, cfg: TrainConfig, runlog: RunLog | None = None, log_every: int = 500) -> PolicyModel:
    """Cross-entropy training on the seed generations with no control tokens."""
    if not env.train:
        raise ConfigError("no seed data for SFT")
    vocab = env.vocab
    model = PolicyModel.initialize(
        vocab.size, cfg.hidden, vocab.bos_id, vocab.eos_id, seed=cfg.seed, zero_embeddings=sorted(vocab.control.ids())
    )
    rng = np.random.default_rng(cfg.seed)
    opt = _optimizer(model, cfg)
    examples = [(list(), list(i.question), list(i.generation) + [vocab.eos_id]) for i in env.train]
    window = []
    for step in range(cfg.total_steps):
        idx = rng.choice(len(examples), size=min(cfg.batch_size, len(examples)), replace=False)
        loss = train_step(model, None, [examples[i] for i in idx], 0.0, 0.0, opt)
        window.append(loss.cross_entropy)
        if runlog is not None and ((step + 1) % log_every == 0 or step + 1 == cfg.total_steps):
            rec = {"step": step + 1, "pool_size": len(examples), "loss": {"ce": float(np.mean(window))}}
            rec.update(_val_record(model, env, ScheduleState()))
            runlog.append(rec)
            window = []
    return model


@dataclass
class LoopSpec:
    """What distinguishes one reward-conditioned algorithm from another."""

    binned: list[RewardSpec]
    schedule: Callable[[int], ScheduleState]
    keep: Callable[[Instance], bool] | None = None
    beta: float = 0.0
    alpha: float = 0.0


def _explore(model, pool, env, cfg, schedule, rng, step) -> int:
    prefix = best_prefix(schedule, env.vocab.control)
    qids, prompts = [], []
    for inst in env.train:
        for _ in range(cfg.samples_per_instance):
            qids.append(inst.id)
            prompts.append(conditioning_prefix(model, prefix, inst.question))
    gens = generate(model, prompts, cfg.sampling(), rng)
    return add_generations(pool, list(zip(qids, gens)), step, env.vocab)


def _rebin(pool: DataPool, env: Environment, spec: LoopSpec) -> None:
    score_pending(pool, env.eval_rewards, env.ctx)
    for reward in spec.binned:
        if reward.name == PRODUCT:
            for inst in pool.instances:
                if PRODUCT not in inst.scores:
                    inst.scores[PRODUCT] = min(max(combine_product(inst.scores, env.eval_rewards), 0.0), 1.0)
        bin_by_reward(pool, reward)


def reward_conditioned_loop(
    sft_model: PolicyModel,
    env: Environment,
    cfg: TrainConfig,
    spec: LoopSpec,
    runlog: RunLog | None = None,
    pool: DataPool | None = None,
    on_batch: Callable[[list[Instance]], None] | None = None,
) -> tuple[PolicyModel, DataPool]:
    model = sft_model.copy()
    reference = snapshot_reference(sft_model)
    rng = np.random.default_rng(cfg.seed)
    pool = init_pool(env.train, env.vocab, spec.binned) if pool is None else pool
    _rebin(pool, env, spec)
    opt = _optimizer(model, cfg)
    table = env.vocab.control
    window: list = []

    def record(step: int) -> None:
        if runlog is None:
            return
        rec = {"step": step, "pool_size": len(pool), "active": list(spec.schedule(max(step - 1, 0)).active)}
        if window:
            rec["loss"] = {
                "ce": float(np.mean([w.cross_entropy for w in window])),
                "kl": float(np.mean([w.kl_penalty for w in window])),
                "entropy": float(np.mean([w.entropy_bonus for w in window])),
                "total": float(np.mean([w.total for w in window])),
            }
        rec.update(_val_record(model, env, spec.schedule(max(step - 1, 0))))
        runlog.append(rec)
        window.clear()

    for step in range(cfg.total_steps):
        schedule = spec.schedule(step)
        if step > 0 and step % cfg.explore_every == 0:
            record(step)
            added = _explore(model, pool, env, cfg, schedule, rng, step)
            _rebin(pool, env, spec)
            log.info("step %d: explored %d generations, pool size %d", step, added, len(pool))
        candidates = pool.instances if spec.keep is None else filtered_instances(pool, spec.keep)
        chosen = draw_instances(candidates, cfg.batch_size, rng)
        if on_batch is not None:
            on_batch(chosen)
        batch = [training_example(inst, control_prefix(inst, schedule, table), env.vocab.eos_id) for inst in chosen]
        window.append(train_step(model, reference, batch, spec.beta, spec.alpha, opt))
    record(cfg.total_steps)
    return model, pool


def run_quark(sft_model, env, cfg, reward: str, runlog=None, **kw):
    spec = LoopSpec([env.reward(reward)], classic_schedule([reward]), beta=cfg.beta, alpha=cfg.alpha)
    return reward_conditioned_loop(sft_model, env, cfg, spec, runlog, **kw)


def run_mario_classic(sft_model, env, cfg, rewards: Sequence[str], runlog=None, **kw):
    if len(rewards) < 2:
        raise ConfigError("classic needs at least two rewards")
    spec = LoopSpec([env.reward(r) for r in rewards], classic_schedule(rewards), beta=cfg.beta, alpha=cfg.alpha)
    return reward_conditioned_loop(sft_model, env, cfg, spec, runlog, **kw)


def run_mario_additive(sft_model, env, cfg, rewards: Sequence[str], runlog=None, **kw):
    if len(rewards) < 2:
        raise ConfigError("additive needs at least two rewards")
    schedule = additive_schedule(rewards, cfg.additive_interval, cfg.direction)
    spec = LoopSpec([env.reward(r) for r in rewards], schedule, beta=cfg.beta, alpha=cfg.alpha)
    return reward_conditioned_loop(sft_model, env, cfg, spec, runlog, **kw)


def run_product_baseline(sft_model, env, cfg, runlog=None, **kw):
    spec = LoopSpec([env.reward(PRODUCT)], classic_schedule([PRODUCT]), beta=cfg.beta, alpha=cfg.alpha)
    return reward_conditioned_loop(sft_model, env, cfg, spec, runlog, **kw)


def run_filt_acc(sft_model, env, cfg, runlog=None, **kw):
    spec = LoopSpec([], classic_schedule([]), keep=filt_acc_keep)
    return reward_conditioned_loop(sft_model, env, cfg, spec, runlog, **kw)


def run_filt_all(sft_model, env, cfg, thresholds: dict[str, float] | None = None, runlog=None, **kw):
    thresholds = dict(cfg.thresholds if thresholds is None else thresholds)
    for name, tau in thresholds.items():
        lo, hi = env.reward(name).range
        if not lo <= tau <= hi:
            raise ConfigError(f"threshold {tau} for {name!r} outside {env.reward(name).range}")
    spec = LoopSpec([], classic_schedule([]), keep=filt_all_keep(thresholds))
    return reward_conditioned_loop(sft_model, env, cfg, spec, runlog, **kw)
