"""Command-line entry point.

    multireward prepare-data --out data/ --seed 7
    multireward train-predictors --data data/ --out data/predictors.json
    multireward run --algo sft --data data/ --predictors data/predictors.json --out runs/sft
    multireward run --algo classic --ref runs/sft --data data/ --predictors data/predictors.json --out runs/classic
    multireward eval --checkpoint runs/classic --data data/ --predictors data/predictors.json --out report.json
    multireward compare runs/classic runs/sft --metric combined
    multireward emit-plot-data runs/sft runs/classic --out curves.csv
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .evaluation import MetricsReport, combined_scores, compare, evaluate
from .policy import CheckpointError, PolicyModel
from .pool import ScheduleState, read_jsonl, write_jsonl
from .rewards import (
    PredictorConfig,
    RewardError,
    ScoringContext,
    ConsistencyPredictors,
    PlausibilityOracle,
    parse_answer,
    train_consistency_predictors,
)
from .task import SyntheticTask, TaskError, TaskParams, conditioning_rewards
from .trainer import (
    ALGORITHMS,
    ConfigError,
    Environment,
    RunLog,
    TrainConfig,
    determine_order,
    reward_strength,
    run_filt_acc,
    run_filt_all,
    run_mario_additive,
    run_mario_classic,
    run_product_baseline,
    run_quark,
    train_sft,
)
from .vocab import Vocabulary

log = logging.getLogger("multireward")

SPLITS = ("train", "val", "test")


class CLIError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _load_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CLIError(f"file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise CLIError(f"{path}: invalid JSON ({e})") from None


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1) + "\n")


def _data_file(data: Path, name: str) -> Path:
    path = data / name
    if not path.exists():
        raise CLIError(f"missing data file: {path}")
    return path


def load_environment(data: str | Path, predictors: str | Path | None) -> tuple[Environment, dict]:
    data = Path(data)
    vocab = Vocabulary.load(_data_file(data, "vocab.json"))
    oracle = PlausibilityOracle.from_json(_load_json(_data_file(data, "facts.json")))
    task_doc = _load_json(_data_file(data, "task.json"))
    rewards = conditioning_rewards(task_doc.get("rationale_bins", 5), task_doc.get("correctness_bins", 2))
    pred = None
    if predictors is not None:
        if not Path(predictors).exists():
            raise CLIError(f"predictor checkpoint not found: {predictors}")
        pred = ConsistencyPredictors.load(predictors)
    ctx = ScoringContext(vocab, oracle, pred)
    splits = {name: read_jsonl(_data_file(data, f"{name}.jsonl")) for name in SPLITS}
    return Environment(vocab, rewards, ctx, splits["train"], splits["val"]), splits


def _resolve_checkpoint(path: str | Path) -> Path:
    path = Path(path)
    if path.is_dir():
        path = path / "checkpoints" / "final.json"
    if not path.exists():
        raise CLIError(f"checkpoint not found: {path}")
    return path


def _run_active(checkpoint: Path) -> tuple[str, ...]:
    prov = checkpoint.parent.parent / "provenance.json"
    if prov.exists():
        return tuple(json.loads(prov.read_text()).get("final_active", []))
    return ()


def _report_for(path: str | Path) -> MetricsReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    if not path.exists():
        raise CLIError(f"report not found: {path}")
    return MetricsReport.load(path)


# ---------------------------------------------------------------------------
# commands


def cmd_prepare_data(args) -> int:
    params = TaskParams(args.choices, args.question_length, args.p_informative, args.p_repetitive)
    task = SyntheticTask(params)
    rewards = conditioning_rewards(args.rationale_bins, args.correctness_bins)
    vocab = task.build_vocab(rewards)
    splits = task.generate_splits({"train": args.train, "val": args.val, "test": args.test}, args.seed, vocab)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.json")
    _dump(task.oracle().to_json(), out / "facts.json")
    doc = task.to_json()
    doc.update(seed=args.seed, rationale_bins=args.rationale_bins, correctness_bins=args.correctness_bins)
    _dump(doc, out / "task.json")
    for name, instances in splits.items():
        write_jsonl(instances, out / f"{name}.jsonl")
    print(f"wrote {sum(len(v) for v in splits.values())} instances, vocabulary of {vocab.size} tokens to {out}")
    return 0


def cmd_train_predictors(args) -> int:
    data = Path(args.data)
    vocab = Vocabulary.load(_data_file(data, "vocab.json"))
    train = read_jsonl(_data_file(data, "train.jsonl"))
    cfg = PredictorConfig(**_load_json(args.config)) if args.config else PredictorConfig()
    if args.seed is not None:
        cfg = PredictorConfig(cfg.dim, cfg.epochs, cfg.lr, args.seed)
    rationales = [parse_answer(i.generation, vocab.delim_id)[0] for i in train]
    labels = list(dict.fromkeys(lab for i in train for lab in i.choices))
    pred = train_consistency_predictors(
        [i.question for i in train], rationales, [i.gold for i in train], labels, vocab.size, cfg
    )
    pred.save(args.out)
    val_path = data / "val.jsonl"
    if val_path.exists():
        val = read_jsonl(val_path)
        qr = pred.with_rationale.predict_proba(
            [i.question + parse_answer(i.generation, vocab.delim_id)[0] for i in val]
        )
        q = pred.without_rationale.predict_proba([i.question for i in val])
        gold = [pred.labels.index(i.gold) for i in val]
        acc_qr = float((qr.argmax(1) == gold).mean())
        acc_q = float((q.argmax(1) == gold).mean())
        print(f"validation accuracy: with rationale {acc_qr:.3f}, question only {acc_q:.3f}")
    return 0


def _prepare_out(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()) and not force:
        raise CLIError(f"{out} is not empty; pass --force to overwrite")
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)


def _build_config(args) -> TrainConfig:
    doc = _load_json(args.config) if args.config else {"version": 1}
    try:
        cfg = TrainConfig.from_dict(doc)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    updates = {"algorithm": args.algo}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.order is not None:
        updates["order"] = args.order
    if args.direction is not None:
        updates["direction"] = args.direction
    if args.rewards is not None:
        updates["rewards"] = [r for r in args.rewards.split(",") if r]
    return TrainConfig(**{**cfg.to_dict(), **updates})


def cmd_run(args) -> int:
    cfg = _build_config(args)
    env, splits = load_environment(args.data, args.predictors)
    if env.ctx.predictors is None:
        raise CLIError("--predictors is required")
    for name in cfg.rewards:
        env.reward(name)
    sft_model = None
    if cfg.algorithm != "sft":
        if args.ref is None:
            raise CLIError(f"--ref (an SFT checkpoint or run directory) is required for --algo {cfg.algorithm}")
        sft_model = PolicyModel.load(_resolve_checkpoint(args.ref))
        if sft_model.vocab_size != env.vocab.size:
            raise CLIError("reference checkpoint does not match the data vocabulary")

    out = Path(args.out)
    _prepare_out(out, args.force)
    _dump(cfg.to_dict(), out / "config.json")

    rewards = list(cfg.rewards)
    provenance = {"algorithm": cfg.algorithm, "ref": None if args.ref is None else str(args.ref)}
    if cfg.algorithm in ("classic", "additive", "quark") and cfg.order != "explicit":
        sft_val = evaluate(sft_model, env.val, env.eval_rewards, env.vocab.control, ScheduleState(), env.ctx)
        strengths = {r: reward_strength(sft_val.rewards[r], env.reward(r).range) for r in rewards}
        rewards = determine_order(strengths, cfg.order)
        provenance["strengths"] = strengths
    provenance["rewards"] = rewards

    runlog = RunLog()
    if cfg.algorithm == "sft":
        model = train_sft(env, cfg, runlog)
        final_active: list[str] = []
    else:
        runners = {
            "quark": lambda: run_quark(sft_model, env, cfg, rewards[0], runlog),
            "classic": lambda: run_mario_classic(sft_model, env, cfg, rewards, runlog),
            "additive": lambda: run_mario_additive(sft_model, env, cfg, rewards, runlog),
            "product": lambda: run_product_baseline(sft_model, env, cfg, runlog),
            "filt-acc": lambda: run_filt_acc(sft_model, env, cfg, runlog),
            "filt-all": lambda: run_filt_all(sft_model, env, cfg, runlog=runlog),
        }
        model, _ = runners[cfg.algorithm]()
        final_active = runlog.records[-1]["active"] if runlog.records else []
    provenance["final_active"] = final_active
    _dump(provenance, out / "provenance.json")
    model.save(out / "checkpoints" / "final.json")
    runlog.write(out / "runlog.jsonl")
    report = evaluate(
        model, splits["test"], env.eval_rewards, env.vocab.control, ScheduleState(tuple(final_active)), env.ctx
    )
    report.save(out / "report.json")
    print(report.summary())
    return 0


def cmd_eval(args) -> int:
    env, splits = load_environment(args.data, args.predictors)
    if env.ctx.predictors is None:
        raise CLIError("--predictors is required")
    ckpt = _resolve_checkpoint(args.checkpoint)
    model = PolicyModel.load(ckpt)
    if args.active is not None:
        active = tuple(r for r in args.active.split(",") if r)
    else:
        active = _run_active(ckpt)
    schedule = ScheduleState(active)
    controls = None
    if args.condition == "worst":
        controls = [env.vocab.control.worst(r) for r in active]
    report = evaluate(model, splits[args.split], env.eval_rewards, env.vocab.control, schedule, env.ctx, controls)
    report.save(args.out)
    print(report.summary())
    return 0


def cmd_compare(args) -> int:
    a, b = _report_for(args.a), _report_for(args.b)
    if args.metric == "combined":
        rewards = conditioning_rewards()[:4]
        xs, ys = combined_scores(a, rewards), combined_scores(b, rewards)
    else:
        if args.metric not in a.per_instance or args.metric not in b.per_instance:
            raise CLIError(f"metric {args.metric!r} not in both reports")
        xs = [v for v in a.per_instance[args.metric] if v is not None]
        ys = [v for v in b.per_instance[args.metric] if v is not None]
    result = {"metric": args.metric, **compare(xs, ys, args.level)}
    text = json.dumps(result, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


PLOT_FIELDS = ("run", "step", "pool_size", "accuracy", "plau", "div", "cons", "avg_nrg")


def plot_rows(run_dirs) -> list[dict]:
    rows = []
    for run in run_dirs:
        run = Path(run)
        path = run / "runlog.jsonl"
        if not path.exists():
            raise CLIError(f"run log not found: {path}")
        for rec in RunLog.read(path).records:
            val = rec.get("val", {})
            rows.append(
                {
                    "run": run.name,
                    "step": rec["step"],
                    "pool_size": rec.get("pool_size"),
                    "accuracy": 100.0 * val["acc"] if "acc" in val else None,
                    "plau": val.get("plau"),
                    "div": val.get("div"),
                    "cons": val.get("cons"),
                    "avg_nrg": rec.get("val_avg_nrg"),
                }
            )
    return rows


def cmd_emit_plot_data(args) -> int:
    rows = plot_rows(args.runs)
    with open(args.out, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=PLOT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if v is None else repr(v) if isinstance(v, float) else v for k, v in row.items()})
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multireward", description=__doc__.splitlines()[0] if __doc__ else None)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="generate the synthetic task splits")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--train", type=int, default=500)
    p.add_argument("--val", type=int, default=100)
    p.add_argument("--test", type=int, default=100)
    p.add_argument("--choices", type=int, default=4)
    p.add_argument("--question-length", type=int, default=6)
    p.add_argument("--p-informative", type=float, default=0.35)
    p.add_argument("--p-repetitive", type=float, default=0.6)
    p.add_argument("--rationale-bins", type=int, default=5)
    p.add_argument("--correctness-bins", type=int, default=2)
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("train-predictors", help="train the two consistency predictors")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_predictors)

    p = sub.add_parser("run", help="train with one algorithm")
    p.add_argument("--algo", required=True, choices=ALGORITHMS)
    p.add_argument("--data", required=True)
    p.add_argument("--predictors")
    p.add_argument("--ref", help="SFT checkpoint file or run directory")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--order", choices=("explicit", "weak-first", "strong-first"))
    p.add_argument("--direction", choices=("left", "right"))
    p.add_argument("--rewards", help="comma-separated reward names, in conditioning order")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint file or run directory")
    p.add_argument("--data", required=True)
    p.add_argument("--predictors", required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--active", help="comma-separated active rewards (default: the run's final schedule)")
    p.add_argument("--condition", choices=("best", "worst"), default="best")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="one-tailed Welch t-test: is A better than B?")
    p.add_argument("a", help="report JSON or run directory")
    p.add_argument("b", help="report JSON or run directory")
    p.add_argument("--metric", default="combined")
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("emit-plot-data", help="long-format CSV of logged validation rounds")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_emit_plot_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CLIError, ConfigError, CheckpointError, RewardError, TaskError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
