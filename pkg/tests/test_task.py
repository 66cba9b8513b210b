import numpy as np
import pytest

from multireward.rewards import diversity, parse_answer
from multireward.task import SyntheticTask, TaskError, TaskParams


def test_gold_rule_and_labels():
    task = SyntheticTask(TaskParams(choices=4, question_length=5))
    assert task.labels == ("(a)", "(b)", "(c)", "(d)")
    assert task.gold_label(("x0", "x1", "x3", "x2", "x1")) == "(b)"


def test_every_template_is_plausible():
    task = SyntheticTask()
    oracle = task.oracle()
    for rationale in task.all_rationales():
        assert oracle(rationale) == 1.0


def test_repetitive_rationales_are_less_diverse():
    task = SyntheticTask()
    once = task.rationale(1, True, False, 0, 0)
    twice = task.rationale(1, True, True, 0, 0)
    assert diversity(once) == 1.0 and diversity(twice) < 0.8


def test_splits_are_disjoint_and_parse(small_env):
    task, env, splits = small_env
    questions = [tuple(i.question) for s in splits.values() for i in s]
    assert len(questions) == len(set(questions))
    for inst in splits["train"]:
        rationale, label = parse_answer(inst.generation, env.vocab.delim_id)
        assert env.vocab.tokens[label] == inst.gold
        assert inst.gold in inst.choices
        assert task.oracle()(env.vocab.decode(rationale)) == 1.0


def test_generation_is_seeded():
    task = SyntheticTask()
    vocab = task.build_vocab()
    a = task.generate_splits({"train": 20, "test": 5}, 4, vocab)
    b = task.generate_splits({"train": 20, "test": 5}, 4, vocab)
    assert [i.to_json() for i in a["train"]] == [i.to_json() for i in b["train"]]


def test_invalid_params():
    with pytest.raises(TaskError):
        TaskParams(choices=1)
    with pytest.raises(TaskError):
        TaskParams(p_informative=1.5)
    task = SyntheticTask(TaskParams(choices=2, question_length=2))
    with pytest.raises(TaskError):
        task.generate_splits({"train": 10}, 0, task.build_vocab())
    with pytest.raises(TaskError):
        task.generate_splits({"train": 0}, 0, task.build_vocab())


def test_task_json_round_trip():
    task = SyntheticTask(TaskParams(choices=3))
    again = SyntheticTask.from_json(task.to_json())
    assert again.params == task.params
    with pytest.raises(TaskError):
        SyntheticTask.from_json({"version": 9})


def test_vocab_fits_budget():
    vocab = SyntheticTask().build_vocab()
    assert vocab.size <= 64
    assert len(vocab.control) == 22
