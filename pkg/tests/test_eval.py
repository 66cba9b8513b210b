import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy import stats

from multireward.evaluation import (
    EvaluationError,
    MetricsReport,
    avg_nrg,
    combined_scores,
    compare,
    evaluate,
    nrg,
    score_outputs,
    t_test_one_tailed,
    welch_t,
)
from multireward.pool import ScheduleState
from multireward.rewards import consistency, diversity, parse_answer
from multireward.trainer import TrainConfig, train_sft


def test_nrg_examples():
    assert nrg(57.64, 0, 100) == pytest.approx(0.5764)
    assert nrg(-0.02, -1, 1) == pytest.approx(0.49)
    assert nrg(1.0, -1, 1) == 1.0 and nrg(-1.0, -1, 1) == 0.0
    with pytest.raises(EvaluationError):
        nrg(2.0, 0, 1)
    with pytest.raises(EvaluationError):
        nrg(0.5, 1, 1)


@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.1, 100), st.floats(-20, 20))
def test_nrg_affine_invariance(a, b, scale, shift):
    lo, hi = min(a, b), max(a, b)
    assume(hi - lo > 1e-3)
    mid = (lo + hi) / 2
    base = nrg(mid, lo, hi)
    assert nrg(mid * scale + shift, lo * scale + shift, hi * scale + shift) == pytest.approx(base, abs=1e-9)
    assert nrg(hi, lo, hi) >= base >= nrg(lo, lo, hi)


def test_avg_nrg_examples():
    assert avg_nrg(57.64, 0.33, 0.95, -0.02) == pytest.approx(58.66, abs=0.01)
    assert avg_nrg(76.99, 0.71, 0.95, 0.18) == pytest.approx(75.50, abs=0.01)
    assert avg_nrg(66.06, 0.55, 0.99, 0.09) == pytest.approx(68.64, abs=0.01)


def test_welch_against_reference_implementation():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = rng.normal(0.3, 1.0, size=rng.integers(2, 40))
        b = rng.normal(0.0, 2.0, size=rng.integers(2, 40))
        ref = stats.ttest_ind(a, b, equal_var=False, alternative="greater")
        assert t_test_one_tailed(a, b) == pytest.approx(ref.pvalue, rel=1e-9)
        assert welch_t(a, b)[0] == pytest.approx(ref.statistic, rel=1e-12)


def test_t_test_properties():
    a = [0.1, 0.5, 0.3, 0.9]
    assert t_test_one_tailed(a, a) == pytest.approx(0.5)
    b = [0.2, 0.2, 0.4, 0.1, 0.0]
    assert t_test_one_tailed(a, b) + t_test_one_tailed(b, a) == pytest.approx(1.0)
    tight_hi = [10.0, 10.1, 9.9, 10.05]
    tight_lo = [0.0, 0.1, -0.1, 0.05]
    assert t_test_one_tailed(tight_hi, tight_lo) < 1e-3
    with pytest.raises(EvaluationError):
        t_test_one_tailed([1.0, 1.0], [2.0, 2.0])
    with pytest.raises(EvaluationError):
        t_test_one_tailed([1.0], [2.0, 3.0])


def test_compare_verdict():
    out = compare([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert out["p_value"] == pytest.approx(0.5) and out["verdict"] == "not-significant"
    out = compare([5.0, 5.1, 5.2], [1.0, 1.1, 1.2])
    assert out["significant"] is True and out["p_value"] < 0.05


def test_gold_outputs_score_perfectly(small_env):
    task, env, splits = small_env
    test = splits["test"]
    report = score_outputs(test, [i.generation for i in test], env.eval_rewards, env.ctx, env.vocab)
    assert report.accuracy == 100.0 and report.parse_failures == 0
    assert report.rewards["plau"] == 1.0
    expected = np.mean(
        [consistency(env.ctx.predictors, i.question, parse_answer(i.generation, env.vocab.delim_id)[0], i.gold)
         for i in test]
    )
    assert report.rewards["cons"] == pytest.approx(expected, abs=1e-12)


def test_parse_failures_are_counted(small_env):
    _, env, splits = small_env
    inst = splits["test"][:3]
    rationale = env.vocab.encode(["so", "pick", "it"])
    report = score_outputs(inst, [[], rationale, inst[2].generation], env.eval_rewards, env.ctx, env.vocab)
    assert report.parse_failures == 2
    assert report.per_instance["acc"] == [0.0, 0.0, 1.0]
    assert report.per_instance["div"][0] is None
    assert report.per_instance["div"][1] == diversity(["so", "pick", "it"])
    assert report.accuracy == pytest.approx(100 / 3)


@pytest.fixture(scope="module")
def sft_model(small_env):
    env = small_env[1]
    return train_sft(env, TrainConfig(algorithm="sft", total_steps=80, hidden=16, batch_size=8))


def test_evaluate_means_match_rescoring(small_env, sft_model):
    _, env, splits = small_env
    test = splits["test"]
    report = evaluate(sft_model, test, env.eval_rewards, env.vocab.control, ScheduleState(), env.ctx)
    again = evaluate(sft_model, test, env.eval_rewards, env.vocab.control, ScheduleState(), env.ctx)
    assert report.to_json() == again.to_json()
    for name, values in report.per_instance.items():
        kept = [v for v in values if v is not None]
        assert report.rewards[name] == pytest.approx(np.mean(kept), abs=1e-12)
    r = report.rewards
    assert report.avg_nrg == pytest.approx(avg_nrg(report.accuracy, r["plau"], r["div"], r["cons"]))


def test_report_round_trip(tmp_path, small_env, sft_model):
    _, env, splits = small_env
    report = evaluate(sft_model, splits["test"], env.eval_rewards, env.vocab.control, ScheduleState(), env.ctx)
    report.save(tmp_path / "r.json")
    again = MetricsReport.load(tmp_path / "r.json")
    assert again.to_json() == report.to_json()
    combined = combined_scores(again, env.eval_rewards)
    assert len(combined) == report.n and all(0.0 <= c <= 1.0 for c in combined)
    assert "avg_nrg" in report.summary()
