import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multireward.optim import Adam
from multireward.policy import (
    GREEDY,
    CheckpointError,
    PolicyModel,
    SamplingConfig,
    generate,
    get_backend,
    loss_and_grad,
    reference_logprobs,
    snapshot_reference,
)
from multireward.policy import model as model_module
from multireward.policy.objective import (
    TrainingError,
    conditioning_prefix,
    entropy,
    kl_per_token,
    log_prob,
    train_step,
)
from multireward.policy.sampling import nucleus, softmax

V, H = 9, 5
BOS, EOS = 6, 7
CONTROLS = (8,)


def tiny_model(seed=0, zero=CONTROLS, scale=0.5):
    return PolicyModel.initialize(V, H, BOS, EOS, seed=seed, zero_embeddings=zero, embed_scale=scale)


def tiny_batch():
    return [
        ([8], [0, 1, 2], [3, 4, EOS]),
        ([], [2], [5, EOS]),
        ([8], [1, 1], [0, 3, 3, 4, EOS]),
    ]


def manual_logprobs(model, prefix, target):
    """Token-by-token log p(target | prefix) through the pure-numpy step API."""
    out = []
    seq = list(prefix)
    for t in target:
        out.append(np.log(model.next_token_distribution(seq)[t]))
        seq.append(t)
    return np.array(out)


def manual_loss(model, params, batch, beta, alpha, reference):
    m = PolicyModel(V, H, BOS, EOS, params)
    ce = kl = ent = 0.0
    n = 0
    for controls, inp, target in batch:
        seq = conditioning_prefix(m, controls, inp)
        ref_seq = conditioning_prefix(m, (), inp)
        for t in target:
            p = m.next_token_distribution(seq)
            ce -= np.log(p[t])
            ent += entropy(p)
            if reference is not None:
                kl += kl_per_token(reference.next_token_distribution(ref_seq), p)
            seq.append(t)
            ref_seq.append(t)
            n += 1
    return (ce + beta * kl - alpha * ent) / n


def test_parameter_count():
    assert PolicyModel.n_params(V, H) == 2 * V * H + H * H + V
    assert tiny_model().params.size == PolicyModel.n_params(V, H)


def test_log_prob_matches_stepwise_route():
    model = tiny_model(seed=3)
    target = [3, 4, 1, EOS]
    fast = log_prob(model, [0, 1], [8], target)
    slow = manual_logprobs(model, [8, BOS, 0, 1], target)
    np.testing.assert_allclose(fast, slow, rtol=0, atol=1e-12)


def test_loss_matches_direct_evaluation():
    model = tiny_model(seed=4, zero=())
    reference = snapshot_reference(tiny_model(seed=5))
    batch = tiny_batch()
    ref = reference_logprobs(reference, batch)
    loss, _ = loss_and_grad(model, batch, 0.3, 0.2, ref)
    direct = manual_loss(model, model.params, batch, 0.3, 0.2, reference)
    assert loss.total == pytest.approx(direct, abs=1e-10)


@pytest.mark.parametrize("backend", ["python", "cython"])
def test_gradient_finite_differences(backend):
    if backend == "cython" and model_module.BACKEND != "cython":
        pytest.skip("compiled kernels not built")
    model = tiny_model(seed=6, zero=())
    reference = snapshot_reference(tiny_model(seed=7))
    batch = tiny_batch()
    ref = reference_logprobs(reference, batch, backend)
    _, grad = loss_and_grad(model, batch, 0.4, 0.3, ref, backend=backend)
    h = 1e-5
    num = np.zeros_like(grad)
    for j in range(grad.size):
        p = model.params.copy()
        p[j] += h
        up = loss_and_grad(model, batch, 0.4, 0.3, ref, params=p, backend=backend)[0].total
        p[j] -= 2 * h
        down = loss_and_grad(model, batch, 0.4, 0.3, ref, params=p, backend=backend)[0].total
        num[j] = (up - down) / (2 * h)
    assert np.linalg.norm(grad - num) / np.linalg.norm(num) < 1e-6


def test_backends_agree():
    if model_module.BACKEND != "cython":
        pytest.skip("compiled kernels not built")
    model = tiny_model(seed=8, zero=())
    reference = snapshot_reference(tiny_model(seed=9))
    batch = tiny_batch()
    ref = reference_logprobs(reference, batch, "python")
    np.testing.assert_allclose(reference_logprobs(reference, batch, "cython"), ref, atol=1e-13)
    lp, gp = loss_and_grad(model, batch, 0.2, 0.1, ref, backend="python")
    lc, gc = loss_and_grad(model, batch, 0.2, 0.1, ref, backend="cython")
    assert lp.total == pytest.approx(lc.total, abs=1e-12)
    np.testing.assert_allclose(gc, gp, atol=1e-12)


def test_unknown_backend():
    with pytest.raises(ValueError):
        get_backend("fortran")


def test_kl_zero_with_zero_control_embeddings():
    model = tiny_model(seed=10)
    reference = snapshot_reference(model)
    batch = tiny_batch()
    loss, _ = loss_and_grad(model, batch, 1.0, 0.0, reference_logprobs(reference, batch))
    assert abs(loss.kl_penalty) <= 1e-12


def test_kl_positive_when_controls_shift_the_state():
    model = tiny_model(seed=10, zero=())
    reference = snapshot_reference(model)
    batch = tiny_batch()
    loss, _ = loss_and_grad(model, batch, 1.0, 0.0, reference_logprobs(reference, batch))
    assert loss.kl_penalty > 1e-6


def test_kl_and_entropy_helpers():
    assert kl_per_token([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert kl_per_token([1.0, 0.0], [0.5, 0.5]) == pytest.approx(np.log(2))
    assert entropy([0.25] * 4) == pytest.approx(np.log(4))
    with pytest.raises(ValueError):
        kl_per_token([1.0], [0.5, 0.5])


def test_beta_needs_reference():
    model = tiny_model()
    with pytest.raises(ValueError):
        loss_and_grad(model, tiny_batch(), beta=0.1)


def test_out_of_range_ids_rejected():
    model = tiny_model()
    with pytest.raises(ValueError):
        loss_and_grad(model, [([], [V + 1], [EOS])])


def test_train_step_rejects_non_finite():
    model = tiny_model()
    model.params[:] = np.nan
    with pytest.raises(TrainingError):
        train_step(model, None, tiny_batch(), 0.0, 0.0, Adam(model.params.size, 0.01, 10))


def test_train_step_reduces_loss():
    model = tiny_model(seed=11)
    batch = tiny_batch()
    opt = Adam(model.params.size, 0.05, 100, clip_norm=None)
    first = train_step(model, None, batch, 0.0, 0.0, opt).total
    for _ in range(60):
        last = train_step(model, None, batch, 0.0, 0.0, opt).total
    assert last < first - 0.5


# -- sampling ------------------------------------------------------------------


prob_vectors = st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12).filter(lambda x: sum(x) > 1e-3)


@given(prob_vectors, st.floats(0.01, 1.0))
def test_nucleus_smallest_prefix(raw, p):
    probs = np.asarray(raw) / np.sum(raw)
    out = nucleus(probs, p)
    assert out.sum() == pytest.approx(1.0)
    kept = out > 0
    # every kept token is at least as likely as every dropped token
    if (~kept).any():
        assert probs[kept].min() >= probs[~kept].max()
    mass = probs[kept].sum()
    assert mass >= p - 1e-9 or kept.all()
    # removing the least likely kept token drops below p
    assert mass - probs[kept].min() < p + 1e-12
    np.testing.assert_allclose(out[kept], probs[kept] / mass)


def test_nucleus_examples():
    np.testing.assert_allclose(nucleus(np.array([0.5, 0.3, 0.2]), 0.7), [0.625, 0.375, 0.0])
    np.testing.assert_allclose(nucleus(np.array([0.5, 0.3, 0.2]), 1.0), [0.5, 0.3, 0.2])
    np.testing.assert_allclose(nucleus(np.array([0.9, 0.1]), 0.5), [1.0, 0.0])


def test_temperature_divides_logits():
    z = np.array([1.0, 2.0, -0.5])
    np.testing.assert_allclose(softmax(z, 0.5), softmax(z * 2.0))


def test_sampling_config_validation():
    for kw in ({"strategy": "beam"}, {"p": 0.0}, {"temperature": 0.0}, {"max_length": 0}):
        with pytest.raises(ValueError):
            SamplingConfig(**kw)


def test_greedy_generate_matches_stepwise_argmax():
    model = tiny_model(seed=12, zero=())
    prompts = [[BOS, 0, 1], [8, BOS, 2], [BOS, 3, 3, 3]]
    out = generate(model, prompts, SamplingConfig("greedy", max_length=6))
    for prompt, gen in zip(prompts, out):
        seq, expect = list(prompt), []
        for _ in range(6):
            t = int(np.argmax(model.next_token_distribution(seq)))
            if t == EOS:
                break
            expect.append(t)
            seq.append(t)
        assert gen == expect


def test_sampled_generation_is_seeded():
    model = tiny_model(seed=13, zero=())
    prompts = [[BOS, 0]] * 5 + [[8, BOS, 1]] * 3
    cfg = SamplingConfig("top-p", p=0.9, max_length=8)
    a = generate(model, prompts, cfg, np.random.default_rng(5))
    b = generate(model, prompts, cfg, np.random.default_rng(5))
    assert a == b
    assert all(len(g) <= 8 and EOS not in g for g in a)
    with pytest.raises(ValueError):
        generate(model, prompts, cfg)


def test_top_p_with_tiny_p_is_greedy():
    model = tiny_model(seed=14, zero=())
    prompts = [[BOS, 0], [BOS, 4, 2]]
    greedy = generate(model, prompts, GREEDY)
    sampled = generate(model, prompts, SamplingConfig("top-p", p=1e-9), np.random.default_rng(0))
    assert greedy == sampled


# -- checkpoints and optimizer ---------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    model = tiny_model(seed=15)
    model.save(tmp_path / "m.json")
    again = PolicyModel.load(tmp_path / "m.json")
    np.testing.assert_array_equal(again.params, model.params)
    assert (again.bos_id, again.eos_id) == (BOS, EOS)
    with pytest.raises(CheckpointError):
        PolicyModel.load(tmp_path / "missing.json")
    doc = model.to_json()
    doc["version"] = 2
    with pytest.raises(CheckpointError):
        PolicyModel.from_json(doc)
    with pytest.raises(CheckpointError):
        PolicyModel(V, H, BOS, EOS, np.zeros(3))


def test_reference_is_frozen():
    model = tiny_model()
    ref = snapshot_reference(model)
    with pytest.raises(ValueError):
        ref.params[0] = 1.0
    model.params[0] += 1.0
    assert ref.params[0] != model.params[0]


def test_adam_schedule_and_accumulation():
    opt = Adam(2, 1.0, total_steps=10, warmup_steps=4, clip_norm=None, accumulation=2)
    assert [opt.learning_rate(t) for t in range(4)] == [0.25, 0.5, 0.75, 1.0]
    assert opt.learning_rate(9) == pytest.approx(1 / 6)
    params = np.zeros(2)
    assert opt.step(params, np.array([1.0, -1.0])) is False
    assert np.all(params == 0)
    assert opt.step(params, np.array([1.0, -1.0])) is True
    assert params[0] < 0 < params[1]


@settings(max_examples=30)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=3))
def test_adam_clipping(g):
    opt = Adam(3, 0.1, 10, clip_norm=1.0)
    opt.step(np.zeros(3), np.asarray(g))
    assert np.linalg.norm(opt.m / (1 - opt.beta1)) <= 1.0 + 1e-9
