import numpy as np
import pytest
from conftest import random_encoded, tiny_gen
from hypothesis import given, settings
from hypothesis import strategies as st

from acgan_re.corpus import BOS, EOS, PAD, collate, encode_ids
from acgan_re.generator import GenerationError, Generator, GeneratorConfig, decode_positions, pretrain_generator
from acgan_re.numerics import DimensionError, check_gradients, lstm_step, softmax, softmax_cross_entropy


def test_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(10, 3, hidden=0)
    with pytest.raises(ValueError):
        GeneratorConfig(10, 3, max_len=1)


def test_init_state_zero_and_oracle():
    gen = tiny_gen()
    gen.params["init_b"][:] = 0.0
    gen.params["rel_emb"][:] = 0.0
    assert np.array_equal(gen.init_state(1, np.zeros(2)).h, np.zeros(5))
    gen = tiny_gen(seed=4)
    p = gen.params
    noise = np.array([0.3, -1.1])
    ref = np.tanh(np.concatenate([p["rel_emb"][2], noise]) @ p["init_W"] + p["init_b"])
    s = gen.init_state(2, noise)
    assert np.allclose(s.h, ref, atol=1e-15) and np.array_equal(s.c, np.zeros(5)) and s.t == 0
    assert np.array_equal(gen.init_state(2, noise).h, s.h)


def test_init_state_errors():
    gen = tiny_gen()
    with pytest.raises(IndexError):
        gen.init_state(3, np.zeros(2))
    with pytest.raises(DimensionError):
        gen.init_state(0, np.zeros(3))


def test_step_zero_head_is_uniform():
    gen = tiny_gen()
    gen.params["out_W"][:] = 0.0
    gen.params["out_b"][:] = 0.0
    out, state = gen.step(gen.init_state(0, np.zeros(2)), BOS)
    probs = softmax(out.logits)
    assert np.allclose(probs[[0, 1, 3, 4, 5, 6, 7, 8, 9]], [0] + [1 / 8] * 8, atol=1e-15)
    assert probs[BOS] == 0.0
    assert state.emitted == (BOS,) and state.t == 1
    assert 0.0 <= out.p1_raw <= 1.0 and 0.0 <= out.p2_raw <= 1.0


def test_step_matches_composed_kernels():
    gen = tiny_gen(vocab=5, seed=2)
    p = gen.params
    s0 = gen.init_state(1, np.array([0.5, 0.5]))
    h, c, _ = lstm_step(p["word_emb"][[BOS]], s0.h[None], s0.c[None], p["lstm_W"], p["lstm_b"])
    out, _ = gen.step(s0, BOS)
    ref = (h @ p["out_W"] + p["out_b"])[0]
    keep = [1, 3, 4]
    assert np.allclose(out.logits[keep], ref[keep], atol=1e-14)
    assert np.all(out.logits[[PAD, BOS]] < -1e8)
    z = np.tanh(h @ p["pos1_W1"] + p["pos1_b1"])
    assert out.p1_raw == pytest.approx(float(1 / (1 + np.exp(-(z @ p["pos1_W2"] + p["pos1_b2"])[0, 0]))), abs=1e-14)


def test_step_after_eos_rejected():
    gen = tiny_gen()
    _, s = gen.step(gen.init_state(0, np.zeros(2)), BOS)
    _, s = gen.step(s, EOS)
    with pytest.raises(GenerationError):
        gen.step(s, 5)


def test_sample_sentence_invariants_and_determinism():
    gen = tiny_gen(max_len=12)
    gen.params["out_b"][EOS] = -2.0
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = gen.sample_sentence(int(rng.integers(3)), rng.standard_normal(2), 1.0, rng)
        assert 2 <= len(s.tokens) <= 12 and 0 <= s.e1p < s.e2p < len(s.tokens)
        assert s.source == "generated" and EOS not in s.tokens and BOS not in s.tokens
    a = gen.sample_sentence(1, np.ones(2), 1.0, np.random.default_rng(5))
    b = gen.sample_sentence(1, np.ones(2), 1.0, np.random.default_rng(5))
    assert a == b


def test_sample_too_short_raises():
    gen = tiny_gen()
    gen.params["out_b"][EOS] = 100.0
    with pytest.raises(GenerationError):
        gen.sample_sentence(0, np.zeros(2), 1.0, np.random.default_rng(0))


def test_low_temperature_is_argmax():
    gen = tiny_gen(max_len=15, seed=3, scale=1.0)
    a = gen.sample_sentence(1, np.ones(2), 1e-8, np.random.default_rng(1))
    b = gen.sample_sentence(1, np.ones(2), 1e-8, np.random.default_rng(99))
    assert a == b


@pytest.mark.parametrize(
    "p1,p2,L,expected",
    [(0.0, 1.0, 5, (0, 4)), (0.9, 0.1, 5, (0, 4)), (0.5, 0.5, 5, (2, 3)), (1.0, 1.0, 5, (3, 4)), (0.0, 0.0, 2, (0, 1))],
)
def test_decode_positions(p1, p2, L, expected):
    e1, e2 = decode_positions([p1], [p2], [L])
    assert (int(e1[0]), int(e2[0])) == expected


@settings(max_examples=200)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(2, 100))
def test_decode_positions_valid(p1, p2, L):
    e1, e2 = decode_positions([p1], [p2], [L])
    assert 0 <= e1[0] < e2[0] < L


def _perfect_generator():
    # vocab: reserved + a(4) + b(5); sentence "a b" -> BOS->a, a->b, b->EOS
    V = 6
    cfg = GeneratorConfig(V, 2, word_dim=V, rel_dim=2, z_dim=2, hidden=V, pos_hidden=2, init_scale=0.0)
    gen = Generator(cfg)
    p = gen.params
    p["word_emb"][:] = np.eye(V)
    H = V
    b = p["lstm_b"]
    b[:H] = 50.0  # input gate open
    b[H : 2 * H] = -50.0  # forget gate shut
    b[2 * H : 3 * H] = 50.0  # output gate open
    nxt = {BOS: 4, 4: 5, 5: EOS}
    for tok, target in nxt.items():
        p["lstm_W"][tok, 3 * H + target] = 50.0
    p["out_W"][:] = 200.0 * np.eye(V)
    p["pos1_b2"][:] = -100.0
    p["pos2_b2"][:] = 100.0
    return gen


def test_mle_perfect_fit():
    gen = _perfect_generator()
    batch = collate([encode_ids([4, 5], 0, 1, 1)])
    loss, _ = gen.mle_loss(batch, np.random.default_rng(0), ss_threshold=1.0)
    assert loss < 1e-4


def test_no_scheduled_sampling_draws_only_noise():
    gen = tiny_gen()
    batch = collate(random_encoded(np.random.default_rng(1), 3))
    rng = np.random.default_rng(8)
    gen.mle_loss(batch, rng, ss_threshold=1.0)
    ref = np.random.default_rng(8)
    ref.standard_normal((3, 2))
    assert rng.random() == ref.random()


def test_mle_loss_is_sum_of_branches():
    gen = tiny_gen(seed=6)
    enc = random_encoded(np.random.default_rng(2), 2)
    loss, _, parts = gen.mle_loss(collate(enc), np.random.default_rng(3), ss_threshold=1.0, return_parts=True)
    noise = np.random.default_rng(3).standard_normal((2, 2))
    ce, n = 0.0, 0
    se1 = se2 = 0.0
    for e, z in zip(enc, noise):
        state = gen.init_state(e.relation, z)
        for prev, target in zip([BOS] + list(e.ids), list(e.ids) + [EOS]):
            out, state = gen.step(state, prev)
            ce += softmax_cross_entropy(out.logits, target)[0]
            n += 1
        L = len(e.ids)
        se1 += (out.p1_raw - e.e1p / (L - 1)) ** 2
        se2 += (out.p2_raw - e.e2p / (L - 1)) ** 2
    assert loss == pytest.approx(ce / n + se1 / 2 + se2 / 2, abs=1e-12)
    assert parts["token"] == pytest.approx(ce / n, abs=1e-12)


def test_mle_rejects_short_sentences():
    gen = tiny_gen()
    with pytest.raises(ValueError):
        gen.mle_loss(collate([encode_ids([4], 0, 0, 0)]), np.random.default_rng(0))


@pytest.mark.parametrize("seed", range(3))
def test_mle_gradients(seed):
    gen = tiny_gen(seed=seed)
    batch = collate(random_encoded(np.random.default_rng(seed + 10), 2))
    err = check_gradients(
        lambda s: gen.mle_loss(batch, np.random.default_rng(0), ss_threshold=1.0),
        gen.params, eps=1e-3, per_param=15, rng=np.random.default_rng(seed), order=4,
    )
    assert err < 1e-5


def test_policy_loss_gradients():
    gen = tiny_gen(seed=1)
    samples = gen.draw(np.array([0, 2]), np.random.default_rng(4))
    q = [np.random.default_rng(5).random(len(a)) for a in samples.actions]
    err = check_gradients(lambda s: gen.policy_loss(samples, q), gen.params, eps=1e-3, per_param=15, order=4)
    assert err < 1e-5


def test_policy_loss_rejects_misaligned_rewards():
    gen = tiny_gen()
    samples = gen.draw(np.array([0, 1]), np.random.default_rng(0))
    with pytest.raises(ValueError):
        gen.policy_loss(samples, [np.zeros(1)])
    with pytest.raises(ValueError):
        gen.policy_loss(samples, [np.zeros(len(a) + 1) for a in samples.actions])


def test_rewards_align_with_actions():
    gen = tiny_gen(max_len=6)
    s = gen.draw(np.array([0, 1, 2, 0]), np.random.default_rng(0))
    for tokens, actions in zip(s.tokens, s.actions):
        assert len(actions) in (len(tokens), len(tokens) + 1)
        assert np.array_equal(actions[: len(tokens)], tokens)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_token_probabilities_sum_to_one(seed):
    gen = tiny_gen(seed=seed % 50)
    rng = np.random.default_rng(seed)
    state = gen.init_state(int(rng.integers(3)), rng.standard_normal(2))
    prev = BOS
    for _ in range(5):
        out, state = gen.step(state, prev)
        assert abs(softmax(out.logits).sum() - 1.0) < 1e-9
        prev = int(rng.integers(4, 10))


def test_pretrain_zero_epochs_and_determinism():
    enc = random_encoded(np.random.default_rng(0), 12)
    gen = tiny_gen()
    before = gen.params.copy()
    assert pretrain_generator(gen, enc, 0, np.random.default_rng(0)) == []
    assert gen.params.equals(before)
    runs = []
    for _ in range(2):
        g = tiny_gen()
        runs.append((pretrain_generator(g, enc, 2, np.random.default_rng(1)), g))
    assert runs[0][0] == runs[1][0] and runs[0][1].params.equals(runs[1][1].params)
    with pytest.raises(ValueError):
        pretrain_generator(gen, [], 1, np.random.default_rng(0))


def test_batch_draw_attempt_budget():
    gen = tiny_gen()
    gen.params["out_b"][EOS] = 100.0
    with pytest.raises(GenerationError, match="10 draws"):
        gen.draw(np.array([0, 1]), np.random.default_rng(0))
    with pytest.raises(ValueError):
        gen.sample_batch([0], np.zeros((1, 2)), 1.0, np.random.default_rng(0), attempts=0)


def test_extra_attempts_only_touch_short_rows():
    gen = tiny_gen(seed=2)
    gen.params["out_b"][EOS] = 1.0
    relations, noise = np.array([0, 1, 2] * 20), np.random.default_rng(1).standard_normal((60, 2))
    with pytest.raises(GenerationError):
        gen.sample_batch(relations, noise, 1.0, np.random.default_rng(3))
    s = gen.sample_batch(relations, noise, 1.0, np.random.default_rng(3), attempts=50)
    assert all(len(t) >= 2 for t in s.tokens) and np.array_equal(s.noise, noise)
