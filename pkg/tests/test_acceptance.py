"""End-to-end acceptance criteria, one test per criterion.

Each test appends a PASS/FAIL line to ``conftest.ACCEPTANCE`` (printed in
the terminal summary) before asserting.
"""
import os
import time

import numpy as np
import pytest
from conftest import ACCEPTANCE, TINY_INI, random_encoded, tiny_disc, tiny_gen

from acgan_re import pipeline
from acgan_re.adversarial import RolloutConfig, reward, rollout_rewards, score_function_estimate
from acgan_re.cli import main
from acgan_re.config import Config, parse_config
from acgan_re.corpus import (
    Grammar,
    build_vocab,
    bundled_grammar_path,
    collate,
    encode_all,
    filter_training,
    load_jsonl,
    save_jsonl,
    synth_corpus,
)
from acgan_re.discriminator import DiscOutput
from acgan_re.evaluation import PrPoint, auc, pr_points
from acgan_re.generator import GenerationError, Generator
from acgan_re.numerics import ParamStore, check_gradients, piecewise_max_pool, softmax
from test_adversarial import ConstantDisc, long_gen
from test_numerics import _affine_loss, _conv_loss, _lstm_loss, _pool_loss, brute_pool


def record(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


# ---------------------------------------------------------------- 1


def _kernel_errors(rng):
    from acgan_re.numerics import softmax_cross_entropy, softmax_cross_entropy_backward

    errs = {}
    x = rng.normal(size=(2, 3))
    s = ParamStore({"W": rng.normal(size=(3, 4)), "b": rng.normal(size=4)})
    errs["affine"] = check_gradients(_affine_loss(x, rng.normal(size=(2, 4))), s)
    B, D, H = 2, 3, 2
    s = ParamStore({
        "x": rng.normal(size=(B, D)), "h": rng.normal(size=(B, H)), "c": rng.normal(size=(B, H)),
        "W": rng.normal(size=(D + H, 4 * H)), "b": rng.normal(size=4 * H),
    })
    errs["lstm"] = check_gradients(_lstm_loss(rng.normal(size=(B, H)), rng.normal(size=(B, H)), D), s)
    s = ParamStore({"x": rng.normal(size=(2, 5, 3)), "w": rng.normal(size=(3, 3, 2)), "b": rng.normal(size=2)})
    errs["conv"] = check_gradients(_conv_loss(rng.normal(size=(2, 5, 2))), s)
    L = 7
    e1, e2 = sorted(rng.choice(L - 1, size=2, replace=False))
    s = ParamStore({"f": rng.permutation(L * 2).reshape(L, 2).astype(float)})
    errs["pool"] = check_gradients(_pool_loss(rng.normal(size=6), e1, e2), s)
    t = rng.integers(4, size=3)
    s = ParamStore({"z": rng.normal(size=(3, 4))})

    def ce(st):
        loss, probs = softmax_cross_entropy(st["z"], t)
        return float(loss.sum()), {"z": softmax_cross_entropy_backward(probs, t)}

    errs["softmax_ce"] = check_gradients(ce, s)
    return errs


def _loss_errors(seed):
    rng = np.random.default_rng(1000 + seed)
    kw = dict(eps=1e-3, per_param=6, order=4, rng=rng)
    gen = tiny_gen(seed=seed)
    batch = collate(random_encoded(rng, 2))
    errs = {"mle_loss": check_gradients(lambda s: gen.mle_loss(batch, np.random.default_rng(0), ss_threshold=1.0), gen.params, **kw)}
    disc = tiny_disc(seed=seed)
    real, fake = random_encoded(rng, 2), random_encoded(rng, 2)
    for name in ("loss_source", "loss_relation", "loss_total"):
        fn = getattr(disc, name)
        errs[name] = check_gradients(lambda s: fn(real, fake), disc.params, **kw)
    return errs


def test_criterion_1_gradients():
    t0 = time.perf_counter()
    worst = {}
    for seed in range(20):
        for k, v in {**_kernel_errors(np.random.default_rng(seed)), **_loss_errors(seed)}.items():
            worst[k] = max(worst.get(k, 0.0), v)
    elapsed = time.perf_counter() - t0
    top = max(worst, key=worst.get)
    ok = max(worst.values()) < 1e-5 and elapsed < 120
    record(1, ok, f"max rel error {worst[top]:.2e} ({top}) over 20 seeds x {len(worst)} checks in {elapsed:.1f}s")
    assert ok, worst


# ---------------------------------------------------------------- 2


def test_criterion_2_exact_identities():
    worst_ld = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        d = tiny_disc(seed=seed, scale=1.0)
        real, fake = random_encoded(rng, 4), random_encoded(rng, 3)
        L_D, _ = d.loss_total(real, fake)
        L_S, _ = d.loss_source(real, fake)
        L_R, _ = d.loss_relation(real, fake)
        worst_ld = max(worst_ld, abs(L_D - (L_S + L_R)))

        batch = collate(random_encoded(rng, 5))
        out = d.score(batch)
        q = reward(out, batch.relations)
        assert np.array_equal(q, out.relation_dist[np.arange(5), batch.relations] * out.p_real)

    rng = np.random.default_rng(0)
    mismatches = 0
    for _ in range(1000):
        L = int(rng.integers(2, 15))
        F = int(rng.integers(1, 5))
        feat = rng.normal(size=(L, F))
        e1, e2 = sorted(rng.choice(L, size=2, replace=False))
        mismatches += not np.array_equal(piecewise_max_pool(feat, e1, e2), brute_pool(feat, e1, e2))
    ok = worst_ld <= 1e-12 and mismatches == 0
    record(2, ok, f"|L_D-(L_S+L_R)| max {worst_ld:.1e}; reward product exact; pooling mismatches {mismatches}/1000")
    assert ok


# ---------------------------------------------------------------- 3


def _policy_case(rng, steps, n_actions):
    """Tabular policy: step-2 logits depend on the first action; reward per full path."""
    l1 = rng.normal(size=n_actions)
    l2 = rng.normal(size=(n_actions, n_actions)) if steps == 2 else None
    R = rng.random((n_actions,) * steps)
    return l1, l2, R


def _exact_gradient(l1, l2, R):
    p1 = softmax(l1)
    if l2 is None:
        J = p1 @ R
        return p1 * (R - J), None
    p2 = softmax(l2)
    V = np.sum(p2 * R, axis=1)
    J = p1 @ V
    return p1 * (V - J), p1[:, None] * p2 * (R - V[:, None])


def _estimates(l1, l2, R, n, rng):
    """Per-sample gradients from the score-function estimator, flattened."""
    A = len(l1)
    a1 = rng.choice(A, size=n, p=softmax(l1))
    if l2 is None:
        return np.stack([score_function_estimate([l1], [a], [R[a]])[0] for a in a1])
    p2 = softmax(l2)
    a2 = np.array([rng.choice(A, p=p2[a]) for a in a1])
    rows = []
    for a, b in zip(a1, a2):
        q = R[a, b]  # one completion per prefix: unbiased for the prefix value
        g1, g2 = score_function_estimate([l1, l2[a]], [a, b], [q, q])
        full2 = np.zeros((A, A))
        full2[a] = g2
        rows.append(np.concatenate([g1, full2.ravel()]))
    return np.stack(rows)


def test_criterion_3_reinforce_unbiased():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    n = 10_000
    worst_z = 0.0
    checked = 0
    for steps in (1, 2):
        for n_actions in (2, 3):
            for _ in range(10):
                l1, l2, R = _policy_case(rng, steps, n_actions)
                g1, g2 = _exact_gradient(l1, l2, R)
                exact = g1 if g2 is None else np.concatenate([g1, g2.ravel()])
                est = _estimates(l1, l2, R, n, rng)
                se = est.std(axis=0, ddof=1) / np.sqrt(n)
                # components with zero variance must match exactly
                z = np.where(se > 0, np.abs(est.mean(axis=0) - exact) / np.where(se > 0, se, 1), np.abs(est.mean(axis=0) - exact) * 1e12)
                worst_z = max(worst_z, float(z.max()))
                checked += z.size
    elapsed = time.perf_counter() - t0
    ok = worst_z <= 3.0 and elapsed < 60
    record(3, ok, f"max |mean-exact|/SE {worst_z:.2f} over {checked} components (10 draws x 4 policies, 1e4 samples) in {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 4


class LengthDisc(ConstantDisc):
    """Deterministic, sentence-dependent reward so rollouts have variance."""

    def score(self, batch):
        B, K = len(batch), self.cfg.n_relations
        frac = np.array([np.mean(batch.ids[i, : batch.lengths[i]] % 2) for i in range(B)])
        return DiscOutput(0.1 + 0.8 * frac, np.ones((B, K)), np.zeros(B), np.zeros((B, K)))


def test_criterion_4_rollout_semantics():
    gen = long_gen(max_len=8, seed=1)
    samples = gen.draw(np.array([0, 1, 2, 1]), np.random.default_rng(0))
    exact = True
    for value in (0.0, 0.25, 0.6, 1.0):
        Q = rollout_rewards(gen, ConstantDisc(value), samples, RolloutConfig(n_rollouts=5), np.random.default_rng(1))
        exact &= all(np.all(q == value) for q in Q)

    stds = []
    rng = np.random.default_rng(7)
    for n in (1, 4, 16, 64):
        reps = [np.concatenate(rollout_rewards(gen, LengthDisc(0), samples, RolloutConfig(n_rollouts=n), rng)) for _ in range(100)]
        reps = np.stack(reps)
        sd = reps.std(axis=0, ddof=1)
        stds.append(sd[sd > 0].mean())
    ratios = [b / a for a, b in zip(stds, stds[1:])]
    # expected ratio 1/2 for every fourfold increase
    ok = exact and all(b < a for a, b in zip(stds, stds[1:])) and all(0.35 < r < 0.65 for r in ratios)
    record(4, ok, f"constant stub exact={exact}; mean entry std n=1,4,16,64: " + ", ".join(f"{s:.4f}" for s in stds))
    assert ok


# ---------------------------------------------------------------- 5


@pytest.mark.slow
def test_criterion_5_synthetic_learning():
    t0 = time.perf_counter()
    results = []
    for seed in range(5):
        cfg = Config(seed=seed)
        schema, train, test = pipeline.load_data(cfg)
        assert len(train) == 2000 and len(test) == 500
        vocab = build_vocab(train, cfg.min_freq)
        gen_corpus = encode_all(filter_training(train, schema, cfg.max_len), vocab, cfg.max_len)
        dis_corpus = encode_all(train, vocab, cfg.max_len)
        test_enc = encode_all(test, vocab, cfg.max_len)
        fresh = Generator(pipeline.gen_config(cfg, len(vocab), len(schema)), seed=seed)
        ce0 = fresh.token_cross_entropy(gen_corpus, np.random.default_rng(0))
        gen, _ = pipeline.train_generator(cfg, gen_corpus, vocab, schema)
        ce1 = gen.token_cross_entropy(gen_corpus, np.random.default_rng(0))
        fakes = pipeline.generate_fakes(cfg, gen, schema, pipeline.fake_count(cfg, len(dis_corpus)), vocab)
        disc, _ = pipeline.train_discriminator(cfg, dis_corpus, encode_all(fakes, vocab, cfg.max_len), vocab, schema)
        acc = disc.relation_accuracy(test_enc)
        rows = pipeline.train_adversarial(cfg, gen, disc, gen_corpus, dis_corpus, schema)
        r1, r20 = rows[0]["mean_reward"], rows[-1]["mean_reward"]
        assert rows[-1]["epoch"] == 20
        results.append((ce0, ce1, acc, r1, r20))
        print(f"seed {seed}: ce {ce0:.3f}->{ce1:.3f} acc {acc:.3f} reward {r1:.4f}->{r20:.4f}")
    elapsed = time.perf_counter() - t0
    a = all(ce1 <= ce0 / 2 for ce0, ce1, *_ in results)
    b = all(acc >= 0.90 for _, _, acc, _, _ in results)
    up = sum(r20 > r1 for *_, r1, r20 in results)
    c = up >= 4
    ok = a and b and c and elapsed < 1800
    record(
        5, ok,
        f"(a) ce halved {sum(c1 <= c0 / 2 for c0, c1, *_ in results)}/5 "
        f"(b) min test acc {min(r[2] for r in results):.3f} "
        f"(c) reward rose in {up}/5 seeds; {elapsed / 60:.1f} min",
    )
    assert ok, results


# ---------------------------------------------------------------- 6


@pytest.mark.slow
def test_criterion_6_augmentation_harness():
    cfg = Config(train_fraction=0.1, augmentation_fraction=0.2)
    report = pipeline.compare_augmentation(cfg)
    complete = (
        report.seeds == [0, 1, 2, 3, 4]
        and all(len(x) == 5 for x in (report.baseline_auc, report.augmented_auc, report.delta, report.augmented_count))
        and all(n > 0 for n in report.augmented_count)
    )
    ok = complete and report.augmented_mean >= report.baseline_mean - 0.02
    record(
        6, ok,
        f"baseline mean AUC {report.baseline_mean:.4f}, augmented {report.augmented_mean:.4f} "
        f"(delta {report.mean_delta:+.4f}, {report.relative_delta_percent:+.2f}% relative)",
    )
    assert ok, report


# ---------------------------------------------------------------- 7


def _full_run(root, cfg_path):
    out = str(root)
    args = ["--config", str(cfg_path), "--seed", "3", "--out", out]
    for cmd in (["synth-corpus"], ["pretrain-gen"], ["pretrain-dis"], ["adversarial"], ["generate", "--per-relation", "3"], ["eval"]):
        assert main([*cmd, *args]) == 0, cmd
    return {name: (root / name).read_bytes() for name in sorted(os.listdir(root))}


def _ini_reading_corpus(root):
    # the CLI run trains on the corpus that synth-corpus wrote into ``root``
    return TINY_INI.replace("[data]\n", f"[data]\ntrain = {root}/train.jsonl\ntest = {root}/test.jsonl\n")


def test_criterion_7_determinism(tmp_path):
    runs = []
    for name in ("a", "b"):
        cfg = tmp_path / f"{name}.ini"
        cfg.write_text(_ini_reading_corpus(tmp_path / name))
        runs.append(_full_run(tmp_path / name, cfg))
    for name in ("c", "d"):
        root = tmp_path / name
        pipeline.run_pipeline(parse_config(TINY_INI).with_(seed=3), str(root))
        runs.append({n: (root / n).read_bytes() for n in sorted(os.listdir(root))})
    a, b, c, d = runs
    differ = sorted(k for k in a if a[k] != b.get(k)) + sorted(k for k in c if c[k] != d.get(k))
    expected = {"generator.ckpt", "discriminator-adv.ckpt", "metrics-adversarial.csv", "samples.txt", "pr.csv"}
    ok = not differ and expected <= set(a) and set(a) == set(b) and set(c) == set(d)
    record(7, ok, f"{len(a) + len(c)} artifacts compared across reruns, differing: {differ or 'none'}")
    assert ok


# ---------------------------------------------------------------- 8


def test_criterion_8_data_contracts(tmp_path):
    grammar = Grammar.load(bundled_grammar_path())
    schema = grammar.schema
    corpus = synth_corpus(grammar, 500, 11)
    save_jsonl(tmp_path / "a.jsonl", corpus, schema)
    loaded = load_jsonl(tmp_path / "a.jsonl", schema)
    save_jsonl(tmp_path / "b.jsonl", loaded, schema)
    round_trip = loaded == corpus and (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    gen = tiny_gen(vocab=12, relations=4, max_len=15, seed=5)
    gen.params["out_b"][3] = -3.0
    rng = np.random.default_rng(0)
    bad = refused = 0
    for _ in range(10_000):
        try:
            s = gen.sample_sentence(int(rng.integers(4)), rng.standard_normal(2), 1.0, rng)
        except GenerationError:
            # the documented outcome for two consecutive too-short draws
            refused += 1
            continue
        L = len(s.tokens)
        bad += not (2 <= L <= 15 and 0 <= s.e1p < s.e2p < L and 0 <= s.relation < 4 and s.source == "generated")

    pts = pr_points([0.9, 0.6, 0.4, 0.2], [1, 2, 2, 1], [1, 1, 2, 0], 0)
    want = [(1 / 3, 1.0), (1 / 3, 0.5), (2 / 3, 2 / 3), (2 / 3, 0.5)]
    pr_err = max(max(abs(p.recall - r), abs(p.precision - q)) for p, (r, q) in zip(pts, want))
    auc_err = abs(auc(pts) - (1 / 3 + (1 / 3) * (0.5 + 2 / 3) / 2))
    rect_err = abs(auc([PrPoint(0.5, 0.8, 0.9), PrPoint(1.0, 0.8, 0.1)]) - 0.8)
    worst = max(pr_err, auc_err, rect_err)
    ok = round_trip and bad == 0 and len(pts) == 4 and worst <= 1e-9
    record(8, ok, f"round trip identical={round_trip}; invariant violations {bad}/{10_000 - refused} returned ({refused} refused); PR/AUC max error {worst:.1e}")
    assert ok
