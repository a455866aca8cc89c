"""REINFORCE training of the generator against the discriminator.

Rewards are the product of the discriminator's probability for the
conditioning relation and its probability that the sentence is real.
Per-prefix rewards are Monte Carlo averages over completions sampled from
the current generator.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from .corpus import collate, encode_ids
from .generator import decode_positions
from .numerics import softmax, softmax_cross_entropy_backward

logger = logging.getLogger(__name__)


@dataclass
class RolloutConfig:
    n_rollouts: int = 6
    temperature: float = 1.0
    g_steps: int = 1
    d_steps: int = 1
    tf_batches: int = 1
    batch_size: int = 64
    chunk: int = 4096
    eval_size: int = 512

    def __post_init__(self):
        if self.n_rollouts < 1:
            raise ValueError("n_rollouts must be >= 1")
        if min(self.g_steps, self.d_steps, self.tf_batches) < 0:
            raise ValueError("step counts must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def reward(disc_out, relation):
    """Probability of ``relation`` times probability of being real.

    Works on a single-row output (returns a float) or on a batch with one
    relation per row.
    """
    dist = np.atleast_2d(disc_out.relation_dist)
    p_real = np.atleast_1d(disc_out.p_real)
    relation = np.atleast_1d(np.asarray(relation, dtype=np.int64))
    if np.any(relation < 0) or np.any(relation >= dist.shape[1]):
        raise IndexError(f"relation index {relation} out of range")
    q = dist[np.arange(len(relation)), relation] * p_real
    return float(q[0]) if q.size == 1 else q


def score_sentences(disc, tokens, e1p, e2p, relations, chunk=4096):
    """Rewards for id sequences; sequences shorter than two tokens score 0."""
    n = len(tokens)
    out = np.zeros(n)
    valid = [i for i in range(n) if len(tokens[i]) >= 2]
    for lo in range(0, len(valid), chunk):
        rows = valid[lo : lo + chunk]
        batch = collate([encode_ids(tokens[i], e1p[i], e2p[i], relations[i]) for i in rows])
        out[rows] = reward(disc.score(batch), batch.relations)
    return out


def _mean_rows(r):
    # shifted mean: exact when all entries of a row are equal
    return r[:, 0] + np.mean(r - r[:, :1], axis=1)


def rollout_rewards(gen, disc, samples, cfg, rng):
    """Expected reward for every emitted action of every sample.

    For a prefix ending before the last action, the sentence is completed
    ``cfg.n_rollouts`` times and the completion rewards averaged; the last
    entry is the reward of the finished sentence itself.
    """
    if disc.cfg.vocab_size != gen.cfg.vocab_size:
        raise ValueError(
            f"generator vocab {gen.cfg.vocab_size} does not match discriminator vocab {disc.cfg.vocab_size}"
        )
    if disc.cfg.n_relations != gen.cfg.n_relations:
        raise ValueError("generator and discriminator disagree on the relation count")
    n = cfg.n_rollouts
    B = len(samples)
    final = score_sentences(disc, samples.tokens, samples.e1p, samples.e2p, samples.relations, cfg.chunk)
    Q = [np.empty(len(a)) for a in samples.actions]
    for b in range(B):
        Q[b][-1] = final[b]
    prefixes = [(b, t) for b in range(B) for t in range(1, len(samples.actions[b]))]
    if not prefixes:
        return Q
    hs, cs = gen.trajectory_states(samples)
    per_chunk = max(1, cfg.chunk // n)
    for lo in range(0, len(prefixes), per_chunk):
        part = prefixes[lo : lo + per_chunk]
        rows = [pt for pt in part for _ in range(n)]
        bi = np.array([b for b, _ in rows])
        ti = np.array([t for _, t in rows])
        h = np.stack([hs[t - 1][b] for b, t in rows])
        c = np.stack([cs[t - 1][b] for b, t in rows])
        prev = np.array([samples.actions[b][t - 1] for b, t in rows])
        new, _, final_h = gen.continue_batch(h, c, prev, ti, cfg.temperature, rng)
        tokens = [np.concatenate([samples.actions[b][:t], np.asarray(extra, dtype=np.int64)]) for (b, t), extra in zip(rows, new)]
        lengths = np.array([len(t) for t in tokens])
        p1, p2, _ = gen._pos_heads(final_h)
        e1, e2 = decode_positions(p1, p2, np.maximum(lengths, 2))
        r = score_sentences(disc, tokens, e1, e2, samples.relations[bi], cfg.chunk)
        avg = _mean_rows(r.reshape(len(part), n))
        for (b, t), q in zip(part, avg):
            Q[b][t - 1] = q
    return Q


def policy_gradient_step(gen, samples, rewards):
    """Ascend the likelihood-ratio estimate of the expected reward (clip + Adam)."""
    loss, grads = gen.policy_loss(samples, rewards)
    gen.apply(grads)
    return loss


def teacher_forcing_step(gen, real_batch, rng):
    if real_batch is None or not len(real_batch):
        raise ValueError("teacher forcing needs a non-empty batch")
    loss, _ = gen.mle_update(real_batch, rng)
    return loss


def score_function_estimate(logits, actions, q):
    """Single-trajectory REINFORCE estimate for a tabular softmax policy.

    ``logits[t]`` are the logits used at step t, ``actions[t]`` the sampled
    action and ``q[t]`` its reward. Returns per-step gradients of
    ``sum_t q_t log p_t(a_t)`` with respect to each step's logits.
    """
    return [-softmax_cross_entropy_backward(softmax(np.asarray(l, dtype=np.float64)), a) * qt for l, a, qt in zip(logits, actions, q)]


def evaluation_reward(gen, disc, schema, size, rng, temperature=1.0, chunk=4096):
    """Mean terminal reward of ``size`` fresh samples over non-NA relations."""
    non_na = np.array(schema.non_na)
    samples = gen.draw(non_na[rng.integers(len(non_na), size=size)], rng, temperature)
    return float(np.mean(score_sentences(disc, samples.tokens, samples.e1p, samples.e2p, samples.relations, chunk)))


def adversarial_epoch(gen, disc, gen_corpus, disc_corpus, schema, cfg, rng, epoch=0, eval_rng=None):
    """One round of generator updates followed by discriminator updates.

    ``gen_corpus`` feeds teacher forcing (filtered, encoded); ``disc_corpus``
    supplies real sentences for the discriminator. ``mean_reward`` is
    measured after the updates on ``cfg.eval_size`` fresh samples drawn with
    ``eval_rng`` (passing the same seed every epoch keeps epochs comparable);
    ``batch_reward`` is the mean terminal reward of the training batches.
    """
    non_na = np.array(schema.non_na)
    bs = cfg.batch_size
    rewards_seen = []
    entries_seen = []
    pg_losses = []
    tf_losses = []
    for _ in range(cfg.g_steps):
        rels = non_na[rng.integers(len(non_na), size=bs)]
        samples = gen.draw(rels, rng, cfg.temperature)
        Q = rollout_rewards(gen, disc, samples, cfg, rng)
        rewards_seen.extend(q[-1] for q in Q)
        entries_seen.extend(np.concatenate(Q))
        pg_losses.append(policy_gradient_step(gen, samples, Q))
        for _ in range(cfg.tf_batches):
            idx = rng.choice(len(gen_corpus), size=min(bs, len(gen_corpus)), replace=False)
            tf_losses.append(teacher_forcing_step(gen, collate([gen_corpus[i] for i in idx]), rng))
    ls, lr_ = [], []
    half = max(1, bs // 2)
    for _ in range(cfg.d_steps):
        rels = non_na[rng.integers(len(non_na), size=half)]
        fake = gen.draw(rels, rng, cfg.temperature).encoded()
        idx = rng.choice(len(disc_corpus), size=min(half, len(disc_corpus)), replace=False)
        L_S, L_R = disc.train_step([disc_corpus[i] for i in idx], fake, rng)
        ls.append(L_S)
        lr_.append(L_R)

    def mean(xs):
        return float(np.mean(xs)) if xs else math.nan

    if cfg.eval_size > 0:
        mean_reward = evaluation_reward(gen, disc, schema, cfg.eval_size, eval_rng if eval_rng is not None else rng, cfg.temperature, cfg.chunk)
    else:
        mean_reward = mean(rewards_seen)
    metrics = {
        "epoch": epoch,
        "mean_reward": mean_reward,
        "batch_reward": mean(rewards_seen),
        "mean_q": mean(entries_seen),
        "L_S": mean(ls),
        "L_R": mean(lr_),
        "gen_loss": mean(tf_losses),
        "pg_loss": mean(pg_losses),
    }
    logger.info(
        "adversarial epoch %d: reward %.4f L_S %.4f L_R %.4f gen_loss %.4f",
        epoch, metrics["mean_reward"], metrics["L_S"], metrics["L_R"], metrics["gen_loss"],
    )
    return metrics
