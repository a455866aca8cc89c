"""PCNN discriminator with a real/fake head and a relation head."""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .corpus import MAX_REL, EncodedBatch, EncodedSentence, collate, concat_batches
from .numerics import (
    ParamStore,
    adam_step,
    add_grads,
    conv1d_backward,
    conv1d_cached,
    log_softmax,
    piecewise_max_pool_backward,
    piecewise_max_pool_batch,
)

logger = logging.getLogger(__name__)


@dataclass
class DiscriminatorConfig:
    vocab_size: int
    n_relations: int
    word_dim: int = 50
    pos_dim: int = 5
    filters: int = 128
    window: int = 3
    keep_prob: float = 0.5
    batch_size: int = 64
    lr: float = 1e-4
    init_scale: float = 0.1

    def __post_init__(self):
        if min(self.vocab_size, self.n_relations, self.word_dim, self.pos_dim, self.filters, self.window) < 1:
            raise ValueError("discriminator dimensions must be positive")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError("keep_prob must lie in (0, 1]")


@dataclass
class DiscOutput:
    p_real: np.ndarray  # (B,)
    relation_dist: np.ndarray  # (B, K)
    source_logit: np.ndarray
    relation_logits: np.ndarray


def _as_batch(data):
    if isinstance(data, EncodedBatch):
        return data
    if isinstance(data, EncodedSentence):
        return collate([data])
    return collate(list(data))


class Discriminator:
    def __init__(self, cfg, seed=0, params=None):
        self.cfg = cfg
        if params is None:
            params = ParamStore.uniform(self.shapes(cfg), np.random.default_rng(seed), cfg.init_scale)
        self.params = params

    @staticmethod
    def shapes(cfg):
        D = cfg.word_dim + 2 * cfg.pos_dim
        F = cfg.filters
        n_pos = 2 * MAX_REL + 1
        return {
            "word_emb": (cfg.vocab_size, cfg.word_dim),
            "pos1_emb": (n_pos, cfg.pos_dim),
            "pos2_emb": (n_pos, cfg.pos_dim),
            "conv_W": (cfg.window, D, F),
            "conv_b": (F,),
            "src_W": (3 * F, 1),
            "src_b": (1,),
            "rel_W": (3 * F, cfg.n_relations),
            "rel_b": (cfg.n_relations,),
        }

    def _forward(self, batch, train, rng):
        p = self.params
        if np.any(batch.ids >= self.cfg.vocab_size) or np.any(batch.ids < 0):
            raise IndexError("token id outside the discriminator vocabulary")
        mask = batch.mask
        x = np.concatenate([p["word_emb"][batch.ids], p["pos1_emb"][batch.pos1], p["pos2_emb"][batch.pos2]], axis=2)
        x = x * mask[:, :, None]
        conv, conv_cache = conv1d_cached(x, p["conv_W"], p["conv_b"])
        act = np.tanh(conv)
        pooled, argmax = piecewise_max_pool_batch(act, batch.e1p, batch.e2p, batch.lengths)
        if train and self.cfg.keep_prob < 1.0:
            drop = (rng.random(pooled.shape) < self.cfg.keep_prob) / self.cfg.keep_prob
        else:
            drop = None
        feat = pooled * drop if drop is not None else pooled
        src = (feat @ p["src_W"] + p["src_b"])[:, 0]
        rel = feat @ p["rel_W"] + p["rel_b"]
        out = DiscOutput(expit(src), np.exp(log_softmax(rel)), src, rel)
        cache = (batch, mask, conv_cache, act, argmax, drop, feat)
        return out, cache

    def _backward(self, cache, dsrc, drel):
        p = self.params
        batch, mask, conv_cache, act, argmax, drop, feat = cache
        grads = self.params.zeros()
        grads["src_W"] = feat.T @ dsrc[:, None]
        grads["src_b"] = np.array([dsrc.sum()])
        grads["rel_W"] = feat.T @ drel
        grads["rel_b"] = drel.sum(axis=0)
        dfeat = dsrc[:, None] @ p["src_W"].T + drel @ p["rel_W"].T
        if drop is not None:
            dfeat = dfeat * drop
        dact = piecewise_max_pool_backward(dfeat, argmax, act.shape[1])
        dconv = dact * (1.0 - act * act)
        dx, grads["conv_W"], grads["conv_b"] = conv1d_backward(dconv, conv_cache)
        dx = dx * mask[:, :, None]
        Dw, Dp = self.cfg.word_dim, self.cfg.pos_dim
        np.add.at(grads["word_emb"], batch.ids, dx[:, :, :Dw])
        np.add.at(grads["pos1_emb"], batch.pos1, dx[:, :, Dw : Dw + Dp])
        np.add.at(grads["pos2_emb"], batch.pos2, dx[:, :, Dw + Dp :])
        return grads

    # ------------------------------------------------------------------

    def forward(self, data, train=False, rng=None):
        """Forward pass on an EncodedBatch, a list of EncodedSentence or one sentence."""
        if train and rng is None:
            raise ValueError("train mode needs an rng for dropout")
        return self._forward(_as_batch(data), train, rng)[0]

    def score(self, data):
        return self.forward(data, train=False)

    def losses(self, real, fake, train=False, rng=None):
        """Both loss terms and their separate gradients from one forward pass.

        Returns ``{"L_S", "L_R", "grads_S", "grads_R"}``. The source term needs
        both batches; with an empty fake batch only ``L_R`` is computed.
        """
        real = _as_batch(real) if real is not None and len(real) else None
        fake = _as_batch(fake) if fake is not None and len(fake) else None
        if real is None and fake is None:
            raise ValueError("losses need at least one non-empty batch")
        if real is not None and fake is not None:
            batch = concat_batches(real, fake)
        else:
            batch = real if real is not None else fake
        n_real = len(real) if real is not None else 0
        n_fake = len(fake) if fake is not None else 0
        if np.any(batch.relations < 0) or np.any(batch.relations >= self.cfg.n_relations):
            raise IndexError("relation label out of range")
        if train and rng is None:
            raise ValueError("train mode needs an rng for dropout")
        out, cache = self._forward(batch, train, rng)
        N = len(batch)
        result = {}
        if n_real and n_fake:
            s = out.source_logit
            is_real = np.arange(N) < n_real
            L_S = -float(np.sum(log_expit(s[:n_real]))) / n_real - float(np.sum(log_expit(-s[n_real:]))) / n_fake
            p = out.p_real
            dsrc = np.where(is_real, (p - 1.0) / n_real, p / n_fake)
            result["L_S"] = L_S
            result["grads_S"] = self._backward(cache, dsrc, np.zeros_like(out.relation_logits))
        logp = log_softmax(out.relation_logits)
        rows = np.arange(N)
        result["L_R"] = -float(np.sum(logp[rows, batch.relations])) / N
        drel = np.exp(logp)
        drel[rows, batch.relations] -= 1.0
        result["grads_R"] = self._backward(cache, np.zeros(N), drel / N)
        result["output"] = out
        return result

    def loss_source(self, real, fake, train=False, rng=None):
        if real is None or fake is None or not len(real) or not len(fake):
            raise ValueError("loss_source needs non-empty real and fake batches")
        r = self.losses(real, fake, train, rng)
        return r["L_S"], r["grads_S"]

    def loss_relation(self, real, fake, train=False, rng=None):
        r = self.losses(real, fake, train, rng)
        return r["L_R"], r["grads_R"]

    def loss_total(self, real, fake, train=False, rng=None):
        if real is None or fake is None or not len(real) or not len(fake):
            raise ValueError("loss_total needs non-empty real and fake batches")
        r = self.losses(real, fake, train, rng)
        return r["L_S"] + r["L_R"], add_grads(r["grads_S"], r["grads_R"])

    def train_step(self, real, fake, rng):
        """One Adam step on L_S + L_R with dropout on; returns the loss terms."""
        r = self.losses(real, fake, train=True, rng=rng)
        adam_step(self.params, add_grads(r["grads_S"], r["grads_R"]), self.cfg.lr)
        return r["L_S"], r["L_R"]

    def classifier_step(self, real, rng, lr=None):
        r = self.losses(real, None, train=True, rng=rng)
        adam_step(self.params, r["grads_R"], self.cfg.lr if lr is None else lr)
        return r["L_R"]

    def predict(self, encoded, batch_size=256):
        """Eval-mode relation distributions and p_real for a list of sentences."""
        dists, reals = [], []
        for i in range(0, len(encoded), batch_size):
            out = self.score(encoded[i : i + batch_size])
            dists.append(out.relation_dist)
            reals.append(out.p_real)
        K = self.cfg.n_relations
        if not dists:
            return np.zeros((0, K)), np.zeros(0)
        return np.concatenate(dists), np.concatenate(reals)

    def relation_accuracy(self, encoded):
        dist, _ = self.predict(encoded)
        gold = np.array([e.relation for e in encoded])
        return float(np.mean(dist.argmax(axis=1) == gold))


def pretrain_discriminator(disc, real, fake, epochs, rng, on_epoch=None):
    """Minimise L_S + L_R over batches mixing real and generated sentences 1:1."""
    if not real or not fake:
        raise ValueError("pretraining needs non-empty real and fake corpora")
    half = max(1, disc.cfg.batch_size // 2)
    history = []
    fake_order = rng.permutation(len(fake))
    fake_pos = 0
    for epoch in range(epochs):
        order = rng.permutation(len(real))
        tot_s = tot_r = 0.0
        n = 0
        for i in range(0, len(order), half):
            real_batch = [real[j] for j in order[i : i + half]]
            picks = []
            while len(picks) < len(real_batch):
                if fake_pos == len(fake_order):
                    fake_order = rng.permutation(len(fake))
                    fake_pos = 0
                picks.append(fake[fake_order[fake_pos]])
                fake_pos += 1
            L_S, L_R = disc.train_step(real_batch, picks, rng)
            tot_s += L_S
            tot_r += L_R
            n += 1
        record = {"L_S": tot_s / n, "L_R": tot_r / n}
        history.append(record)
        logger.info("discriminator epoch %d: L_S %.4f L_R %.4f", epoch + 1, record["L_S"], record["L_R"])
        if on_epoch:
            on_epoch(epoch + 1, record)
    return history


def train_classifier(disc, real, epochs, rng, lr=None):
    """Relation-only training on real data (the augmentation baseline)."""
    if not real:
        raise ValueError("cannot train a classifier on an empty corpus")
    bs = disc.cfg.batch_size
    history = []
    for _ in range(epochs):
        order = rng.permutation(len(real))
        tot = 0.0
        n = 0
        for i in range(0, len(order), bs):
            tot += disc.classifier_step([real[j] for j in order[i : i + bs]], rng, lr)
            n += 1
        history.append(tot / n)
    return history
