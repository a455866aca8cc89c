"""Relation- and noise-conditioned LSTM generator with a token head and two
entity-position heads."""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import kernels
from .corpus import BOS, EOS, PAD, EncodedBatch, RelationalSentence, collate
from .numerics import (
    DimensionError,
    ParamStore,
    adam_step,
    clip_gradients,
    log_softmax,
    lstm_step,
    lstm_step_backward,
    softmax,
    softmax_cross_entropy_backward,
)

logger = logging.getLogger(__name__)


class GenerationError(RuntimeError):
    pass


# PAD and BOS are never valid outputs; a fixed additive bias removes them
# from the token distribution everywhere (sampling, MLE, policy gradient)
DRAW_ATTEMPTS = 10
NEVER_EMIT = (PAD, BOS)
_MASK_VALUE = -1e9


@dataclass
class GeneratorConfig:
    vocab_size: int
    n_relations: int
    word_dim: int = 50
    rel_dim: int = 50
    z_dim: int = 50
    hidden: int = 120
    pos_hidden: int = 64
    max_len: int = 100
    ss_threshold: float = 0.5
    batch_size: int = 64
    lr: float = 1e-3
    clip: float = 5.0
    init_scale: float = 0.1

    def __post_init__(self):
        dims = (self.vocab_size, self.n_relations, self.word_dim, self.rel_dim, self.z_dim, self.hidden, self.pos_hidden)
        if min(dims) < 1:
            raise ValueError("generator dimensions must be >= 1")
        if self.max_len < 2:
            raise ValueError("max_len must be >= 2")


@dataclass
class GenState:
    """Recurrent state plus the tokens fed so far (``t == len(emitted)``)."""

    h: np.ndarray
    c: np.ndarray
    emitted: tuple = ()

    @property
    def t(self):
        return len(self.emitted)


@dataclass
class GenOutput:
    logits: np.ndarray
    p1_raw: float
    p2_raw: float


@dataclass
class Samples:
    """A batch of generated sentences with everything needed to score and
    differentiate them. ``actions`` are the sampled ids including a trailing
    EOS when one was emitted."""

    relations: np.ndarray
    noise: np.ndarray
    tokens: list
    actions: list
    e1p: np.ndarray
    e2p: np.ndarray
    temperature: float = 1.0

    def __len__(self):
        return len(self.tokens)

    def encoded(self):
        from .corpus import encode_ids

        return [encode_ids(t, a, b, r) for t, a, b, r in zip(self.tokens, self.e1p, self.e2p, self.relations)]

    def batch(self):
        return collate(self.encoded())

    def sentences(self, vocab):
        return [
            RelationalSentence(tuple(vocab.tokens(t)), int(a), int(b), int(r), "generated")
            for t, a, b, r in zip(self.tokens, self.e1p, self.e2p, self.relations)
        ]


def decode_positions(p1, p2, lengths):
    """Map squashed position outputs to ordered integer positions."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    last = np.asarray(lengths, dtype=np.int64) - 1
    a = np.floor(p1 * last + 0.5).astype(np.int64)
    b = np.floor(p2 * last + 0.5).astype(np.int64)
    e1 = np.minimum(a, b)
    e2 = np.maximum(a, b)
    same = e1 == e2
    e2 = np.where(same, np.minimum(e1 + 1, last), e2)
    e1 = np.where(e1 == e2, e1 - 1, e1)
    return e1, e2


class Generator:
    def __init__(self, cfg, seed=0, params=None):
        self.cfg = cfg
        if params is None:
            params = ParamStore.uniform(self.shapes(cfg), np.random.default_rng(seed), cfg.init_scale)
        self.params = params
        self._mask = np.zeros(cfg.vocab_size)
        self._mask[[t for t in NEVER_EMIT if t < cfg.vocab_size]] = _MASK_VALUE

    @staticmethod
    def shapes(cfg):
        H, P = cfg.hidden, cfg.pos_hidden
        shapes = {
            "word_emb": (cfg.vocab_size, cfg.word_dim),
            "rel_emb": (cfg.n_relations, cfg.rel_dim),
            "init_W": (cfg.rel_dim + cfg.z_dim, H),
            "init_b": (H,),
            "lstm_W": (cfg.word_dim + H, 4 * H),
            "lstm_b": (4 * H,),
            "out_W": (H, cfg.vocab_size),
            "out_b": (cfg.vocab_size,),
        }
        for k in ("pos1", "pos2"):
            shapes.update({f"{k}_W1": (H, P), f"{k}_b1": (P,), f"{k}_W2": (P, 1), f"{k}_b2": (1,)})
        return shapes

    # ------------------------------------------------------------------
    # building blocks (batched)

    def _check_relations(self, relations):
        relations = np.asarray(relations, dtype=np.int64)
        if np.any(relations < 0) or np.any(relations >= self.cfg.n_relations):
            raise IndexError(f"invalid relation index in {relations}")
        return relations

    def _initial(self, relations, noise):
        p = self.params
        noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
        if noise.shape[1] != self.cfg.z_dim:
            raise DimensionError(f"noise has length {noise.shape[1]}, expected z_dim={self.cfg.z_dim}")
        cond = np.concatenate([p["rel_emb"][relations], noise], axis=1)
        h0 = np.tanh(cond @ p["init_W"] + p["init_b"])
        return h0, np.zeros_like(h0), cond

    def _pos_heads(self, h):
        p = self.params
        out, caches = [], []
        for k in ("pos1", "pos2"):
            z = np.tanh(h @ p[f"{k}_W1"] + p[f"{k}_b1"])
            y = expit((z @ p[f"{k}_W2"] + p[f"{k}_b2"])[:, 0])
            out.append(y)
            caches.append((z, y))
        return out[0], out[1], caches

    def _pos_heads_backward(self, h, caches, d1, d2, grads):
        p = self.params
        dh = np.zeros_like(h)
        for k, (z, y), dp in zip(("pos1", "pos2"), caches, (d1, d2)):
            do = (dp * y * (1.0 - y))[:, None]
            grads[f"{k}_W2"] += z.T @ do
            grads[f"{k}_b2"] += do.sum(axis=0)
            da = (do @ p[f"{k}_W2"].T) * (1.0 - z * z)
            grads[f"{k}_W1"] += h.T @ da
            grads[f"{k}_b1"] += da.sum(axis=0)
            dh += da @ p[f"{k}_W1"].T
        return dh

    def _cell(self, tokens, h, c):
        p = self.params
        h2, c2, cache = lstm_step(p["word_emb"][tokens], h, c, p["lstm_W"], p["lstm_b"])
        logits = h2 @ p["out_W"] + p["out_b"] + self._mask
        return logits, h2, c2, cache

    def _unroll(self, relations, noise, inputs, ss_threshold=1.0, rng=None):
        """Run the LSTM over ``inputs`` (B, T). With ``ss_threshold < 1`` each
        input after the first is replaced by a model sample when a per-row
        coin exceeds the threshold."""
        h, c, cond = self._initial(relations, noise)
        fw = {"cond": cond, "h0": h, "relations": relations, "inputs": [], "caches": [], "h": [], "c": [], "logits": []}
        prev_logits = None
        for s in range(inputs.shape[1]):
            x = inputs[:, s]
            if s > 0 and ss_threshold < 1.0:
                coins = rng.random(len(x))
                model = kernels.sample_categorical(np.ascontiguousarray(softmax(prev_logits)), rng.random(len(x)))
                x = np.where(coins < ss_threshold, x, model)
            logits, h, c, cache = self._cell(x, h, c)
            fw["inputs"].append(x)
            fw["caches"].append(cache)
            fw["h"].append(h)
            fw["c"].append(c)
            fw["logits"].append(logits)
            prev_logits = logits
        return fw

    def _backward(self, fw, dlogits, dh_extra, grads):
        p = self.params
        D = self.cfg.word_dim
        H = self.cfg.hidden
        B = fw["h0"].shape[0]
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for s in reversed(range(len(fw["caches"]))):
            h = fw["h"][s]
            dl = dlogits[s]
            grads["out_W"] += h.T @ dl
            grads["out_b"] += dl.sum(axis=0)
            dh = dl @ p["out_W"].T + dh_next
            if s in dh_extra:
                dh = dh + dh_extra[s]
            dx, dh_next, dc_next, dW, db = lstm_step_backward(dh, dc_next, fw["caches"][s])
            grads["lstm_W"] += dW
            grads["lstm_b"] += db
            np.add.at(grads["word_emb"], fw["inputs"][s], dx[:, :D])
        h0 = fw["h0"]
        da = dh_next * (1.0 - h0 * h0)
        grads["init_W"] += fw["cond"].T @ da
        grads["init_b"] += da.sum(axis=0)
        dcond = da @ p["init_W"].T
        np.add.at(grads["rel_emb"], fw["relations"], dcond[:, : self.cfg.rel_dim])
        return grads

    # ------------------------------------------------------------------
    # single-sentence API

    def init_state(self, relation, noise):
        rel = self._check_relations([relation])
        h, c, _ = self._initial(rel, np.asarray(noise, dtype=np.float64)[None])
        return GenState(h[0], c[0], ())

    def step(self, state, prev_token):
        if state.emitted and state.emitted[-1] == EOS:
            raise GenerationError("step called after EOS was fed")
        if state.t > self.cfg.max_len:
            raise GenerationError("state already holds max_len tokens")
        logits, h, c, _ = self._cell(np.array([prev_token]), state.h[None], state.c[None])
        p1, p2, _ = self._pos_heads(h)
        out = GenOutput(logits[0], float(p1[0]), float(p2[0]))
        return out, GenState(h[0], c[0], state.emitted + (int(prev_token),))

    def sample_sentence(self, relation, noise, temperature, rng, vocab=None):
        """Sample one sentence; tokens are ids unless a vocab is given."""
        s = self.sample_batch([relation], np.asarray(noise, dtype=np.float64)[None], temperature, rng)
        ids = [int(t) for t in s.tokens[0]]
        tokens = vocab.tokens(ids) if vocab is not None else ids
        return RelationalSentence(tuple(tokens), int(s.e1p[0]), int(s.e2p[0]), int(relation), "generated")

    # ------------------------------------------------------------------
    # batched sampling

    def continue_batch(self, h, c, prev, counts, temperature, rng):
        """Extend partial sentences until EOS or ``max_len`` tokens.

        ``prev`` is the next input per row (BOS or the last emitted token) and
        ``counts`` the number of tokens already emitted. Returns the new
        tokens per row, whether EOS was emitted, and the hidden state used by
        the position heads.
        """
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        R = len(prev)
        max_len = self.cfg.max_len
        new = [[] for _ in range(R)]
        eos = np.zeros(R, dtype=bool)
        final_h = np.zeros((R, self.cfg.hidden))
        active = np.arange(R)
        prev = np.asarray(prev, dtype=np.int64).copy()
        counts = np.asarray(counts, dtype=np.int64).copy()
        while len(active):
            logits, h, c, _ = self._cell(prev[active], h, c)
            full = counts[active] >= max_len
            probs = np.ascontiguousarray(softmax(logits / temperature))
            ids = kernels.sample_categorical(probs, rng.random(len(active)))
            stop = full | (ids == EOS)
            eos[active[stop & ~full]] = True
            final_h[active[stop]] = h[stop]
            go = ~stop
            for r, tok in zip(active[go], ids[go]):
                new[r].append(int(tok))
            prev[active[go]] = ids[go]
            counts[active[go]] += 1
            active = active[go]
            h = h[go]
            c = c[go]
        return new, eos, final_h

    def sample_batch(self, relations, noise, temperature, rng, attempts=2):
        """Sample one sentence per row; rows shorter than two tokens are
        redrawn (same noise) until ``attempts`` draws are used up."""
        if attempts < 1:
            raise ValueError("attempts must be >= 1")
        relations = self._check_relations(relations)
        noise = np.asarray(noise, dtype=np.float64)
        B = len(relations)
        tokens = [None] * B
        eos = np.zeros(B, dtype=bool)
        final_h = np.zeros((B, self.cfg.hidden))
        todo = np.arange(B)
        for attempt in range(attempts):
            h, c, _ = self._initial(relations[todo], noise[todo])
            new, e, fh = self.continue_batch(h, c, np.full(len(todo), BOS), np.zeros(len(todo), dtype=np.int64), temperature, rng)
            for j, r in enumerate(todo):
                tokens[r] = np.array(new[j], dtype=np.int64)
            eos[todo] = e
            final_h[todo] = fh
            todo = np.array([r for r in range(B) if len(tokens[r]) < 2], dtype=np.int64)
            if not len(todo):
                break
        else:
            raise GenerationError(f"{len(todo)} sample(s) shorter than 2 tokens after {attempts} draws")
        lengths = np.array([len(t) for t in tokens])
        p1, p2, _ = self._pos_heads(final_h)
        e1, e2 = decode_positions(p1, p2, lengths)
        actions = [np.append(t, EOS) if e else t.copy() for t, e in zip(tokens, eos)]
        return Samples(relations, noise, tokens, actions, e1, e2, temperature)

    def draw(self, relations, rng, temperature=1.0, attempts=DRAW_ATTEMPTS):
        """Sample with fresh standard-normal noise.

        Training draws get a few more redraws than ``sample_sentence`` so that
        one unlucky row does not abort a large batch; a generator that keeps
        stopping immediately still raises.
        """
        noise = rng.standard_normal((len(relations), self.cfg.z_dim))
        return self.sample_batch(relations, noise, temperature, rng, attempts)

    def trajectory_states(self, samples):
        """(h, c) after feeding BOS and the first t-1 actions, for t = 1..T."""
        inputs, _ = self._action_inputs(samples)
        fw = self._unroll(samples.relations, samples.noise, inputs)
        return fw["h"], fw["c"]

    # ------------------------------------------------------------------
    # losses

    @staticmethod
    def _teacher_arrays(batch):
        """Inputs [BOS, y1..yL] and targets [y1..yL, EOS], right-padded."""
        B, L = batch.ids.shape
        inputs = np.full((B, L + 1), PAD, dtype=np.int64)
        targets = np.full((B, L + 1), PAD, dtype=np.int64)
        inputs[:, 0] = BOS
        inputs[:, 1:] = np.where(batch.mask, batch.ids, PAD)
        targets[:, :L] = np.where(batch.mask, batch.ids, PAD)
        targets[np.arange(B), batch.lengths] = EOS
        mask = np.arange(L + 1)[None, :] <= batch.lengths[:, None]
        return inputs, targets, mask

    def mle_loss(self, batch, rng, ss_threshold=None, return_parts=False):
        """Token cross-entropy plus squared error on both normalised entity
        positions, summed. ``batch`` is an EncodedBatch or a list of encoded
        sentences. Returns ``(loss, grads)`` (and the three parts on request)."""
        if not isinstance(batch, EncodedBatch):
            batch = collate(list(batch))
        if np.any(batch.lengths < 2):
            raise ValueError("mle_loss needs sentences of length >= 2")
        ss = self.cfg.ss_threshold if ss_threshold is None else ss_threshold
        relations = self._check_relations(batch.relations)
        B = len(batch)
        noise = rng.standard_normal((B, self.cfg.z_dim))
        inputs, targets, mask = self._teacher_arrays(batch)
        fw = self._unroll(relations, noise, inputs, ss, rng)
        count = mask.sum()
        token_loss = 0.0
        dlogits = []
        for s, logits in enumerate(fw["logits"]):
            logp = log_softmax(logits)
            m = mask[:, s]
            token_loss -= float(np.sum(logp[np.arange(B), targets[:, s]] * m))
            dlogits.append(softmax_cross_entropy_backward(np.exp(logp), targets[:, s]) * (m / count)[:, None])
        token_loss /= count
        steps = batch.lengths
        hf = np.stack([fw["h"][s][b] for b, s in enumerate(steps)])
        p1, p2, pcache = self._pos_heads(hf)
        denom = (batch.lengths - 1).astype(np.float64)
        t1 = batch.e1p / denom
        t2 = batch.e2p / denom
        mse1 = float(np.mean((p1 - t1) ** 2))
        mse2 = float(np.mean((p2 - t2) ** 2))
        grads = self.params.zeros()
        dhf = self._pos_heads_backward(hf, pcache, 2.0 * (p1 - t1) / B, 2.0 * (p2 - t2) / B, grads)
        dh_extra = {}
        for b, s in enumerate(steps):
            dh_extra.setdefault(int(s), np.zeros((B, self.cfg.hidden)))[b] += dhf[b]
        self._backward(fw, dlogits, dh_extra, grads)
        loss = token_loss + mse1 + mse2
        if return_parts:
            return loss, grads, {"token": token_loss, "pos1": mse1, "pos2": mse2}
        return loss, grads

    def token_cross_entropy(self, encoded, rng, batch_size=256):
        """Mean teacher-forced token cross-entropy over a corpus (no update)."""
        total = 0.0
        count = 0
        for i in range(0, len(encoded), batch_size):
            batch = collate(encoded[i : i + batch_size])
            _, _, parts = self.mle_loss(batch, rng, ss_threshold=1.0, return_parts=True)
            n = int(batch.lengths.sum() + len(batch))
            total += parts["token"] * n
            count += n
        return total / count

    @staticmethod
    def _action_inputs(samples):
        T = max(len(a) for a in samples.actions)
        B = len(samples)
        inputs = np.full((B, T), PAD, dtype=np.int64)
        acts = np.full((B, T), PAD, dtype=np.int64)
        inputs[:, 0] = BOS
        for b, a in enumerate(samples.actions):
            acts[b, : len(a)] = a
            inputs[b, 1 : len(a)] = a[:-1]
        return inputs, acts

    def policy_loss(self, samples, rewards):
        """Surrogate ``-mean_b sum_t Q_bt log G(a_bt | s_bt-1)`` and its gradient.

        The gradient is the likelihood-ratio estimate of the negated expected
        reward; position heads receive zero gradient.
        """
        if len(rewards) != len(samples):
            raise ValueError("one reward vector per sample is required")
        for a, q in zip(samples.actions, rewards):
            if len(a) != len(q):
                raise ValueError(f"reward length {len(q)} does not match {len(a)} actions")
        tau = samples.temperature
        inputs, acts = self._action_inputs(samples)
        fw = self._unroll(samples.relations, samples.noise, inputs)
        B, T = acts.shape
        Q = np.zeros((B, T))
        for b, q in enumerate(rewards):
            Q[b, : len(q)] = q
        loss = 0.0
        dlogits = []
        for s, logits in enumerate(fw["logits"]):
            logp = log_softmax(logits / tau)
            loss -= float(np.sum(Q[:, s] * logp[np.arange(B), acts[:, s]]))
            dlogits.append(softmax_cross_entropy_backward(np.exp(logp), acts[:, s]) * (Q[:, s] / (B * tau))[:, None])
        grads = self.params.zeros()
        self._backward(fw, dlogits, {}, grads)
        return loss / B, grads

    # ------------------------------------------------------------------
    # updates

    def apply(self, grads, lr=None):
        grads = clip_gradients(grads, self.cfg.clip)
        adam_step(self.params, grads, self.cfg.lr if lr is None else lr)

    def mle_update(self, batch, rng):
        """One MLE step: loss, clip, Adam. Shared by pretraining and teacher forcing."""
        loss, grads, parts = self.mle_loss(batch, rng, return_parts=True)
        self.apply(grads)
        return loss, parts


def pretrain_generator(gen, encoded, epochs, rng, on_epoch=None):
    """MLE pretraining over shuffled batches; returns per-epoch mean losses."""
    if not encoded:
        raise ValueError("cannot pretrain on an empty corpus")
    bs = gen.cfg.batch_size
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(encoded))
        totals = {"loss": 0.0, "token": 0.0}
        n = 0
        for i in range(0, len(order), bs):
            batch = collate([encoded[j] for j in order[i : i + bs]])
            loss, parts = gen.mle_update(batch, rng)
            totals["loss"] += loss
            totals["token"] += parts["token"]
            n += 1
        record = {k: v / n for k, v in totals.items()}
        history.append(record)
        logger.info("generator epoch %d: loss %.4f token %.4f", epoch + 1, record["loss"], record["token"])
        if on_epoch:
            on_epoch(epoch + 1, record)
    return history
