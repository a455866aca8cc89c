"""Training phases, on-disk artifacts and the augmentation comparison.

The four phases run in a fixed order: generator MLE pretraining, fake corpus
generation, discriminator pretraining on real plus generated sentences, and
joint adversarial training. Each phase draws from its own RNG stream derived
from the seed and the phase, so a phase rerun from the same inputs gives
byte-identical outputs.
"""
import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .adversarial import RolloutConfig, adversarial_epoch
from .corpus import (
    Grammar,
    RelationSchema,
    Vocab,
    build_vocab,
    bundled_grammar_path,
    encode_all,
    filter_training,
    load_jsonl,
    save_jsonl,
    synth_corpus,
)
from .discriminator import Discriminator, DiscriminatorConfig, pretrain_discriminator, train_classifier
from .evaluation import auc, held_out_eval
from .generator import Generator, GeneratorConfig, pretrain_generator
from .numerics import load_checkpoint, save_checkpoint

logger = logging.getLogger(__name__)

PHASES = ("pretrain-gen", "generate-fakes", "pretrain-dis", "adversarial")
METRIC_FIELDS = ("epoch", "phase", "mean_reward", "L_S", "L_R", "gen_loss")
REFERENCE_GAIN = 7.66  # headline AUC improvement at full scale, in percent
TEST_SEED_OFFSET = 10000


class PipelineError(RuntimeError):
    def __init__(self, phase, cause):
        super().__init__(f"phase {phase} failed: {cause}")
        self.phase = phase
        self.cause = cause


def phase_rng(seed, phase):
    """Independent stream per (seed, phase)."""
    tag = PHASES.index(phase) if phase in PHASES else sum(phase.encode())
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


# --------------------------------------------------------------------------
# data


def infer_schema(path):
    names = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                names.add(json.loads(line)["relation"])
    return RelationSchema.from_names(sorted(names - {"NA"}))


def load_data(cfg):
    """Returns ``(schema, train, test)`` from files or from the grammar."""
    if cfg.train:
        if cfg.relations:
            schema = RelationSchema.from_names(cfg.relations)
        else:
            schema = infer_schema(cfg.train)
        train = load_jsonl(cfg.train, schema)
        test = load_jsonl(cfg.test, schema) if cfg.test else []
        return schema, train, test
    grammar = Grammar.load(cfg.grammar or bundled_grammar_path())
    schema = grammar.schema
    train = synth_corpus(grammar, cfg.synth_train, cfg.seed)
    test = synth_corpus(grammar, cfg.synth_test, cfg.seed + TEST_SEED_OFFSET)
    return schema, train, test


def subsample(corpus, fraction, rng):
    if not 0.0 < fraction <= 1.0:
        raise ValueError("train_fraction must lie in (0, 1]")
    if fraction == 1.0:
        return list(corpus)
    keep = max(1, int(round(fraction * len(corpus))))
    idx = np.sort(rng.choice(len(corpus), size=keep, replace=False))
    return [corpus[i] for i in idx]


def gen_config(cfg, vocab_size, n_relations):
    return GeneratorConfig(
        vocab_size, n_relations, word_dim=cfg.gen_word_dim, rel_dim=cfg.rel_dim, z_dim=cfg.z_dim,
        hidden=cfg.hidden, pos_hidden=cfg.pos_hidden, max_len=cfg.max_len, ss_threshold=cfg.ss_threshold,
        batch_size=cfg.gen_batch_size, lr=cfg.gen_lr, clip=cfg.clip, init_scale=cfg.init_scale,
    )


def dis_config(cfg, vocab_size, n_relations):
    return DiscriminatorConfig(
        vocab_size, n_relations, word_dim=cfg.dis_word_dim, pos_dim=cfg.pos_dim, filters=cfg.filters,
        window=cfg.window, keep_prob=cfg.keep_prob, batch_size=cfg.dis_batch_size, lr=cfg.dis_lr,
        init_scale=cfg.init_scale,
    )


def rollout_config(cfg):
    return RolloutConfig(
        n_rollouts=cfg.n_rollouts, temperature=cfg.temperature, g_steps=cfg.g_steps, d_steps=cfg.d_steps,
        tf_batches=cfg.tf_batches, batch_size=cfg.gen_batch_size, eval_size=cfg.eval_size,
    )


# --------------------------------------------------------------------------
# in-memory phases


def metric_row(epoch, phase, mean_reward=math.nan, L_S=math.nan, L_R=math.nan, gen_loss=math.nan):
    return {"epoch": epoch, "phase": phase, "mean_reward": mean_reward, "L_S": L_S, "L_R": L_R, "gen_loss": gen_loss}


def train_generator(cfg, gen_corpus, vocab, schema):
    gen = Generator(gen_config(cfg, len(vocab), len(schema)), seed=cfg.seed)
    history = pretrain_generator(gen, gen_corpus, cfg.gen_pretrain_epochs, phase_rng(cfg.seed, "pretrain-gen"))
    rows = [metric_row(i + 1, "pretrain-gen", gen_loss=h["loss"]) for i, h in enumerate(history)]
    return gen, rows


def generate_fakes(cfg, gen, schema, count, vocab):
    """``count`` generated sentences with relations uniform over non-NA."""
    rng = phase_rng(cfg.seed, "generate-fakes")
    non_na = np.array(schema.non_na)
    out = []
    while len(out) < count:
        n = min(256, count - len(out))
        samples = gen.draw(non_na[rng.integers(len(non_na), size=n)], rng, cfg.temperature)
        out.extend(samples.sentences(vocab))
    return out


def train_discriminator(cfg, real_encoded, fake_encoded, vocab, schema):
    disc = Discriminator(dis_config(cfg, len(vocab), len(schema)), seed=cfg.seed + 1)
    history = pretrain_discriminator(disc, real_encoded, fake_encoded, cfg.dis_pretrain_epochs, phase_rng(cfg.seed, "pretrain-dis"))
    rows = [metric_row(i + 1, "pretrain-dis", L_S=h["L_S"], L_R=h["L_R"]) for i, h in enumerate(history)]
    return disc, rows


def train_adversarial(cfg, gen, disc, gen_corpus, disc_corpus, schema):
    rng = phase_rng(cfg.seed, "adversarial")
    rcfg = rollout_config(cfg)
    rows = []
    for epoch in range(1, cfg.adv_epochs + 1):
        eval_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 99]))
        m = adversarial_epoch(gen, disc, gen_corpus, disc_corpus, schema, rcfg, rng, epoch, eval_rng)
        rows.append(metric_row(epoch, "adversarial", m["mean_reward"], m["L_S"], m["L_R"], m["gen_loss"]))
    return rows


def fake_count(cfg, n_train):
    return cfg.fake_count if cfg.fake_count > 0 else n_train


def train_all(cfg, train, schema, vocab=None):
    """All four phases in memory; returns ``(gen, disc, vocab, rows)``."""
    vocab = vocab or build_vocab(train, cfg.min_freq)
    gen_corpus = encode_all(filter_training(train, schema, cfg.max_len), vocab, cfg.max_len)
    disc_corpus = encode_all([s for s in train if len(s) <= cfg.max_len], vocab, cfg.max_len)
    if not gen_corpus:
        raise PipelineError("pretrain-gen", "no non-NA training sentences")
    gen, rows = train_generator(cfg, gen_corpus, vocab, schema)
    fakes = generate_fakes(cfg, gen, schema, fake_count(cfg, len(disc_corpus)), vocab)
    disc, drows = train_discriminator(cfg, disc_corpus, encode_all(fakes, vocab, cfg.max_len), vocab, schema)
    rows += drows
    rows += train_adversarial(cfg, gen, disc, gen_corpus, disc_corpus, schema)
    return gen, disc, vocab, rows


# --------------------------------------------------------------------------
# artifacts


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def write_metrics(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in METRIC_FIELDS])


def read_metrics(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        rec = {"epoch": int(r["epoch"]), "phase": r["phase"]}
        for k in METRIC_FIELDS[2:]:
            rec[k] = float(r[k]) if r[k] else math.nan
        out.append(rec)
    return out


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def save_model(model, out_dir, stem):
    save_checkpoint(os.path.join(out_dir, stem + ".ckpt"), model.params)
    _write_text(os.path.join(out_dir, stem + ".json"), json.dumps(asdict(model.cfg), indent=2, sort_keys=True) + "\n")


def load_model(out_dir, stem):
    with open(os.path.join(out_dir, stem + ".json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    params = load_checkpoint(os.path.join(out_dir, stem + ".ckpt"))
    if stem.startswith("generator"):
        return Generator(GeneratorConfig(**meta), params=params)
    return Discriminator(DiscriminatorConfig(**meta), params=params)


def save_schema(path, schema):
    _write_text(path, json.dumps({"relations": list(schema.relations), "na_index": schema.na_index}, indent=2) + "\n")


def load_schema(path):
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    return RelationSchema(tuple(obj["relations"]), obj["na_index"])


@dataclass
class Workspace:
    """Artifacts of one run directory, loaded lazily by the CLI phases."""

    cfg: object
    out: str
    _data: tuple = field(default=None, repr=False)

    def path(self, name):
        return os.path.join(self.out, name)

    def data(self):
        if self._data is None:
            self._data = load_data(self.cfg)
        return self._data

    def schema(self):
        if os.path.exists(self.path("schema.json")):
            return load_schema(self.path("schema.json"))
        return self.data()[0]

    def vocab(self):
        with open(self.path("vocab.json"), encoding="utf-8") as fh:
            return Vocab.from_json(fh.read())

    def corpora(self, vocab):
        schema, train, _ = self.data()
        gen_corpus = encode_all(filter_training(train, schema, self.cfg.max_len), vocab, self.cfg.max_len)
        disc_corpus = encode_all([s for s in train if len(s) <= self.cfg.max_len], vocab, self.cfg.max_len)
        return gen_corpus, disc_corpus

    def require(self, name, phase):
        if not os.path.exists(self.path(name)):
            raise PipelineError(phase, f"missing {name}; run the earlier phases first")


def _log_phase(ws, index, phase):
    with open(ws.path("phases.log"), "a", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{index} {phase}\n")
    logger.info("phase %d: %s", index, phase)


def run_pretrain_gen(ws):
    cfg = ws.cfg
    schema, train, _ = ws.data()
    vocab = build_vocab(train, cfg.min_freq)
    _write_text(ws.path("vocab.json"), vocab.to_json())
    save_schema(ws.path("schema.json"), schema)
    gen_corpus, _ = ws.corpora(vocab)
    if not gen_corpus:
        raise ValueError("no non-NA training sentences")
    gen, rows = train_generator(cfg, gen_corpus, vocab, schema)
    save_model(gen, ws.out, "generator")
    write_metrics(ws.path("metrics-pretrain-gen.csv"), rows)
    return rows


def run_generate_fakes(ws):
    ws.require("generator.ckpt", "generate-fakes")
    vocab = ws.vocab()
    schema = ws.schema()
    _, disc_corpus = ws.corpora(vocab)
    gen = load_model(ws.out, "generator")
    fakes = generate_fakes(ws.cfg, gen, schema, fake_count(ws.cfg, len(disc_corpus)), vocab)
    save_jsonl(ws.path("fake.jsonl"), fakes, schema)
    return []


def run_pretrain_dis(ws):
    ws.require("fake.jsonl", "pretrain-dis")
    vocab = ws.vocab()
    schema = ws.schema()
    _, disc_corpus = ws.corpora(vocab)
    fakes = encode_all(load_jsonl(ws.path("fake.jsonl"), schema, "generated"), vocab, ws.cfg.max_len)
    disc, rows = train_discriminator(ws.cfg, disc_corpus, fakes, vocab, schema)
    save_model(disc, ws.out, "discriminator")
    write_metrics(ws.path("metrics-pretrain-dis.csv"), rows)
    return rows


def run_adversarial(ws):
    ws.require("discriminator.ckpt", "adversarial")
    vocab = ws.vocab()
    schema = ws.schema()
    gen_corpus, disc_corpus = ws.corpora(vocab)
    gen = load_model(ws.out, "generator")
    disc = load_model(ws.out, "discriminator")
    rows = train_adversarial(ws.cfg, gen, disc, gen_corpus, disc_corpus, schema)
    save_model(gen, ws.out, "generator-adv")
    save_model(disc, ws.out, "discriminator-adv")
    write_metrics(ws.path("metrics-adversarial.csv"), rows)
    return rows


PHASE_RUNNERS = {
    "pretrain-gen": run_pretrain_gen,
    "generate-fakes": run_generate_fakes,
    "pretrain-dis": run_pretrain_dis,
    "adversarial": run_adversarial,
}


def run_phase(ws, phase):
    os.makedirs(ws.out, exist_ok=True)
    try:
        return PHASE_RUNNERS[phase](ws)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(phase, exc) from exc


def run_pipeline(cfg, out_dir):
    """Run all phases in order into ``out_dir``; returns the metric rows."""
    os.makedirs(out_dir, exist_ok=True)
    ws = Workspace(cfg, out_dir)
    _write_text(ws.path("phases.log"), "")
    _write_text(ws.path("config.ini"), cfg.to_ini())
    rows = []
    for i, phase in enumerate(PHASES, 1):
        _log_phase(ws, i, phase)
        rows += run_phase(ws, phase)
    write_metrics(ws.path("metrics.csv"), rows)
    return rows


# --------------------------------------------------------------------------
# augmentation comparison


@dataclass
class ExperimentReport:
    seeds: list
    baseline_auc: list
    augmented_auc: list
    delta: list
    baseline_mean: float
    augmented_mean: float
    mean_delta: float
    relative_delta_percent: float
    absolute_delta_percent: float
    reference_gain_percent: float
    train_fraction: float
    augmentation_fraction: float
    augmented_count: list
    fingerprint: str

    def to_json(self):
        return json.dumps(asdict(self), indent=2) + "\n"


def classifier_auc(cfg, seed, real, vocab, schema, test_encoded):
    disc = Discriminator(dis_config(cfg, len(vocab), len(schema)), seed=seed + 2)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    train_classifier(disc, real, cfg.classifier_epochs, rng, cfg.classifier_lr)
    return auc(held_out_eval(disc, test_encoded, schema))


def compare_seed(cfg, seed):
    """Baseline and augmented AUC for one seed; returns ``(base, aug, n_aug)``."""
    cfg = cfg.with_(seed=seed)
    schema, train, test = load_data(cfg)
    train = subsample(train, cfg.train_fraction, np.random.default_rng(np.random.SeedSequence([seed, 100])))
    vocab = build_vocab(train, cfg.min_freq)
    real = encode_all([s for s in train if len(s) <= cfg.max_len], vocab, cfg.max_len)
    test_encoded = encode_all([s for s in test if len(s) <= cfg.max_len], vocab, cfg.max_len)
    base = classifier_auc(cfg, seed, real, vocab, schema, test_encoded)
    n_non_na = sum(1 for s in train if s.relation != schema.na_index)
    n_aug = int(round(cfg.augmentation_fraction * n_non_na))
    if n_aug == 0:
        return base, classifier_auc(cfg, seed, real, vocab, schema, test_encoded), 0
    gen, _, _, _ = train_all(cfg, train, schema, vocab)
    extra = generate_fakes(cfg.with_(seed=seed + 1), gen, schema, n_aug, vocab)
    aug = classifier_auc(cfg, seed, real + encode_all(extra, vocab, cfg.max_len), vocab, schema, test_encoded)
    return base, aug, n_aug


def compare_augmentation(cfg):
    if not cfg.seeds:
        raise ValueError("compare needs at least one seed")
    base, aug, counts = [], [], []
    for seed in cfg.seeds:
        b, a, n = compare_seed(cfg, seed)
        logger.info("seed %d: baseline %.4f augmented %.4f (+%d generated)", seed, b, a, n)
        base.append(b)
        aug.append(a)
        counts.append(n)
    delta = [a - b for a, b in zip(aug, base)]
    bm, am = float(np.mean(base)), float(np.mean(aug))
    return ExperimentReport(
        seeds=list(cfg.seeds),
        baseline_auc=base,
        augmented_auc=aug,
        delta=delta,
        baseline_mean=bm,
        augmented_mean=am,
        mean_delta=am - bm,
        relative_delta_percent=100.0 * (am - bm) / bm if bm > 0 else math.nan,
        absolute_delta_percent=100.0 * (am - bm),
        reference_gain_percent=REFERENCE_GAIN,
        train_fraction=cfg.train_fraction,
        augmentation_fraction=cfg.augmentation_fraction,
        augmented_count=counts,
        fingerprint=cfg.fingerprint(),
    )
