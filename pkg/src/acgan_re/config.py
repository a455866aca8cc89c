"""Experiment configuration read from an INI file.

Section and key names follow the hyperparameter table (generator,
discriminator, rollout) plus a few sections for data and scheduling.
"""
import configparser
import hashlib
from dataclasses import dataclass, fields, replace

# (section, key) -> Config attribute
KEYS = {
    ("generator", "batch_size"): "gen_batch_size",
    ("generator", "adam_learning_rate"): "gen_lr",
    ("generator", "word_embedding_size"): "gen_word_dim",
    ("generator", "relation_embedding_size"): "rel_dim",
    ("generator", "noise_size"): "z_dim",
    ("generator", "lstm_hidden_dimension"): "hidden",
    ("generator", "position_head_hidden"): "pos_hidden",
    ("generator", "sequence_length"): "max_len",
    ("generator", "scheduled_sampling_threshold"): "ss_threshold",
    ("generator", "gradient_clip_threshold"): "clip",
    ("generator", "pretrain_epochs"): "gen_pretrain_epochs",
    ("discriminator", "batch_size"): "dis_batch_size",
    ("discriminator", "adam_learning_rate"): "dis_lr",
    ("discriminator", "word_embedding_size"): "dis_word_dim",
    ("discriminator", "position_embedding_size"): "pos_dim",
    ("discriminator", "filters"): "filters",
    ("discriminator", "filter_window_size"): "window",
    ("discriminator", "dropout_keep_probability"): "keep_prob",
    ("discriminator", "pretrain_epochs"): "dis_pretrain_epochs",
    ("rollout", "rollout_number"): "n_rollouts",
    ("rollout", "temperature"): "temperature",
    ("adversarial", "epochs"): "adv_epochs",
    ("adversarial", "g_steps"): "g_steps",
    ("adversarial", "d_steps"): "d_steps",
    ("adversarial", "teacher_forcing_batches"): "tf_batches",
    ("adversarial", "reward_eval_size"): "eval_size",
    ("init", "seed"): "seed",
    ("init", "init_scale"): "init_scale",
    ("data", "grammar"): "grammar",
    ("data", "train"): "train",
    ("data", "test"): "test",
    ("data", "relations"): "relations",
    ("data", "synth_train"): "synth_train",
    ("data", "synth_test"): "synth_test",
    ("data", "min_freq"): "min_freq",
    ("data", "fake_count"): "fake_count",
    ("compare", "seeds"): "seeds",
    ("compare", "train_fraction"): "train_fraction",
    ("compare", "augmentation_fraction"): "augmentation_fraction",
    ("compare", "classifier_epochs"): "classifier_epochs",
    ("compare", "classifier_learning_rate"): "classifier_lr",
}


@dataclass(frozen=True)
class Config:
    gen_batch_size: int = 64
    gen_lr: float = 1e-3
    gen_word_dim: int = 50
    rel_dim: int = 50
    z_dim: int = 50
    hidden: int = 120
    pos_hidden: int = 64
    max_len: int = 100
    ss_threshold: float = 0.5
    clip: float = 5.0
    gen_pretrain_epochs: int = 30
    dis_batch_size: int = 64
    dis_lr: float = 1e-4
    dis_word_dim: int = 50
    pos_dim: int = 5
    filters: int = 128
    window: int = 3
    keep_prob: float = 0.5
    dis_pretrain_epochs: int = 20
    n_rollouts: int = 6
    temperature: float = 1.0
    adv_epochs: int = 20
    g_steps: int = 1
    d_steps: int = 1
    tf_batches: int = 1
    eval_size: int = 512
    seed: int = 0
    init_scale: float = 0.1
    grammar: str = ""
    train: str = ""
    test: str = ""
    relations: tuple = ()
    synth_train: int = 2000
    synth_test: int = 500
    min_freq: int = 1
    fake_count: int = 0
    seeds: tuple = (0, 1, 2, 3, 4)
    train_fraction: float = 1.0
    augmentation_fraction: float = 0.2
    classifier_epochs: int = 40
    classifier_lr: float = 1e-3

    def with_(self, **kw):
        return replace(self, **kw)

    def to_ini(self):
        sections = {}
        for (section, key), attr in KEYS.items():
            value = getattr(self, attr)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            sections.setdefault(section, []).append(f"{key} = {value}")
        return "\n".join(f"[{s}]\n" + "\n".join(lines) + "\n" for s, lines in sections.items())

    def fingerprint(self):
        return hashlib.sha256(self.to_ini().encode("utf-8")).hexdigest()[:16]


_TYPES = {f.name: f.type for f in fields(Config)}


def _convert(attr, raw):
    kind = _TYPES[attr]
    raw = raw.strip()
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    if kind in (tuple, "tuple"):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(int(p) for p in parts) if attr == "seeds" else tuple(parts)
    return raw


def parse_config(text, base=None):
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            attr = KEYS.get((section, key))
            if attr is None:
                raise KeyError(f"unknown config key [{section}] {key}")
            values[attr] = _convert(attr, raw)
    return replace(base or Config(), **values)


def load_config(path=None):
    if not path:
        return Config()
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
