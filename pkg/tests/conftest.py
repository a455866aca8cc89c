import numpy as np
import pytest

from acgan_re import kernels
from acgan_re.corpus import RelationSchema, collate, encode_ids
from acgan_re.discriminator import Discriminator, DiscriminatorConfig
from acgan_re.generator import Generator, GeneratorConfig

ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)


@pytest.fixture(params=kernels.available())
def backend(request):
    old = kernels.BACKEND
    kernels.use(request.param)
    yield request.param
    kernels.use(old)


def tiny_gen(vocab=10, relations=3, seed=0, scale=0.5, **kw):
    cfg = GeneratorConfig(vocab, relations, word_dim=4, rel_dim=3, z_dim=2, hidden=5, pos_hidden=3, init_scale=scale, **kw)
    return Generator(cfg, seed=seed)


def tiny_disc(vocab=10, relations=3, seed=0, scale=0.5, **kw):
    kw.setdefault("keep_prob", 1.0)
    cfg = DiscriminatorConfig(vocab, relations, word_dim=4, pos_dim=2, filters=3, window=3, init_scale=scale, **kw)
    return Discriminator(cfg, seed=seed)


def random_encoded(rng, n, vocab=10, relations=3, min_len=3, max_len=7):
    out = []
    for _ in range(n):
        L = int(rng.integers(min_len, max_len + 1))
        ids = rng.integers(4, vocab, size=L)
        e1, e2 = sorted(rng.choice(L, size=2, replace=False))
        out.append(encode_ids(ids, int(e1), int(e2), int(rng.integers(relations))))
    return out


@pytest.fixture
def schema3():
    return RelationSchema.from_names(["r1", "r2"])


@pytest.fixture
def batch_pair():
    rng = np.random.default_rng(7)
    return collate(random_encoded(rng, 2)), collate(random_encoded(rng, 2))


# small enough that every phase finishes in seconds
TINY_INI = """\
[generator]
batch_size = 16
word_embedding_size = 8
relation_embedding_size = 4
noise_size = 4
lstm_hidden_dimension = 12
position_head_hidden = 6
sequence_length = 20
pretrain_epochs = 2
[discriminator]
batch_size = 16
word_embedding_size = 8
position_embedding_size = 2
filters = 6
pretrain_epochs = 2
[rollout]
rollout_number = 2
[adversarial]
epochs = 2
reward_eval_size = 16
[data]
synth_train = 60
synth_test = 30
[compare]
seeds = 0,1
train_fraction = 0.5
classifier_epochs = 2
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return path
