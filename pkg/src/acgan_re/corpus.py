"""Relational sentences: schema, JSON-lines I/O, filtering, vocab, encoding and
a template grammar for synthetic corpora."""
import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")
NA = "NA"
MAX_REL = 30


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class RelationSchema:
    relations: tuple
    na_index: int

    def __post_init__(self):
        if len(set(self.relations)) != len(self.relations):
            raise CorpusError("relation names must be unique")
        if len(self.relations) < 2:
            raise CorpusError("a schema needs at least two relations")
        if not 0 <= self.na_index < len(self.relations):
            raise CorpusError("na_index out of range")

    @classmethod
    def from_names(cls, names):
        names = tuple(names)
        if NA not in names:
            names = (NA,) + names
        return cls(names, names.index(NA))

    def __len__(self):
        return len(self.relations)

    def index(self, name):
        try:
            return self.relations.index(name)
        except ValueError:
            raise CorpusError(f"unknown relation {name!r}") from None

    def name(self, idx):
        return self.relations[idx]

    @property
    def non_na(self):
        return [i for i in range(len(self.relations)) if i != self.na_index]


@dataclass(frozen=True)
class RelationalSentence:
    tokens: tuple
    e1p: int
    e2p: int
    relation: int
    source: str = "real"
    swapped: bool = field(default=False, compare=False)

    def __post_init__(self):
        if len(self.tokens) < 2:
            raise CorpusError("a sentence needs at least two tokens")
        if not 0 <= self.e1p < self.e2p < len(self.tokens):
            raise CorpusError(f"bad entity positions ({self.e1p}, {self.e2p}) for length {len(self.tokens)}")
        if self.relation < 0:
            raise CorpusError("relation index must be non-negative")
        if self.source not in ("real", "generated"):
            raise CorpusError(f"unknown source {self.source!r}")

    def __len__(self):
        return len(self.tokens)


def make_sentence(tokens, e1p, e2p, relation, source="real"):
    """Build a sentence, swapping the entities when given in reverse order."""
    if e1p == e2p:
        raise CorpusError(f"entity positions coincide at {e1p}")
    swapped = e1p > e2p
    if swapped:
        e1p, e2p = e2p, e1p
    return RelationalSentence(tuple(tokens), int(e1p), int(e2p), int(relation), source, swapped)


# --------------------------------------------------------------------------
# JSON lines


def sentence_to_json(s, schema):
    return json.dumps(
        {"tokens": list(s.tokens), "e1p": s.e1p, "e2p": s.e2p, "relation": schema.name(s.relation)},
        ensure_ascii=False,
    )


def save_jsonl(path, corpus, schema):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in corpus:
            fh.write(sentence_to_json(s, schema))
            fh.write("\n")


def load_jsonl(path, schema, source="real"):
    corpus = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                tokens = obj["tokens"]
                e1p, e2p, rel = obj["e1p"], obj["e2p"], obj["relation"]
                if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
                    raise CorpusError("tokens must be a list of strings")
                if not isinstance(e1p, int) or not isinstance(e2p, int):
                    raise CorpusError("e1p/e2p must be integers")
                corpus.append(make_sentence(tokens, e1p, e2p, schema.index(rel), source))
            except (json.JSONDecodeError, KeyError, TypeError, CorpusError) as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    return corpus


# --------------------------------------------------------------------------
# filtering and statistics


def filter_training(corpus, schema, max_len=100, drop_na=True):
    if max_len < 2:
        raise CorpusError("max_len must be at least 2")
    return [
        s for s in corpus if len(s) <= max_len and not (drop_na and s.relation == schema.na_index)
    ]


@dataclass
class CorpusStats:
    count: int
    histogram: dict
    max_len: int
    mean_len: float
    na_fraction: float


def stats(corpus, schema):
    hist = {name: 0 for name in schema.relations}
    for s in corpus:
        hist[schema.name(s.relation)] += 1
    n = len(corpus)
    lengths = [len(s) for s in corpus]
    return CorpusStats(
        count=n,
        histogram=hist,
        max_len=max(lengths, default=0),
        mean_len=float(np.mean(lengths)) if n else 0.0,
        na_fraction=hist[schema.name(schema.na_index)] / n if n else 0.0,
    )


# --------------------------------------------------------------------------
# vocabulary and encoding


class Vocab:
    def __init__(self, tokens=()):
        self.itos = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def id(self, token):
        return self.stoi.get(token, UNK)

    def ids(self, tokens):
        return [self.stoi.get(t, UNK) for t in tokens]

    def tokens(self, ids):
        return [self.itos[i] for i in ids]

    def to_json(self):
        return json.dumps(self.itos[len(RESERVED):], ensure_ascii=False)

    @classmethod
    def from_json(cls, text):
        return cls(json.loads(text))


def build_vocab(corpus, min_freq=1):
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = Counter(t for s in corpus for t in s.tokens)
    keep = [(-c, t) for t, c in counts.items() if c >= min_freq and t not in RESERVED]
    return Vocab([t for _, t in sorted(keep)])


@dataclass(frozen=True)
class EncodedSentence:
    ids: np.ndarray
    rel_pos1: np.ndarray
    rel_pos2: np.ndarray
    relation: int
    e1p: int
    e2p: int


def relative_positions(length, pos):
    return np.clip(np.arange(length) - pos, -MAX_REL, MAX_REL)


def encode_ids(ids, e1p, e2p, relation):
    ids = np.asarray(ids, dtype=np.int64)
    n = len(ids)
    return EncodedSentence(ids, relative_positions(n, e1p), relative_positions(n, e2p), int(relation), int(e1p), int(e2p))


def encode(sentence, vocab, max_len=100):
    if len(sentence) > max_len:
        raise CorpusError(f"sentence of length {len(sentence)} exceeds max_len {max_len}")
    return encode_ids(vocab.ids(sentence.tokens), sentence.e1p, sentence.e2p, sentence.relation)


def encode_all(corpus, vocab, max_len=100):
    return [encode(s, vocab, max_len) for s in corpus]


@dataclass
class EncodedBatch:
    """Right-padded batch; position arrays hold embedding row indices (offset by MAX_REL)."""

    ids: np.ndarray
    pos1: np.ndarray
    pos2: np.ndarray
    lengths: np.ndarray
    e1p: np.ndarray
    e2p: np.ndarray
    relations: np.ndarray

    def __len__(self):
        return len(self.lengths)

    @property
    def mask(self):
        return np.arange(self.ids.shape[1])[None, :] < self.lengths[:, None]


def collate(encoded):
    if not encoded:
        raise CorpusError("cannot collate an empty batch")
    B = len(encoded)
    L = max(len(e.ids) for e in encoded)
    ids = np.full((B, L), PAD, dtype=np.int64)
    pos1 = np.full((B, L), MAX_REL, dtype=np.int64)
    pos2 = np.full((B, L), MAX_REL, dtype=np.int64)
    for b, e in enumerate(encoded):
        n = len(e.ids)
        ids[b, :n] = e.ids
        pos1[b, :n] = e.rel_pos1 + MAX_REL
        pos2[b, :n] = e.rel_pos2 + MAX_REL
    return EncodedBatch(
        ids,
        pos1,
        pos2,
        np.array([len(e.ids) for e in encoded], dtype=np.int64),
        np.array([e.e1p for e in encoded], dtype=np.int64),
        np.array([e.e2p for e in encoded], dtype=np.int64),
        np.array([e.relation for e in encoded], dtype=np.int64),
    )


def concat_batches(a, b):
    L = max(a.ids.shape[1], b.ids.shape[1])

    def pad(x, fill):
        out = np.full((x.shape[0], L), fill, dtype=x.dtype)
        out[:, : x.shape[1]] = x
        return out

    return EncodedBatch(
        np.concatenate([pad(a.ids, PAD), pad(b.ids, PAD)]),
        np.concatenate([pad(a.pos1, MAX_REL), pad(b.pos1, MAX_REL)]),
        np.concatenate([pad(a.pos2, MAX_REL), pad(b.pos2, MAX_REL)]),
        np.concatenate([a.lengths, b.lengths]),
        np.concatenate([a.e1p, b.e1p]),
        np.concatenate([a.e2p, b.e2p]),
        np.concatenate([a.relations, b.relations]),
    )


# --------------------------------------------------------------------------
# synthetic grammar


@dataclass
class Grammar:
    relations: list  # dicts with name, templates, e1_lexicon, e2_lexicon

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def from_dict(cls, obj):
        rels = obj["relations"]
        for r in rels:
            if len(r["templates"]) < 3:
                raise CorpusError(f"relation {r['name']!r} needs at least 3 templates")
            for t in r["templates"]:
                toks = t.split()
                if toks.count("{E1}") != 1 or toks.count("{E2}") != 1:
                    raise CorpusError(f"template without two entity slots: {t!r}")
            if not r["e1_lexicon"] or not r["e2_lexicon"]:
                raise CorpusError(f"relation {r['name']!r} has an empty lexicon")
        return cls(rels)

    @property
    def schema(self):
        return RelationSchema.from_names(r["name"] for r in self.relations)


def render_template(template, e1, e2):
    """Fill slots; entity positions point at the first token of each entity."""
    tokens = []
    e1p = e2p = None
    for tok in template.split():
        if tok == "{E1}":
            e1p = len(tokens)
            tokens.extend(e1.split())
        elif tok == "{E2}":
            e2p = len(tokens)
            tokens.extend(e2.split())
        else:
            tokens.append(tok)
    if e1p is None or e2p is None:
        raise CorpusError(f"template without two entity slots: {template!r}")
    return tokens, e1p, e2p


def synth_corpus(grammar, n, seed):
    """Sample ``n`` sentences: relation, then template, then entities, all uniform."""
    schema = grammar.schema
    rng = np.random.default_rng(seed)
    out = []
    K = len(grammar.relations)
    for _ in range(n):
        r = grammar.relations[rng.integers(K)]
        template = r["templates"][rng.integers(len(r["templates"]))]
        e1 = r["e1_lexicon"][rng.integers(len(r["e1_lexicon"]))]
        e2 = r["e2_lexicon"][rng.integers(len(r["e2_lexicon"]))]
        tokens, e1p, e2p = render_template(template, e1, e2)
        out.append(make_sentence(tokens, e1p, e2p, schema.index(r["name"])))
    return out


def bundled_grammar_path():
    from importlib.resources import files

    return str(files("acgan_re") / "data" / "synthetic_grammar.json")
