"""Shared builders for the test suite: small model profiles and mini corpora."""

import numpy as np

from ckrank.corpus import Corpus, DocumentRecord, Vocabulary
from ckrank.model import ModelConfig

# Scaled-down profile used for trained models in the slower tests.  Same
# structure as the default (two conformer layers, grouped conv, multi-head
# separable attention) but small enough to train on one CPU in seconds.
TINY_KWARGS = dict(
    model_dim=32,
    num_heads=2,
    d_key=16,
    d_value=16,
    conv_window=7,
    conv_groups=4,
    dropout_rate=0.1,
    num_layers=2,
    window_len=30,
    stride=10,
)

# Even smaller profile for finite-difference checks (single layer, no dropout).
MICRO_KWARGS = dict(
    model_dim=8,
    num_heads=2,
    d_key=4,
    d_value=4,
    conv_window=3,
    conv_groups=2,
    dropout_rate=0.0,
    num_layers=1,
    window_len=8,
    stride=4,
)


def tiny_config(variant, **overrides):
    kwargs = dict(TINY_KWARGS)
    kwargs.update(overrides)
    kwargs.setdefault("seed", 0)
    return ModelConfig(variant=variant, **kwargs)


def micro_config(variant, **overrides):
    kwargs = dict(MICRO_KWARGS)
    kwargs.update(overrides)
    kwargs.setdefault("seed", 0)
    return ModelConfig(variant=variant, **kwargs)


def micro_corpus(seed=0, num_docs=24, vocab_terms=40, doc_len=(6, 18)):
    """Random small corpus; every term appears in several docs so min_df keeps it."""
    rng = np.random.default_rng(seed)
    terms = [f"w{i:02d}" for i in range(vocab_terms)]
    corpus = Corpus()
    for i in range(num_docs):
        length = int(rng.integers(doc_len[0], doc_len[1] + 1))
        tokens = [terms[int(j)] for j in rng.integers(0, vocab_terms, size=length)]
        corpus.add(DocumentRecord(doc_id=f"M{i:03d}", tokens=tokens))
    vocab = Vocabulary.build(corpus)
    return corpus, vocab
