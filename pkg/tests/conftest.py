"""Session fixtures: one synthetic collection plus shared trained models/indexes.

Training and indexing are the expensive parts of the suite, so each variant is
trained once per session and reused by every test that needs it.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import tiny_config

from ckrank.bm25 import BM25Searcher, tune_bm25
from ckrank.index import build_index
from ckrank.model import CKModel, ModelConfig
from ckrank.synth import make_synthetic
from ckrank.train import TrainConfig, make_instances, train


@pytest.fixture(scope="session")
def synth():
    return make_synthetic(seed=0)


@pytest.fixture(scope="session")
def train_instances(synth):
    rng = np.random.default_rng(7)
    return make_instances(synth.triples, synth.candidates, synth.corpus, rng)


@pytest.fixture(scope="session")
def trained_ndrm1(synth, train_instances):
    model = CKModel(tiny_config("ndrm1"), synth.vocab)
    cfg = TrainConfig(batch_size=4, steps=500, lr=3e-3, seed=0)
    result = train(model, synth.corpus, synth.query_tokens(), train_instances, cfg)
    return model, result


@pytest.fixture(scope="session")
def trained_ndrm2(synth, train_instances):
    model = CKModel(ModelConfig(variant="ndrm2", seed=0), synth.vocab)
    cfg = TrainConfig(batch_size=16, steps=300, lr=1e-4, seed=0)
    result = train(model, synth.corpus, synth.query_tokens(), train_instances, cfg)
    return model, result


@pytest.fixture(scope="session")
def trained_ndrm3(synth, train_instances):
    model = CKModel(tiny_config("ndrm3"), synth.vocab)
    cfg = TrainConfig(batch_size=4, steps=300, lr=3e-3, seed=0)
    result = train(model, synth.corpus, synth.query_tokens(), train_instances, cfg)
    return model, result


@pytest.fixture(scope="session")
def index_ndrm1(synth, trained_ndrm1):
    model, _ = trained_ndrm1
    return build_index(synth.corpus, model)


@pytest.fixture(scope="session")
def index_ndrm2(synth, trained_ndrm2):
    model, _ = trained_ndrm2
    return build_index(synth.corpus, model)


@pytest.fixture(scope="session")
def index_ndrm3(synth, trained_ndrm3):
    model, _ = trained_ndrm3
    return build_index(synth.corpus, model)


@pytest.fixture(scope="session")
def bm25_tuned(synth):
    k1, b, _ = tune_bm25(synth.corpus, synth.vocab,
                         synth.train_queries, synth.train_qrels)
    return BM25Searcher(synth.corpus, synth.vocab, k1=k1, b=b)
