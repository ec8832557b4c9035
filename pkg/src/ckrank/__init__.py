"""Additive per-term neural ranking with impact-index retrieval.

The package splits into a small instrumented tensor core (tensor, memory,
gradcheck), the encoder and pooling stack (attention, pooling), the ranking
models (model), training (train), offline index + retrieval (index), data
and evaluation plumbing (corpus, bm25, evalmetrics, synth), and harnesses
(bench, selftest, cli).
"""

from . import (attention, bench, bm25, checkpoint, corpus, evalmetrics,
               gradcheck, index, model, pooling, synth, tensor, train)
from .attention import AttentionConfig, conformer_block, multi_head, \
    peak_activation_elements, positional_encoding, self_attention, \
    separable_self_attention
from .corpus import Corpus, DocumentRecord, QueryRecord, Vocabulary, \
    ingest_corpus, load_qrels, load_queries, load_run, tokenize, write_run
from .errors import CkrankError, ConfigError, ContractError, IndexFormatError, \
    NonFiniteError, ShapeError, TrainingDiverged
from .evalmetrics import evaluate
from .gradcheck import finite_difference_check
from .index import ImpactIndex, RetrievalResult, build_index, load_index, \
    rerank, retrieve, save_index
from .memory import MemoryTracker, tracker
from .model import BSState, CKModel, DuetParams, ExplicitParams, ModelConfig, \
    TermDocStats, duet_scores, ndrm2_term_score, ndrm2_term_scores, \
    ndrm3_term_score
from .pooling import KernelBank, WindowConfig, interaction_row, \
    interaction_rows, kernel_features, latent_term_score, num_windows, \
    windowed_pool_term, windowed_pool_terms
from .tensor import Tensor, backward, constant, finite_checks, no_grad, \
    parameter, precision
from .train import Adam, TrainConfig, TrainInstance, TrainPair, expand_pairs, \
    make_instances, ranknet_loss, train

__version__ = "0.1.0"
