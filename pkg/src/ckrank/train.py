"""Pairwise training: mixed negative sampling, RankNet loss, Adam updates.

Each training instance holds one judged-positive document, one negative
drawn from the query's provided top-100 candidates, and two negatives drawn
uniformly from the collection. An instance expands into exactly five
ordered pairs: the positive beats all three negatives, and the candidate
negative beats both collection negatives (weak supervision: retrieved but
unjudged documents are likelier relevant than random ones).

Batches average pair losses. Gradients are clipped at a global norm before
each Adam step; any non-finite value aborts with diagnostics rather than
silently corrupting parameters.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, NonFiniteError, TrainingDiverged
from .model import duet_scores

DOCS_PER_INSTANCE = 4  # positive, candidate negative, two collection negatives
PAIRS_PER_INSTANCE = 5


@dataclass
class TrainInstance:
    query_id: str
    positive: str
    candidate_negative: str
    collection_negatives: tuple

    def __post_init__(self):
        self.collection_negatives = tuple(self.collection_negatives)
        if len(self.collection_negatives) != 2:
            raise ContractError("an instance needs exactly two collection negatives")
        docs = (self.positive, self.candidate_negative) + self.collection_negatives
        if len(set(docs)) != DOCS_PER_INSTANCE:
            raise ContractError(f"instance documents must be distinct, got {docs}")

    @property
    def doc_ids(self):
        return (self.positive, self.candidate_negative) + self.collection_negatives


@dataclass
class TrainPair:
    query_id: str
    preferred: str
    other: str


def expand_pairs(inst):
    """The five ordered pairs of one instance, positive-first."""
    pos, cand = inst.positive, inst.candidate_negative
    coll1, coll2 = inst.collection_negatives
    return [
        TrainPair(inst.query_id, pos, cand),
        TrainPair(inst.query_id, pos, coll1),
        TrainPair(inst.query_id, pos, coll2),
        TrainPair(inst.query_id, cand, coll1),
        TrainPair(inst.query_id, cand, coll2),
    ]


# local doc slots within an instance: 0=pos, 1=cand, 2=coll1, 3=coll2
_PAIR_SLOTS = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3)]


def ranknet_loss(s_pref, s_other):
    """log(1 + exp(-(s_pref - s_other))), elementwise, overflow-safe."""
    return T.softplus(T.sub(s_other, s_pref))


# -- data plumbing ---------------------------------------------------------------


def load_triples(path):
    """Tab-separated (query id, positive doc id) lines."""
    triples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) >= 2 and parts[0]:
                triples.append((parts[0], parts[1]))
    return triples


def load_candidates(path):
    """Whitespace-separated (query id, doc id, rank) lines -> {qid: [doc ids]}."""
    ranked = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) >= 3:
                ranked.setdefault(parts[0], []).append((int(parts[2]), parts[1]))
    return {qid: [doc for _, doc in sorted(pairs)] for qid, pairs in ranked.items()}


def make_instances(triples, candidates, corpus, rng):
    """Sample one candidate negative and two collection negatives per triple.

    Triples whose query has no usable candidates, or whose documents are
    missing from the corpus, are skipped.
    """
    positives_by_query = {}
    for qid, pos in triples:
        positives_by_query.setdefault(qid, set()).add(pos)
    all_ids = sorted(corpus.docs)
    instances = []
    for qid, pos in triples:
        if pos not in corpus:
            continue
        pool = [d for d in candidates.get(qid, ())
                if d in corpus and d not in positives_by_query[qid]]
        if not pool:
            continue
        cand = pool[rng.integers(len(pool))]
        taken = {pos, cand}
        coll = []
        while len(coll) < 2:
            doc = all_ids[rng.integers(len(all_ids))]
            if doc not in taken:
                coll.append(doc)
                taken.add(doc)
        instances.append(TrainInstance(qid, pos, cand, tuple(coll)))
    return instances


# -- optimizer --------------------------------------------------------------------


class Adam:
    """Adaptive-moment optimizer over the model's named parameters."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.drop_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            p.data[...] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_gradients(params, max_norm):
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


# -- the loop ---------------------------------------------------------------------


@dataclass
class TrainConfig:
    batch_size: int = 32
    steps: int = 500
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    clip_norm: float = 1.0
    seed: int = 0


@dataclass
class TrainResult:
    loss_trace: list = field(default_factory=list)
    steps: int = 0


def batch_loss(model, instances, corpus, query_tokens):
    """Score every instance document, expand pairs, return (loss, stats).

    stats carries the observed (tf, dlen) values feeding the running scale
    means, gathered during graph construction so updates happen post-step.
    """
    lat_chunks = []
    exp_chunks = []
    seg_ids = []
    tf_seen = []
    dlen_seen = []
    doc_count = 0
    for inst in instances:
        terms = query_tokens[inst.query_id]
        if not terms:
            raise ContractError(f"query {inst.query_id} has no tokens")
        for doc_id in inst.doc_ids:
            doc = corpus.get(doc_id)
            if model.needs_latent:
                enc = model.encode_document(doc)
                lat_chunks.append(model.latent_term_scores(terms, enc))
            if model.needs_explicit:
                exp_chunks.append(model.explicit_term_scores(terms, doc))
                _, tf, _ = model.explicit_stats(terms, doc)
                tf_seen.extend(tf[tf > 0].tolist())
                dlen_seen.append(doc.length)
            seg_ids.extend([doc_count] * len(terms))
            doc_count += 1
    if model.variant == "ndrm1":
        scores = T.concat(lat_chunks, axis=0)
    elif model.variant == "ndrm2":
        scores = T.concat(exp_chunks, axis=0)
    else:
        lat_all = T.concat(lat_chunks, axis=0)
        exp_all = T.concat(exp_chunks, axis=0)
        scores = duet_scores(lat_all, exp_all, model.duet, model.mode)
    totals = T.segment_sum(scores, seg_ids, doc_count)
    pref_idx = []
    other_idx = []
    for i in range(len(instances)):
        base = i * DOCS_PER_INSTANCE
        for a, b in _PAIR_SLOTS:
            pref_idx.append(base + a)
            other_idx.append(base + b)
    losses = ranknet_loss(T.gather(totals, pref_idx), T.gather(totals, other_idx))
    return T.tmean(losses), (tf_seen, dlen_seen)


def train(model, corpus, query_tokens, instances, cfg, trace_path=None):
    """Run cfg.steps optimizer steps over shuffled instances; returns the
    per-step mean-loss trace. Raises TrainingDiverged on non-finite values."""
    model.train()
    opt = Adam(model.parameters(), lr=cfg.lr, betas=cfg.betas)
    rng = np.random.default_rng(cfg.seed)
    order = np.arange(len(instances))
    result = TrainResult()
    cursor = 0
    for step in range(cfg.steps):
        if cursor == 0:
            rng.shuffle(order)
        batch = [instances[i] for i in
                 order[cursor:cursor + cfg.batch_size]]
        cursor += cfg.batch_size
        if cursor >= len(order):
            cursor = 0
        if not batch:
            raise ContractError("no training instances available")
        opt.zero_grad()
        try:
            loss, (tf_seen, dlen_seen) = batch_loss(model, batch, corpus,
                                                    query_tokens)
            value = loss.item()
            T.backward(loss)
        except NonFiniteError as err:
            raise TrainingDiverged(
                f"non-finite value at step {step}: {err}", batch_index=step,
                param_norms=_param_norms(model)) from err
        if not math.isfinite(value):
            raise TrainingDiverged(f"non-finite loss at step {step}",
                                   batch_index=step,
                                   param_norms=_param_norms(model))
        clip_gradients(opt.params, cfg.clip_norm)
        opt.step()
        model.update_bs_stats(tf_seen, dlen_seen)
        result.loss_trace.append(value)
        result.steps += 1
    model.eval()
    if trace_path:
        write_loss_trace(result.loss_trace, trace_path)
    return result


def _param_norms(model):
    return {name: float(np.linalg.norm(p.data))
            for name, p in model.parameters().items()}


def write_loss_trace(trace, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,mean_loss\n")
        for step, value in enumerate(trace):
            fh.write(f"{step},{value:.6f}\n")
