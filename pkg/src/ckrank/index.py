"""Impact index: precomputed per-term document scores behind an inverted index.

Because every ranker here scores a query as a sum of independent per-term
scores, the whole model can be folded offline into posting lists of
(document, score) pairs, one list per vocabulary term occurring in the
document. Retrieval is then term-at-a-time float accumulation with no
model in sight. Soft matches against documents that do not contain the
literal term are deliberately dropped; scoring every (term, document) pair
would be quadratic in the collection.

File layout: magic ``CKIX`` | u32 version | u64 meta length | meta JSON
(doc table, term dictionary with offsets, config hash, frozen statistics) |
posting blocks. Each block stores delta-encoded doc indices as unsigned
varints followed by raw little-endian float32 scores. Round-trips are
bit-exact.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, IndexFormatError

MAGIC = b"CKIX"
VERSION = 1


@dataclass
class RetrievalResult:
    query_id: str
    ranking: list = field(default_factory=list)
    skipped: int = 0

    def __post_init__(self):
        for (_, s1), (_, s2) in zip(self.ranking, self.ranking[1:]):
            if s2 > s1:
                raise ContractError("ranking must be non-increasing by score")


def _rank(scored, k):
    """Sort (doc_id, score) best-first, doc id ascending on ties, cut at k."""
    ordered = sorted(scored, key=lambda pair: (-pair[1], pair[0]))
    return ordered[:k] if k is not None else ordered


class ImpactIndex:
    def __init__(self, doc_ids, postings, config_hash, stats):
        self.doc_ids = list(doc_ids)
        self.postings = postings            # term -> (int64 doc indices, f32 scores)
        self.config_hash = config_hash
        self.stats = dict(stats)

    @property
    def num_docs(self):
        return len(self.doc_ids)

    @property
    def num_postings(self):
        return sum(idx.size for idx, _ in self.postings.values())

    def matches(self, model):
        return self.config_hash == model.config.config_hash()


def build_index(corpus, model, progress=None):
    """Score every (vocabulary term, containing document) pair offline.

    The model must be in eval mode so batch-dependent statistics are frozen;
    building from a training-mode model is refused.
    """
    if model.training:
        raise ContractError("refusing to build an index from a model in train "
                            "mode: statistics are not frozen")
    doc_ids = sorted(corpus.docs)
    postings = {}
    for doc_idx, doc_id in enumerate(doc_ids):
        doc = corpus.get(doc_id)
        terms = sorted(t for t in doc.tf if t in model.vocab)
        if not terms:
            continue
        enc = model.encode_document(doc) if model.needs_latent else None
        scores = model.per_term_scores(terms, doc, doc_enc=enc)
        for term, score in zip(terms, scores):
            postings.setdefault(term, ([], []))
            postings[term][0].append(doc_idx)
            postings[term][1].append(np.float32(score))
        if progress and (doc_idx + 1) % progress == 0:
            print(f"indexed {doc_idx + 1}/{len(doc_ids)} documents")
    packed = {t: (np.asarray(idx, dtype=np.int64),
                  np.asarray(sc, dtype=np.float32))
              for t, (idx, sc) in postings.items()}
    return ImpactIndex(doc_ids, packed, model.config.config_hash(),
                       model.running_stats())


def retrieve(query, index, k=100):
    """Term-at-a-time accumulation over the query's token occurrences.

    Repeated terms accumulate repeatedly. Only documents sharing at least
    one indexed term appear; scores accumulate in float64.
    """
    tokens = getattr(query, "tokens", query)
    qid = getattr(query, "query_id", "")
    acc = np.zeros(index.num_docs, dtype=np.float64)
    touched = np.zeros(index.num_docs, dtype=bool)
    for term in tokens:
        hit = index.postings.get(term)
        if hit is None:
            continue
        doc_idx, scores = hit
        acc[doc_idx] += scores
        touched[doc_idx] = True
    live = np.flatnonzero(touched)
    scored = [(index.doc_ids[i], float(acc[i])) for i in live]
    return RetrievalResult(qid, _rank(scored, k))


def rerank(query, candidates, model, corpus, k=None):
    """Fresh forward scoring of candidate documents; unknown ids are skipped
    and counted on the result."""
    tokens = getattr(query, "tokens", query)
    qid = getattr(query, "query_id", "")
    scored = []
    skipped = 0
    for doc_id in candidates:
        doc = corpus.get(doc_id)
        if doc is None:
            skipped += 1
            continue
        scored.append((doc_id, model.score_query_document(tokens, doc)))
    return RetrievalResult(qid, _rank(scored, k), skipped=skipped)


# -- binary format ---------------------------------------------------------------


def _write_varint(buf, value):
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            buf.append(byte | 0x80)
        else:
            buf.append(byte)
            return


def _read_varint(blob, pos):
    shift = 0
    out = 0
    while True:
        byte = blob[pos]
        pos += 1
        out |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return out, pos
        shift += 7


def save_index(index, path):
    dictionary = []
    blocks = []
    offset = 0
    for term in sorted(index.postings):
        doc_idx, scores = index.postings[term]
        buf = bytearray()
        prev = -1
        for i in doc_idx.tolist():
            _write_varint(buf, i - prev)
            prev = i
        buf.extend(scores.astype("<f4", copy=False).tobytes())
        dictionary.append({"term": term, "offset": offset,
                           "count": int(doc_idx.size)})
        blocks.append(bytes(buf))
        offset += len(buf)
    meta = json.dumps({
        "num_docs": index.num_docs,
        "doc_ids": index.doc_ids,
        "config_hash": index.config_hash,
        "stats": index.stats,
        "dictionary": dictionary,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)
        for block in blocks:
            fh.write(block)


def load_index(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise IndexFormatError(f"{path}: not an impact index (bad magic)")
    version = struct.unpack_from("<I", blob, 4)[0]
    if version != VERSION:
        raise IndexFormatError(f"{path}: unsupported index version {version}")
    mlen = struct.unpack_from("<Q", blob, 8)[0]
    meta = json.loads(blob[16:16 + mlen].decode("utf-8"))
    payload = blob[16 + mlen:]
    postings = {}
    for entry in meta["dictionary"]:
        pos = entry["offset"]
        count = entry["count"]
        doc_idx = np.empty(count, dtype=np.int64)
        prev = -1
        for i in range(count):
            delta, pos = _read_varint(payload, pos)
            prev += delta
            doc_idx[i] = prev
        scores = np.frombuffer(payload, dtype="<f4", count=count,
                               offset=pos).astype(np.float32)
        postings[entry["term"]] = (doc_idx, scores)
    return ImpactIndex(meta["doc_ids"], postings, meta["config_hash"],
                       meta["stats"])
