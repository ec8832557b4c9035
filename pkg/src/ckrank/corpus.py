"""Corpus and query ingestion, tokenization, vocabulary, and TREC-style IO.

Documents arrive as tab-separated (id, url, title, body) with an optional
second file mapping doc id to click-query strings; all fields are
concatenated in fixed order into one token stream per document, truncated
at a configurable cap. The vocabulary keeps ids only for terms appearing
in at least ``min_df`` documents, but document frequencies are retained
for every observed term so rare/unknown terms still get a principled IDF.
"""

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property

from .errors import ContractError

MAX_DOC_TOKENS = 4000
MAX_QUERY_TOKENS = 20

_SPLIT = re.compile(r"[\W_]+", re.UNICODE)


def tokenize(text):
    """Lowercase and split on runs of non-alphanumeric codepoints."""
    return [t for t in _SPLIT.split(text.lower()) if t]


@dataclass
class DocumentRecord:
    doc_id: str
    tokens: list

    @cached_property
    def tf(self):
        return Counter(self.tokens)

    @property
    def length(self):
        return len(self.tokens)


@dataclass
class QueryRecord:
    query_id: str
    tokens: list


@dataclass
class Corpus:
    docs: dict = field(default_factory=dict)
    skipped_lines: int = 0

    def add(self, doc):
        self.docs[doc.doc_id] = doc

    def __len__(self):
        return len(self.docs)

    def __iter__(self):
        return iter(self.docs.values())

    def __contains__(self, doc_id):
        return doc_id in self.docs

    def get(self, doc_id):
        return self.docs.get(doc_id)


def ingest_corpus(docs_file, orcas_file=None, max_doc_tokens=MAX_DOC_TOKENS):
    """Read documents, concatenating url + title + body + click queries.

    Malformed lines are skipped and counted on the returned corpus.
    """
    orcas = {}
    if orcas_file is not None:
        with open(orcas_file, encoding="utf-8") as fh:
            for line in fh:
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2 or not parts[0]:
                    continue
                orcas.setdefault(parts[0], []).append(parts[1])
    corpus = Corpus()
    with open(docs_file, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4 or not parts[0]:
                corpus.skipped_lines += 1
                continue
            doc_id, url, title, body = parts
            text = " ".join([url, title, body] + orcas.get(doc_id, []))
            corpus.add(DocumentRecord(doc_id, tokenize(text)[:max_doc_tokens]))
    return corpus


def load_queries(path, max_query_tokens=MAX_QUERY_TOKENS):
    """Tab-separated (query id, text) -> list of QueryRecord."""
    queries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2 or not parts[0]:
                continue
            queries.append(QueryRecord(parts[0], tokenize(parts[1])[:max_query_tokens]))
    return queries


class Vocabulary:
    """Dense term ids for frequent terms plus full df/IDF over all terms.

    Terms below min_df share a single out-of-vocabulary id equal to
    ``size`` (so an embedding table needs size + 1 rows). ``mean_tf`` is
    the average term frequency over distinct (term, document) pairs and
    ``mean_dlen`` the average document length; both seed the scale
    statistics of the explicit matcher.
    """

    def __init__(self, term_to_id, df, num_docs, mean_dlen, mean_tf):
        self.term_to_id = term_to_id
        self.df = df
        self.num_docs = num_docs
        self.mean_dlen = mean_dlen
        self.mean_tf = mean_tf

    @classmethod
    def build(cls, corpus, min_df=2):
        df = Counter()
        total_tokens = 0
        total_postings = 0
        for doc in corpus:
            df.update(doc.tf.keys())
            total_tokens += doc.length
            total_postings += len(doc.tf)
        kept = sorted(t for t, c in df.items() if c >= min_df)
        term_to_id = {t: i for i, t in enumerate(kept)}
        n = len(corpus)
        return cls(term_to_id, dict(df), n,
                   total_tokens / n if n else 0.0,
                   total_tokens / total_postings if total_postings else 0.0)

    @property
    def size(self):
        return len(self.term_to_id)

    @property
    def oov_id(self):
        return len(self.term_to_id)

    def __contains__(self, term):
        return term in self.term_to_id

    def id_of(self, term):
        return self.term_to_id.get(term, self.oov_id)

    def idf(self, term):
        return math.log((self.num_docs + 1) / (self.df.get(term, 0) + 1))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({
                "terms": sorted(self.term_to_id, key=self.term_to_id.get),
                "df": self.df,
                "num_docs": self.num_docs,
                "mean_dlen": self.mean_dlen,
                "mean_tf": self.mean_tf,
            }, fh)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            blob = json.load(fh)
        term_to_id = {t: i for i, t in enumerate(blob["terms"])}
        return cls(term_to_id, blob["df"], blob["num_docs"],
                   blob["mean_dlen"], blob["mean_tf"])


# -- TREC-format files ----------------------------------------------------------


def load_qrels(path):
    """TREC qrels (qid 0 docid rel) -> {qid: {docid: rel}}."""
    qrels = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) != 4:
                continue
            qid, _, docid, rel = parts
            per_query = qrels.setdefault(qid, {})
            if docid in per_query:
                raise ContractError(f"duplicate qrels entry for ({qid}, {docid})")
            per_query[docid] = int(rel)
    return qrels


def load_run(path):
    """TREC run (qid Q0 docid rank score tag) -> {qid: [(docid, score), ...]}.

    Lists come back sorted by descending score, doc id ascending on ties.
    """
    run = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if len(parts) != 6:
                continue
            qid, _, docid, _, score, _ = parts
            run.setdefault(qid, []).append((docid, float(score)))
    for qid in run:
        run[qid].sort(key=lambda pair: (-pair[1], pair[0]))
    return run


def write_run(run, path, tag="ckrank"):
    """Write {qid: [(docid, score), ...]} in TREC run format."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(run):
            for rank, (docid, score) in enumerate(run[qid], start=1):
                fh.write(f"{qid} Q0 {docid} {rank} {score:.6f} {tag}\n")
