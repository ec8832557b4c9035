"""BM25 baseline with an in-memory inverted index and a small tuning grid."""

from .evalmetrics import evaluate


def bm25_score(query_tokens, doc, vocab, k1=0.9, b=0.4):
    """Sum of per-occurrence BM25 contributions of the query tokens.

    Repeated query tokens contribute repeatedly, matching the additive
    per-term convention the neural scorers use.
    """
    if doc.length == 0:
        return 0.0
    norm = k1 * (1.0 - b + b * doc.length / max(vocab.mean_dlen, 1e-9))
    score = 0.0
    for term in query_tokens:
        tf = doc.tf.get(term, 0)
        if tf == 0:
            continue
        score += vocab.idf(term) * tf * (k1 + 1.0) / (tf + norm)
    return score


class BM25Searcher:
    """Term-at-a-time BM25 over a whole corpus."""

    def __init__(self, corpus, vocab, k1=0.9, b=0.4):
        self.vocab = vocab
        self.k1 = k1
        self.b = b
        self.doc_ids = sorted(corpus.docs)
        self.doc_len = {d: corpus.get(d).length for d in self.doc_ids}
        self.postings = {}
        for doc_id in self.doc_ids:
            for term, tf in corpus.get(doc_id).tf.items():
                self.postings.setdefault(term, []).append((doc_id, tf))

    def search(self, query_tokens, k=100):
        """Top-k (doc id, score), score descending, doc id ascending on ties."""
        scores = {}
        avgdl = max(self.vocab.mean_dlen, 1e-9)
        for term in query_tokens:
            idf = self.vocab.idf(term)
            for doc_id, tf in self.postings.get(term, ()):
                norm = self.k1 * (1.0 - self.b + self.b * self.doc_len[doc_id] / avgdl)
                scores[doc_id] = scores.get(doc_id, 0.0) + \
                    idf * tf * (self.k1 + 1.0) / (tf + norm)
        ranked = sorted(scores.items(), key=lambda pair: (-pair[1], pair[0]))
        return ranked[:k]


def tune_bm25(corpus, vocab, queries, qrels, k1_grid=(0.6, 0.9, 1.2, 1.5),
              b_grid=(0.2, 0.4, 0.6, 0.75), cutoff=10, k=100):
    """Grid-search (k1, b) by mean NDCG at the cutoff; returns the best
    (k1, b, ndcg)."""
    best = None
    for k1 in k1_grid:
        for b in b_grid:
            searcher = BM25Searcher(corpus, vocab, k1=k1, b=b)
            run = {q.query_id: searcher.search(q.tokens, k=k) for q in queries}
            _, mean, _ = evaluate(run, qrels, "ndcg", cutoff)
            if best is None or mean > best[2]:
                best = (k1, b, mean)
    return best
