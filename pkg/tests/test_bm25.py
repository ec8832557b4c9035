"""BM25 scoring values, saturation behavior, search ordering, and tuning."""

import math

import pytest

from ckrank.bm25 import BM25Searcher, bm25_score, tune_bm25
from ckrank.corpus import Corpus, DocumentRecord, QueryRecord, Vocabulary


def three_doc_corpus():
    corpus = Corpus()
    corpus.add(DocumentRecord("D1", ["cat", "cat", "dog"]))
    corpus.add(DocumentRecord("D2", ["cat", "bird"]))
    corpus.add(DocumentRecord("D3", ["dog", "bird", "bird"]))
    return corpus, Vocabulary.build(corpus, min_df=1)


def test_bm25_hand_value():
    corpus, vocab = three_doc_corpus()
    # N=3 docs; df(cat)=2 -> idf = ln(4/3); |D1|=3, mean_dlen=8/3
    doc = corpus.get("D1")
    k1, b = 0.9, 0.4
    norm = k1 * (1.0 - b + b * 3.0 / (8.0 / 3.0))
    want = math.log(4.0 / 3.0) * 2.0 * (k1 + 1.0) / (2.0 + norm)
    assert bm25_score(["cat"], doc, vocab) == pytest.approx(want, abs=1e-12)


def test_bm25_zero_tf_contributes_nothing():
    corpus, vocab = three_doc_corpus()
    assert bm25_score(["zebra"], corpus.get("D1"), vocab) == 0.0
    with_match = bm25_score(["cat"], corpus.get("D1"), vocab)
    assert bm25_score(["cat", "zebra"], corpus.get("D1"), vocab) == \
        pytest.approx(with_match)


def test_bm25_repeated_query_terms_add():
    corpus, vocab = three_doc_corpus()
    doc = corpus.get("D1")
    single = bm25_score(["cat"], doc, vocab)
    double = bm25_score(["cat", "cat"], doc, vocab)
    assert double == pytest.approx(2.0 * single)


def test_bm25_saturates_in_tf():
    # constant-length docs so only tf varies; extra docs keep idf positive
    length = 80
    corpus = Corpus()
    for i, tf in enumerate([1, 2, 3, 4, 5]):
        corpus.add(DocumentRecord(f"D{i}", ["cat"] * tf + ["x"] * (length - tf)))
    for i in range(5):
        corpus.add(DocumentRecord(f"F{i}", ["x"] * length))
    vocab = Vocabulary.build(corpus, min_df=1)
    scores = [bm25_score(["cat"], corpus.get(f"D{i}"), vocab) for i in range(5)]
    gaps = [b - a for a, b in zip(scores, scores[1:])]
    assert all(s2 > s1 for s1, s2 in zip(scores, scores[1:]))  # monotone
    assert all(g2 < g1 for g1, g2 in zip(gaps, gaps[1:]))      # concave
    # k1 caps the per-term contribution
    assert scores[-1] < vocab.idf("cat") * (0.9 + 1.0)


def test_searcher_matches_direct_scoring():
    corpus, vocab = three_doc_corpus()
    searcher = BM25Searcher(corpus, vocab)
    ranked = searcher.search(["cat", "bird"], k=10)
    direct = {d.doc_id: bm25_score(["cat", "bird"], d, vocab) for d in corpus
              if bm25_score(["cat", "bird"], d, vocab) > 0}
    assert {d: s for d, s in ranked} == pytest.approx(direct)
    scores = [s for _, s in ranked]
    assert scores == sorted(scores, reverse=True)


def test_searcher_tie_break_by_doc_id():
    corpus = Corpus()
    corpus.add(DocumentRecord("DB", ["cat"]))
    corpus.add(DocumentRecord("DA", ["cat"]))
    vocab = Vocabulary.build(corpus, min_df=1)
    ranked = BM25Searcher(corpus, vocab).search(["cat"], k=10)
    assert [d for d, _ in ranked] == ["DA", "DB"]


def test_searcher_respects_k():
    corpus, vocab = three_doc_corpus()
    assert len(BM25Searcher(corpus, vocab).search(["cat", "dog", "bird"], k=2)) == 2


def test_tune_bm25_returns_grid_best():
    corpus, vocab = three_doc_corpus()
    queries = [QueryRecord("Q1", ["cat"]), QueryRecord("Q2", ["bird"])]
    qrels = {"Q1": {"D1": 3, "D2": 1}, "Q2": {"D3": 2}}
    k1, b, ndcg = tune_bm25(corpus, vocab, queries, qrels)
    assert k1 in (0.6, 0.9, 1.2, 1.5)
    assert b in (0.2, 0.4, 0.6, 0.75)
    assert 0.0 <= ndcg <= 1.0
    # the reported score is reproducible with the returned settings
    searcher = BM25Searcher(corpus, vocab, k1=k1, b=b)
    run = {q.query_id: searcher.search(q.tokens, k=100) for q in queries}
    from ckrank.evalmetrics import evaluate
    _, mean, _ = evaluate(run, qrels, "ndcg", 10)
    assert mean == pytest.approx(ndcg)
