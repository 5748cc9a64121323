"""Okapi BM25 inverted index with deterministic ranking and on-disk persistence.

Scoring uses the non-negative idf form

    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))

and the usual saturated tf part ``tf*(k1+1) / (tf + k1*(1 - b + b*dl/avgdl))``
with k1=1.2, b=0.75 by default. Documents that share no term with the query
score 0 and are never returned.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus, CorpusStats, Passage
from .tokenization import TokenizerConfig, tokenize

INDEX_MAGIC = "ragloop-bm25"
INDEX_VERSION = 1

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75


class RetrievalError(Exception):
    pass


class EmptyCorpusError(RetrievalError):
    """Building an index over nothing is a configuration mistake."""


class UnknownDocumentError(RetrievalError):
    pass


class IndexFormatError(RetrievalError):
    """Persisted index file is missing the magic header or malformed."""


@dataclass(frozen=True)
class Hit:
    passage_id: str
    sparse_score: float
    rerank_score: float | None = None


@dataclass(frozen=True)
class RetrievalResult:
    """Ranked hits from one retrieval stage."""

    hits: tuple[Hit, ...]
    stage: str  # "sparse" | "reranked"

    def ids(self) -> list[str]:
        return [h.passage_id for h in self.hits]


class Index:
    """Immutable inverted index over one corpus.

    ``postings`` maps term -> list of (passage id, term frequency), doc ids
    ascending. ``corpus`` is kept so searches can resolve hits back to
    passages; a loaded index must have a corpus attached before that.
    """

    def __init__(self, postings: dict[str, list[tuple[str, int]]],
                 doc_lengths: dict[str, int], tokenizer: TokenizerConfig,
                 k1: float = DEFAULT_K1, b: float = DEFAULT_B,
                 corpus: Corpus | None = None):
        self.postings = postings
        self.doc_lengths = doc_lengths
        self.tokenizer = tokenizer
        self.k1 = k1
        self.b = b
        self.corpus = corpus
        total = sum(doc_lengths.values())
        self.stats = CorpusStats(doc_count=len(doc_lengths), total_tokens=total)

    def attach_corpus(self, corpus: Corpus) -> None:
        missing = [i for i in self.doc_lengths if i not in corpus]
        if missing:
            raise IndexFormatError(
                f"index references {len(missing)} passage(s) absent from the corpus, "
                f"e.g. {missing[0]!r}")
        self.corpus = corpus

    def passage(self, passage_id: str) -> Passage:
        if self.corpus is None:
            raise RetrievalError("no corpus attached to this index")
        got = self.corpus.get(passage_id)
        if got is None:
            raise UnknownDocumentError(passage_id)
        return got


def indexed_text(passage: Passage) -> str:
    """Text actually indexed for a passage: title prepended to the body."""
    return f"{passage.title} {passage.text}" if passage.title else passage.text


def build_index(corpus: Corpus, config: TokenizerConfig | None = None,
                k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> Index:
    """Build the inverted index for ``corpus``. The corpus must be non-empty."""
    if len(corpus) == 0:
        raise EmptyCorpusError("refusing to build an index over an empty corpus")
    cfg = config or TokenizerConfig()

    postings: dict[str, dict[str, int]] = {}
    doc_lengths: dict[str, int] = {}
    for passage in corpus.passages():
        tokens = tokenize(indexed_text(passage), cfg)
        doc_lengths[passage.id] = len(tokens)
        for tok in tokens:
            per_term = postings.setdefault(tok, {})
            per_term[passage.id] = per_term.get(passage.id, 0) + 1

    frozen = {term: sorted(tfs.items()) for term, tfs in sorted(postings.items())}
    return Index(frozen, doc_lengths, cfg, k1=k1, b=b, corpus=corpus)


def _idf(index: Index, term: str) -> float:
    df = len(index.postings.get(term, ()))
    n = index.stats.doc_count
    return math.log(1.0 + (n - df + 0.5) / (df + 0.5))


def bm25_score(index: Index, query_terms: list[str], passage_id: str) -> float:
    """BM25 score of one document for an already-tokenized query."""
    if passage_id not in index.doc_lengths:
        raise UnknownDocumentError(passage_id)
    dl = index.doc_lengths[passage_id]
    avgdl = index.stats.avg_doc_len
    score = 0.0
    for term in query_terms:
        tf = 0
        for doc, freq in index.postings.get(term, ()):
            if doc == passage_id:
                tf = freq
                break
        if tf == 0:
            continue
        norm = tf + index.k1 * (1.0 - index.b + index.b * dl / avgdl)
        score += _idf(index, term) * tf * (index.k1 + 1.0) / norm
    return score


def search(index: Index, query: str, top_k: int) -> RetrievalResult:
    """Top ``top_k`` passages by BM25 score; zero-score documents are excluded.

    Ties break by ascending passage id, so repeated searches are
    byte-identical.
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    terms = tokenize(query, index.tokenizer)

    # Accumulate per-candidate scores straight off the postings lists.
    # Sorted term order keeps float accumulation identical across processes.
    scores: dict[str, float] = {}
    avgdl = index.stats.avg_doc_len
    for term in sorted(set(terms)):
        count = terms.count(term)
        idf = _idf(index, term)
        for doc, tf in index.postings.get(term, ()):
            dl = index.doc_lengths[doc]
            norm = tf + index.k1 * (1.0 - index.b + index.b * dl / avgdl)
            scores[doc] = scores.get(doc, 0.0) + count * idf * tf * (index.k1 + 1.0) / norm

    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    hits = tuple(Hit(passage_id=doc, sparse_score=s) for doc, s in ranked)
    return RetrievalResult(hits=hits, stage="sparse")


def save_index(index: Index, path: str | Path) -> None:
    """Persist the index as line-delimited JSON with a versioned header."""
    path = Path(path)
    header = {
        "magic": INDEX_MAGIC,
        "version": INDEX_VERSION,
        "tokenizer": index.tokenizer.to_dict(),
        "k1": index.k1,
        "b": index.b,
        "doc_count": index.stats.doc_count,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for doc in sorted(index.doc_lengths):
            fh.write(json.dumps({"kind": "doc", "id": doc,
                                 "len": index.doc_lengths[doc]}) + "\n")
        for term in sorted(index.postings):
            fh.write(json.dumps({"kind": "term", "term": term,
                                 "postings": index.postings[term]},
                                ensure_ascii=False) + "\n")


def load_index(path: str | Path, corpus: Corpus | None = None,
               expect_tokenizer: TokenizerConfig | None = None) -> Index:
    """Load a persisted index, validating magic, version and (optionally) the
    embedded tokenizer config against ``expect_tokenizer``."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise IndexFormatError(f"{path}: unreadable header") from exc
        if not isinstance(header, dict) or header.get("magic") != INDEX_MAGIC:
            raise IndexFormatError(f"{path}: not a ragloop index (bad magic)")
        if header.get("version") != INDEX_VERSION:
            raise IndexFormatError(
                f"{path}: unsupported index version {header.get('version')!r}")
        tokenizer = TokenizerConfig.from_dict(header["tokenizer"])
        if expect_tokenizer is not None and tokenizer != expect_tokenizer:
            raise IndexFormatError(
                f"{path}: tokenizer config mismatch (index built with {tokenizer})")

        doc_lengths: dict[str, int] = {}
        postings: dict[str, list[tuple[str, int]]] = {}
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IndexFormatError(f"{path}: line {line_no} unreadable") from exc
            if rec.get("kind") == "doc":
                doc_lengths[rec["id"]] = int(rec["len"])
            elif rec.get("kind") == "term":
                postings[rec["term"]] = [(d, int(tf)) for d, tf in rec["postings"]]
            else:
                raise IndexFormatError(f"{path}: line {line_no} has unknown kind")

    if len(doc_lengths) != header.get("doc_count"):
        raise IndexFormatError(
            f"{path}: header says {header.get('doc_count')} docs, file has {len(doc_lengths)}")
    index = Index(postings, doc_lengths, tokenizer,
                  k1=float(header.get("k1", DEFAULT_K1)),
                  b=float(header.get("b", DEFAULT_B)))
    if corpus is not None:
        index.attach_corpus(corpus)
    return index


def oracle_retrieve(question_id: str,
                    reference_map: dict[str, list[str]]) -> RetrievalResult:
    """Return exactly the gold reference passages for a question.

    Used to evaluate reasoning under ideal retrieval; scores carry a sentinel
    maximum since no ranking happened.
    """
    if question_id not in reference_map:
        raise UnknownDocumentError(
            f"question {question_id!r} has no gold-passage mapping")
    hits = tuple(Hit(passage_id=pid, sparse_score=math.inf)
                 for pid in reference_map[question_id])
    return RetrievalResult(hits=hits, stage="sparse")
