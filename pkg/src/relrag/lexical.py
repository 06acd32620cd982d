"""Inverted-index BM25 retrieval with paraphrase-infused boolean queries.

A query is a disjunction over (entity AND paraphrase) conjunctions. Both
sides of every conjunct are matched as contiguous token phrases against
passage bodies; candidates are then scored with Okapi BM25 over the union
of all query tokens.
"""

from __future__ import annotations

import math
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

from .ranking import RankedList, ranked_list_from_scores
from .text import tokenize

if TYPE_CHECKING:
    from .corpus import Corpus

INDEX_SNAPSHOT_VERSION = 1

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75

RETRIEVER_TAG = "lexical"


class LexicalIndexError(Exception):
    pass


@dataclass(frozen=True)
class Posting:
    passage_id: str
    term_frequency: int
    positions: tuple[int, ...]


@dataclass(frozen=True)
class Conjunct:
    """One (entity AND paraphrase) clause, both as token phrases."""

    entity_phrase: tuple[str, ...]
    paraphrase_phrase: tuple[str, ...]


@dataclass(frozen=True)
class BooleanQuery:
    clauses: tuple[Conjunct, ...]

    def union_tokens(self) -> list[str]:
        """Distinct query tokens in sorted order (for deterministic scoring)."""
        tokens: set[str] = set()
        for clause in self.clauses:
            tokens.update(clause.entity_phrase)
            tokens.update(clause.paraphrase_phrase)
        return sorted(tokens)

    def canonical(self) -> str:
        """Stable textual form, used in traces."""
        return " OR ".join(
            "({} AND {})".format(" ".join(c.entity_phrase), " ".join(c.paraphrase_phrase))
            for c in self.clauses
        )


@dataclass
class LexicalIndex:
    postings: dict[str, list[Posting]]
    doc_lengths: dict[str, int]
    avg_doc_length: float
    doc_count: int
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    _idf: dict[str, float] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        # Non-negative IDF variant; keeps every matching score positive.
        n = self.doc_count
        self._idf = {
            term: math.log(1.0 + (n - len(plist) + 0.5) / (len(plist) + 0.5))
            for term, plist in self.postings.items()
        }

    def idf(self, term: str) -> float:
        return self._idf.get(term, 0.0)


def build_index(corpus: Corpus, k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> LexicalIndex:
    """Build positional postings over passage bodies."""
    if len(corpus) == 0:
        raise LexicalIndexError("cannot index an empty corpus")
    postings: dict[str, list[Posting]] = {}
    doc_lengths: dict[str, int] = {}
    for passage in corpus:
        tokens = tokenize(passage.body)
        doc_lengths[passage.id] = len(tokens)
        per_term: dict[str, list[int]] = {}
        for pos, tok in enumerate(tokens):
            per_term.setdefault(tok, []).append(pos)
        for term, positions in per_term.items():
            postings.setdefault(term, []).append(
                Posting(passage.id, len(positions), tuple(positions))
            )
    total = sum(doc_lengths.values())
    return LexicalIndex(
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_length=total / len(doc_lengths),
        doc_count=len(doc_lengths),
        k1=k1,
        b=b,
    )


def build_query(head_entity: str, paraphrases: list[str] | tuple[str, ...]) -> BooleanQuery:
    """One clause per paraphrase, in the given (registry) order."""
    if not paraphrases:
        raise LexicalIndexError("paraphrase list must be non-empty")
    entity_tokens = tuple(tokenize(head_entity))
    if not entity_tokens:
        raise LexicalIndexError(f"entity {head_entity!r} tokenizes to nothing")
    clauses = []
    for p in paraphrases:
        p_tokens = tuple(tokenize(p))
        if not p_tokens:
            raise LexicalIndexError(f"paraphrase {p!r} tokenizes to nothing")
        clauses.append(Conjunct(entity_phrase=entity_tokens, paraphrase_phrase=p_tokens))
    return BooleanQuery(clauses=tuple(clauses))


def _phrase_doc_ids(index: LexicalIndex, phrase: tuple[str, ...]) -> set[str]:
    """Docs containing `phrase` contiguously, via positional intersection."""
    first = index.postings.get(phrase[0])
    if first is None:
        return set()
    if len(phrase) == 1:
        return {p.passage_id for p in first}
    # start positions per doc for the first term, narrowed term by term
    starts: dict[str, set[int]] = {p.passage_id: set(p.positions) for p in first}
    for offset, term in enumerate(phrase[1:], start=1):
        plist = index.postings.get(term)
        if plist is None:
            return set()
        positions_by_doc = {p.passage_id: p.positions for p in plist}
        next_starts: dict[str, set[int]] = {}
        for doc_id, cand in starts.items():
            here = positions_by_doc.get(doc_id)
            if here is None:
                continue
            here_set = set(here)
            kept = {s for s in cand if s + offset in here_set}
            if kept:
                next_starts[doc_id] = kept
        starts = next_starts
        if not starts:
            return set()
    return set(starts)


def candidate_ids(index: LexicalIndex, query: BooleanQuery) -> set[str]:
    """Docs satisfying at least one (entity AND paraphrase) clause."""
    out: set[str] = set()
    entity_cache: dict[tuple[str, ...], set[str]] = {}
    for clause in query.clauses:
        if clause.entity_phrase not in entity_cache:
            entity_cache[clause.entity_phrase] = _phrase_doc_ids(index, clause.entity_phrase)
        entity_docs = entity_cache[clause.entity_phrase]
        if not entity_docs:
            continue
        out |= entity_docs & _phrase_doc_ids(index, clause.paraphrase_phrase)
    return out


def bm25_score(index: LexicalIndex, passage_id: str, terms: list[str]) -> float:
    """Okapi BM25 of one passage for the given (distinct) terms."""
    dl = index.doc_lengths[passage_id]
    norm = index.k1 * (1.0 - index.b + index.b * dl / index.avg_doc_length)
    score = 0.0
    for term in terms:
        plist = index.postings.get(term)
        if plist is None:
            continue
        tf = 0
        for posting in plist:
            if posting.passage_id == passage_id:
                tf = posting.term_frequency
                break
        if tf == 0:
            continue
        score += index.idf(term) * tf * (index.k1 + 1.0) / (tf + norm)
    return score


def search(index: LexicalIndex, query: BooleanQuery, k: int) -> RankedList:
    """Boolean filter, then BM25 over the union of query tokens, top-k."""
    if k < 1:
        raise LexicalIndexError(f"k must be >= 1, got {k}")
    candidates = candidate_ids(index, query)
    terms = query.union_tokens()
    scores = {pid: bm25_score(index, pid, terms) for pid in candidates}
    return ranked_list_from_scores(RETRIEVER_TAG, scores, k)


def save_lexical_index(index: LexicalIndex, path: str | Path) -> None:
    payload = {
        "version": INDEX_SNAPSHOT_VERSION,
        "kind": "lexical",
        "postings": {
            term: [(p.passage_id, p.term_frequency, p.positions) for p in plist]
            for term, plist in index.postings.items()
        },
        "doc_lengths": index.doc_lengths,
        "avg_doc_length": index.avg_doc_length,
        "doc_count": index.doc_count,
        "k1": index.k1,
        "b": index.b,
    }
    Path(path).write_bytes(pickle.dumps(payload, protocol=pickle.HIGHEST_PROTOCOL))


def load_lexical_index(path: str | Path) -> LexicalIndex:
    payload = pickle.loads(Path(path).read_bytes())
    version = payload.get("version")
    if version != INDEX_SNAPSHOT_VERSION:
        raise LexicalIndexError(
            f"lexical index snapshot version {version} not supported "
            f"(expected {INDEX_SNAPSHOT_VERSION})"
        )
    postings = {
        term: [Posting(pid, tf, tuple(positions)) for pid, tf, positions in plist]
        for term, plist in payload["postings"].items()
    }
    return LexicalIndex(
        postings=postings,
        doc_lengths=payload["doc_lengths"],
        avg_doc_length=payload["avg_doc_length"],
        doc_count=payload["doc_count"],
        k1=payload["k1"],
        b=payload["b"],
    )
