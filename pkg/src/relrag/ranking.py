"""Ranked retrieval results shared by the lexical and dense retrievers."""

from __future__ import annotations

from dataclasses import dataclass


class RankingError(Exception):
    """Raised when a ranked list violates its ordering invariants."""


@dataclass(frozen=True)
class RankedEntry:
    passage_id: str
    score: float
    rank: int


@dataclass(frozen=True)
class RankedList:
    """Results of one retriever, best first, ranks 1..n with no gaps."""

    retriever_tag: str
    entries: tuple[RankedEntry, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        prev_score = None
        for i, entry in enumerate(self.entries):
            if entry.rank != i + 1:
                raise RankingError(
                    f"{self.retriever_tag}: rank {entry.rank} at position {i} (expected {i + 1})"
                )
            if entry.passage_id in seen:
                raise RankingError(
                    f"{self.retriever_tag}: duplicate passage id {entry.passage_id!r}"
                )
            seen.add(entry.passage_id)
            if prev_score is not None and entry.score > prev_score:
                raise RankingError(f"{self.retriever_tag}: scores not descending")
            prev_score = entry.score

    @property
    def passage_ids(self) -> list[str]:
        return [e.passage_id for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def ranked_list_from_scores(tag: str, scores: dict[str, float], k: int) -> RankedList:
    """Top-k of a score map; ties broken by ascending passage id."""
    ordered = sorted(scores.items(), key=lambda item: (-item[1], item[0]))[:k]
    entries = tuple(
        RankedEntry(passage_id=pid, score=score, rank=i + 1)
        for i, (pid, score) in enumerate(ordered)
    )
    return RankedList(retriever_tag=tag, entries=entries)
