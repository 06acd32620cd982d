"""Reciprocal Rank Fusion of lexical and dense ranked lists.

Each passage scores sum(1 / (c + rank)) over the retrievers that returned
it; with the default c = 0, top ranks dominate. Pure function, no state.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ranking import RankedList


class FusionError(Exception):
    pass


@dataclass(frozen=True)
class FusedEntry:
    passage_id: str
    score: float
    contributing_ranks: dict[str, int]


@dataclass(frozen=True)
class FusedRanking:
    entries: tuple[FusedEntry, ...]
    k: int
    c_rrf: int

    @property
    def passage_ids(self) -> list[str]:
        return [e.passage_id for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def rrf_fuse(lists: list[RankedList], k: int, c_rrf: int = 0) -> FusedRanking:
    """Fuse ranked lists and keep the top-k by fused score.

    Ties break by ascending passage id so fusion is deterministic.
    """
    if k < 1:
        raise FusionError(f"k must be >= 1, got {k}")
    if c_rrf < 0:
        raise FusionError(f"c_rrf must be >= 0, got {c_rrf}")
    tags = [rl.retriever_tag for rl in lists]
    if len(set(tags)) != len(tags):
        raise FusionError(f"duplicate retriever tags: {tags}")

    scores: dict[str, float] = {}
    ranks: dict[str, dict[str, int]] = {}
    for rl in lists:
        seen: set[str] = set()
        for entry in rl.entries:
            if entry.passage_id in seen:
                raise FusionError(
                    f"{rl.retriever_tag}: duplicate passage {entry.passage_id!r}"
                )
            seen.add(entry.passage_id)
            if entry.rank < 1:
                raise FusionError(
                    f"{rl.retriever_tag}: rank {entry.rank} for {entry.passage_id!r} "
                    "(ranks are 1-based)"
                )
            scores[entry.passage_id] = scores.get(entry.passage_id, 0.0) + 1.0 / (
                c_rrf + entry.rank
            )
            ranks.setdefault(entry.passage_id, {})[rl.retriever_tag] = entry.rank

    ordered = sorted(scores.items(), key=lambda item: (-item[1], item[0]))[:k]
    entries = tuple(
        FusedEntry(passage_id=pid, score=score, contributing_ranks=dict(ranks[pid]))
        for pid, score in ordered
    )
    return FusedRanking(entries=entries, k=k, c_rrf=c_rrf)
