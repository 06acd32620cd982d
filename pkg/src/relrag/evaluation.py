"""Scoring and frequency analysis for relation-completion predictions.

Exact match compares normalized token sequences; approximate match uses
word-level Jaccard similarity after punctuation removal, with the 0.6
threshold as the inclusive pass mark. Datasets partition into long-tail,
mid-frequency, and high-frequency buckets by entity-pair co-occurrence.
"""

from __future__ import annotations

import csv
import io
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Corpus
from .text import contains_phrase, split_sentences, tokenize

AM_THRESHOLD = 0.6
PARTITION_X = 5

LONG_TAIL = "long_tail"
MID_FREQUENCY = "mid_frequency"
HIGH_FREQUENCY = "high_frequency"
PARTITION_LABELS = (LONG_TAIL, MID_FREQUENCY, HIGH_FREQUENCY)

_PUNCT_RE = re.compile(r"[^\w\s]|_", re.UNICODE)


class EvaluationError(Exception):
    pass


@dataclass(frozen=True)
class Triple:
    """One relation-completion instance with its acceptable tail strings."""

    head: str
    relation: str
    golds: tuple[str, ...]
    count: int | None = None

    def __post_init__(self) -> None:
        if not self.golds:
            raise EvaluationError(f"triple ({self.head!r}, {self.relation!r}): empty golds")
        if self.count is not None and self.count < 0:
            raise EvaluationError(
                f"triple ({self.head!r}, {self.relation!r}): negative count {self.count}"
            )


def normalize_sequence(text: str) -> list[str]:
    """Punctuation removed, lowercased, whitespace-split; order preserved."""
    return _PUNCT_RE.sub("", text).lower().split()


def normalize(text: str) -> set[str]:
    """Same normalization, deduplicated into a token set."""
    return set(normalize_sequence(text))


def jaccard(a: set[str], b: set[str]) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def exact_match(pred: str, golds: list[str] | tuple[str, ...], raw: bool = False) -> bool:
    """True if the prediction matches any gold.

    Default mode compares normalized token sequences; raw=True compares the
    strings byte-for-byte for the strictest reading.
    """
    if not golds:
        raise EvaluationError("golds must be non-empty")
    if raw:
        return any(pred == g for g in golds)
    pred_seq = normalize_sequence(pred)
    return any(pred_seq == normalize_sequence(g) for g in golds)


def approx_match(
    pred: str, golds: list[str] | tuple[str, ...], threshold: float = AM_THRESHOLD
) -> bool:
    """Max word-level Jaccard over golds, inclusive threshold."""
    if not 0 < threshold <= 1:
        raise EvaluationError(f"threshold must be in (0, 1], got {threshold}")
    pred_set = normalize(pred)
    return any(jaccard(pred_set, normalize(g)) >= threshold for g in golds)


def cooccurrence_count(corpus: Corpus, e1: str, e2: str) -> int:
    """Sentences, over all passages, containing both entity phrases."""
    if not e1 or not e2:
        raise EvaluationError("entities must be non-empty")
    t1 = tokenize(e1)
    t2 = tokenize(e2)
    if not t1 or not t2:
        return 0
    total = 0
    for passage in corpus:
        for sentence in split_sentences(passage.body):
            tokens = tokenize(sentence)
            if contains_phrase(tokens, t1) and contains_phrase(tokens, t2):
                total += 1
    return total


def partition(count: int, x: int = PARTITION_X) -> str:
    """long-tail below x, mid-frequency in [x, 4x), high-frequency at >= 4x."""
    if count < 0:
        raise EvaluationError(f"count must be >= 0, got {count}")
    if x < 1:
        raise EvaluationError(f"x must be >= 1, got {x}")
    if count < x:
        return LONG_TAIL
    if count < 4 * x:
        return MID_FREQUENCY
    return HIGH_FREQUENCY


@dataclass
class Cell:
    n: int = 0
    em_hits: int = 0
    am_hits: int = 0

    def add(self, em: bool, am: bool) -> None:
        self.n += 1
        self.em_hits += int(em)
        self.am_hits += int(am)

    @property
    def em_accuracy(self) -> float:
        return 100.0 * self.em_hits / self.n if self.n else 0.0

    @property
    def am_accuracy(self) -> float:
        return 100.0 * self.am_hits / self.n if self.n else 0.0

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "em_accuracy": self.em_accuracy,
            "am_accuracy": self.am_accuracy,
        }


@dataclass
class FrequencyBin(Cell):
    index: int = 0
    count_min: int = 0
    count_max: int = 0

    def to_dict(self) -> dict:
        out = super().to_dict()
        out.update(
            {"index": self.index, "count_min": self.count_min, "count_max": self.count_max}
        )
        return out


@dataclass
class EvalReport:
    overall: Cell
    per_relation: dict[str, Cell]
    per_partition: dict[str, Cell]
    bins: list[FrequencyBin] | None
    config: dict = field(default_factory=dict)

    @property
    def em_accuracy(self) -> float:
        return self.overall.em_accuracy

    @property
    def am_accuracy(self) -> float:
        return self.overall.am_accuracy

    def to_dict(self) -> dict:
        return {
            "overall": self.overall.to_dict(),
            "per_relation": {r: c.to_dict() for r, c in sorted(self.per_relation.items())},
            "per_partition": {p: c.to_dict() for p, c in self.per_partition.items()},
            "bins": [b.to_dict() for b in self.bins] if self.bins is not None else None,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def render_table(self) -> str:
        lines = []
        header = f"{'cell':<34} {'n':>6} {'EM(%)':>8} {'AM(%)':>8}"
        rule = "-" * len(header)
        lines.append(header)
        lines.append(rule)

        def row(name: str, cell: Cell) -> str:
            return f"{name:<34} {cell.n:>6} {cell.em_accuracy:>8.1f} {cell.am_accuracy:>8.1f}"

        lines.append(row("overall", self.overall))
        for relation in sorted(self.per_relation):
            lines.append(row(f"relation: {relation}", self.per_relation[relation]))
        for label in PARTITION_LABELS:
            if label in self.per_partition:
                lines.append(row(f"partition: {label}", self.per_partition[label]))
        if self.bins:
            for b in self.bins:
                lines.append(row(f"bin {b.index} [{b.count_min}..{b.count_max}]", b))
        return "\n".join(lines)


def evaluate(
    triples: list[Triple],
    predictions: list[str],
    bins: int | None = None,
    config: dict | None = None,
    raw_em: bool = False,
) -> EvalReport:
    """Score aligned predictions and break results down by relation,
    frequency partition, and (optionally) equal-sized frequency bins."""
    if len(triples) != len(predictions):
        raise EvaluationError(
            f"{len(predictions)} predictions for {len(triples)} triples (must align 1:1)"
        )
    overall = Cell()
    per_relation: dict[str, Cell] = {}
    per_partition: dict[str, Cell] = {}
    matches = []
    for triple, pred in zip(triples, predictions):
        em = exact_match(pred, triple.golds, raw=raw_em)
        am = approx_match(pred, triple.golds)
        matches.append((em, am))
        overall.add(em, am)
        per_relation.setdefault(triple.relation, Cell()).add(em, am)
        if triple.count is not None:
            per_partition.setdefault(partition(triple.count), Cell()).add(em, am)

    bin_cells = None
    if bins is not None:
        if bins < 1:
            raise EvaluationError(f"bins must be >= 1, got {bins}")
        missing = [i for i, t in enumerate(triples) if t.count is None]
        if missing:
            raise EvaluationError(
                f"binning requires co-occurrence counts; {len(missing)} triples lack them"
            )
        order = sorted(range(len(triples)), key=lambda i: triples[i].count)  # stable
        base, extra = divmod(len(order), bins)
        bin_cells = []
        start = 0
        for b in range(bins):
            size = base + (1 if b < extra else 0)
            chunk = order[start : start + size]
            start += size
            cell = FrequencyBin(index=b + 1)
            if chunk:
                cell.count_min = triples[chunk[0]].count
                cell.count_max = triples[chunk[-1]].count
            for i in chunk:
                cell.add(*matches[i])
            bin_cells.append(cell)

    return EvalReport(
        overall=overall,
        per_relation=per_relation,
        per_partition=per_partition,
        bins=bin_cells,
        config=config or {},
    )


def load_triples(path: str | Path) -> list[Triple]:
    """Read the JSON-lines dataset: {head, relation, golds:[...], count?}."""
    triples = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                golds = obj["golds"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise EvaluationError(f"dataset line {lineno}: {exc}") from exc
            if not isinstance(golds, list):
                raise EvaluationError(f"dataset line {lineno}: golds must be a list of strings")
            triple = Triple(
                head=obj["head"],
                relation=obj["relation"],
                golds=tuple(golds),
                count=obj.get("count"),
            )
            triples.append(triple)
    return triples


def save_triples(triples: list[Triple], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for t in triples:
            obj = {"head": t.head, "relation": t.relation, "golds": list(t.golds)}
            if t.count is not None:
                obj["count"] = t.count
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")


def annotate_counts(corpus: Corpus, triples: list[Triple]) -> list[Triple]:
    """Attach co-occurrence counts; multi-gold triples take the best-evidenced
    gold (max count over golds)."""
    out = []
    for t in triples:
        count = max(cooccurrence_count(corpus, t.head, g) for g in t.golds)
        out.append(Triple(head=t.head, relation=t.relation, golds=t.golds, count=count))
    return out


def count_histogram(triples: list[Triple]) -> dict[int, int]:
    counts = [t.count for t in triples if t.count is not None]
    if len(counts) != len(triples):
        raise EvaluationError(
            "histogram requires co-occurrence counts on every triple; run freq count first"
        )
    return dict(Counter(counts))


def histogram_csv(triples: list[Triple]) -> str:
    hist = count_histogram(triples)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["count", "frequency"])
    for count in sorted(hist):
        writer.writerow([count, hist[count]])
    return buf.getvalue()
