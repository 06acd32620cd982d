"""Passage corpus: TSV ingest, in-memory store, and binary snapshots.

The corpus is an ingest-once artifact. After `ingest_tsv` (or `load_corpus`)
it is immutable and safe to share across worker threads.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

from .text import tokenize

logger = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1


class CorpusError(Exception):
    """Raised for malformed corpus inputs or snapshots."""


@dataclass(frozen=True)
class Passage:
    """One retrievable unit: a ~100-word passage with its article title."""

    id: str
    title: str
    body: str


@dataclass(frozen=True)
class CorpusStats:
    passage_count: int
    total_tokens: int
    avg_tokens: float


@dataclass
class Corpus:
    passages: list[Passage]
    stats: CorpusStats = field(init=False)
    _by_id: dict[str, Passage] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        by_id: dict[str, Passage] = {}
        total = 0
        for p in self.passages:
            if not p.id:
                raise CorpusError("passage with empty id")
            if p.id in by_id:
                raise CorpusError(f"duplicate passage id: {p.id!r}")
            if not p.body:
                raise CorpusError(f"passage {p.id!r} has empty body")
            by_id[p.id] = p
            total += len(tokenize(p.body))
        n = len(self.passages)
        self._by_id = by_id
        self.stats = CorpusStats(
            passage_count=n,
            total_tokens=total,
            avg_tokens=total / n if n else 0.0,
        )

    def get(self, passage_id: str) -> Passage | None:
        """Exact, case-sensitive id lookup; None when absent."""
        return self._by_id.get(passage_id)

    def __len__(self) -> int:
        return len(self.passages)

    def __iter__(self):
        return iter(self.passages)


def ingest_tsv(path: str | Path) -> Corpus:
    """Ingest a `id<TAB>text<TAB>title` TSV (header row required).

    One record per physical line. Quoted fields are unescaped by the csv
    module; the number of rows altered that way is logged so the unescaping
    is auditable. The "text" column becomes the passage body.
    """
    path = Path(path)
    passages: list[Passage] = []
    seen: set[str] = set()
    unescaped_rows = 0
    with path.open("r", encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if lineno == 1:
                continue  # header
            if not line:
                continue
            try:
                fields = next(csv.reader([line], delimiter="\t", quotechar='"'))
            except csv.Error as exc:
                raise CorpusError(f"line {lineno}: unparseable row ({exc})") from exc
            if len(fields) != 3:
                raise CorpusError(
                    f"line {lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            if fields != line.split("\t"):
                unescaped_rows += 1
            pid, body, title = fields
            if not pid:
                raise CorpusError(f"line {lineno}: empty passage id")
            if pid in seen:
                raise CorpusError(f"line {lineno}: duplicate passage id {pid!r}")
            if not body:
                raise CorpusError(f"line {lineno}: empty text field for id {pid!r}")
            seen.add(pid)
            passages.append(Passage(id=pid, title=title, body=body))
    if unescaped_rows:
        logger.info("ingest %s: unescaped quoted fields on %d rows", path, unescaped_rows)
    return Corpus(passages=passages)


def _encode_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write the versioned, length-prefixed binary snapshot."""
    path = Path(path)
    chunks = [struct.pack("<B", SNAPSHOT_VERSION), struct.pack("<Q", len(corpus.passages))]
    for p in corpus.passages:
        chunks.append(_encode_str(p.id))
        chunks.append(_encode_str(p.title))
        chunks.append(_encode_str(p.body))
    path.write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorpusError("truncated corpus snapshot")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def read_str(self) -> str:
        (length,) = struct.unpack("<I", self.take(4))
        return self.take(length).decode("utf-8")


def load_corpus(path: str | Path) -> Corpus:
    data = Path(path).read_bytes()
    reader = _Reader(data)
    (version,) = struct.unpack("<B", reader.take(1))
    if version != SNAPSHOT_VERSION:
        raise CorpusError(
            f"corpus snapshot version {version} not supported (expected {SNAPSHOT_VERSION})"
        )
    (count,) = struct.unpack("<Q", reader.take(8))
    passages = []
    for _ in range(count):
        pid = reader.read_str()
        title = reader.read_str()
        body = reader.read_str()
        passages.append(Passage(id=pid, title=title, body=body))
    if reader.pos != len(data):
        raise CorpusError("trailing bytes after corpus snapshot records")
    return Corpus(passages=passages)
