"""Three-stage query pipeline: retrieve, summarize, generate.

Each stage can have its paraphrase guidance switched off independently, and
retrieval can run hybrid, lexical-only, or dense-only, which is how the
ablation grid is expressed. A no-context switch skips retrieval and
summarization entirely and strips paraphrases from generation, giving the
parametric-knowledge baseline.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from . import lexical
from .dense import DenseIndex, EmbeddingProvider, dense_search
from .fusion import FusedRanking, rrf_fuse
from .gateway import (
    PASSAGE_SEPARATOR,
    TOKEN_BUDGET,
    ChatRequest,
    load_template,
    prompt_hash,
    render,
    truncate,
)
from .relations import RelationRegistry, instantiate_question
from .text import contains_phrase, tokenize

if TYPE_CHECKING:
    from .corpus import Corpus

RETRIEVAL_MODES = ("hybrid", "lexical_only", "dense_only")
STAGES = ("retrieval", "summarization", "generation")

GENERATION_TEMPERATURE = 0.0
GENERATION_MAX_TOKENS = 50
SUMMARY_TEMPERATURE = 0.0


class PipelineError(Exception):
    pass


class StageError(PipelineError):
    """Wraps the first failing stage with the query it was processing."""

    def __init__(self, stage: str, query: Query, cause: Exception):
        super().__init__(f"stage {stage!r} failed for {query}: {cause}")
        self.stage = stage
        self.query = query
        self.cause = cause


@dataclass(frozen=True)
class Query:
    head_entity: str
    relation: str

    def __post_init__(self) -> None:
        if not self.head_entity.strip():
            raise PipelineError("query with empty head entity")
        if not self.relation.strip():
            raise PipelineError("query with empty relation")

    def __str__(self) -> str:
        return f"({self.head_entity!r}, {self.relation!r}, ?)"


@dataclass
class PipelineConfig:
    k: int = 10
    retrieval_mode: str = "hybrid"
    use_paraphrases_in: frozenset[str] = frozenset(STAGES)
    summarizer_model: str = "summarizer"
    generator_model: str = "generator"
    retrieval_depth: int | None = None  # per-retriever depth; defaults to k
    c_rrf: int = 0
    summary_max_tokens: int = 256
    token_budget: int = TOKEN_BUDGET
    no_context: bool = False

    def __post_init__(self) -> None:
        if self.k < 1:
            raise PipelineError(f"k must be >= 1, got {self.k}")
        if self.retrieval_mode not in RETRIEVAL_MODES:
            raise PipelineError(
                f"retrieval_mode {self.retrieval_mode!r} not one of {RETRIEVAL_MODES}"
            )
        self.use_paraphrases_in = frozenset(self.use_paraphrases_in)
        unknown = self.use_paraphrases_in - set(STAGES)
        if unknown:
            raise PipelineError(f"unknown stages in use_paraphrases_in: {sorted(unknown)}")

    @property
    def depth(self) -> int:
        return self.retrieval_depth if self.retrieval_depth is not None else self.k

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "retrieval_mode": self.retrieval_mode,
            "use_paraphrases_in": sorted(self.use_paraphrases_in),
            "summarizer_model": self.summarizer_model,
            "generator_model": self.generator_model,
            "retrieval_depth": self.retrieval_depth,
            "c_rrf": self.c_rrf,
            "summary_max_tokens": self.summary_max_tokens,
            "token_budget": self.token_budget,
            "no_context": self.no_context,
        }


@dataclass
class Indices:
    corpus: Corpus
    lexical: lexical.LexicalIndex | None = None
    dense: DenseIndex | None = None
    provider: EmbeddingProvider | None = None


@dataclass
class EvidenceSummary:
    text: str
    source_passage_ids: list[str]


@dataclass
class QueryTrace:
    head_entity: str
    relation: str
    retrieval_descriptor: str | None = None
    retrieval_hash: str | None = None
    lexical_entries: list | None = None
    dense_entries: list | None = None
    fused_entries: list | None = None
    summarize_prompt: str | None = None
    summarize_prompt_hash: str | None = None
    summary_text: str | None = None
    generate_prompt: str | None = None
    generate_prompt_hash: str | None = None
    raw_output: str | None = None

    def to_dict(self) -> dict:
        return {
            "head_entity": self.head_entity,
            "relation": self.relation,
            "retrieval": {
                "descriptor": self.retrieval_descriptor,
                "hash": self.retrieval_hash,
                "lexical": self.lexical_entries,
                "dense": self.dense_entries,
                "fused": self.fused_entries,
            },
            "summarize": {
                "prompt": self.summarize_prompt,
                "prompt_hash": self.summarize_prompt_hash,
                "summary": self.summary_text,
            },
            "generate": {
                "prompt": self.generate_prompt,
                "prompt_hash": self.generate_prompt_hash,
                "raw_output": self.raw_output,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=2)


@dataclass
class Prediction:
    answer: str
    raw_output: str
    trace: QueryTrace | None = field(repr=False, default=None)


def _lexical_paraphrases(query: Query, config: PipelineConfig, registry: RelationRegistry):
    """Registry paraphrases, or the bare relation name when ablated."""
    if "retrieval" in config.use_paraphrases_in:
        return registry.get(query.relation).paraphrases
    return (query.relation,)


def retrieval_descriptor(
    query: Query, config: PipelineConfig, registry: RelationRegistry
) -> str:
    """Canonical text of the retrieval-stage queries, used for trace hashes."""
    profile = registry.get(query.relation)
    parts = [f"mode={config.retrieval_mode}"]
    if config.retrieval_mode in ("hybrid", "lexical_only"):
        bq = lexical.build_query(query.head_entity, _lexical_paraphrases(query, config, registry))
        parts.append(f"lexical={bq.canonical()}")
    else:
        parts.append("lexical=-")
    if config.retrieval_mode in ("hybrid", "dense_only"):
        parts.append(f"dense={instantiate_question(profile, query.head_entity)}")
    else:
        parts.append("dense=-")
    return "\n".join(parts)


def retrieve(
    query: Query,
    config: PipelineConfig,
    indices: Indices,
    registry: RelationRegistry,
    trace: QueryTrace | None = None,
) -> FusedRanking:
    profile = registry.get(query.relation)
    lists = []
    if config.retrieval_mode in ("hybrid", "lexical_only"):
        if indices.lexical is None:
            raise PipelineError("lexical index required but not built")
        bq = lexical.build_query(query.head_entity, _lexical_paraphrases(query, config, registry))
        lex_list = lexical.search(indices.lexical, bq, config.depth)
        lists.append(lex_list)
        if trace is not None:
            trace.lexical_entries = [
                [e.passage_id, e.score, e.rank] for e in lex_list.entries
            ]
    if config.retrieval_mode in ("hybrid", "dense_only"):
        if indices.dense is None or indices.provider is None:
            raise PipelineError("dense index and provider required but not built")
        question = instantiate_question(profile, query.head_entity)
        dense_list = dense_search(indices.dense, question, indices.provider, config.depth)
        lists.append(dense_list)
        if trace is not None:
            trace.dense_entries = [
                [e.passage_id, e.score, e.rank] for e in dense_list.entries
            ]
    fused = rrf_fuse(lists, k=config.k, c_rrf=config.c_rrf)
    if trace is not None:
        descriptor = retrieval_descriptor(query, config, registry)
        trace.retrieval_descriptor = descriptor
        trace.retrieval_hash = prompt_hash(descriptor)
        trace.fused_entries = [
            {"id": e.passage_id, "score": e.score, "ranks": e.contributing_ranks}
            for e in fused.entries
        ]
    return fused


def format_passage(rank: int, title: str, body: str) -> str:
    return f"[{rank}] {title}: {body}"


def build_summarize_prompt(
    query: Query,
    passage_texts: list[str],
    config: PipelineConfig,
    registry: RelationRegistry,
) -> str:
    """Pure prompt assembly; exposed so scripts and tests can precompute it."""
    profile = registry.get(query.relation)
    context_block = PASSAGE_SEPARATOR.join(passage_texts)
    paraphrases = (
        list(profile.paraphrases) if "summarization" in config.use_paraphrases_in else None
    )
    prompt = render(
        load_template("summarize"),
        {
            "entity": query.head_entity,
            "relation": query.relation,
            "paraphrases": paraphrases,
            "expected_types": list(profile.expected_types),
            "context": context_block,
        },
    )
    return truncate(prompt, config.token_budget, context_block=context_block)


def summarize(
    query: Query,
    ranking: FusedRanking,
    config: PipelineConfig,
    registry: RelationRegistry,
    gateway,
    corpus: Corpus,
    trace: QueryTrace | None = None,
) -> EvidenceSummary:
    if len(ranking) == 0:
        return EvidenceSummary(text="", source_passage_ids=[])
    passage_texts = []
    for i, pid in enumerate(ranking.passage_ids, start=1):
        passage = corpus.get(pid)
        if passage is None:
            raise PipelineError(f"fused ranking references unknown passage {pid!r}")
        passage_texts.append(format_passage(i, passage.title, passage.body))
    prompt = build_summarize_prompt(query, passage_texts, config, registry)
    request = ChatRequest(
        model=config.summarizer_model,
        messages=[{"role": "user", "content": prompt}],
        temperature=SUMMARY_TEMPERATURE,
        max_tokens=config.summary_max_tokens,
    )
    text = gateway.complete(request)
    if trace is not None:
        trace.summarize_prompt = prompt
        trace.summarize_prompt_hash = prompt_hash(prompt)
        trace.summary_text = text
    return EvidenceSummary(text=text, source_passage_ids=list(ranking.passage_ids))


def build_generate_prompt(
    query: Query,
    summary_text: str | None,
    config: PipelineConfig,
    registry: RelationRegistry,
) -> str:
    """Pure prompt assembly for the generation stage.

    `summary_text=None` removes the evidence line entirely (the no-context
    baseline); an empty string keeps the line with no evidence shown.
    """
    profile = registry.get(query.relation)
    use_paraphrases = "generation" in config.use_paraphrases_in and not config.no_context
    prompt = render(
        load_template("generate"),
        {
            "question": instantiate_question(profile, query.head_entity),
            "paraphrases": list(profile.paraphrases) if use_paraphrases else None,
            "summary": summary_text,
        },
    )
    return truncate(
        prompt, config.token_budget, context_block=summary_text if summary_text else None
    )


def generate(
    query: Query,
    summary: EvidenceSummary | None,
    config: PipelineConfig,
    registry: RelationRegistry,
    gateway,
    trace: QueryTrace | None = None,
) -> Prediction:
    summary_text = None if summary is None else summary.text
    prompt = build_generate_prompt(query, summary_text, config, registry)
    request = ChatRequest(
        model=config.generator_model,
        messages=[{"role": "user", "content": prompt}],
        temperature=GENERATION_TEMPERATURE,
        max_tokens=GENERATION_MAX_TOKENS,
    )
    raw = gateway.complete(request)
    answer = next((line.strip() for line in raw.splitlines() if line.strip()), "")
    if not answer:
        raise PipelineError(f"empty generation for {query}")
    if trace is None:
        trace = QueryTrace(head_entity=query.head_entity, relation=query.relation)
    trace.generate_prompt = prompt
    trace.generate_prompt_hash = prompt_hash(prompt)
    trace.raw_output = raw
    return Prediction(answer=answer, raw_output=raw, trace=trace)


def run_query(
    query: Query,
    config: PipelineConfig,
    indices: Indices | None,
    registry: RelationRegistry,
    gateway,
) -> Prediction:
    """Retrieve, summarize, generate; the first failing stage aborts."""
    trace = QueryTrace(head_entity=query.head_entity, relation=query.relation)
    ranking = None
    summary = None
    if not config.no_context:
        if indices is None:
            raise PipelineError("indices required unless no_context is set")
        try:
            ranking = retrieve(query, config, indices, registry, trace=trace)
        except Exception as exc:
            raise StageError("retrieve", query, exc) from exc
        try:
            summary = summarize(
                query, ranking, config, registry, gateway, indices.corpus, trace=trace
            )
        except Exception as exc:
            raise StageError("summarize", query, exc) from exc
    try:
        return generate(query, summary, config, registry, gateway, trace=trace)
    except Exception as exc:
        raise StageError("generate", query, exc) from exc


def run_batch(
    queries: list[Query],
    config: PipelineConfig,
    indices: Indices | None,
    registry: RelationRegistry,
    gateway,
    workers: int = 1,
) -> list[Prediction]:
    """Run independent queries across a worker pool, results in input order."""
    registry.require_all([q.relation for q in queries])
    if workers <= 1:
        return [run_query(q, config, indices, registry, gateway) for q in queries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(run_query, q, config, indices, registry, gateway) for q in queries
        ]
        return [f.result() for f in futures]


def paraphrase_hits(
    queries: list[Query],
    indices: Indices,
    registry: RelationRegistry,
    k: int,
) -> dict:
    """Compare paraphrase-infused vs relation-name-only lexical retrieval.

    For both query styles, counts retrieved passages whose body contains the
    head entity and at least one relation paraphrase as contiguous phrases.
    Rates are percentages of the k * |queries| retrieval budget.
    """
    if indices.lexical is None:
        raise PipelineError("lexical index required for the paraphrase-hits diagnostic")
    per_query = []
    total_para = 0
    total_name = 0
    for query in queries:
        profile = registry.get(query.relation)
        phrases = [tokenize(p) for p in profile.paraphrases]
        entity_tokens = tokenize(query.head_entity)

        def aligned_count(paraphrases) -> int:
            bq = lexical.build_query(query.head_entity, paraphrases)
            result = lexical.search(indices.lexical, bq, k)
            count = 0
            for pid in result.passage_ids:
                body_tokens = tokenize(indices.corpus.get(pid).body)
                if contains_phrase(body_tokens, entity_tokens) and any(
                    contains_phrase(body_tokens, phrase) for phrase in phrases
                ):
                    count += 1
            return count

        n_para = aligned_count(profile.paraphrases)
        n_name = aligned_count((query.relation,))
        total_para += n_para
        total_name += n_name
        per_query.append(
            {
                "head_entity": query.head_entity,
                "relation": query.relation,
                "paraphrase_hits": n_para,
                "relation_only_hits": n_name,
            }
        )
    budget = k * len(queries) if queries else 1
    para_rate = 100.0 * total_para / budget
    name_rate = 100.0 * total_name / budget
    return {
        "k": k,
        "queries": len(queries),
        "per_query": per_query,
        "paraphrase_rate": para_rate,
        "relation_only_rate": name_rate,
        "delta_pp": para_rate - name_rate,
    }
