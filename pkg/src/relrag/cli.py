"""Batch command-line surface for reproducible experiments.

Subcommands: `index build`, `paraphrase gen`, `run`, `eval`, `freq count`,
`freq hist`, and `diag paraphrase-hits`. Every run writes a manifest with
input hashes before the first query executes, and prediction files are
written in dataset order so evaluation alignment is positional.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

from . import config as cfgmod
from . import dense, evaluation, lexical, pipeline, relations
from .corpus import ingest_tsv, load_corpus, save_corpus
from .gateway import HTTPGateway


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _load_corpus_any(path: Path):
    if path.is_dir():
        return load_corpus(path / cfgmod.CORPUS_FILE)
    if path.suffix == ".tsv":
        return ingest_tsv(path)
    return load_corpus(path)


def cmd_index_build(args) -> int:
    corpus = ingest_tsv(args.corpus)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, out_dir / cfgmod.CORPUS_FILE)

    lex = lexical.build_index(corpus, k1=args.k1, b=args.b)
    lexical.save_lexical_index(lex, out_dir / cfgmod.LEXICAL_FILE)

    if args.dense_provider == "hash":
        provider = dense.HashEmbeddingProvider(dimension=args.dimension, seed=args.seed)
        dense_index = dense.build_dense_index(corpus, provider)
        meta = {"kind": "hash", "dimension": args.dimension, "seed": args.seed,
                "name": provider.name}
    elif args.dense_provider == "remote":
        if not args.base_url:
            print("error: --base-url required for the remote provider", file=sys.stderr)
            return 1
        provider = dense.RemoteEmbeddingProvider(
            base_url=args.base_url,
            dimension=args.dimension,
            name=args.provider_name or "remote",
        )
        dense_index = dense.build_dense_index(corpus, provider)
        meta = {"kind": "remote", "dimension": args.dimension, "name": provider.name}
    else:  # import
        if not args.import_file:
            print("error: --import-file required for the import provider", file=sys.stderr)
            return 1
        dense_index = dense.import_dense_index(
            args.import_file, provider_name=args.provider_name or "imported"
        )
        missing = [p.id for p in corpus if p.id not in dense_index.vectors]
        if missing:
            print(
                f"error: imported vectors missing for {len(missing)} passages "
                f"(first: {missing[:5]})",
                file=sys.stderr,
            )
            return 1
        meta = {"kind": "import", "dimension": dense_index.dimension,
                "name": dense_index.provider_name}
    dense.save_dense_index(dense_index, out_dir / cfgmod.DENSE_FILE)
    (out_dir / cfgmod.META_FILE).write_text(
        json.dumps({"dense_provider": meta, "passages": len(corpus)}, indent=2),
        encoding="utf-8",
    )
    print(
        f"indexed {len(corpus)} passages -> {out_dir} "
        f"(avg {corpus.stats.avg_tokens:.1f} tokens/passage, dense={meta['name']})"
    )
    return 0


def cmd_paraphrase_gen(args) -> int:
    if args.live:
        gateway = HTTPGateway(model=args.model or "")
    else:
        if not args.script:
            print("error: --script required unless --live is given", file=sys.stderr)
            return 1
        gateway = cfgmod.build_gateway({"mode": "mock", "script": args.script})
    paraphrases = relations.generate_paraphrases(args.relation, gateway)
    for p in paraphrases:
        print(p)
    return 0


def _registry_hash(cfg: cfgmod.RunConfig) -> str:
    if cfg.registry_path is not None:
        return _sha256_file(cfg.registry_path)
    text = resources.files("relrag.data").joinpath("default_registry.yaml").read_text("utf-8")
    return _sha256_text(text)


def _prediction_line(triple, prediction, trace_ref: str) -> str:
    return json.dumps(
        {
            "head": triple.head,
            "relation": triple.relation,
            "answer": prediction.answer,
            "raw_output": prediction.raw_output,
            "trace_ref": trace_ref,
        },
        sort_keys=True,
        ensure_ascii=False,
    )


def cmd_run(args) -> int:
    cfg = cfgmod.load_run_config(args.config)
    workers = args.workers if args.workers is not None else cfg.workers
    registry = cfgmod.build_registry(cfg)
    triples = evaluation.load_triples(args.dataset)
    registry.require_all([t.relation for t in triples])
    gateway = cfgmod.build_gateway(cfg.gateway_cfg, Path(args.config).parent)

    indices = None
    input_hashes = {
        "dataset": _sha256_file(Path(args.dataset)),
        "registry": _registry_hash(cfg),
    }
    if not cfg.pipeline.no_context:
        if cfg.index_dir is None:
            print("error: config needs index_dir unless no_context is set", file=sys.stderr)
            return 1
        indices = cfgmod.load_indices(cfg.index_dir, cfg.dense_cfg)
        for name, fname in (
            ("corpus", cfgmod.CORPUS_FILE),
            ("lexical", cfgmod.LEXICAL_FILE),
            ("dense", cfgmod.DENSE_FILE),
        ):
            input_hashes[name] = _sha256_file(cfg.index_dir / fname)

    out_dir = Path(args.out)
    traces_dir = out_dir / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)
    predictions_path = out_dir / "predictions.jsonl"
    manifest_path = out_dir / "manifest.json"

    start_at = 0
    if args.resume and manifest_path.exists():
        old = json.loads(manifest_path.read_text(encoding="utf-8"))
        if old.get("input_hashes") != input_hashes:
            print("error: cannot resume, input hashes changed since the previous run",
                  file=sys.stderr)
            return 1
        if predictions_path.exists():
            start_at = len(predictions_path.read_text(encoding="utf-8").splitlines())
    elif predictions_path.exists():
        predictions_path.unlink()

    trace_refs = [f"traces/query_{i:05d}.json" for i in range(len(triples))]
    manifest = {
        "created_at": _now(),
        "config": cfg.to_dict(),
        "dataset_path": str(args.dataset),
        "input_hashes": input_hashes,
        "workers": workers,
        "trace_paths": trace_refs,
        "completed": start_at,
        "finished_at": None,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")

    queries = [pipeline.Query(t.head, t.relation) for t in triples]
    remaining = list(range(start_at, len(queries)))
    failed: tuple[int, Exception] | None = None
    with predictions_path.open("a", encoding="utf-8") as pred_fh:
        if remaining:
            with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
                futures = {
                    i: pool.submit(
                        pipeline.run_query, queries[i], cfg.pipeline, indices, registry, gateway
                    )
                    for i in remaining
                }
                for i in remaining:
                    try:
                        prediction = futures[i].result()
                    except Exception as exc:  # surfaced with query id below
                        failed = (i, exc)
                        for j in remaining:
                            if j > i:
                                futures[j].cancel()
                        break
                    (out_dir / trace_refs[i]).write_text(
                        prediction.trace.to_json(), encoding="utf-8"
                    )
                    pred_fh.write(_prediction_line(triples[i], prediction, trace_refs[i]) + "\n")
                    pred_fh.flush()
                    manifest["completed"] = i + 1

    manifest["finished_at"] = _now()
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    if failed is not None:
        i, exc = failed
        print(f"error: query {i} {queries[i]}: {exc}", file=sys.stderr)
        return 1
    print(f"completed {len(triples)} queries -> {predictions_path}")
    return 0


def _load_predictions(path: Path, triples) -> list[str]:
    answers = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            answers.append(obj["answer"])
            idx = lineno - 1
            if idx < len(triples):
                t = triples[idx]
                if obj.get("head") != t.head or obj.get("relation") != t.relation:
                    raise evaluation.EvaluationError(
                        f"predictions line {lineno} is for "
                        f"({obj.get('head')!r}, {obj.get('relation')!r}) but the dataset "
                        f"has ({t.head!r}, {t.relation!r})"
                    )
    return answers


def cmd_eval(args) -> int:
    triples = evaluation.load_triples(args.dataset)
    answers = _load_predictions(Path(args.predictions), triples)
    report = evaluation.evaluate(
        triples,
        answers,
        bins=args.bins,
        config={"dataset": str(args.dataset), "predictions": str(args.predictions)},
        raw_em=args.raw_em,
    )
    if args.out:
        out_path = Path(args.out)
        out_path.write_text(report.to_json(), encoding="utf-8")
        out_path.with_suffix(".txt").write_text(report.render_table() + "\n", encoding="utf-8")
    print(report.render_table())
    return 0


def cmd_freq_count(args) -> int:
    corpus = _load_corpus_any(Path(args.corpus))
    triples = evaluation.load_triples(args.dataset)
    annotated = evaluation.annotate_counts(corpus, triples)
    out = Path(args.out) if args.out else Path(args.dataset)
    evaluation.save_triples(annotated, out)
    print(f"annotated {len(annotated)} triples -> {out}")
    return 0


def cmd_freq_hist(args) -> int:
    triples = evaluation.load_triples(args.dataset)
    csv_text = evaluation.histogram_csv(triples)
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
        print(f"histogram -> {args.out}")
    else:
        print(csv_text, end="")
    return 0


def cmd_diag_paraphrase_hits(args) -> int:
    cfg = cfgmod.load_run_config(args.config)
    if cfg.index_dir is None:
        print("error: config needs index_dir for this diagnostic", file=sys.stderr)
        return 1
    registry = cfgmod.build_registry(cfg)
    indices = cfgmod.load_indices(cfg.index_dir, cfg.dense_cfg)
    triples = evaluation.load_triples(args.dataset)
    registry.require_all([t.relation for t in triples])
    queries = [pipeline.Query(t.head, t.relation) for t in triples]
    k = args.k if args.k is not None else cfg.pipeline.k
    report = pipeline.paraphrase_hits(queries, indices, registry, k)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(
        f"paraphrase-infused: {report['paraphrase_rate']:.1f}% aligned | "
        f"relation-name-only: {report['relation_only_rate']:.1f}% aligned | "
        f"delta: {report['delta_pp']:+.1f} pp"
    )
    if args.out is None:
        print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relrag")
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="corpus and index management")
    index_sub = p_index.add_subparsers(dest="index_command", required=True)
    p_build = index_sub.add_parser("build", help="ingest a TSV and build all indices")
    p_build.add_argument("--corpus", required=True, help="psgs-style TSV (id, text, title)")
    p_build.add_argument("--out", required=True, help="output index directory")
    p_build.add_argument("--dense-provider", choices=("hash", "remote", "import"),
                         default="hash")
    p_build.add_argument("--dimension", type=int, default=64)
    p_build.add_argument("--seed", type=int, default=0)
    p_build.add_argument("--k1", type=float, default=lexical.DEFAULT_K1)
    p_build.add_argument("--b", type=float, default=lexical.DEFAULT_B)
    p_build.add_argument("--import-file", help="precomputed vector file to import")
    p_build.add_argument("--provider-name", help="name to record for remote/import vectors")
    p_build.add_argument("--base-url", help="embedding endpoint for the remote provider")
    p_build.set_defaults(func=cmd_index_build)

    p_para = sub.add_parser("paraphrase", help="paraphrase utilities")
    para_sub = p_para.add_subparsers(dest="paraphrase_command", required=True)
    p_gen = para_sub.add_parser("gen", help="generate paraphrases for a relation")
    p_gen.add_argument("--relation", required=True)
    p_gen.add_argument("--live", action="store_true",
                       help="call the configured HTTP endpoint instead of a mock script")
    p_gen.add_argument("--script", help="mock script file (default mode)")
    p_gen.add_argument("--model", help="model name for --live")
    p_gen.set_defaults(func=cmd_paraphrase_gen)

    p_run = sub.add_parser("run", help="run the pipeline over a dataset")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--dataset", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--workers", type=int, default=None)
    p_run.add_argument("--resume", action="store_true",
                       help="continue a partial run with matching input hashes")
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("eval", help="score predictions against a dataset")
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--predictions", required=True)
    p_eval.add_argument("--bins", type=int, default=None)
    p_eval.add_argument("--out", help="write the JSON report here")
    p_eval.add_argument("--raw-em", action="store_true",
                        help="byte-exact EM instead of normalized")
    p_eval.set_defaults(func=cmd_eval)

    p_freq = sub.add_parser("freq", help="co-occurrence frequency tools")
    freq_sub = p_freq.add_subparsers(dest="freq_command", required=True)
    p_count = freq_sub.add_parser("count", help="annotate triples with co-occurrence counts")
    p_count.add_argument("--corpus", required=True,
                         help="index directory, corpus snapshot, or TSV")
    p_count.add_argument("--dataset", required=True)
    p_count.add_argument("--out", help="output path (default: rewrite the dataset)")
    p_count.set_defaults(func=cmd_freq_count)
    p_hist = freq_sub.add_parser("hist", help="export count histogram CSV")
    p_hist.add_argument("--dataset", required=True)
    p_hist.add_argument("--out")
    p_hist.set_defaults(func=cmd_freq_hist)

    p_diag = sub.add_parser("diag", help="diagnostics")
    diag_sub = p_diag.add_subparsers(dest="diag_command", required=True)
    p_hits = diag_sub.add_parser(
        "paraphrase-hits",
        help="compare relation-aligned retrieval with and without paraphrases",
    )
    p_hits.add_argument("--config", required=True)
    p_hits.add_argument("--dataset", required=True)
    p_hits.add_argument("--k", type=int, default=None)
    p_hits.add_argument("--out")
    p_hits.set_defaults(func=cmd_diag_paraphrase_hits)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
