import json

import pytest
import yaml

from synth import build_e2e_fixture, write_tsv

from relrag.cli import main
from relrag.gateway import load_template, render, script_entry


def test_index_build_writes_all_artifacts(tmp_path, capsys):
    corpus_tsv = tmp_path / "corpus.tsv"
    write_tsv(
        corpus_tsv,
        [
            ("1", "Acme Widgets was founded by Jane Roe.", "Acme"),
            ("2", "Unrelated text about gadgets.", "Gadgets"),
        ],
    )
    out_dir = tmp_path / "idx"
    rc = main(["index", "build", "--corpus", str(corpus_tsv), "--out", str(out_dir)])
    assert rc == 0
    for name in ("corpus.bin", "lexical.idx", "dense.idx", "meta.json"):
        assert (out_dir / name).exists()
    meta = json.loads((out_dir / "meta.json").read_text())
    assert meta["dense_provider"]["kind"] == "hash"
    assert "indexed 2 passages" in capsys.readouterr().out


def test_index_build_missing_corpus_fails(tmp_path, capsys):
    rc = main(["index", "build", "--corpus", str(tmp_path / "nope.tsv"), "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_run_writes_predictions_traces_manifest(tmp_path):
    fx = build_e2e_fixture(tmp_path, n_triples=6, k=3)
    out_dir = tmp_path / "out"
    rc = main(
        [
            "run",
            "--config",
            str(fx["config_path"]),
            "--dataset",
            str(fx["dataset_path"]),
            "--out",
            str(out_dir),
        ]
    )
    assert rc == 0
    lines = (out_dir / "predictions.jsonl").read_text().splitlines()
    assert len(lines) == 6
    first = json.loads(lines[0])
    assert set(first) == {"head", "relation", "answer", "raw_output", "trace_ref"}
    assert first["answer"].startswith("Vandor0el")
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["completed"] == 6
    assert manifest["finished_at"]
    assert set(manifest["input_hashes"]) == {"dataset", "registry", "corpus", "lexical", "dense"}
    for ref in manifest["trace_paths"]:
        assert (out_dir / ref).exists()
    trace = json.loads((out_dir / manifest["trace_paths"][0]).read_text())
    assert trace["generate"]["prompt_hash"]


def test_run_deterministic_across_workers(tmp_path):
    fx = build_e2e_fixture(tmp_path, n_triples=8, k=3)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    args = ["run", "--config", str(fx["config_path"]), "--dataset", str(fx["dataset_path"])]
    assert main(args + ["--out", str(out_a), "--workers", "1"]) == 0
    assert main(args + ["--out", str(out_b), "--workers", "8"]) == 0
    assert (out_a / "predictions.jsonl").read_bytes() == (out_b / "predictions.jsonl").read_bytes()


def test_run_resume_skips_completed(tmp_path):
    fx = build_e2e_fixture(tmp_path, n_triples=6, k=3)
    out_full = tmp_path / "full"
    args = [
        "run",
        "--config",
        str(fx["config_path"]),
        "--dataset",
        str(fx["dataset_path"]),
    ]
    assert main(args + ["--out", str(out_full)]) == 0
    full_bytes = (out_full / "predictions.jsonl").read_bytes()

    # simulate a partial run: keep first 2 prediction lines, then resume
    out_part = tmp_path / "part"
    assert main(args + ["--out", str(out_part)]) == 0
    pred = out_part / "predictions.jsonl"
    lines = pred.read_text().splitlines(keepends=True)
    pred.write_text("".join(lines[:2]))
    assert main(args + ["--out", str(out_part), "--resume"]) == 0
    assert pred.read_bytes() == full_bytes


def test_run_resume_refuses_on_changed_inputs(tmp_path, capsys):
    fx = build_e2e_fixture(tmp_path, n_triples=4, k=3)
    out_dir = tmp_path / "out"
    args = [
        "run",
        "--config",
        str(fx["config_path"]),
        "--dataset",
        str(fx["dataset_path"]),
        "--out",
        str(out_dir),
    ]
    assert main(args) == 0
    # append a triple: dataset hash changes
    with fx["dataset_path"].open("a", encoding="utf-8") as fh:
        fh.write(json.dumps({"head": "New Head", "relation": "founded by", "golds": ["X"]}) + "\n")
    rc = main(args + ["--resume"])
    assert rc == 1
    assert "hashes changed" in capsys.readouterr().err


def test_run_surfaces_query_id_on_stage_error(tmp_path, capsys):
    fx = build_e2e_fixture(tmp_path, n_triples=4, k=3)
    # wipe the script so the summarize stage cannot find its entry
    fx["script_path"].write_text("[]", encoding="utf-8")
    out_dir = tmp_path / "out"
    rc = main(
        [
            "run",
            "--config",
            str(fx["config_path"]),
            "--dataset",
            str(fx["dataset_path"]),
            "--out",
            str(out_dir),
        ]
    )
    assert rc == 1
    err = capsys.readouterr().err
    assert "query 0" in err and "summarize" in err


def test_eval_matches_hand_scored_fixture(tmp_path, capsys):
    dataset = tmp_path / "data.jsonl"
    preds = tmp_path / "preds.jsonl"
    rows = [
        # (gold, prediction, em, am)
        ("Jane Roe", "Jane Roe", True, True),
        ("Jane Roe", "jane roe.", True, True),
        ("Chevy Chase", "Chevy Chase, Maryland", False, True),
        ("Jacksonville, FL", "Orlando, FL", False, False),
        ("Harvard University", "Harvard", False, False),
        ("Sapienza University", "Sapienza University", True, True),
        ("Initech", "Initech Global Holdings", False, False),
        ("Rome", "Rome", True, True),
        ("Paris", "London", False, False),
        ("Ada Lovelace", "Ada King Lovelace", False, True),
    ]
    with dataset.open("w") as df, preds.open("w") as pf:
        for i, (gold, pred, _, _) in enumerate(rows):
            df.write(json.dumps({"head": f"h{i}", "relation": "founded by", "golds": [gold]}) + "\n")
            pf.write(
                json.dumps(
                    {"head": f"h{i}", "relation": "founded by", "answer": pred,
                     "raw_output": pred, "trace_ref": ""}
                )
                + "\n"
            )
    report_path = tmp_path / "report.json"
    rc = main(
        ["eval", "--dataset", str(dataset), "--predictions", str(preds), "--out", str(report_path)]
    )
    assert rc == 0
    report = json.loads(report_path.read_text())
    table_path = report_path.with_suffix(".txt")
    assert table_path.exists() and "overall" in table_path.read_text()
    em_expected = 100.0 * sum(em for _, _, em, _ in rows) / len(rows)
    am_expected = 100.0 * sum(am for _, _, _, am in rows) / len(rows)
    assert report["overall"]["em_accuracy"] == pytest.approx(em_expected)
    assert report["overall"]["am_accuracy"] == pytest.approx(am_expected)
    out = capsys.readouterr().out
    assert "overall" in out


def test_eval_misaligned_predictions_fail(tmp_path, capsys):
    dataset = tmp_path / "data.jsonl"
    preds = tmp_path / "preds.jsonl"
    dataset.write_text(json.dumps({"head": "A", "relation": "r", "golds": ["g"]}) + "\n")
    preds.write_text(
        json.dumps({"head": "B", "relation": "r", "answer": "g", "raw_output": "g", "trace_ref": ""})
        + "\n"
    )
    rc = main(["eval", "--dataset", str(dataset), "--predictions", str(preds)])
    assert rc == 1
    assert "line 1" in capsys.readouterr().err


def test_freq_count_and_hist(tmp_path, capsys):
    corpus_tsv = tmp_path / "corpus.tsv"
    write_tsv(
        corpus_tsv,
        [
            ("1", "Bruno Zevi studied at Sapienza University. He later taught.", "Bruno"),
            ("2", "Bruno Zevi lectured at Sapienza University. Twice he did.", "Bruno2"),
        ],
    )
    dataset = tmp_path / "data.jsonl"
    dataset.write_text(
        json.dumps(
            {"head": "Bruno Zevi", "relation": "educated at", "golds": ["Sapienza University"]}
        )
        + "\n"
    )
    annotated = tmp_path / "annotated.jsonl"
    rc = main(
        ["freq", "count", "--corpus", str(corpus_tsv), "--dataset", str(dataset), "--out", str(annotated)]
    )
    assert rc == 0
    row = json.loads(annotated.read_text().splitlines()[0])
    assert row["count"] == 2

    hist_path = tmp_path / "hist.csv"
    rc = main(["freq", "hist", "--dataset", str(annotated), "--out", str(hist_path)])
    assert rc == 0
    assert hist_path.read_text().splitlines() == ["count,frequency", "2,1"]


def test_freq_count_from_index_dir(tmp_path):
    fx = build_e2e_fixture(tmp_path, n_triples=3, k=2)
    rc = main(
        [
            "freq",
            "count",
            "--corpus",
            str(fx["index_dir"]),
            "--dataset",
            str(fx["dataset_path"]),
            "--out",
            str(tmp_path / "ann.jsonl"),
        ]
    )
    assert rc == 0
    rows = [json.loads(l) for l in (tmp_path / "ann.jsonl").read_text().splitlines()]
    assert all(r["count"] >= 1 for r in rows)  # every fact is planted in one sentence


def test_diag_paraphrase_hits_cli(tmp_path):
    fx = build_e2e_fixture(tmp_path, n_triples=4, k=3)
    out_path = tmp_path / "diag.json"
    rc = main(
        [
            "diag",
            "paraphrase-hits",
            "--config",
            str(fx["config_path"]),
            "--dataset",
            str(fx["dataset_path"]),
            "--out",
            str(out_path),
        ]
    )
    assert rc == 0
    report = json.loads(out_path.read_text())
    assert report["queries"] == 4
    assert len(report["per_query"]) == 4
    assert report["delta_pp"] == report["paraphrase_rate"] - report["relation_only_rate"]


def test_paraphrase_gen_with_script(tmp_path, capsys):
    prompt = render(load_template("paraphrase_gen"), {"relation": "founded by"})
    script = [script_entry("gen", prompt, "founder, established by, created by")]
    script_path = tmp_path / "script.json"
    script_path.write_text(json.dumps(script))
    rc = main(["paraphrase", "gen", "--relation", "founded by", "--script", str(script_path)])
    assert rc == 0
    out = capsys.readouterr().out.splitlines()
    assert out == ["founder", "established by", "created by"]


def test_paraphrase_gen_requires_script_or_live(capsys):
    rc = main(["paraphrase", "gen", "--relation", "founded by"])
    assert rc == 1
    assert "--script" in capsys.readouterr().err


def test_run_unknown_relation_fails_before_manifest(tmp_path, capsys):
    fx = build_e2e_fixture(tmp_path, n_triples=3, k=2)
    dataset = tmp_path / "bad.jsonl"
    dataset.write_text(
        json.dumps({"head": "X", "relation": "mystery relation", "golds": ["Y"]}) + "\n"
    )
    out_dir = tmp_path / "out"
    rc = main(
        [
            "run",
            "--config",
            str(fx["config_path"]),
            "--dataset",
            str(dataset),
            "--out",
            str(out_dir),
        ]
    )
    assert rc == 1
    assert "mystery relation" in capsys.readouterr().err
    assert not (out_dir / "manifest.json").exists()


def test_config_rejects_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({"k": 5, "bogus_key": 1}))
    rc = main(["run", "--config", str(cfg), "--dataset", "x", "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "bogus_key" in capsys.readouterr().err


def test_index_build_with_imported_vectors(tmp_path):
    import numpy as np

    from relrag.dense import load_dense_index, write_vector_file

    corpus_tsv = tmp_path / "corpus.tsv"
    write_tsv(
        corpus_tsv,
        [("1", "First passage body here.", "One"), ("2", "Second passage body here.", "Two")],
    )
    rng = np.random.default_rng(5)
    vectors = {pid: rng.standard_normal(16).astype(np.float32) for pid in ("1", "2")}
    vec_file = tmp_path / "vectors.bin"
    write_vector_file(vec_file, vectors, 16)
    out_dir = tmp_path / "idx"
    rc = main(
        [
            "index",
            "build",
            "--corpus",
            str(corpus_tsv),
            "--out",
            str(out_dir),
            "--dense-provider",
            "import",
            "--import-file",
            str(vec_file),
            "--provider-name",
            "external-encoder",
        ]
    )
    assert rc == 0
    meta = json.loads((out_dir / "meta.json").read_text())
    assert meta["dense_provider"] == {
        "kind": "import",
        "dimension": 16,
        "name": "external-encoder",
    }
    index = load_dense_index(out_dir / "dense.idx")
    assert index.provider_name == "external-encoder"
    assert np.array_equal(index.vectors["1"], vectors["1"])


def test_index_build_import_missing_passage_vector_fails(tmp_path, capsys):
    import numpy as np

    from relrag.dense import write_vector_file

    corpus_tsv = tmp_path / "corpus.tsv"
    write_tsv(corpus_tsv, [("1", "Body one.", "One"), ("2", "Body two.", "Two")])
    vec_file = tmp_path / "vectors.bin"
    write_vector_file(vec_file, {"1": np.ones(8, dtype=np.float32)}, 8)
    rc = main(
        [
            "index",
            "build",
            "--corpus",
            str(corpus_tsv),
            "--out",
            str(tmp_path / "idx"),
            "--dense-provider",
            "import",
            "--import-file",
            str(vec_file),
        ]
    )
    assert rc == 1
    assert "missing" in capsys.readouterr().err


def test_manifest_hashes_match_recomputation(tmp_path):
    import hashlib

    fx = build_e2e_fixture(tmp_path, n_triples=3, k=2)
    out_dir = tmp_path / "out"
    rc = main(
        [
            "run",
            "--config",
            str(fx["config_path"]),
            "--dataset",
            str(fx["dataset_path"]),
            "--out",
            str(out_dir),
        ]
    )
    assert rc == 0
    manifest = json.loads((out_dir / "manifest.json").read_text())
    recomputed = hashlib.sha256(fx["dataset_path"].read_bytes()).hexdigest()
    assert manifest["input_hashes"]["dataset"] == recomputed
    recomputed_corpus = hashlib.sha256((fx["index_dir"] / "corpus.bin").read_bytes()).hexdigest()
    assert manifest["input_hashes"]["corpus"] == recomputed_corpus


def test_run_no_context_baseline_cli(tmp_path):
    from synth import build_script, write_run_config

    from relrag.pipeline import PipelineConfig, Query
    from relrag.relations import default_registry

    triples = [
        {"head": "Solo Head One", "relation": "founded by", "golds": ["Tail One"]},
        {"head": "Solo Head Two", "relation": "educated at", "golds": ["Tail Two"]},
    ]
    dataset = tmp_path / "data.jsonl"
    dataset.write_text("".join(json.dumps(t, sort_keys=True) + "\n" for t in triples))
    queries = [Query(t["head"], t["relation"]) for t in triples]
    tails = {q: t["golds"][0] for q, t in zip(queries, triples)}
    config = PipelineConfig(k=5, no_context=True)
    script = build_script(queries, tails, [config], None, default_registry())
    script_path = tmp_path / "script.json"
    script_path.write_text(json.dumps(script))
    config_path = tmp_path / "cfg.yaml"
    write_run_config(config_path, None, script_path, config)

    out_dir = tmp_path / "out"
    rc = main(["run", "--config", str(config_path), "--dataset", str(dataset), "--out", str(out_dir)])
    assert rc == 0
    lines = [json.loads(l) for l in (out_dir / "predictions.jsonl").read_text().splitlines()]
    assert [l["answer"] for l in lines] == ["Tail One", "Tail Two"]
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert set(manifest["input_hashes"]) == {"dataset", "registry"}  # no index hashes
    trace = json.loads((out_dir / manifest["trace_paths"][0]).read_text())
    assert trace["retrieval"]["hash"] is None
    assert trace["summarize"]["prompt"] is None


def test_load_triples_rejects_string_golds(tmp_path):
    from relrag.evaluation import EvaluationError, load_triples

    path = tmp_path / "bad.jsonl"
    path.write_text('{"head": "A", "relation": "r", "golds": "Jane"}\n')
    with pytest.raises(EvaluationError, match="list"):
        load_triples(path)
