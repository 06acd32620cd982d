import pytest

from relrag.gateway import ChatRequest, MockGateway, load_template, render, script_entry
from relrag.relations import (
    ParaphraseParseError,
    RegistryError,
    default_registry,
    generate_paraphrases,
    instantiate_question,
    load_registry,
    parse_paraphrase_reply,
)


def test_default_registry_educated_at_paraphrases():
    profile = default_registry().get("educated at")
    assert "alma mater" in profile.paraphrases
    assert profile.paraphrases == ("studied at", "educated at", "graduated from", "alma mater")


def test_default_registry_place_of_birth_types():
    profile = default_registry().get("place of birth")
    assert set(profile.expected_types) == {"GPE", "LOC"}


def test_default_registry_covers_twelve_relations():
    registry = default_registry()
    assert len(registry) == 12
    for relation in registry.relations:
        profile = registry.get(relation)
        assert profile.qa_template.count("{entity}") == 1
        assert profile.paraphrases


def test_instantiate_question_examples():
    registry = default_registry()
    assert instantiate_question(registry.get("founded by"), "Acme") == "Who founded Acme?"
    assert (
        instantiate_question(registry.get("place of birth"), "Bruno Zevi")
        == "Where was Bruno Zevi born?"
    )


def test_instantiate_question_preserves_braces():
    profile = default_registry().get("founded by")
    out = instantiate_question(profile, "X{y}")
    assert out == "Who founded X{y}?"


def test_instantiate_question_length_relation():
    registry = default_registry()
    for relation in registry.relations:
        profile = registry.get(relation)
        entity = "Some Entity Name"
        out = instantiate_question(profile, entity)
        assert entity in out
        assert len(out) == len(profile.qa_template) - len("{entity}") + len(entity)


def test_instantiate_question_empty_entity_rejected():
    with pytest.raises(ValueError):
        instantiate_question(default_registry().get("founded by"), "")


def test_load_registry_missing_placeholder_errors(tmp_path):
    path = tmp_path / "reg.yaml"
    path.write_text(
        "founded by:\n"
        "  paraphrases: [founder]\n"
        '  qa_template: "Who founded?"\n'
        "  expected_types: [PERSON]\n",
        encoding="utf-8",
    )
    with pytest.raises(RegistryError, match="founded by"):
        load_registry(path)


def test_load_registry_empty_paraphrases_errors(tmp_path):
    path = tmp_path / "reg.yaml"
    path.write_text(
        "employer:\n"
        "  paraphrases: []\n"
        '  qa_template: "Who employs {entity}?"\n'
        "  expected_types: [ORG]\n",
        encoding="utf-8",
    )
    with pytest.raises(RegistryError, match="employer"):
        load_registry(path)


def test_load_registry_duplicate_relation_errors(tmp_path):
    path = tmp_path / "reg.yaml"
    path.write_text(
        "employer:\n"
        "  paraphrases: [employer]\n"
        '  qa_template: "Who employs {entity}?"\n'
        "  expected_types: [ORG]\n"
        "employer:\n"
        "  paraphrases: [works for]\n"
        '  qa_template: "Who is {entity} employed by?"\n'
        "  expected_types: [ORG]\n",
        encoding="utf-8",
    )
    with pytest.raises(RegistryError, match="duplicate"):
        load_registry(path)


def test_load_registry_unknown_type_tag_errors(tmp_path):
    path = tmp_path / "reg.yaml"
    path.write_text(
        "employer:\n"
        "  paraphrases: [employer]\n"
        '  qa_template: "Who employs {entity}?"\n'
        "  expected_types: [COMPANY]\n",
        encoding="utf-8",
    )
    with pytest.raises(RegistryError, match="COMPANY"):
        load_registry(path)


def test_registry_lookup_trims_whitespace():
    registry = default_registry()
    assert registry.get("  educated at ") is registry.get("educated at")
    assert "educated at" in registry


def test_registry_require_all():
    registry = default_registry()
    registry.require_all(["educated at", "founded by"])
    with pytest.raises(RegistryError, match="no such relation|not in registry"):
        registry.require_all(["educated at", "no such relation"])


def test_registry_load_idempotent_order_preserving(tmp_path):
    path = tmp_path / "reg.yaml"
    path.write_text(
        "residence:\n"
        "  paraphrases: [lives in, resides in, home in]\n"
        '  qa_template: "Where does {entity} live?"\n'
        "  expected_types: [GPE, LOC]\n",
        encoding="utf-8",
    )
    a = load_registry(path)
    b = load_registry(path)
    assert a.get("residence").paraphrases == b.get("residence").paraphrases
    assert a.get("residence").paraphrases == ("lives in", "resides in", "home in")


def test_parse_paraphrase_reply_basic():
    assert parse_paraphrase_reply("founder, founded by, established by") == [
        "founder",
        "founded by",
        "established by",
    ]


def test_parse_paraphrase_reply_dedups_case_insensitive():
    assert parse_paraphrase_reply("born, Born, born in") == ["born", "born in"]


def test_parse_paraphrase_reply_newlines():
    assert parse_paraphrase_reply("spouse\nmarried to,wife\n") == ["spouse", "married to", "wife"]


def test_parse_paraphrase_reply_empty_raises_with_raw():
    with pytest.raises(ParaphraseParseError) as err:
        parse_paraphrase_reply(" , ,\n")
    assert err.value.raw_response == " , ,\n"


def _paraphrase_prompt(relation: str) -> str:
    return render(load_template("paraphrase_gen"), {"relation": relation})


def test_generate_paraphrases_scripted():
    prompt = _paraphrase_prompt("founded by")
    gateway = MockGateway([script_entry("gen", prompt, "founder, founded by, established by")])
    assert generate_paraphrases("founded by", gateway) == [
        "founder",
        "founded by",
        "established by",
    ]


def test_generate_paraphrases_dedups():
    prompt = _paraphrase_prompt("place of birth")
    gateway = MockGateway([script_entry("gen", prompt, "born, born, born in")])
    assert generate_paraphrases("place of birth", gateway) == ["born", "born in"]


def test_generate_paraphrases_warns_outside_expected_range(caplog):
    import logging

    prompt = _paraphrase_prompt("employer")
    gateway = MockGateway([script_entry("gen", prompt, "works for, employer")])
    with caplog.at_level(logging.WARNING, logger="relrag.relations"):
        out = generate_paraphrases("employer", gateway)
    assert out == ["works for", "employer"]
    assert any(rec.levelno == logging.WARNING for rec in caplog.records)


def test_chat_request_validation():
    from relrag.gateway import GatewayError

    with pytest.raises(GatewayError):
        ChatRequest(model="m", messages=[], temperature=0.0, max_tokens=10)
    with pytest.raises(GatewayError):
        ChatRequest(
            model="m", messages=[{"role": "user", "content": "x"}], temperature=-1, max_tokens=10
        )


live = pytest.mark.skipif(
    __import__("os").environ.get("RELRAG_LIVE_TESTS") != "1",
    reason="live endpoint tests are off by default; set RELRAG_LIVE_TESTS=1",
)


@live
def test_live_paraphrases_founded_by_superset():
    from relrag.gateway import HTTPGateway

    paraphrases = {p.lower() for p in generate_paraphrases("founded by", HTTPGateway())}
    assert {"established by", "created by"} <= paraphrases
