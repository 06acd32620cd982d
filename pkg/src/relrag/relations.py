"""Per-relation knowledge: paraphrase sets, QA templates, entity types.

A RelationRegistry is loaded once (from the bundled default file or a
user-supplied YAML) and then treated as immutable. Paraphrase lists are
ordered; order matters for query construction and prompt rendering.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

logger = logging.getLogger(__name__)

ENTITY_TYPE_TAGS = ("PERSON", "ORG", "GPE", "LOC")
PLACEHOLDER = "{entity}"

# Paraphrase-count range observed in practice; outside it we warn, not fail.
EXPECTED_PARAPHRASE_RANGE = (4, 11)


class RegistryError(Exception):
    """Raised when a registry file violates the profile invariants."""


class ParaphraseParseError(Exception):
    """Raised when an LLM paraphrase reply yields no usable entries."""

    def __init__(self, raw_response: str):
        super().__init__(f"no paraphrases parsed from response: {raw_response!r}")
        self.raw_response = raw_response


@dataclass(frozen=True)
class RelationProfile:
    """Knowledge attached to one relation string."""

    relation: str
    paraphrases: tuple[str, ...]
    qa_template: str
    expected_types: tuple[str, ...]

    def validate(self) -> None:
        if not self.relation.strip():
            raise RegistryError("profile with empty relation name")
        name = self.relation
        if not self.paraphrases:
            raise RegistryError(f"relation {name!r}: empty paraphrase list")
        lowered = [p.lower() for p in self.paraphrases]
        if len(set(lowered)) != len(lowered):
            raise RegistryError(f"relation {name!r}: duplicate paraphrases")
        if any(not p.strip() for p in self.paraphrases):
            raise RegistryError(f"relation {name!r}: blank paraphrase entry")
        if self.qa_template.count(PLACEHOLDER) != 1:
            raise RegistryError(
                f"relation {name!r}: qa_template must contain {PLACEHOLDER} exactly once"
            )
        if not self.expected_types:
            raise RegistryError(f"relation {name!r}: empty expected_types")
        for tag in self.expected_types:
            if tag not in ENTITY_TYPE_TAGS:
                raise RegistryError(
                    f"relation {name!r}: unknown entity type tag {tag!r} "
                    f"(allowed: {', '.join(ENTITY_TYPE_TAGS)})"
                )


class RelationRegistry:
    """Relation profiles keyed by exact relation string (whitespace-trimmed)."""

    def __init__(self, profiles: list[RelationProfile]):
        self._profiles: dict[str, RelationProfile] = {}
        for prof in profiles:
            prof.validate()
            key = prof.relation.strip()
            if key in self._profiles:
                raise RegistryError(f"duplicate relation: {key!r}")
            self._profiles[key] = prof

    def get(self, relation: str) -> RelationProfile:
        key = relation.strip()
        if key not in self._profiles:
            raise RegistryError(f"relation {key!r} not in registry")
        return self._profiles[key]

    def __contains__(self, relation: str) -> bool:
        return relation.strip() in self._profiles

    def __len__(self) -> int:
        return len(self._profiles)

    @property
    def relations(self) -> list[str]:
        return list(self._profiles)

    def require_all(self, relations: set[str] | list[str]) -> None:
        """Fail fast if any relation is missing; called before a run starts."""
        missing = sorted({r.strip() for r in relations} - set(self._profiles))
        if missing:
            raise RegistryError(f"relations not in registry: {', '.join(map(repr, missing))}")


class _StrictLoader(yaml.SafeLoader):
    """SafeLoader that rejects duplicate mapping keys."""


def _strict_mapping(loader: _StrictLoader, node: yaml.MappingNode):
    seen = set()
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in seen:
            raise RegistryError(f"duplicate relation: {key!r}")
        seen.add(key)
    return yaml.SafeLoader.construct_mapping(loader, node, deep=True)


_StrictLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _strict_mapping
)


def _profiles_from_mapping(doc: dict) -> list[RelationProfile]:
    profiles = []
    for relation, block in doc.items():
        if not isinstance(block, dict):
            raise RegistryError(f"relation {relation!r}: block must be a mapping")
        try:
            paraphrases = tuple(str(p) for p in block["paraphrases"])
            qa_template = str(block["qa_template"])
            expected_types = tuple(str(t) for t in block["expected_types"])
        except KeyError as exc:
            raise RegistryError(f"relation {relation!r}: missing field {exc.args[0]!r}") from exc
        profiles.append(
            RelationProfile(
                relation=str(relation),
                paraphrases=paraphrases,
                qa_template=qa_template,
                expected_types=expected_types,
            )
        )
    return profiles


def load_registry(path: str | Path) -> RelationRegistry:
    """Load a registry YAML: one block per relation."""
    text = Path(path).read_text(encoding="utf-8")
    return _load_registry_text(text)


def _load_registry_text(text: str) -> RelationRegistry:
    doc = yaml.load(text, Loader=_StrictLoader)
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise RegistryError("registry file must be a mapping of relation blocks")
    return RelationRegistry(_profiles_from_mapping(doc))


def default_registry() -> RelationRegistry:
    """The bundled registry covering all twelve supported relations."""
    text = resources.files("relrag.data").joinpath("default_registry.yaml").read_text("utf-8")
    return _load_registry_text(text)


def instantiate_question(profile: RelationProfile, head_entity: str) -> str:
    """Fill the QA template's single placeholder with the entity, verbatim."""
    if not head_entity:
        raise ValueError("head entity must be non-empty")
    return profile.qa_template.replace(PLACEHOLDER, head_entity)


def parse_paraphrase_reply(raw: str) -> list[str]:
    """Split an LLM reply on commas/newlines, trim, and dedup case-insensitively.

    The first-seen casing of each paraphrase is preserved.
    """
    parts = [piece.strip() for chunk in raw.splitlines() for piece in chunk.split(",")]
    out: list[str] = []
    seen: set[str] = set()
    for part in parts:
        if not part:
            continue
        key = part.lower()
        if key in seen:
            continue
        seen.add(key)
        out.append(part)
    if not out:
        raise ParaphraseParseError(raw)
    return out


def generate_paraphrases(relation: str, gateway) -> list[str]:
    """Ask the gateway for a paraphrase list and parse the reply.

    Import-light on purpose: any object with `.complete(ChatRequest) -> str`
    works, so tests can drive this with the scripted mock.
    """
    from .gateway import ChatRequest, load_template, render

    template = load_template("paraphrase_gen")
    prompt = render(template, {"relation": relation})
    reply = gateway.complete(
        ChatRequest(
            model=getattr(gateway, "model", "paraphrase-generator"),
            messages=[{"role": "user", "content": prompt}],
            temperature=0.0,
            max_tokens=128,
        )
    )
    paraphrases = parse_paraphrase_reply(reply)
    low, high = EXPECTED_PARAPHRASE_RANGE
    if not low <= len(paraphrases) <= high:
        logger.warning(
            "relation %r: %d paraphrases generated (expected %d-%d)",
            relation,
            len(paraphrases),
            low,
            high,
        )
    return paraphrases
