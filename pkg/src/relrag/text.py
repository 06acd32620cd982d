"""Shared text primitives: tokenization and contiguous phrase matching.

Every component that looks at raw text (corpus stats, the lexical index,
the hash embedding provider, co-occurrence counting) goes through the same
tokenizer so that phrase semantics agree across modules.
"""

from __future__ import annotations

import re

# Unicode letters and digits; underscore is not alphanumeric.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on any non-alphanumeric character.

    Empty tokens are dropped; the result is deterministic for a given input.
    """
    return _TOKEN_RE.findall(text.lower())


def contains_phrase(tokens: list[str], phrase: list[str]) -> bool:
    """True if `phrase` occurs as a contiguous subsequence of `tokens`."""
    if not phrase:
        return False
    n, m = len(tokens), len(phrase)
    first = phrase[0]
    for i in range(n - m + 1):
        if tokens[i] == first and tokens[i : i + m] == phrase:
            return True
    return False


_SENTENCE_RE = re.compile(r"[.!?](?=\s|$)")


def split_sentences(text: str) -> list[str]:
    """Split on '.', '!' or '?' followed by whitespace or end of text.

    No abbreviation handling; "W. E. B." splits into fragments, which is a
    documented limitation of the counting rule.
    """
    parts = _SENTENCE_RE.split(text)
    return [p.strip() for p in parts if p.strip()]
