"""Shared tokenizer.

Lowercase, split on runs of non-alphanumeric characters, drop empties.
No stemming and no stopword removal; used for queries, index fields and
embedding lookups alike.
"""
import re
from collections import Counter
from typing import Iterable

_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str | None) -> list[str]:
    if not text:
        return []
    return _TOKEN_RE.findall(text.lower())


def term_counts(text: str | None) -> Counter:
    return Counter(tokenize(text))


def unique(tokens: Iterable[str]) -> list[str]:
    """Distinct tokens in order of first occurrence."""
    return list(dict.fromkeys(tokens))


def normalize_label(label: str) -> str:
    """Canonical form of a heading label for schema statistics."""
    return " ".join(label.lower().split())
