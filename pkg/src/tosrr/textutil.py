"""Deterministic tokenization and word counting.

Latin text tokenizes on word characters (lowercased); CJK runs become
overlapping character bigrams so keyword matching works without a
language-specific analyzer. Word counting uses the same split: one word per
Latin token, one per CJK character.
"""

from __future__ import annotations

import re

DEFAULT_TOKENIZER_ID = "ws-lower+cjk-bigram/1"

_LATIN_TOKEN = re.compile(r"[a-z0-9]+(?:['\-][a-z0-9]+)*")
_CJK_RUN = re.compile(r"[㐀-鿿豈-﫿]+")
_SEGMENT = re.compile(r"([㐀-鿿豈-﫿]+)|([A-Za-z0-9]+(?:['\-][A-Za-z0-9]+)*)")


def tokenize(text: str) -> list[str]:
    """Split text into lowercase Latin tokens and CJK character bigrams."""
    tokens: list[str] = []
    for cjk, latin in _SEGMENT.findall(text):
        if latin:
            tokens.append(latin.lower())
        else:
            if len(cjk) == 1:
                tokens.append(cjk)
            else:
                tokens.extend(cjk[i : i + 2] for i in range(len(cjk) - 1))
    return tokens


def word_count(text: str) -> int:
    """Whitespace-style count for Latin, per-character count for CJK."""
    count = 0
    for cjk, latin in _SEGMENT.findall(text):
        count += len(cjk) if cjk else 1
    return count
