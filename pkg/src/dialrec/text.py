"""Shared desk-scale tokenization rules.

Whitespace split with a per-character fallback for non-ASCII pieces, so the
same rule covers both Latin and CJK text. Reserved control tokens survive
intact even when glued to punctuation.
"""

from __future__ import annotations

import re

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
RESERVED_TOKENS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)

_RESERVED_RE = re.compile("(" + "|".join(re.escape(t) for t in RESERVED_TOKENS) + ")")


def tokenize(text: str) -> list[str]:
    """Split text into tokens; ASCII pieces are lowercased, the rest char-split."""
    out: list[str] = []
    for piece in text.split():
        for part in _RESERVED_RE.split(piece):
            if not part:
                continue
            if part in RESERVED_TOKENS:
                out.append(part)
            elif part.isascii():
                out.append(part.lower())
            else:
                out.extend(part)
    return out


def token_count(text: str) -> int:
    return len(tokenize(text))
