"""Constant anonymization used by sketch match."""
from __future__ import annotations

import string

from .tokens import TokenSeq, detokenize

PLACEHOLDERS = ("<num>", "<str>", "<cell>")


def anonymize_sketch(code: str | TokenSeq) -> str:
    """Replace numbers, string literals and cell references with placeholders.

    Spacing of ``code`` is kept as-is, and placeholders already present pass
    through untouched, so the function is idempotent on its own output.
    """
    text = detokenize(code) if isinstance(code, TokenSeq) else code
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        hit = next((p for p in PLACEHOLDERS if text.startswith(p, i)), None)
        if hit:
            out.append(hit)
            i += len(hit)
        elif ch == '"':
            end = text.find('"', i + 1)
            i = len(text) if end < 0 else end + 1
            out.append("<str>")
        elif (
            ch in string.ascii_uppercase
            and i + 1 < len(text)
            and text[i + 1].isdigit()
            and (i == 0 or not text[i - 1].isalpha())
        ):
            i += 1
            while i < len(text) and text[i].isdigit():
                i += 1
            out.append("<cell>")
        elif ch.isdigit():
            while i < len(text) and text[i].isdigit():
                i += 1
            if i + 1 < len(text) and text[i] == "." and text[i + 1].isdigit():
                i += 1
                while i < len(text) and text[i].isdigit():
                    i += 1
            out.append("<num>")
        else:
            out.append(ch)
            i += 1
    return "".join(out)
