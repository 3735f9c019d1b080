"""Closed vocabulary, tokenizer and fixed-length token sequences."""
from __future__ import annotations

import hashlib
import string
from dataclasses import dataclass
from typing import Iterable, Sequence

FUNCTIONS = (
    "SUM", "AVERAGE", "MIN", "MAX", "COUNT", "COUNTIF",
    "IF", "LEN", "CONCAT", "ABS", "ROUND",
)
OPERATORS = ("=", "+", "-", "*", "/", ">", "<", ">=", "<=", "<>", "&")
PUNCTUATION = (":", ",", "(", ")", ".")
QUOTE = '"'
EXTRA_CHARS = ("_", " ")

PAD = "<pad>"
EOS = "<eos>"

DEFAULT_N = 48

# ids 0 and 1 are reserved for PAD and EOS
VOCAB: tuple[str, ...] = (
    (PAD, EOS)
    + FUNCTIONS
    + tuple(string.ascii_uppercase)
    + tuple(string.ascii_lowercase)
    + tuple(string.digits)
    + OPERATORS
    + PUNCTUATION
    + (QUOTE,)
    + EXTRA_CHARS
)
TOKEN_ID = {text: i for i, text in enumerate(VOCAB)}
PAD_ID = TOKEN_ID[PAD]
EOS_ID = TOKEN_ID[EOS]
VOCAB_SIZE = len(VOCAB)
VOCAB_HASH = hashlib.sha256("\x00".join(VOCAB).encode()).hexdigest()[:16]

_FUNCS_LONGEST_FIRST = sorted(FUNCTIONS, key=len, reverse=True)
_MULTI_OPS = (">=", "<=", "<>")
_SINGLE_CHARS = frozenset(t for t in VOCAB if len(t) == 1)


def token_kind(text: str) -> str:
    if text == PAD:
        return "PAD"
    if text == EOS:
        return "EOS"
    if text in FUNCTIONS:
        return "FUNC"
    if text in string.ascii_uppercase:
        return "CELL_COL"
    if text in string.digits:
        return "DIGIT"
    if text in OPERATORS:
        return "OP"
    if text in PUNCTUATION:
        return "PUNCT"
    if text == QUOTE:
        return "QUOTE"
    return "CHAR"


@dataclass(frozen=True)
class Token:
    kind: str
    text: str


class TokenizeError(ValueError):
    """Source text cannot be mapped onto the closed vocabulary."""


class UnknownCharacter(TokenizeError):
    def __init__(self, char: str, position: int):
        super().__init__(f"unknown character {char!r} at offset {position}")
        self.char = char
        self.position = position


class TooLong(TokenizeError):
    def __init__(self, length: int, n: int):
        super().__init__(f"{length} content tokens do not fit in n={n} (max {n - 1})")
        self.length = length
        self.n = n


@dataclass(frozen=True)
class TokenSeq:
    """Exactly ``n`` token ids: content, one EOS, then PAD."""

    ids: tuple[int, ...]

    def __post_init__(self):
        ids = self.ids
        if EOS_ID not in ids:
            raise ValueError("TokenSeq needs an EOS token")
        k = ids.index(EOS_ID)
        if PAD_ID in ids[:k]:
            raise ValueError("PAD before EOS")
        if any(i != PAD_ID for i in ids[k + 1:]):
            raise ValueError("non-PAD token after EOS")

    @classmethod
    def from_content(cls, content: Sequence[int], n: int = DEFAULT_N) -> "TokenSeq":
        if len(content) > n - 1:
            raise TooLong(len(content), n)
        return cls(tuple(content) + (EOS_ID,) + (PAD_ID,) * (n - len(content) - 1))

    @classmethod
    def from_texts(cls, texts: Iterable[str], n: int = DEFAULT_N) -> "TokenSeq":
        return cls.from_content([TOKEN_ID[t] for t in texts], n)

    @classmethod
    def from_argmax(cls, ids: Sequence[int]) -> "TokenSeq":
        """Truncate raw per-position predictions into a valid sequence.

        Content ends at the first EOS or PAD; with neither present, EOS is
        forced into the last position.
        """
        n = len(ids)
        content = []
        for i in ids[: n - 1]:
            if i in (EOS_ID, PAD_ID):
                break
            content.append(int(i))
        return cls.from_content(content, n)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def k(self) -> int:
        return self.ids.index(EOS_ID)

    @property
    def content(self) -> tuple[int, ...]:
        return self.ids[: self.k]

    @property
    def texts(self) -> list[str]:
        return [VOCAB[i] for i in self.content]

    @property
    def tokens(self) -> list[Token]:
        return [Token(token_kind(VOCAB[i]), VOCAB[i]) for i in self.ids]

    def __len__(self) -> int:
        return self.n


def lex(source: str) -> list[str]:
    """Split source into token texts; whitespace outside strings is dropped."""
    out: list[str] = []
    i = 0
    in_string = False
    while i < len(source):
        ch = source[i]
        if in_string:
            if ch == QUOTE:
                in_string = False
            elif ch not in _SINGLE_CHARS:
                raise UnknownCharacter(ch, i)
            out.append(ch)
            i += 1
            continue
        if ch == QUOTE:
            in_string = True
            out.append(ch)
            i += 1
            continue
        if ch.isspace():
            i += 1
            continue
        if ch in string.ascii_uppercase:
            for name in _FUNCS_LONGEST_FIRST:
                if source.startswith(name, i):
                    out.append(name)
                    i += len(name)
                    break
            else:
                out.append(ch)
                i += 1
            continue
        two = source[i:i + 2]
        if two in _MULTI_OPS:
            out.append(two)
            i += 2
            continue
        if ch not in _SINGLE_CHARS:
            raise UnknownCharacter(ch, i)
        out.append(ch)
        i += 1
    return out


def tokenize(source: str, n: int = DEFAULT_N) -> TokenSeq:
    return TokenSeq.from_texts(lex(source), n)


def join_texts(texts: Iterable[str]) -> str:
    """Concatenate token texts, adding one space after each comma outside strings."""
    parts = []
    in_string = False
    for t in texts:
        if t in (PAD, EOS):
            continue
        parts.append(t)
        if t == QUOTE:
            in_string = not in_string
        elif t == "," and not in_string:
            parts.append(" ")
    return "".join(parts)


def detokenize(seq: TokenSeq) -> str:
    return join_texts(seq.texts)


def normalize(source: str) -> str:
    return join_texts(lex(source))
