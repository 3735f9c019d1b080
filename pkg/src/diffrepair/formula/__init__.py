"""Closed spreadsheet-formula language: tokens, parser, evaluator, sampler."""
from .evaluator import ErrorCode, EvalResult, GridContext, evaluate, evaluate_source
from .parser import ParseError, parse, parse_texts
from .sampler import SamplerWeights, sample_formula
from .sketch import anonymize_sketch
from .tokens import (
    DEFAULT_N, EOS_ID, PAD_ID, VOCAB, VOCAB_HASH, VOCAB_SIZE, Token, TokenizeError, TokenSeq,
    TooLong, UnknownCharacter, detokenize, lex, normalize, tokenize,
)


def parses(code: str) -> bool:
    """True iff ``code`` tokenizes and is a grammatically valid formula."""
    try:
        parse_texts(lex(code))
    except (TokenizeError, ParseError):
        return False
    return True


__all__ = [
    "DEFAULT_N", "EOS_ID", "PAD_ID", "VOCAB", "VOCAB_HASH", "VOCAB_SIZE", "ErrorCode", "EvalResult",
    "GridContext", "ParseError", "SamplerWeights", "Token", "TokenSeq", "TokenizeError",
    "TooLong", "UnknownCharacter", "anonymize_sketch", "detokenize", "evaluate",
    "evaluate_source", "lex", "normalize", "parse", "parse_texts", "parses",
    "sample_formula", "tokenize",
]
