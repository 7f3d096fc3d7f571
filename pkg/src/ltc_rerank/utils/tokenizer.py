from __future__ import annotations

import re
from functools import lru_cache

from ltc_rerank.constants import DEFAULT_NUM_IDENTIFIERS, NUM_SPECIAL_TOKENS
from ltc_rerank.exceptions import ConfigurationError

_FNV_OFFSET_BASIS = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK_64 = 0xFFFFFFFFFFFFFFFF

# Runs of letters and digits; underscore counts as a separator
_WORD_PATTERN = re.compile(r"[^\W_]+")


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    value = _FNV_OFFSET_BASIS
    for byte in data:
        value = ((value ^ byte) * _FNV_PRIME) & _MASK_64
    return value


@lru_cache(maxsize=1 << 16)
def _word_id(word: str, num_words: int) -> int:
    return NUM_SPECIAL_TOKENS + fnv1a_64(word.encode("utf-8")) % num_words


class HashTokenizer:
    """Deterministic word-hashing tokenizer.

    Text is lowercased and split on non-alphanumeric runs; each word maps to its FNV-1a hash modulo the number of
    non-reserved ids, offset past the special ids. Identifier ids at the top of the vocabulary are never produced.
    """

    def __init__(self, vocab_size: int, num_identifiers: int = DEFAULT_NUM_IDENTIFIERS):
        self.vocab_size = vocab_size
        self.num_identifiers = num_identifiers
        self.num_words = vocab_size - NUM_SPECIAL_TOKENS - num_identifiers
        if self.num_words < 1:
            raise ConfigurationError(f"Vocabulary of {vocab_size} ids has no room for words.")

    @classmethod
    def from_config(cls, config) -> HashTokenizer:
        return cls(config.vocab_size, config.num_identifiers)

    @staticmethod
    def words(text: str) -> list[str]:
        return _WORD_PATTERN.findall(text.lower())

    def __call__(self, text: str) -> list[int]:
        return [_word_id(word, self.num_words) for word in self.words(text)]


def tokenize(text: str, vocab_size: int = 4096, num_identifiers: int = DEFAULT_NUM_IDENTIFIERS) -> list[int]:
    """Tokenize `text` with a HashTokenizer for the given vocabulary."""
    return HashTokenizer(vocab_size, num_identifiers)(text)
