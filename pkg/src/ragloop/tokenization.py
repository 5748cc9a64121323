"""Deterministic lexical tokenization shared by the corpus store and the index."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

# Alphanumeric runs, unicode-aware, underscore excluded.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class TokenizerConfig:
    """Settings for the lexical tokenizer.

    Splitting always happens on non-alphanumeric boundaries; stemming is
    intentionally unsupported so that token sequences stay reproducible.
    """

    lowercase: bool = True
    stopwords: frozenset[str] = field(default_factory=frozenset)

    def to_dict(self) -> dict:
        return {"lowercase": self.lowercase, "stopwords": sorted(self.stopwords)}

    @classmethod
    def from_dict(cls, data: dict) -> "TokenizerConfig":
        return cls(
            lowercase=bool(data.get("lowercase", True)),
            stopwords=frozenset(data.get("stopwords", ())),
        )


DEFAULT_TOKENIZER = TokenizerConfig()


def tokenize(text: str, config: TokenizerConfig = DEFAULT_TOKENIZER) -> list[str]:
    """Split ``text`` into tokens according to ``config``.

    Tokenizing the same text with the same config always yields the same
    sequence.
    """
    if config.lowercase:
        text = text.lower()
    tokens = _TOKEN_RE.findall(text)
    if config.stopwords:
        tokens = [t for t in tokens if t not in config.stopwords]
    return tokens
