# src/utils/text_utils.py
import re
from typing import List, Sequence

# Maximal runs of Unicode letters and digits; everything else separates tokens.
_TOKEN_PATTERN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> List[str]:
    """Lowercases text and splits it on every run of non-alphanumeric characters."""
    if not text:
        return []
    return _TOKEN_PATTERN.findall(text.lower())


def detokenize(tokens: Sequence[str]) -> str:
    """Joins tokens with single spaces."""
    return " ".join(tokens)
