"""Caption and subquery normalization shared by the index and the matchers.

Policy: lowercase, Unicode NFC, split on whitespace and punctuation.
Punctuation is dropped except hyphens and apostrophes interior to a token,
so "mother-in-law's" survives as one token while "bird!" loses the "!".
"""

import re
import unicodedata

# alnum runs optionally joined by single interior hyphens/apostrophes
_TOKEN_RE = re.compile(r"[^\W_]+(?:['\-][^\W_]+)*", re.UNICODE)


def _strip_plural(token: str) -> str:
    if len(token) > 3 and token.endswith("s") and not token.endswith("ss"):
        return token[:-1]
    return token


def normalize_tokens(text: str, strip_plurals: bool = False) -> tuple[str, ...]:
    """Normalized token sequence of a caption or subquery.

    strip_plurals drops a trailing "s" from longer tokens; it is off in
    every acceptance path and exists only as an opt-in recall knob.
    """
    text = unicodedata.normalize("NFC", text).lower()
    tokens = _TOKEN_RE.findall(text)
    if strip_plurals:
        tokens = [_strip_plural(t) for t in tokens]
    return tuple(tokens)


def contains_phrase(haystack: tuple[str, ...], needle: tuple[str, ...]) -> bool:
    """True iff needle occurs as a contiguous run inside haystack.

    An empty needle never matches: a subquery that normalizes to zero
    tokens cannot be satisfied by any caption.
    """
    if not needle:
        return False
    k = len(needle)
    if k > len(haystack):
        return False
    first = needle[0]
    for i in range(len(haystack) - k + 1):
        if haystack[i] == first and haystack[i : i + k] == needle:
            return True
    return False
