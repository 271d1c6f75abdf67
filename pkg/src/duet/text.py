"""Tokenisation helpers shared by cues, coverage, TextRank and the embedder."""

import re

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# Function words skipped when ranking "content" tokens. The synthetic review
# templates are written only with these words plus keyword/sentiment slots, so
# frequency ranking over a history surfaces the keywords.
STOPWORDS = frozenset(
    """
    a an the and or but if of on in at to for from with by as is was were be been
    am are it its this that these those i me my we our you your he she they them
    their his her so very too just also really one ones all any some not no
    into about than then there here what which who how when where while do does
    did done have has had can will would could should may might much more most
    such only own same other again each both few over under up down out off
    """.split()
)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


def token_set(text: str) -> set[str]:
    return set(tokenize(text))


def content_tokens(text: str) -> list[str]:
    return [t for t in tokenize(text) if t not in STOPWORDS]
