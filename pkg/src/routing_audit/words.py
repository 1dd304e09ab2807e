"""Bundled token vocabulary for synthetic binding tasks.

Whitespace-delimited single words with stable integer ids (position in
the master list below, which is append-only). Candidate-pool words are
disjoint from filler, coherent-prose, and structural tokens, so a
candidate can never be introduced by filler or by scrub placeholders.
"""

from __future__ import annotations

from .errors import DataError

__all__ = [
    "CANDIDATE_WORDS",
    "FILLER_WORDS",
    "COHERENT_TOKENS",
    "REPEAT_TOKEN",
    "HEDGE_TOKENS",
    "REDACTED_TOKEN",
    "MASK_TOKEN",
    "SHAM_VALUE_TOKEN",
    "token_id",
    "token_of",
    "vocabulary_size",
]

# Pool words: fruits, greek letters, colors, animals, stones, trees.
CANDIDATE_WORDS: tuple[str, ...] = (
    "apple", "banana", "cherry", "grape", "lemon", "lime", "mango", "melon",
    "peach", "pear", "plum", "fig", "date", "kiwi", "papaya", "guava",
    "apricot", "nectarine", "currant", "quince", "olive", "coconut", "berry", "raisin",
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta",
    "iota", "kappa", "lambda", "mu", "nu", "xi", "omicron", "pi",
    "rho", "sigma", "tau", "upsilon", "phi", "chi", "psi", "omega",
    "red", "orange", "yellow", "green", "blue", "indigo", "violet", "purple",
    "pink", "brown", "black", "white", "gray", "cyan", "magenta", "teal",
    "cat", "dog", "fox", "wolf", "bear", "lion", "tiger", "horse",
    "mouse", "otter", "rabbit", "badger", "deer", "moose", "eagle", "hawk",
    "owl", "crow", "swan", "frog", "toad", "snake", "whale", "seal",
    "gold", "silver", "copper", "iron", "zinc", "nickel", "pearl", "ruby",
    "topaz", "jade", "amber", "opal", "quartz", "onyx", "garnet", "coral",
    "oak", "pine", "elm", "birch", "maple", "cedar", "willow", "aspen",
    "spruce", "walnut", "hazel", "rowan", "alder", "beech", "laurel", "poplar",
)

# Everyday words for random filler and decoy-block sprinkling.
FILLER_WORDS: tuple[str, ...] = (
    "the", "and", "then", "with", "from", "into", "over", "under",
    "about", "after", "before", "while", "during", "still", "again", "almost",
    "around", "because", "between", "beyond", "despite", "each", "either", "enough",
    "every", "having", "itself", "many", "more", "most", "much", "never",
    "often", "once", "only", "other", "quite", "rather", "really", "several",
    "some", "such", "through", "together", "toward", "until", "upon", "very",
    "within", "without", "already", "also", "always", "any", "both", "could",
)

# One neutral sentence, cycled to length for coherent filler.
COHERENT_TOKENS: tuple[str, ...] = (
    "the", "record", "keeps", "moving", "through", "the", "long", "quiet",
    "room", "and", "nothing", "about", "it", "changes", "while", "the",
    "reader", "waits", "for", "the", "next", "line", "to", "arrive", ".",
)

_STRUCTURAL: tuple[str, ...] = (
    "KEY", "KEY1", "KEY2", "=", "[", "]", "?", "CHECKPOINT", ":", "NOTE",
    "none", "REDACTED", "XXXX", "What", "is", "was", "FIRST", "value", "of",
)

REPEAT_TOKEN = "the"
# Non-candidate tokens the simulated provider always scores, so every
# record carries a gate reference.
HEDGE_TOKENS: tuple[str, ...] = ("the", "none")
REDACTED_TOKEN = "REDACTED"
MASK_TOKEN = "XXXX"
SHAM_VALUE_TOKEN = "none"

_cand_set = frozenset(CANDIDATE_WORDS)
if len(_cand_set) != len(CANDIDATE_WORDS):
    raise AssertionError("candidate word list contains duplicates")
for _w in (*FILLER_WORDS, *COHERENT_TOKENS, *_STRUCTURAL):
    if _w in _cand_set:
        raise AssertionError(f"non-candidate token {_w!r} collides with the candidate pool")

_ALL: list[str] = []
_seen: set[str] = set()
for _w in (*CANDIDATE_WORDS, *FILLER_WORDS, *COHERENT_TOKENS, *_STRUCTURAL):
    if _w not in _seen:
        _seen.add(_w)
        _ALL.append(_w)

_TOKEN_TO_ID: dict[str, int] = {w: i for i, w in enumerate(_ALL)}
_ID_TO_TOKEN: dict[int, str] = {i: w for w, i in _TOKEN_TO_ID.items()}


def token_id(token: str) -> int:
    """Stable id of a bundled token. Unknown tokens are a data error."""
    try:
        return _TOKEN_TO_ID[token]
    except KeyError:
        raise DataError(f"token {token!r} is not in the bundled vocabulary") from None


def token_of(token_id_: int) -> str:
    try:
        return _ID_TO_TOKEN[token_id_]
    except KeyError:
        raise DataError(f"no bundled token with id {token_id_}") from None


def vocabulary_size() -> int:
    return len(_ALL)
