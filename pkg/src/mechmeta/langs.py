"""Executable definitions of the nine target formal languages.

Every language is a small deterministic prefix automaton over canonical
symbol ids.  Each automaton knows how many members of a given length extend
the current state, which is all that is needed for exact continuation sets,
counting, lexicographic unranking and uniform sampling.

Canonical ids (payload symbols only; START/STOP/PAD are 0/1/2):

    growing   a=3 b=4 c=5
    copy      a=3 b=4 c=5 |=6
    dyck      (=3 )=4 {=5 }=6
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import DeadPrefix, EmptySlice, RankOutOfRange, UnknownSymbol

START, STOP, PAD = 0, 1, 2
VOCAB_SIZE = 10
PAYLOAD_IDS = tuple(range(3, VOCAB_SIZE))

GROWING_CHARS = {"a": 3, "b": 4, "c": 5}
COPY_CHARS = {"a": 3, "b": 4, "c": 5, "|": 6}
DYCK_CHARS = {"(": 3, ")": 4, "{": 5, "}": 6}

A, B, C = 3, 4, 5
BAR = 6
LPAR, RPAR, LBRACE, RBRACE = 3, 4, 5, 6
_CLOSER = {LPAR: RPAR, LBRACE: RBRACE}

LANG_NAMES = ("an", "anbn", "anbncn", "kleene", "wwR", "ww", "pairs_n", "dyck", "cross_dyck")

State = Hashable


@dataclass(frozen=True)
class CanonicalString:
    symbols: tuple[int, ...]
    lang_length: int

    def __len__(self) -> int:
        return len(self.symbols)


class LanguageSpec:
    """Base class: a prefix automaton plus completion counting.

    Subclasses implement ``start``, ``step`` (returning ``None`` for a dead
    prefix), ``accepting``, ``measure`` and ``completions``.  ``step`` only
    ever returns states that can still be completed to a member.
    """

    name: str
    family: str
    chomsky_level: str
    chars: dict[str, int]

    # -- automaton interface -------------------------------------------------
    def start(self) -> State:
        raise NotImplementedError

    def step(self, state: State, sym: int) -> State | None:
        raise NotImplementedError

    def accepting(self, state: State) -> bool:
        raise NotImplementedError

    def measure(self, state: State) -> int:
        raise NotImplementedError

    def completions(self, state: State, length: int) -> int:
        """Number of members with lang_length ``length`` that extend ``state``."""
        raise NotImplementedError

    # -- derived ------------------------------------------------------------
    @property
    def alphabet(self) -> tuple[int, ...]:
        return tuple(sorted(self.chars.values()))

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name}>"

    def check_symbols(self, s: Sequence[int]) -> None:
        allowed = set(self.alphabet)
        for x in s:
            if x not in allowed:
                raise UnknownSymbol(f"symbol {x!r} is not in the {self.name} alphabet {self.alphabet}")

    def run(self, prefix: Sequence[int]) -> State:
        """State after reading ``prefix``; raises DeadPrefix if it cannot be completed."""
        self.check_symbols(prefix)
        state = self.start()
        for i, x in enumerate(prefix):
            state = self.step(state, x)
            if state is None:
                raise DeadPrefix(f"{self.name}: no member starts with {self.decode(prefix[: i + 1])!r}")
        return state

    def encode(self, text: str) -> tuple[int, ...]:
        try:
            return tuple(self.chars[ch] for ch in text)
        except KeyError as exc:
            raise UnknownSymbol(f"character {exc.args[0]!r} is not in the {self.name} alphabet") from None

    def decode(self, symbols: Iterable[int]) -> str:
        inv = {v: k for k, v in self.chars.items()}
        out = []
        for x in symbols:
            if x == STOP:
                out.append("<stop>")
            else:
                out.append(inv.get(x, f"<{x}>"))
        return "".join(out)


# ---------------------------------------------------------------------------
# Growing family


class An(LanguageSpec):
    name, family, chomsky_level = "an", "Growing", "Regular"
    chars = {"a": A}

    def start(self):
        return 0

    def step(self, k, sym):
        return k + 1 if sym == A else None

    def accepting(self, k):
        return k >= 1

    def measure(self, k):
        return k

    def completions(self, k, length):
        return int(1 <= length and k <= length)


class AnBn(LanguageSpec):
    name, family, chomsky_level = "anbn", "Growing", "ContextFree"
    chars = {"a": A, "b": B}

    def start(self):
        return (0, 0)

    def step(self, state, sym):
        a, b = state
        if sym == A and b == 0:
            return (a + 1, 0)
        if sym == B and b < a:
            return (a, b + 1)
        return None

    def accepting(self, state):
        a, b = state
        return a >= 1 and a == b

    def measure(self, state):
        return state[0]

    def completions(self, state, length):
        a, b = state
        if length < 1:
            return 0
        return int(a <= length) if b == 0 else int(a == length)


class AnBnCn(LanguageSpec):
    name, family, chomsky_level = "anbncn", "Growing", "ContextSensitive"
    chars = {"a": A, "b": B, "c": C}

    def start(self):
        return (0, 0, 0)

    def step(self, state, sym):
        a, b, c = state
        if sym == A and b == 0 and c == 0:
            return (a + 1, 0, 0)
        if sym == B and c == 0 and b < a:
            return (a, b + 1, 0)
        if sym == C and a >= 1 and b == a and c < a:
            return (a, b, c + 1)
        return None

    def accepting(self, state):
        a, b, c = state
        return a >= 1 and a == b == c

    def measure(self, state):
        return state[0]

    def completions(self, state, length):
        a, b, c = state
        if length < 1:
            return 0
        return int(a <= length) if b == 0 else int(a == length)


# ---------------------------------------------------------------------------
# Copy family.  State: (w, pos) with pos None before the bar.


class Kleene(LanguageSpec):
    name, family, chomsky_level = "kleene", "Copy", "Regular"
    chars = {"a": A, "b": B, "c": C}

    def start(self):
        return 0

    def step(self, k, sym):
        return k + 1 if sym in (A, B, C) else None

    def accepting(self, k):
        return k >= 1

    def measure(self, k):
        return k

    def completions(self, k, length):
        if length < 1 or k > length:
            return 0
        return 3 ** (length - k)


class _Mirror(LanguageSpec):
    family = "Copy"
    chars = dict(COPY_CHARS)
    reverse: bool

    def start(self):
        return ((), None)

    def _expected(self, w, pos):
        return w[len(w) - 1 - pos] if self.reverse else w[pos]

    def step(self, state, sym):
        w, pos = state
        if pos is None:
            if sym in (A, B, C):
                return (w + (sym,), None)
            if sym == BAR and w:
                return (w, 0)
            return None
        if pos < len(w) and sym == self._expected(w, pos):
            return (w, pos + 1)
        return None

    def accepting(self, state):
        w, pos = state
        return pos is not None and pos == len(w)

    def measure(self, state):
        return len(state[0])

    def completions(self, state, length):
        w, pos = state
        if length < 1 or len(w) > length:
            return 0
        if pos is None:
            return 3 ** (length - len(w))
        return int(len(w) == length)


class WWR(_Mirror):
    name, chomsky_level, reverse = "wwR", "ContextFree", True


class WW(_Mirror):
    name, chomsky_level, reverse = "ww", "ContextSensitive", False


# ---------------------------------------------------------------------------
# Dyck family


class PairsN(LanguageSpec):
    """Concatenations of "()" and "{}" units.

    ``homogeneous=True`` only admits repetitions of a single unit type.
    State: (opens seen, currently open symbol or None, first open symbol).
    """

    name, family, chomsky_level = "pairs_n", "Dyck", "Regular"
    chars = dict(DYCK_CHARS)

    def __init__(self, homogeneous: bool = False):
        self.homogeneous = homogeneous

    def __repr__(self):
        return f"<PairsN homogeneous={self.homogeneous}>"

    def start(self):
        return (0, None, None)

    def step(self, state, sym):
        k, open_, kind = state
        if open_ is None:
            if sym in (LPAR, LBRACE):
                if self.homogeneous and kind is not None and sym != kind:
                    return None
                return (k + 1, sym, kind if kind is not None else sym)
            return None
        if sym == _CLOSER[open_]:
            return (k, None, kind)
        return None

    def accepting(self, state):
        k, open_, _ = state
        return k >= 1 and open_ is None

    def measure(self, state):
        return state[0]

    def completions(self, state, length):
        k, _, kind = state
        if length < 1 or k > length:
            return 0
        if self.homogeneous:
            return 1 if kind is not None else 2
        return 2 ** (length - k)


@lru_cache(maxsize=None)
def _dyck_tails(depth: int, opens: int) -> int:
    """Balanced completions from ``depth`` using exactly ``opens`` more opens (two bracket types)."""
    if opens < 0 or depth < 0:
        return 0
    if opens == 0:
        return 1
    total = 2 * _dyck_tails(depth + 1, opens - 1)
    if depth > 0:
        total += _dyck_tails(depth - 1, opens)
    return total


@lru_cache(maxsize=None)
def _cross_tails(p: int, q: int, opens: int) -> int:
    """Completions with independent paren depth ``p`` and brace depth ``q``."""
    if opens < 0:
        return 0
    if opens == 0:
        # only closers remain; interleave them freely
        return math.comb(p + q, p)
    total = _cross_tails(p + 1, q, opens - 1) + _cross_tails(p, q + 1, opens - 1)
    if p > 0:
        total += _cross_tails(p - 1, q, opens)
    if q > 0:
        total += _cross_tails(p, q - 1, opens)
    return total


class Dyck(LanguageSpec):
    name, family, chomsky_level = "dyck", "Dyck", "ContextFree"
    chars = dict(DYCK_CHARS)

    def start(self):
        return ((), 0)

    def step(self, state, sym):
        stack, opens = state
        if sym in (LPAR, LBRACE):
            return (stack + (sym,), opens + 1)
        if stack and sym == _CLOSER[stack[-1]]:
            return (stack[:-1], opens)
        return None

    def accepting(self, state):
        stack, opens = state
        return opens >= 1 and not stack

    def measure(self, state):
        return state[1]

    def completions(self, state, length):
        stack, opens = state
        if length < 1:
            return 0
        return _dyck_tails(len(stack), length - opens)


class CrossDyck(LanguageSpec):
    name, family, chomsky_level = "cross_dyck", "Dyck", "ContextSensitive"
    chars = dict(DYCK_CHARS)

    def start(self):
        return (0, 0, 0)

    def step(self, state, sym):
        p, q, opens = state
        if sym == LPAR:
            return (p + 1, q, opens + 1)
        if sym == LBRACE:
            return (p, q + 1, opens + 1)
        if sym == RPAR and p > 0:
            return (p - 1, q, opens)
        if sym == RBRACE and q > 0:
            return (p, q - 1, opens)
        return None

    def accepting(self, state):
        p, q, opens = state
        return opens >= 1 and p == 0 and q == 0

    def measure(self, state):
        return state[2]

    def completions(self, state, length):
        p, q, opens = state
        if length < 1:
            return 0
        return _cross_tails(p, q, length - opens)


_REGISTRY = {
    "an": An,
    "anbn": AnBn,
    "anbncn": AnBnCn,
    "kleene": Kleene,
    "wwR": WWR,
    "ww": WW,
    "pairs_n": PairsN,
    "dyck": Dyck,
    "cross_dyck": CrossDyck,
}


def get_language(name: str, *, pairs_homogeneous: bool = False) -> LanguageSpec:
    if isinstance(name, LanguageSpec):
        return name
    try:
        cls = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown language {name!r}; expected one of {LANG_NAMES}") from None
    if cls is PairsN:
        return PairsN(homogeneous=pairs_homogeneous)
    return cls()


def all_languages() -> list[LanguageSpec]:
    return [get_language(n) for n in LANG_NAMES]


def _as_symbols(lang: LanguageSpec, s) -> tuple[int, ...]:
    return lang.encode(s) if isinstance(s, str) else tuple(int(x) for x in s)


# ---------------------------------------------------------------------------
# Operations


def membership(lang: LanguageSpec, s: Sequence[int] | str) -> bool:
    s = _as_symbols(lang, s)
    try:
        state = lang.run(s)
    except DeadPrefix:
        return False
    return lang.accepting(state)


def valid_continuations(lang: LanguageSpec, prefix: Sequence[int] | str) -> frozenset[int]:
    """Next symbols (and STOP) that keep ``prefix`` on the way to a member."""
    prefix = _as_symbols(lang, prefix)
    state = lang.run(prefix)
    valid = {x for x in lang.alphabet if lang.step(state, x) is not None}
    if lang.accepting(state):
        valid.add(STOP)
    return frozenset(valid)


def prefix_length(lang: LanguageSpec, prefix: Sequence[int] | str) -> int:
    return lang.measure(lang.run(_as_symbols(lang, prefix)))


def count_strings(lang: LanguageSpec, length: int) -> int:
    if length < 1:
        return 0
    return lang.completions(lang.start(), length)


def unrank(lang: LanguageSpec, length: int, rank: int) -> CanonicalString:
    """The ``rank``-th member of the length slice in lexicographic id order.

    STOP (id 1) sorts below every payload id, so a member precedes all of
    its extensions.
    """
    total = count_strings(lang, length)
    if not 0 <= rank < total:
        raise RankOutOfRange(f"rank {rank} outside [0, {total}) for {lang.name} at length {length}")
    state = lang.start()
    out: list[int] = []
    while True:
        if lang.accepting(state) and lang.measure(state) == length:
            if rank == 0:
                return CanonicalString(tuple(out), length)
            rank -= 1
        for x in lang.alphabet:
            nxt = lang.step(state, x)
            if nxt is None:
                continue
            c = lang.completions(nxt, length)
            if rank < c:
                out.append(x)
                state = nxt
                break
            rank -= c
        else:  # pragma: no cover - counts are exact, so this is unreachable
            raise AssertionError("unrank fell off the slice")


def rank_of(lang: LanguageSpec, symbols: Sequence[int] | str) -> int:
    """Inverse of :func:`unrank` for a member string."""
    symbols = _as_symbols(lang, symbols)
    state = lang.run(symbols)
    if not lang.accepting(state):
        raise ValueError(f"{lang.decode(symbols)!r} is not in {lang.name}")
    length = lang.measure(state)
    state = lang.start()
    rank = 0
    for x in symbols:
        if lang.accepting(state) and lang.measure(state) == length:
            rank += 1
        for y in lang.alphabet:
            if y == x:
                break
            nxt = lang.step(state, y)
            if nxt is not None:
                rank += lang.completions(nxt, length)
        state = lang.step(state, x)
    return rank


def randbelow(rng: np.random.Generator, n: int) -> int:
    """Uniform integer in [0, n) for arbitrarily large ``n``."""
    if n <= 0:
        raise ValueError("n must be positive")
    if n < 2**62:
        return int(rng.integers(n))
    bits = n.bit_length()
    words = (bits + 31) // 32
    while True:
        chunk = rng.integers(0, 2**32, size=words, dtype=np.uint64)
        value = 0
        for w in chunk:
            value = (value << 32) | int(w)
        value >>= words * 32 - bits
        if value < n:
            return value


def sample_uniform(lang: LanguageSpec, length: int, rng: np.random.Generator) -> CanonicalString:
    total = count_strings(lang, length)
    if total == 0:
        raise EmptySlice(f"{lang.name} has no strings of length {length}")
    return unrank(lang, length, randbelow(rng, total))


def sample_by_length_range(
    lang: LanguageSpec, lo: int, hi: int, n: int, rng: np.random.Generator
) -> list[CanonicalString]:
    if not 1 <= lo <= hi:
        raise ValueError(f"need 1 <= lo <= hi, got lo={lo} hi={hi}")
    out = []
    for _ in range(n):
        length = int(rng.integers(lo, hi + 1))
        out.append(sample_uniform(lang, length, rng))
    return out


def corpus_records(lang: LanguageSpec, strings: Iterable[CanonicalString]) -> list[dict]:
    """JSON-lines payload for generated strings."""
    return [{"lang": lang.name, "symbols": list(s.symbols), "length": s.lang_length} for s in strings]
