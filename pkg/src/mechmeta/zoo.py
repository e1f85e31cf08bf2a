"""Pattern-grammar zoo graded by description length.

Grammars are expression trees over five node types.  Their description
length is a plain sum of per-node costs:

    every node           log2(5)              which of the five node types
    literal              log2(alphabet size)  which symbol
    bounded repetition   2 * log2(bound + 1)  the bound

All repetitions produce at least one copy of their child, so every string
has at least one token.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import BinUnfillable

NODE_TYPES = ("lit", "cat", "alt", "rep", "star")
TYPE_BITS = math.log2(len(NODE_TYPES))
MAX_ALPHABET = 7
MAX_BOUND = 8
TRUNCATE_AT = 50
FIRST_SYMBOL = 3  # canonical id of symbol index 0


@dataclass(frozen=True)
class Lit:
    sym: int


@dataclass(frozen=True)
class Cat:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Alt:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Rep:
    child: "Node"
    bound: int


@dataclass(frozen=True)
class Star:
    child: "Node"


Node = Union[Lit, Cat, Alt, Rep, Star]


@dataclass(frozen=True)
class PatternGrammar:
    rules: Node
    alphabet_size: int

    def __post_init__(self):
        if not 1 <= self.alphabet_size <= MAX_ALPHABET:
            raise ValueError(f"alphabet size must be in 1..{MAX_ALPHABET}")
        for node in _walk(self.rules):
            if isinstance(node, Lit) and not 0 <= node.sym < self.alphabet_size:
                raise ValueError(f"literal {node.sym} outside alphabet of size {self.alphabet_size}")
            if isinstance(node, Rep) and node.bound < 1:
                raise ValueError("repetition bound must be >= 1")

    @cached_property
    def mdl_bits(self) -> float:
        return mdl_score(self)

    @property
    def alphabet(self) -> tuple[int, ...]:
        return tuple(range(FIRST_SYMBOL, FIRST_SYMBOL + self.alphabet_size))

    def to_sexpr(self) -> str:
        return to_sexpr(self.rules)


def _walk(node: Node):
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        if isinstance(n, (Cat, Alt)):
            stack.extend((n.right, n.left))
        elif isinstance(n, (Rep, Star)):
            stack.append(n.child)


def size(node: Node) -> int:
    return sum(1 for _ in _walk(node))


def mdl_score(g: PatternGrammar) -> float:
    lit_bits = math.log2(g.alphabet_size)
    # accumulate in a fixed traversal order so the float sum is reproducible
    total = 0.0
    for node in _walk(g.rules):
        total += TYPE_BITS
        if isinstance(node, Lit):
            total += lit_bits
        elif isinstance(node, Rep):
            total += 2.0 * math.log2(node.bound + 1)
    return total


# ---------------------------------------------------------------------------
# S-expressions


def to_sexpr(node: Node) -> str:
    if isinstance(node, Lit):
        return f"(lit {node.sym})"
    if isinstance(node, Cat):
        return f"(cat {to_sexpr(node.left)} {to_sexpr(node.right)})"
    if isinstance(node, Alt):
        return f"(alt {to_sexpr(node.left)} {to_sexpr(node.right)})"
    if isinstance(node, Rep):
        return f"(rep {node.bound} {to_sexpr(node.child)})"
    return f"(star {to_sexpr(node.child)})"


_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def parse_sexpr(text: str) -> Node:
    tokens = _TOKEN.findall(text)
    pos = 0

    def expect(tok):
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] != tok:
            raise ValueError(f"expected {tok!r} at token {pos} in {text!r}")
        pos += 1

    def parse():
        nonlocal pos
        expect("(")
        head = tokens[pos]
        pos += 1
        if head == "lit":
            node = Lit(int(tokens[pos]))
            pos += 1
        elif head in ("cat", "alt"):
            left = parse()
            right = parse()
            node = Cat(left, right) if head == "cat" else Alt(left, right)
        elif head == "rep":
            bound = int(tokens[pos])
            pos += 1
            node = Rep(parse(), bound)
        elif head == "star":
            node = Star(parse())
        else:
            raise ValueError(f"unknown node type {head!r}")
        expect(")")
        return node

    node = parse()
    if pos != len(tokens):
        raise ValueError(f"trailing tokens in {text!r}")
    return node


# ---------------------------------------------------------------------------
# Random grammars and the zoo


def random_tree(n_nodes: int, alphabet_size: int, rng: np.random.Generator) -> Node:
    if n_nodes <= 1:
        return Lit(int(rng.integers(alphabet_size)))
    if n_nodes == 2:
        kind = ("rep", "star")[int(rng.integers(2))]
    else:
        kind = NODE_TYPES[1 + int(rng.integers(4))]
    if kind in ("cat", "alt"):
        k = int(rng.integers(1, n_nodes - 1))
        left = random_tree(k, alphabet_size, rng)
        right = random_tree(n_nodes - 1 - k, alphabet_size, rng)
        return Cat(left, right) if kind == "cat" else Alt(left, right)
    child = random_tree(n_nodes - 1, alphabet_size, rng)
    if kind == "rep":
        return Rep(child, int(rng.integers(1, MAX_BOUND + 1)))
    return Star(child)


@dataclass(frozen=True)
class Zoo:
    grammars: tuple[PatternGrammar, ...]
    seed: int | None = None

    def __len__(self):
        return len(self.grammars)

    def __getitem__(self, i):
        return self.grammars[i]

    @cached_property
    def mdls(self) -> np.ndarray:
        out = np.array([g.mdl_bits for g in self.grammars])
        out.flags.writeable = False
        return out

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "grammars": [
                {"rules": g.to_sexpr(), "alphabet": g.alphabet_size, "mdl": g.mdl_bits} for g in self.grammars
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "Zoo":
        grammars = []
        for item in data["grammars"]:
            g = PatternGrammar(parse_sexpr(item["rules"]), int(item["alphabet"]))
            if "mdl" in item and not math.isclose(g.mdl_bits, item["mdl"], rel_tol=0, abs_tol=1e-9):
                raise ValueError(f"stored mdl {item['mdl']} disagrees with recomputed {g.mdl_bits}")
            grammars.append(g)
        return cls(tuple(grammars), data.get("seed"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def load(cls, path) -> "Zoo":
        return cls.from_json(json.loads(Path(path).read_text()))


def bin_edges(lo: float, hi: float, bins: int = 10) -> np.ndarray:
    return np.linspace(lo, hi, bins + 1)


def bin_index(mdl: float, lo: float, hi: float, bins: int = 10) -> int | None:
    if mdl < lo or mdl > hi:
        return None
    return min(int((mdl - lo) / (hi - lo) * bins), bins - 1)


def build_zoo(
    n: int = 5000,
    mdl_lo: float = 0.0,
    mdl_hi: float = 100.0,
    rng: np.random.Generator | int | None = None,
    *,
    bins: int = 10,
    max_attempts: int | None = None,
    max_nodes: int = 40,
) -> Zoo:
    """Rejection-sample random grammars until every MDL bin holds its quota.

    Quotas are ``n // bins`` with the remainder spread over the lowest bins.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = np.random.default_rng(rng)
    quota = [n // bins + (1 if i < n % bins else 0) for i in range(bins)]
    filled: list[list[PatternGrammar]] = [[] for _ in range(bins)]
    budget = max_attempts if max_attempts is not None else 1000 * n + 10_000
    for _ in range(budget):
        if all(len(f) >= q for f, q in zip(filled, quota)):
            break
        alphabet = int(rng.integers(1, MAX_ALPHABET + 1))
        nodes = int(rng.integers(1, max_nodes + 1))
        g = PatternGrammar(random_tree(nodes, alphabet, rng), alphabet)
        b = bin_index(g.mdl_bits, mdl_lo, mdl_hi, bins)
        if b is not None and len(filled[b]) < quota[b]:
            filled[b].append(g)
    short = [i for i, (f, q) in enumerate(zip(filled, quota)) if len(f) < q]
    if short:
        raise BinUnfillable(f"bins {short} could not be filled within {budget} attempts")
    grammars = tuple(g for f in filled for g in f)
    return Zoo(grammars, None if seed is None else int(seed))


# ---------------------------------------------------------------------------
# Temperature prior


@dataclass(frozen=True)
class SamplingPrior:
    temperature: float

    def __post_init__(self):
        if self.temperature == 0 or not math.isfinite(self.temperature):
            raise ValueError("temperature must be finite and nonzero")


def prior_weights(mdls: Sequence[float], temperature: float) -> np.ndarray:
    """Normalised softmax(mdl / T)."""
    if temperature == 0:
        raise ValueError("temperature must be nonzero")
    logits = np.asarray(mdls, dtype=np.float64) / temperature
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def expected_mdl(mdls: Sequence[float], temperature: float) -> float:
    w = prior_weights(mdls, temperature)
    return float(np.dot(w, np.asarray(mdls, dtype=np.float64)))


def sample_grammar_index(zoo: Zoo, prior: SamplingPrior, rng: np.random.Generator) -> int:
    w = prior_weights(zoo.mdls, prior.temperature)
    return int(rng.choice(len(w), p=w))


def sample_grammar(zoo: Zoo, prior: SamplingPrior, rng: np.random.Generator) -> PatternGrammar:
    if len(zoo) == 0:
        raise ValueError("empty zoo")
    return zoo[sample_grammar_index(zoo, prior, rng)]


# ---------------------------------------------------------------------------
# Strings


def sample_string(g: PatternGrammar, rng: np.random.Generator, truncate_at: int = TRUNCATE_AT) -> tuple[int, ...]:
    """Top-down random expansion.

    Unions pick a branch uniformly, bounded repetitions pick a count in
    1..bound, unbounded ones keep going with probability 1/2.  Once the
    output reaches ``truncate_at`` tokens every repetition takes its single
    mandatory copy, so the result is always in the language.
    """
    out: list[int] = []

    def expand(node):
        if isinstance(node, Lit):
            out.append(FIRST_SYMBOL + node.sym)
        elif isinstance(node, Cat):
            expand(node.left)
            expand(node.right)
        elif isinstance(node, Alt):
            expand(node.left if rng.random() < 0.5 else node.right)
        elif isinstance(node, Rep):
            reps = int(rng.integers(1, node.bound + 1))
            for i in range(reps):
                if i > 0 and len(out) >= truncate_at:
                    break
                expand(node.child)
        else:
            expand(node.child)
            while len(out) < truncate_at and rng.random() < 0.5:
                expand(node.child)

    expand(g.rules)
    return tuple(out)


def to_regex(node: Node) -> str:
    if isinstance(node, Lit):
        return chr(ord("a") + node.sym)
    if isinstance(node, Cat):
        return to_regex(node.left) + to_regex(node.right)
    if isinstance(node, Alt):
        return f"(?:{to_regex(node.left)}|{to_regex(node.right)})"
    if isinstance(node, Rep):
        return f"(?:{to_regex(node.child)}){{1,{node.bound}}}"
    return f"(?:{to_regex(node.child)})+"


def recognizes(g: PatternGrammar, symbols: Sequence[int]) -> bool:
    """Membership test via a compiled regular expression."""
    try:
        text = "".join(chr(ord("a") + s - FIRST_SYMBOL) for s in symbols)
    except ValueError:
        return False
    if any(not 0 <= s - FIRST_SYMBOL < g.alphabet_size for s in symbols):
        return False
    return re.fullmatch(to_regex(g.rules), text) is not None


def zoo_stats(zoo: Zoo, lo: float = 0.0, hi: float = 100.0, bins: int = 10) -> dict:
    mdls = zoo.mdls
    counts, edges = np.histogram(mdls, bins=bin_edges(lo, hi, bins))
    return {
        "n": len(zoo),
        "seed": zoo.seed,
        "mdl_min": float(mdls.min()),
        "mdl_max": float(mdls.max()),
        "mdl_mean": float(mdls.mean()),
        "histogram": [{"lo": float(a), "hi": float(b), "count": int(c)} for a, b, c in zip(edges[:-1], edges[1:], counts)],
    }
