"""Stochastic And-Or grammar over sub-activity terminals.

The grammar is a stochastic context-free grammar restricted to two rule
kinds: an And production expands a head into a fixed ordered sequence of
children, an Or production chooses one child according to branch
probabilities.  Terminals are sub-activity labels; the root is an event
symbol.  Grammars are immutable after construction and safe to share
between threads; all sampling takes an explicit seed.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    DerivationDepthError,
    GrammarValidationError,
    LanguageTooLargeError,
    MalformedDocumentError,
    ProbabilityNormalizationError,
    UndefinedSymbolError,
)

TERMINAL = "terminal"
NONTERMINAL = "nonterminal"

AND = "And"
OR = "Or"

#: Corpus markers reserved for the induction graph; never valid inside grammars.
RESERVED_MARKERS = ("begin", "end")

#: Slack allowed when checking that Or-branch probabilities sum to one.
PROB_ATOL = 1e-9
#: Looser slack applied to probabilities read back from text documents.
DOCUMENT_PROB_ATOL = 1e-6

#: Default cap on derivation depth for sampling and enumeration.
MAX_DERIVATION_DEPTH = 64

NEG_INF = float("-inf")

Sentence = tuple  # tuple[str, ...]


@dataclass(frozen=True)
class Symbol:
    """A named token of one alphabet; terminal or nonterminal."""

    name: str
    kind: str = TERMINAL
    alphabet: str = "subactivity"

    def __post_init__(self):
        if self.kind not in (TERMINAL, NONTERMINAL):
            raise GrammarValidationError(f"unknown symbol kind {self.kind!r}")
        if not self.name:
            raise GrammarValidationError("empty symbol name")


@dataclass(frozen=True)
class Production:
    """One rule: ``head -> children`` (And) or ``head -> c1 | c2 | ...`` (Or).

    ``probabilities`` is empty for And rules and aligned with ``children``
    for Or rules; each branch probability lies in (0, 1] and the branch
    probabilities sum to one within :data:`PROB_ATOL`.
    """

    head: str
    kind: str
    children: tuple[str, ...]
    probabilities: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(self.children))
        object.__setattr__(self, "probabilities", tuple(float(p) for p in self.probabilities))
        if self.kind not in (AND, OR):
            raise GrammarValidationError(f"production kind must be And or Or, got {self.kind!r}")
        if not self.children:
            raise GrammarValidationError(f"production {self.head!r} has no children")
        if self.kind == AND:
            if self.probabilities:
                raise GrammarValidationError(f"And production {self.head!r} carries probabilities")
        else:
            if len(self.probabilities) != len(self.children):
                raise ProbabilityNormalizationError(
                    f"Or production {self.head!r}: {len(self.children)} branches, "
                    f"{len(self.probabilities)} probabilities"
                )
            for p in self.probabilities:
                if not (0.0 < p <= 1.0):
                    raise ProbabilityNormalizationError(
                        f"Or production {self.head!r}: branch probability {p} outside (0, 1]"
                    )
            total = math.fsum(self.probabilities)
            if abs(total - 1.0) > PROB_ATOL:
                raise ProbabilityNormalizationError(
                    f"Or production {self.head!r}: branch probabilities sum to {total!r}"
                )

    @classmethod
    def sequence(cls, head: str, children: Sequence[str]) -> "Production":
        return cls(head, AND, tuple(children))

    @classmethod
    def choice(cls, head: str, branches: Sequence[tuple[str, float]]) -> "Production":
        children = tuple(c for c, _ in branches)
        probs = tuple(p for _, p in branches)
        return cls(head, OR, children, probs)


@dataclass(frozen=True)
class ParseTree:
    """A derivation: one child fixed per Or node, leaves are terminals."""

    node: str
    children: tuple["ParseTree", ...] = ()
    branch: int | None = None

    def frontier(self) -> tuple[str, ...]:
        """Terminal leaves read left to right (the derived sentence)."""
        if not self.children:
            return (self.node,)
        out: list[str] = []
        for child in self.children:
            out.extend(child.frontier())
        return tuple(out)

    def or_choices(self) -> list[tuple[str, int]]:
        """(head, branch) pairs of every Or decision, in preorder."""
        out: list[tuple[str, int]] = []
        if self.branch is not None:
            out.append((self.node, self.branch))
        for child in self.children:
            out.extend(child.or_choices())
        return out


@dataclass(frozen=True)
class Grammar:
    """An immutable event grammar: root symbol, productions, terminal set."""

    root: str
    productions: Mapping[str, Production]
    terminals: frozenset[str]
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "productions", dict(self.productions))
        object.__setattr__(self, "terminals", frozenset(self.terminals))
        self._validate()

    def _validate(self):
        for marker in RESERVED_MARKERS:
            if marker in self.terminals or marker in self.productions:
                raise GrammarValidationError(f"reserved marker {marker!r} used as a symbol")
        overlap = self.terminals & set(self.productions)
        if overlap:
            raise GrammarValidationError(f"symbols both terminal and nonterminal: {sorted(overlap)}")
        if self.root not in self.productions:
            raise UndefinedSymbolError(f"root {self.root!r} has no production")
        for head, prod in self.productions.items():
            if prod.head != head:
                raise GrammarValidationError(f"production keyed {head!r} has head {prod.head!r}")
            for child in prod.children:
                if child in RESERVED_MARKERS:
                    raise GrammarValidationError(
                        f"reserved marker {child!r} inside production {head!r}"
                    )
                if child not in self.terminals and child not in self.productions:
                    raise UndefinedSymbolError(
                        f"production {head!r} references undefined symbol {child!r}"
                    )
        self._check_productive()

    def _check_productive(self):
        """Least fixpoint: every reachable nonterminal must derive a finite string."""
        productive: set[str] = set(self.terminals)
        changed = True
        while changed:
            changed = False
            for head, prod in self.productions.items():
                if head in productive:
                    continue
                if prod.kind == AND:
                    ok = all(c in productive for c in prod.children)
                else:
                    ok = any(c in productive for c in prod.children)
                if ok:
                    productive.add(head)
                    changed = True
        missing = [h for h in self._reachable() if h not in productive and h not in self.terminals]
        if missing:
            raise GrammarValidationError(
                f"nonterminals cannot derive a finite terminal string: {sorted(missing)}"
            )

    def _reachable(self) -> set[str]:
        seen = {self.root}
        stack = [self.root]
        while stack:
            head = stack.pop()
            prod = self.productions.get(head)
            if prod is None:
                continue
            for child in prod.children:
                if child not in seen:
                    seen.add(child)
                    if child in self.productions:
                        stack.append(child)
        return seen

    def is_terminal(self, name: str) -> bool:
        return name in self.terminals

    def is_recursive(self) -> bool:
        """True when some nonterminal can reach itself through productions."""
        key = "is_recursive"
        if key not in self._cache:
            color: dict[str, int] = {}

            def visit(head: str) -> bool:
                color[head] = 1
                prod = self.productions.get(head)
                if prod is not None:
                    for child in prod.children:
                        if child in self.terminals:
                            continue
                        state = color.get(child, 0)
                        if state == 1:
                            return True
                        if state == 0 and visit(child):
                            return True
                color[head] = 2
                return False

            self._cache[key] = any(
                visit(h) for h in self.productions if color.get(h, 0) == 0
            )
        return self._cache[key]

    def symbols(self) -> dict[str, Symbol]:
        """Typed symbol records: terminals are sub-activities, heads are event nodes."""
        table = {t: Symbol(t, TERMINAL, "subactivity") for t in sorted(self.terminals)}
        table.update({h: Symbol(h, NONTERMINAL, "event") for h in self.productions})
        return table


def _as_sentence(tokens: Iterable) -> tuple[str, ...]:
    return tuple(t.name if isinstance(t, Symbol) else str(t) for t in tokens)


# ---------------------------------------------------------------------------
# Sampling


def sample_sentence(grammar: Grammar, rng_seed: int, max_depth: int = MAX_DERIVATION_DEPTH):
    """Draw one terminal sentence from the grammar's distribution.

    Deterministic for a fixed seed.  Raises :class:`DerivationDepthError`
    when expansion exceeds ``max_depth`` (guards runaway recursion).
    """
    rng = np.random.default_rng(rng_seed)
    return sample_sentence_with_rng(grammar, rng, max_depth=max_depth)


def sample_sentence_with_rng(grammar: Grammar, rng, max_depth: int = MAX_DERIVATION_DEPTH):
    out: list[str] = []
    _expand(grammar, grammar.root, rng, out, 0, max_depth)
    return tuple(out)


def _expand(grammar, symbol, rng, out, depth, max_depth):
    if depth > max_depth:
        raise DerivationDepthError(f"derivation exceeded depth {max_depth}")
    if grammar.is_terminal(symbol):
        out.append(symbol)
        return
    prod = grammar.productions[symbol]
    if prod.kind == AND:
        for child in prod.children:
            _expand(grammar, child, rng, out, depth + 1, max_depth)
    else:
        child = prod.children[_pick_branch(prod.probabilities, rng)]
        _expand(grammar, child, rng, out, depth + 1, max_depth)


def _pick_branch(probabilities, rng) -> int:
    x = rng.random()
    acc = 0.0
    for i, p in enumerate(probabilities):
        acc += p
        if x < acc:
            return i
    return len(probabilities) - 1


# ---------------------------------------------------------------------------
# Viterbi and inside probabilities (span dynamic programs)


def viterbi_likelihood(grammar: Grammar, sentence) -> tuple[float, ParseTree | None]:
    """Probability of the single best parse tree, with the tree.

    Returns ``(0.0, None)`` for underivable sentences.  Ties between equal
    probability trees resolve toward the lower branch index at the leftmost
    differing Or choice.
    """
    logp, tree = viterbi_parse(grammar, sentence)
    return (math.exp(logp) if logp > NEG_INF else 0.0), tree


def viterbi_log_likelihood(grammar: Grammar, sentence) -> float:
    """Log of the best-parse probability; cached on the grammar."""
    sentence = _as_sentence(sentence)
    cache = grammar._cache.setdefault("viterbi_log", {})
    if sentence not in cache:
        cache[sentence] = viterbi_parse(grammar, sentence)[0]
    return cache[sentence]


def viterbi_parse(grammar: Grammar, sentence) -> tuple[float, ParseTree | None]:
    sentence = _as_sentence(sentence)
    if not sentence:
        raise GrammarValidationError("sentence must be non-empty")
    dp = _SpanDP(grammar, sentence)
    logp, tree = dp.best(grammar.root, 0, len(sentence))
    return logp, tree


def sentence_likelihood(grammar: Grammar, sentence) -> float:
    """Total probability of the sentence: sum over all parse trees.

    Exact for non-recursive grammars; recursive grammars raise
    :class:`DerivationDepthError` (the sum has no finite expansion here).
    """
    sentence = _as_sentence(sentence)
    if not sentence:
        raise GrammarValidationError("sentence must be non-empty")
    cache = grammar._cache.setdefault("inside", {})
    if sentence not in cache:
        if grammar.is_recursive():
            raise DerivationDepthError(
                "sentence_likelihood requires a non-recursive grammar"
            )
        dp = _SpanDP(grammar, sentence)
        cache[sentence] = dp.inside(grammar.root, 0, len(sentence))
    return cache[sentence]


class _SpanDP:
    """Memoized span programs shared by Viterbi max and inside sum."""

    def __init__(self, grammar: Grammar, sentence: tuple[str, ...]):
        self.g = grammar
        self.s = sentence
        self.best_memo: dict = {}
        self.seq_memo: dict = {}
        self.inside_memo: dict = {}
        self.inside_seq_memo: dict = {}
        self.active: set = set()
        self.prunes = 0

    # -- Viterbi -----------------------------------------------------------
    def best(self, sym, i, j):
        if sym in self.g.terminals:
            if j - i == 1 and self.s[i] == sym:
                return 0.0, ParseTree(sym)
            return NEG_INF, None
        key = (sym, i, j)
        if key in self.best_memo:
            return self.best_memo[key]
        if key in self.active:
            # A parse revisiting the same (symbol, span) cannot beat its
            # acyclic counterpart: prune the re-entry.
            self.prunes += 1
            return NEG_INF, None
        self.active.add(key)
        prunes_before = self.prunes
        prod = self.g.productions[sym]
        if prod.kind == AND:
            logp, kids = self.best_seq(sym, prod.children, 0, i, j)
            result = (logp, ParseTree(sym, kids) if kids is not None else None)
        else:
            best_logp, best_tree = NEG_INF, None
            for idx, (child, rho) in enumerate(zip(prod.children, prod.probabilities)):
                sub_logp, sub_tree = self.best(child, i, j)
                cand = math.log(rho) + sub_logp if sub_logp > NEG_INF else NEG_INF
                if cand > best_logp:
                    best_logp = cand
                    best_tree = ParseTree(sym, (sub_tree,), branch=idx)
            result = (best_logp, best_tree)
        self.active.discard(key)
        if self.prunes == prunes_before:
            self.best_memo[key] = result
        return result

    def best_seq(self, head, body, k, i, j):
        remaining = len(body) - k
        if remaining == 0:
            return (0.0, ()) if i == j else (NEG_INF, None)
        if j - i < remaining:
            return NEG_INF, None
        key = (head, k, i, j)
        if key in self.seq_memo:
            return self.seq_memo[key]
        prunes_before = self.prunes
        best_logp, best_kids = NEG_INF, None
        last = j - (remaining - 1)
        for m in range(i + 1, last + 1):
            head_logp, head_tree = self.best(body[k], i, m)
            if head_logp == NEG_INF:
                continue
            rest_logp, rest_kids = self.best_seq(head, body, k + 1, m, j)
            if rest_logp == NEG_INF:
                continue
            cand = head_logp + rest_logp
            if cand > best_logp:
                best_logp = cand
                best_kids = (head_tree,) + rest_kids
        result = (best_logp, best_kids)
        if self.prunes == prunes_before:
            self.seq_memo[key] = result
        return result

    # -- inside sum ---------------------------------------------------------
    def inside(self, sym, i, j):
        if sym in self.g.terminals:
            return 1.0 if j - i == 1 and self.s[i] == sym else 0.0
        key = (sym, i, j)
        if key in self.inside_memo:
            return self.inside_memo[key]
        prod = self.g.productions[sym]
        if prod.kind == AND:
            total = self.inside_seq(sym, prod.children, 0, i, j)
        else:
            total = math.fsum(
                rho * self.inside(child, i, j)
                for child, rho in zip(prod.children, prod.probabilities)
            )
        self.inside_memo[key] = total
        return total

    def inside_seq(self, head, body, k, i, j):
        remaining = len(body) - k
        if remaining == 0:
            return 1.0 if i == j else 0.0
        if j - i < remaining:
            return 0.0
        key = (head, k, i, j)
        if key in self.inside_seq_memo:
            return self.inside_seq_memo[key]
        total = 0.0
        last = j - (remaining - 1)
        for m in range(i + 1, last + 1):
            p_head = self.inside(body[k], i, m)
            if p_head == 0.0:
                continue
            total += p_head * self.inside_seq(head, body, k + 1, m, j)
        self.inside_seq_memo[key] = total
        return total


# ---------------------------------------------------------------------------
# Language enumeration (leftmost derivations)


def iter_sentences(
    grammar: Grammar,
    prefix: Sequence[str] = (),
    epsilon: float = 0.0,
    max_steps: int = 2_000_000,
) -> Iterator[tuple[tuple[str, ...], float, bool]]:
    """Enumerate leftmost derivations whose sentences extend ``prefix``.

    Yields ``(sentence, probability, truncated)`` triples, one per
    derivation (ambiguous sentences appear once per tree), so summing the
    probabilities of one sentence gives its total likelihood.  ``epsilon``
    prunes derivation mass below the cutoff; the cutoff only applies to
    recursive grammars, keeping enumeration exact on finite languages.  A
    trailing ``((), 0.0, True)`` sentinel is emitted when pruning or the
    step guard fired.
    """
    prefix = _as_sentence(prefix)
    prune = epsilon if grammar.is_recursive() else 0.0
    truncated = False
    steps = 0
    # Stack entries carry the sentence emitted so far.
    stack: list[tuple[tuple[str, ...], tuple[str, ...], float]] = [((grammar.root,), (), 1.0)]
    k = len(prefix)
    while stack:
        steps += 1
        if steps > max_steps:
            truncated = True
            break
        pending, emitted, p = stack.pop()
        if not pending:
            if len(emitted) >= k:
                yield emitted, p, truncated
            continue
        head, rest = pending[0], pending[1:]
        if head in grammar.terminals:
            pos = len(emitted)
            if pos < k and prefix[pos] != head:
                continue
            stack.append((rest, emitted + (head,), p))
            continue
        prod = grammar.productions[head]
        if prod.kind == AND:
            stack.append((prod.children + rest, emitted, p))
        else:
            for child, rho in zip(prod.children, prod.probabilities):
                p2 = p * rho
                if prune and p2 < prune:
                    truncated = True
                    continue
                stack.append(((child,) + rest, emitted, p2))
    if truncated:
        yield (), 0.0, True


def enumerate_language(grammar: Grammar, max_sentences: int = 10_000) -> dict[tuple[str, ...], float]:
    """Map each sentence of a non-recursive grammar to its total probability."""
    if grammar.is_recursive():
        raise DerivationDepthError("enumerate_language requires a non-recursive grammar")
    key = ("language", max_sentences)
    if key in grammar._cache:
        return grammar._cache[key]
    language: dict[tuple[str, ...], float] = {}
    for sentence, p, _ in iter_sentences(grammar):
        if not sentence and p == 0.0:
            continue
        language[sentence] = language.get(sentence, 0.0) + p
        if len(language) > max_sentences:
            raise LanguageTooLargeError(f"language exceeds {max_sentences} sentences")
    grammar._cache[key] = language
    return language


# ---------------------------------------------------------------------------
# Serialization


def serialize(grammar: Grammar) -> str:
    """Render the grammar as a self-describing JSON document.

    Probabilities are stored as decimal strings with 17 significant digits
    so the round trip is bit-exact.
    """
    productions = []
    for head in grammar.productions:
        prod = grammar.productions[head]
        record = {"head": head, "kind": prod.kind, "children": list(prod.children)}
        if prod.kind == OR:
            record["probabilities"] = ["%.17g" % p for p in prod.probabilities]
        productions.append(record)
    doc = {
        "root": grammar.root,
        "terminals": sorted(grammar.terminals),
        "productions": productions,
    }
    return json.dumps(doc, indent=2) + "\n"


def deserialize(text: str) -> Grammar:
    """Parse a grammar document, validating every grammar invariant.

    Raises :class:`MalformedDocumentError` for schema problems,
    :class:`ProbabilityNormalizationError` for bad branch probabilities
    (sum off by more than 1e-6) and :class:`UndefinedSymbolError` for
    dangling symbol references.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocumentError(f"grammar document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise MalformedDocumentError("grammar document must be a JSON object")
    for field_name in ("root", "terminals", "productions"):
        if field_name not in doc:
            raise MalformedDocumentError(f"grammar document missing field {field_name!r}")
    terminals = doc["terminals"]
    if not isinstance(terminals, list) or not all(isinstance(t, str) for t in terminals):
        raise MalformedDocumentError("'terminals' must be a list of strings")
    productions: dict[str, Production] = {}
    for record in doc["productions"]:
        if not isinstance(record, dict):
            raise MalformedDocumentError("each production must be an object")
        try:
            head = record["head"]
            kind = record["kind"]
            children = record["children"]
        except KeyError as exc:
            raise MalformedDocumentError(f"production missing field {exc}") from exc
        if head in productions:
            raise MalformedDocumentError(f"duplicate production for head {head!r}")
        if kind == OR:
            raw = record.get("probabilities")
            if raw is None or len(raw) != len(children):
                raise MalformedDocumentError(
                    f"Or production {head!r} needs one probability per child"
                )
            try:
                probs = tuple(float(p) for p in raw)
            except (TypeError, ValueError) as exc:
                raise MalformedDocumentError(
                    f"Or production {head!r} has a non-numeric probability"
                ) from exc
            total = math.fsum(probs)
            if abs(total - 1.0) > DOCUMENT_PROB_ATOL:
                raise ProbabilityNormalizationError(
                    f"Or production {head!r}: probabilities sum to {total!r}"
                )
            productions[head] = Production(head, OR, tuple(children), probs)
        elif kind == AND:
            productions[head] = Production(head, AND, tuple(children))
        else:
            raise MalformedDocumentError(f"unknown production kind {kind!r}")
    return Grammar(root=doc["root"], productions=productions, terminals=frozenset(terminals))


def load_grammar(path) -> Grammar:
    with open(path, "r", encoding="utf-8") as fh:
        return deserialize(fh.read())


def save_grammar(grammar: Grammar, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(grammar))
