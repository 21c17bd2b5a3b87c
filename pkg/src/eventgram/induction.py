"""Grammar induction from sub-activity corpora.

The corpus is loaded onto a graph whose vertices are sub-activities plus
the two reserved markers ``begin`` and ``end``; each sentence threads one
path through the graph.  Induction alternates two moves until neither
applies:

* significant patterns (cohesive subpaths whose traversal ratio stays
  high inside and drops significantly at both boundaries) become And
  nodes and replace their occurrences;
* equivalence classes (symbols interchangeable inside a shared context
  window) become Or nodes and replace their members within that context.

Residual path forms then become the alternatives of the event root.
Branch probabilities are estimated separately from Viterbi parse counts.
"""
from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

from scipy.stats import binom

from .errors import GrammarValidationError, MalformedDocumentError, UnderivableSentenceError
from .grammar import (
    AND,
    OR,
    RESERVED_MARKERS,
    Grammar,
    Production,
    viterbi_parse,
    _as_sentence,
)

BEGIN, END = RESERVED_MARKERS


@dataclass(frozen=True)
class Corpus:
    """Sentences of one event; markers are added internally, never stored."""

    event_label: str
    sentences: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "sentences", tuple(_as_sentence(s) for s in self.sentences)
        )
        if not self.sentences:
            raise GrammarValidationError("corpus has no sentences")
        for sentence in self.sentences:
            if not sentence:
                raise GrammarValidationError("corpus contains an empty sentence")
            for token in sentence:
                if token in RESERVED_MARKERS:
                    raise GrammarValidationError(
                        f"reserved marker {token!r} inside a corpus sentence"
                    )

    def alphabet(self) -> frozenset[str]:
        return frozenset(t for s in self.sentences for t in s)

    @classmethod
    def from_file(cls, path, event_label: str) -> "Corpus":
        sentences = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                sentences.append(tuple(line.split()))
        if not sentences:
            raise MalformedDocumentError(f"corpus file {path} has no sentences")
        return cls(event_label, tuple(sentences))

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for sentence in self.sentences:
                fh.write(" ".join(sentence) + "\n")


@dataclass(frozen=True)
class InductionConfig:
    """Thresholds of the pattern/class criteria.

    ``eta`` is the minimum in-pattern traversal ratio, ``alpha`` the
    significance level of the boundary-drop test, ``context_size`` the
    window length for equivalence classes and ``coverage`` the minimum
    pairwise context overlap for class members.
    """

    eta: float = 0.9
    alpha: float = 0.1
    context_size: int = 4
    coverage: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.eta <= 1.0):
            raise GrammarValidationError(f"eta must be in (0, 1], got {self.eta}")
        if not (0.0 < self.alpha < 1.0):
            raise GrammarValidationError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.context_size < 3:
            raise GrammarValidationError("context_size must be at least 3")
        if not (0.0 < self.coverage <= 1.0):
            raise GrammarValidationError(f"coverage must be in (0, 1], got {self.coverage}")


@dataclass(frozen=True)
class SignificantPattern:
    tokens: tuple[str, ...]
    traversals: int = 0


@dataclass(frozen=True)
class EquivalenceClass:
    members: frozenset[str]
    window: tuple[str | None, ...]

    @property
    def slot(self) -> int:
        return self.window.index(None)


@dataclass
class AdiosGraph:
    """Corpus paths plus the productions created by rewiring so far."""

    paths: list[list[str]]
    productions: dict[str, Production] = field(default_factory=dict)

    @classmethod
    def from_corpus(cls, corpus: Corpus) -> "AdiosGraph":
        return cls(paths=[[BEGIN, *s, END] for s in corpus.sentences])

    def vertices(self) -> frozenset[str]:
        return frozenset(t for p in self.paths for t in p)

    def copy(self) -> "AdiosGraph":
        return AdiosGraph([list(p) for p in self.paths], dict(self.productions))

    def expand_token(self, token: str) -> tuple[str, ...]:
        """Flatten one token back to the original terminals."""
        prod = self.productions.get(token)
        if prod is None:
            return (token,)
        if prod.kind == AND:
            out: list[str] = []
            for child in prod.children:
                out.extend(self.expand_token(child))
            return tuple(out)
        raise GrammarValidationError(
            f"cannot uniquely expand Or node {token!r}; expand paths instead"
        )

    def sentences(self) -> list[tuple[str, ...]]:
        """Current residual sentence forms (markers stripped, nodes unexpanded)."""
        return [tuple(p[1:-1]) for p in self.paths]

    def total_tokens(self) -> int:
        return sum(len(p) - 2 for p in self.paths)

    def fresh_name(self, stem: str) -> str:
        taken = self.vertices() | set(self.productions)
        i = 1
        while f"{stem}{i}" in taken:
            i += 1
        return f"{stem}{i}"


def expand_paths(graph: AdiosGraph, class_choices: dict[str, str] | None = None):
    """Expand every path back to terminals; Or nodes need explicit choices.

    Used by the corpus-reconstruction invariant: with the choices recorded
    at rewiring time unavailable, tests expand patterns only.
    """
    out = []
    for path in graph.paths:
        tokens: list[str] = []
        for tok in path[1:-1]:
            prod = graph.productions.get(tok)
            if prod is not None and prod.kind == OR:
                choice = (class_choices or {}).get(tok)
                if choice is None:
                    raise GrammarValidationError(f"no choice recorded for Or node {tok!r}")
                tokens.extend(graph.expand_token(choice))
            else:
                tokens.extend(graph.expand_token(tok))
        out.append(tuple(tokens))
    return out


# ---------------------------------------------------------------------------
# Flow ratios and the significance criterion


def _subpath_counts(paths: Sequence[Sequence[str]], max_len: int) -> Counter:
    counts: Counter = Counter()
    for path in paths:
        n = len(path)
        for i in range(n):
            upper = min(max_len, n - i)
            for length in range(1, upper + 1):
                counts[tuple(path[i : i + length])] += 1
    return counts


def path_ratios(graph: AdiosGraph, search_path: Sequence[str]):
    """Right-moving and left-going fan-through/fan-in ratios along a subpath.

    ``p_right[i]`` is the fraction of traversals of ``search_path[: i + 1]``
    that continue through position ``i + 1``; ``p_left[i]`` is the mirrored
    ratio extending leftward from the end.  A ratio with zero fan-in is
    reported as ``None``.
    """
    search_path = tuple(search_path)
    if len(search_path) < 2:
        raise GrammarValidationError("search path needs at least two vertices")
    counts = _subpath_counts(graph.paths, len(search_path))
    p_right: list[float | None] = []
    p_left: list[float | None] = []
    for i in range(len(search_path) - 1):
        fan_in = counts[search_path[: i + 1]]
        through = counts[search_path[: i + 2]]
        p_right.append(through / fan_in if fan_in else None)
    for i in range(len(search_path) - 1):
        fan_in = counts[search_path[i + 1 :]]
        through = counts[search_path[i:]]
        p_left.append(through / fan_in if fan_in else None)
    return p_right, p_left


def _boundary_significant(extension_counts: Counter, n: int, p0: float, alpha: float) -> bool:
    """One-sided binomial test that the best boundary continuation dropped.

    Sentence markers count as divergence (paths provide no context beyond
    them), so only non-marker continuations contribute to the observed
    fan-through.
    """
    observed = max(
        (c for tok, c in extension_counts.items() if tok not in RESERVED_MARKERS),
        default=0,
    )
    return float(binom.cdf(observed, n, p0)) < alpha


def find_significant_pattern(
    graph: AdiosGraph, config: InductionConfig
) -> SignificantPattern | None:
    """Most preferred subpath passing the context-sensitive criterion.

    In-pattern traversal ratios must stay at or above ``eta`` in both
    directions and the continuation beyond each boundary must drop
    significantly (binomial test at level ``alpha`` against the weakest
    in-pattern ratio).  Shorter patterns are preferred, then higher
    traversal count, then lexicographic order.  None when nothing
    qualifies or fewer than two paths exist.
    """
    if len(graph.paths) < 2:
        return None
    max_len = max(len(p) for p in graph.paths)
    counts = _subpath_counts(graph.paths, max_len)

    candidates: set[tuple[str, ...]] = set()
    left_ext: dict[tuple[str, ...], Counter] = defaultdict(Counter)
    right_ext: dict[tuple[str, ...], Counter] = defaultdict(Counter)
    for path in graph.paths:
        n = len(path)
        for i in range(1, n - 1):
            for j in range(i + 1, n - 1):
                w = tuple(path[i : j + 1])
                candidates.add(w)
                left_ext[w][path[i - 1]] += 1
                right_ext[w][path[j + 1]] += 1

    best: tuple[int, int, tuple[str, ...]] | None = None
    for w in candidates:
        n = counts[w]
        right_in = [counts[w[: t + 1]] / counts[w[:t]] for t in range(1, len(w))]
        if min(right_in) < config.eta:
            continue
        left_in = [counts[w[t:]] / counts[w[t + 1 :]] for t in range(len(w) - 1)]
        if min(left_in) < config.eta:
            continue
        if not _boundary_significant(right_ext[w], n, min(right_in), config.alpha):
            continue
        if not _boundary_significant(left_ext[w], n, min(left_in), config.alpha):
            continue
        key = (len(w), -n, w)
        if best is None or key < best:
            best = key
    if best is None:
        return None
    return SignificantPattern(tokens=best[2], traversals=counts[best[2]])


# ---------------------------------------------------------------------------
# Equivalence classes


def _window_tables(graph: AdiosGraph, size: int):
    """Tabulate interior-slot window occurrences across all paths.

    Returns ``fillers[(slot, context)] -> set of slot symbols`` and
    ``contexts[symbol] -> set of (slot, context)`` keys.
    """
    fillers: dict[tuple[int, tuple[str, ...]], set[str]] = defaultdict(set)
    contexts: dict[str, set] = defaultdict(set)
    for path in graph.paths:
        for start in range(len(path) - size + 1):
            win = tuple(path[start : start + size])
            for slot in range(1, size - 1):
                symbol = win[slot]
                if symbol in RESERVED_MARKERS:
                    continue
                key = (slot, win[:slot] + win[slot + 1 :])
                fillers[key].add(symbol)
                contexts[symbol].add(key)
    return fillers, contexts


def find_equivalence_class(
    graph: AdiosGraph, window: Sequence[str | None], config: InductionConfig
) -> EquivalenceClass | None:
    """Symbols interchangeable in the wildcard slot of a context window.

    The window has exactly one interior ``None`` slot.  Candidates are the
    symbols filling that slot across paths matching the rest of the
    window; the class qualifies when every pair's context sets overlap by
    at least ``coverage`` (relative to the smaller set).  Classes of size
    below two are rejected.
    """
    window = tuple(window)
    if window.count(None) != 1:
        raise GrammarValidationError("window must contain exactly one wildcard slot")
    slot = window.index(None)
    if slot == 0 or slot == len(window) - 1:
        raise GrammarValidationError("wildcard slot must be interior to the window")
    fillers, contexts = _window_tables(graph, len(window))
    key = (slot, window[:slot] + window[slot + 1 :])
    members = fillers.get(key, set())
    if len(members) < 2:
        return None
    members = sorted(members)
    for i, x in enumerate(members):
        for y in members[i + 1 :]:
            shared = len(contexts[x] & contexts[y])
            bound = min(len(contexts[x]), len(contexts[y]))
            if bound == 0 or shared / bound < config.coverage:
                return None
    return EquivalenceClass(members=frozenset(members), window=window)


def _scan_equivalence_classes(graph: AdiosGraph, config: InductionConfig):
    """First qualifying class scanning windows in corpus order, interior slots first."""
    size = config.context_size
    seen: set[tuple] = set()
    for path in graph.paths:
        for start in range(len(path) - size + 1):
            win = tuple(path[start : start + size])
            for slot in range(1, size - 1):
                if win[slot] in RESERVED_MARKERS:
                    continue
                window = win[:slot] + (None,) + win[slot + 1 :]
                if window in seen:
                    continue
                seen.add(window)
                found = find_equivalence_class(graph, window, config)
                if found is not None:
                    return found
    return None


# ---------------------------------------------------------------------------
# Rewiring


def rewire(graph: AdiosGraph, unit) -> AdiosGraph:
    """Replace a pattern's occurrences (And) or class members in context (Or).

    Returns a new graph; the original is untouched.  Pattern replacement is
    greedy left to right over non-overlapping occurrences and strictly
    decreases total path length; class replacement only renames slot
    tokens, leaving path lengths unchanged.
    """
    if isinstance(unit, SignificantPattern):
        return _rewire_pattern(graph, unit)
    if isinstance(unit, EquivalenceClass):
        return _rewire_class(graph, unit)
    raise GrammarValidationError(f"cannot rewire {type(unit).__name__}")


def _rewire_pattern(graph: AdiosGraph, pattern: SignificantPattern) -> AdiosGraph:
    out = graph.copy()
    name = out.fresh_name("P")
    tokens = pattern.tokens
    w = len(tokens)
    replaced = 0
    for idx, path in enumerate(out.paths):
        new_path: list[str] = []
        i = 0
        while i < len(path):
            if tuple(path[i : i + w]) == tokens:
                new_path.append(name)
                i += w
                replaced += 1
            else:
                new_path.append(path[i])
                i += 1
        out.paths[idx] = new_path
    if replaced:
        out.productions[name] = Production.sequence(name, tokens)
    return out


def _rewire_class(graph: AdiosGraph, eq_class: EquivalenceClass) -> AdiosGraph:
    out = graph.copy()
    name = out.fresh_name("E")
    slot = eq_class.slot
    size = len(eq_class.window)
    context = eq_class.window[:slot] + eq_class.window[slot + 1 :]
    members = sorted(eq_class.members)
    replaced = False
    for path in out.paths:
        targets = [
            start + slot
            for start in range(len(path) - size + 1)
            if path[start + slot] in eq_class.members
            and tuple(path[start : start + slot] + path[start + slot + 1 : start + size])
            == context
        ]
        for pos in targets:
            path[pos] = name
            replaced = True
    if replaced:
        uniform = 1.0 / len(members)
        out.productions[name] = Production.choice(name, [(m, uniform) for m in members])
    return out


# ---------------------------------------------------------------------------
# Induction driver


def induce(corpus: Corpus, config: InductionConfig = InductionConfig()) -> Grammar:
    """Learn the grammar structure; Or probabilities start uniform.

    Patterns are exhausted before classes are tried; the loop stops when
    neither qualifies.  The returned grammar derives every corpus sentence
    (residual path forms become the root's alternatives).
    """
    graph = AdiosGraph.from_corpus(corpus)
    while True:
        pattern = find_significant_pattern(graph, config)
        if pattern is not None:
            graph = rewire(graph, pattern)
            continue
        eq_class = _scan_equivalence_classes(graph, config)
        if eq_class is not None:
            graph = rewire(graph, eq_class)
            continue
        break
    return _build_grammar(corpus, graph)


def _build_grammar(corpus: Corpus, graph: AdiosGraph) -> Grammar:
    form_counts = Counter(graph.sentences())
    forms = sorted(form_counts, key=lambda f: (-form_counts[f], f))
    productions = dict(graph.productions)
    terminals = corpus.alphabet()

    taken = set(productions) | set(terminals) | {corpus.event_label}
    branches: list[tuple[str, float]] = []
    chain_idx = 1
    for form in forms:
        if len(form) == 1:
            branches.append((form[0], 0.0))
        else:
            while f"C{chain_idx}" in taken:
                chain_idx += 1
            name = f"C{chain_idx}"
            taken.add(name)
            productions[name] = Production.sequence(name, form)
            branches.append((name, 0.0))
    uniform = 1.0 / len(branches)
    root = corpus.event_label
    if root in taken and (root in terminals or root in productions):
        raise GrammarValidationError(
            f"event label {root!r} collides with a corpus symbol"
        )
    productions[root] = Production.choice(root, [(b, uniform) for b, _ in branches])
    grammar = Grammar(root=root, productions=productions, terminals=terminals)
    return _prune_unreachable(grammar)


def _prune_unreachable(grammar: Grammar) -> Grammar:
    reachable = grammar._reachable()
    kept = {h: p for h, p in grammar.productions.items() if h in reachable}
    if len(kept) == len(grammar.productions):
        return grammar
    return Grammar(root=grammar.root, productions=kept, terminals=grammar.terminals)


def estimate_branch_probabilities(
    grammar: Grammar, corpus: Corpus, smoothing: float = 0.0
) -> Grammar:
    """Re-estimate Or probabilities from Viterbi parse counts (relative
    branch frequencies, optional uniform Laplace pseudo-count).

    Raises :class:`UnderivableSentenceError` naming the first sentence the
    grammar cannot derive.  Or nodes never visited keep uniform branches.
    """
    if smoothing < 0:
        raise GrammarValidationError("smoothing must be non-negative")
    usage: dict[str, Counter] = defaultdict(Counter)
    distinct = Counter(corpus.sentences)
    for sentence, mult in distinct.items():
        logp, tree = viterbi_parse(grammar, sentence)
        if tree is None:
            raise UnderivableSentenceError(sentence)
        for head, branch in tree.or_choices():
            usage[head][branch] += mult
    productions = {}
    for head, prod in grammar.productions.items():
        if prod.kind == AND:
            productions[head] = prod
            continue
        counts = usage.get(head)
        n = len(prod.children)
        if not counts:
            # Or node never visited by any Viterbi parse: keep its branches.
            productions[head] = prod
            continue
        total = sum(counts.values()) + smoothing * n
        probs = []
        for idx in range(n):
            mass = (counts.get(idx, 0) + smoothing) / total
            probs.append(mass)
        if any(p <= 0.0 for p in probs):
            # zero-count branches with no smoothing would violate (0, 1]:
            # keep a vanishing floor so structure is preserved.
            floor = 1e-12
            probs = [max(p, floor) for p in probs]
            z = math.fsum(probs)
            probs = [p / z for p in probs]
        productions[head] = Production(head, OR, prod.children, tuple(probs))
    return Grammar(root=grammar.root, productions=productions, terminals=grammar.terminals)
