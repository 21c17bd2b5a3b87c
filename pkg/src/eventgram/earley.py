"""Probabilistic Earley parsing over the event grammar.

The grammar compiles to plain context-free productions: an And node gives
one production, an Or node gives one single-symbol production per branch.
The chart records dotted states ``(X -> alpha . beta, origin)`` per input
position; the prediction set and the prefix parsing likelihood for
incomplete sentences are read off the chart and the grammar.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ParseRejectedError
from .grammar import AND, Grammar, iter_sentences, _as_sentence

#: Internal start head seeding S(0) with the single top-level rule.
START = "<start>"


@dataclass(frozen=True)
class EarleyState:
    """Dotted production ``head -> body[:dot] . body[dot:]`` begun at ``origin``."""

    head: str
    body: tuple[str, ...]
    dot: int
    origin: int

    @property
    def complete(self) -> bool:
        return self.dot == len(self.body)

    @property
    def expected(self) -> str | None:
        """Symbol right after the dot, or None when complete."""
        return None if self.complete else self.body[self.dot]

    def advanced(self) -> "EarleyState":
        return EarleyState(self.head, self.body, self.dot + 1, self.origin)

    def __str__(self):
        parts = list(self.body)
        parts.insert(self.dot, ".")
        return f"({self.head} -> {' '.join(parts)}, {self.origin})"


@dataclass
class EarleyChart:
    """State sets S(0..k) for a consumed prefix, plus acceptance bookkeeping."""

    grammar: Grammar
    prefix: tuple[str, ...]
    state_sets: list[list[EarleyState]]
    accepted: bool
    failure_position: int | None = None
    expected_at_failure: frozenset[str] = frozenset()

    @property
    def final_states(self) -> list[EarleyState]:
        return self.state_sets[-1]

    def is_complete_sentence(self) -> bool:
        """True when the consumed prefix is itself a sentence of the language."""
        if not self.accepted:
            return False
        return any(
            st.head == START and st.complete and st.origin == 0
            for st in self.final_states
        )


def _compiled_productions(grammar: Grammar) -> dict[str, list[tuple[str, ...]]]:
    key = "earley_rules"
    if key not in grammar._cache:
        rules: dict[str, list[tuple[str, ...]]] = {}
        for head, prod in grammar.productions.items():
            if prod.kind == AND:
                rules[head] = [prod.children]
            else:
                rules[head] = [(child,) for child in prod.children]
        grammar._cache[key] = rules
    return grammar._cache[key]


def parse_prefix(grammar: Grammar, prefix) -> EarleyChart:
    """Run prediction/scanning/completion over the prefix.

    The chart accepts exactly the prefixes of sentences in the grammar's
    language.  Rejection is signalled by an empty state set: the chart
    carries the failing position and the terminals expected just before it.
    """
    prefix = _as_sentence(prefix)
    rules = _compiled_productions(grammar)
    sets: list[list[EarleyState]] = [[EarleyState(START, (grammar.root,), 0, 0)]]
    for k in range(len(prefix) + 1):
        _close(grammar, rules, sets, k)
        if k == len(prefix):
            break
        token = prefix[k]
        scanned = [
            st.advanced()
            for st in sets[k]
            if not st.complete and st.expected == token and token in grammar.terminals
        ]
        if not scanned:
            expected = frozenset(
                st.expected
                for st in sets[k]
                if not st.complete and st.expected in grammar.terminals
            )
            sets.append([])
            return EarleyChart(
                grammar,
                prefix,
                sets,
                accepted=False,
                failure_position=k + 1,
                expected_at_failure=expected,
            )
        sets.append(scanned)
    return EarleyChart(grammar, prefix, sets, accepted=True)


def _close(grammar, rules, sets, k):
    """Close S(k) under prediction and completion (no epsilon rules)."""
    states = sets[k]
    seen = set(states)
    i = 0
    while i < len(states):
        st = states[i]
        i += 1
        if st.complete:
            for parent in sets[st.origin]:
                if not parent.complete and parent.expected == st.head:
                    adv = parent.advanced()
                    if adv not in seen:
                        seen.add(adv)
                        states.append(adv)
        else:
            nxt = st.expected
            if nxt in grammar.productions:
                for body in rules[nxt]:
                    cand = EarleyState(nxt, body, 0, k)
                    if cand not in seen:
                        seen.add(cand)
                        states.append(cand)


def next_symbols(chart: EarleyChart) -> dict[str, "PrefixMass"]:
    """Prediction set: terminals that can legally follow the consumed prefix.

    Each terminal is scored by the prefix likelihood of the extended
    prefix; scores are unnormalized (the prediction module normalizes
    before sampling).  Empty only when the prefix is a complete sentence
    with no longer continuation.
    """
    if not chart.accepted:
        raise ParseRejectedError(
            f"prefix rejected at position {chart.failure_position}; "
            f"expected one of {sorted(chart.expected_at_failure)}"
        )
    grammar = chart.grammar
    terminals = sorted(
        {
            st.expected
            for st in chart.final_states
            if not st.complete and st.expected in grammar.terminals
        }
    )
    return {
        a: prefix_likelihood(grammar, chart.prefix + (a,))
        for a in terminals
    }


class PrefixMass(float):
    """A probability that also records whether enumeration truncated mass."""

    truncated: bool

    def __new__(cls, value: float, truncated: bool = False):
        obj = super().__new__(cls, value)
        obj.truncated = truncated
        return obj


def prefix_likelihood(grammar: Grammar, prefix, epsilon: float = 1e-6) -> PrefixMass:
    """Total probability of complete sentences extending the prefix.

    Computed by bounded completion enumeration: exact for non-recursive
    grammars; for recursive grammars, derivations below ``epsilon`` mass
    are pruned and the result carries ``truncated=True``.  Equals the
    sentence likelihood plus the mass of all longer extensions; an invalid
    prefix has mass 0.
    """
    prefix = _as_sentence(prefix)
    cache = grammar._cache.setdefault("prefix_mass", {})
    key = (prefix, epsilon)
    if key not in cache:
        total = 0.0
        truncated = False
        for sentence, p, trunc in iter_sentences(grammar, prefix, epsilon=epsilon):
            truncated = truncated or trunc
            total += p
        cache[key] = PrefixMass(total, truncated)
    return cache[key]
