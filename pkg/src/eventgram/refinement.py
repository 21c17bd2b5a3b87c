"""Grammar-aware label refinement and the joint parse over candidate events.

Segment boundaries stay frozen; Gibbs sweeps resample the action,
affordance and sub-activity labels of each segment in order.  Sampling
weights follow the per-variable conditionals (detection times emission
for actions/affordances; emission product times the grammar mass of the
sub-activity prefix for sub-activities), annealed by 1/T.  The final
sweep runs at zero temperature and takes the argmax of the exact joint
posterior conditionals, so it can only increase the posterior.  Object
labels are never resampled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .earley import prefix_likelihood
from .emission import EmissionModel, LogTables
from .errors import StreamFormatError
from .grammar import Grammar, sentence_likelihood, viterbi_log_likelihood
from .segmentation import DEFAULT_MAX_SEG_LEN, DEFAULT_SEGMENT_SCORE, segment_stream
from .stream import (
    DetectionFrame,
    ParseGraphSeq,
    Segment,
    StreamArrays,
    merge_frames,
    stream_arrays,
)

NEG_INF = float("-inf")


@dataclass(frozen=True)
class GibbsSchedule:
    """Geometric annealing: T_i = t0 * beta^i, final sweep at zero temperature."""

    t0: float = 2.0
    beta: float = 0.9
    sweeps: int = 100

    def __post_init__(self):
        if self.t0 <= 0 or not (0 < self.beta < 1) or self.sweeps < 1:
            raise ValueError("need t0 > 0, 0 < beta < 1, sweeps >= 1")

    def temperatures(self) -> list[float]:
        return [self.t0 * self.beta**i for i in range(self.sweeps - 1)]


@dataclass(frozen=True)
class ParseConfig:
    max_seg_len: int = DEFAULT_MAX_SEG_LEN
    schedule: GibbsSchedule = field(default_factory=GibbsSchedule)
    segment_score: str = DEFAULT_SEGMENT_SCORE


def log_posterior(
    stream: Sequence[DetectionFrame] | StreamArrays,
    pg: ParseGraphSeq,
    grammar: Grammar,
    model: EmissionModel,
    mode: str = DEFAULT_SEGMENT_SCORE,
) -> float:
    """Joint log-posterior of a labelled segmentation (up to a constant).

    Detection terms (per-segment averaged log scores for the chosen
    labels) plus the grammar prior of the parse graph.
    """
    chain = _Chain(stream, pg, grammar, model, mode)
    return chain.log_posterior()


class _Chain:
    """Mutable label state over frozen segment boundaries."""

    def __init__(self, stream, pg: ParseGraphSeq, grammar: Grammar, model: EmissionModel, mode):
        al = model.alphabets
        self.arrays = (
            stream
            if isinstance(stream, StreamArrays)
            else stream_arrays(stream, al.actions, al.objects, al.affordances)
        )
        if pg.start < self.arrays.start or pg.end > self.arrays.end:
            raise StreamFormatError("parse graph does not lie inside the stream")
        self.grammar = grammar
        self.model = model
        self.tables = LogTables.from_model(model)
        self.mode = mode
        self.bounds = [(seg.start, seg.end) for seg in pg.segments]
        self.n_obj = len(self.arrays.object_ids)
        idx = self.tables
        self.s_idx = [idx.sub_index[seg.s] for seg in pg.segments]
        self.a_idx = [idx.a_index[seg.a] for seg in pg.segments]
        self.o_idx = [[idx.o_index[o] for o in seg.o] for seg in pg.segments]
        self.u_idx = [[idx.u_index[u] for u in seg.u] for seg in pg.segments]
        self.flagged: set[int] = set()
        self.subactivities = al.subactivities
        self.actions = al.actions
        self.affordances = al.affordances

    # -- detection terms ----------------------------------------------------
    def _scale(self, start, end) -> float:
        return 1.0 if self.mode == "geomean" else float(end - start + 1)

    def det_action_row(self, k: int) -> np.ndarray:
        start, end = self.bounds[k]
        return self.arrays.mean_action(start, end) * self._scale(start, end)

    def det_affordance_row(self, k: int, j: int) -> np.ndarray:
        start, end = self.bounds[k]
        return self.arrays.mean_affordance(j, start, end) * self._scale(start, end)

    def det_object_row(self, k: int, j: int) -> np.ndarray:
        start, end = self.bounds[k]
        return self.arrays.mean_object(j, start, end) * self._scale(start, end)

    # -- posterior ----------------------------------------------------------
    def sentence(self, k: int | None = None, s_idx: int | None = None) -> tuple[str, ...]:
        labels = list(self.s_idx)
        if k is not None:
            labels[k] = s_idx
        return tuple(self.subactivities[i] for i in labels)

    def log_posterior(self) -> float:
        total = 0.0
        for k in range(len(self.bounds)):
            total += float(self.det_action_row(k)[self.a_idx[k]])
            for j in range(self.n_obj):
                total += float(self.det_object_row(k, j)[self.o_idx[k][j]])
                total += float(self.det_affordance_row(k, j)[self.u_idx[k][j]])
            total += self._prior_bracket(k, self.s_idx[k])
            if total == NEG_INF:
                return NEG_INF
        return total + viterbi_log_likelihood(self.grammar, self.sentence())

    def _prior_bracket(self, k: int, s: int) -> float:
        """Emission and duration terms of segment k under sub-activity s."""
        start, end = self.bounds[k]
        total = float(self.tables.a_log[self.a_idx[k], s])
        for j in range(self.n_obj):
            total += float(self.tables.o_log[self.o_idx[k][j], s])
            total += float(self.tables.u_log[self.u_idx[k][j], s])
        return total + float(self.tables.log_duration_row(end - start + 1)[s])

    # -- conditional weights -------------------------------------------------
    def action_weights(self, k: int) -> np.ndarray:
        return self.det_action_row(k) + self.tables.a_log[:, self.s_idx[k]]

    def affordance_weights(self, k: int, j: int) -> np.ndarray:
        return self.det_affordance_row(k, j) + self.tables.u_log[:, self.s_idx[k]]

    def subactivity_weights(self, k: int) -> np.ndarray:
        """Annealed sampling weights for s of segment k.

        Emission product p(a, o, u | s) times the grammar mass of the
        sub-activity assignment through segment k: the prefix likelihood
        for interior segments, the full-sentence likelihood for the final
        one (so assignments whose complete sentence the grammar rejects
        get zero weight).
        """
        n_sub = len(self.subactivities)
        emis = self.tables.a_log[self.a_idx[k], :].copy()
        for j in range(self.n_obj):
            emis += self.tables.o_log[self.o_idx[k][j], :]
            emis += self.tables.u_log[self.u_idx[k][j], :]
        out = np.empty(n_sub)
        last = k == len(self.bounds) - 1
        prefix = tuple(self.subactivities[i] for i in self.s_idx[:k])
        for s in range(n_sub):
            extended = prefix + (self.subactivities[s],)
            if last:
                mass = _sentence_mass(self.grammar, extended)
            else:
                mass = prefix_likelihood(self.grammar, extended)
            out[s] = emis[s] + (math.log(mass) if mass > 0.0 else NEG_INF)
        return out

    def subactivity_posterior_weights(self, k: int) -> np.ndarray:
        """Exact joint-posterior conditionals for s (zero-temperature sweep)."""
        n_sub = len(self.subactivities)
        out = np.empty(n_sub)
        for s in range(n_sub):
            bracket = self._prior_bracket(k, s)
            if bracket == NEG_INF:
                out[s] = NEG_INF
                continue
            out[s] = bracket + viterbi_log_likelihood(self.grammar, self.sentence(k, s))
        return out

    def segments(self) -> tuple[Segment, ...]:
        al = self.model.alphabets
        out = []
        for k, (start, end) in enumerate(self.bounds):
            out.append(
                Segment(
                    start,
                    end,
                    s=al.subactivities[self.s_idx[k]],
                    a=al.actions[self.a_idx[k]],
                    o=tuple(al.objects[i] for i in self.o_idx[k]),
                    u=tuple(al.affordances[i] for i in self.u_idx[k]),
                )
            )
        return tuple(out)


def _sentence_mass(grammar: Grammar, sentence: tuple[str, ...]) -> float:
    """Total probability of the exact sentence (0 when underivable)."""
    cache = grammar._cache.setdefault("sentence_mass", {})
    if sentence not in cache:
        logp = viterbi_log_likelihood(grammar, sentence)
        cache[sentence] = 0.0 if logp == NEG_INF else sentence_likelihood(grammar, sentence)
    return cache[sentence]


def _sample_index(weights: np.ndarray, temperature: float, rng) -> int | None:
    """Draw from softmax(weights / T); None when every weight is -inf."""
    finite = weights > NEG_INF
    if not finite.any():
        return None
    scaled = np.full_like(weights, NEG_INF)
    scaled[finite] = weights[finite] / temperature
    scaled -= scaled[finite].max()
    probs = np.exp(scaled)
    probs /= probs.sum()
    x = rng.random()
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if x < acc:
            return i
    return int(np.flatnonzero(finite)[-1])


def _argmax_keep(weights: np.ndarray, current: int) -> int | None:
    """Argmax index; keeps the current label on ties, None when all -inf."""
    best = weights.max()
    if best == NEG_INF:
        return None
    if weights[current] == best:
        return current
    return int(np.argmax(weights))


def gibbs_refine(
    pg: ParseGraphSeq,
    stream: Sequence[DetectionFrame] | StreamArrays,
    grammar: Grammar,
    model: EmissionModel,
    schedule: GibbsSchedule = GibbsSchedule(),
    seed: int = 0,
    mode: str = DEFAULT_SEGMENT_SCORE,
) -> ParseGraphSeq:
    """Resample labels per segment with simulated annealing.

    Boundaries are frozen; object labels are kept.  Segments whose
    sub-activity conditional vanished everywhere (the grammar rejects all
    choices) keep their label and are reported in ``flagged_segments``.
    """
    rng = np.random.default_rng(seed)
    chain = _Chain(stream, pg, grammar, model, mode)
    for temperature in schedule.temperatures():
        _sweep(chain, rng, temperature)
    _zero_temperature_sweep(chain)
    refined = ParseGraphSeq(
        event=pg.event,
        segments=_merge_chain_segments(chain),
        log_posterior=chain.log_posterior(),
        flagged_segments=tuple(sorted(chain.flagged)),
    )
    return refined


def _sweep(chain: _Chain, rng, temperature: float) -> None:
    for k in range(len(chain.bounds)):
        idx = _sample_index(chain.action_weights(k), temperature, rng)
        if idx is not None:
            chain.a_idx[k] = idx
        for j in range(chain.n_obj):
            idx = _sample_index(chain.affordance_weights(k, j), temperature, rng)
            if idx is not None:
                chain.u_idx[k][j] = idx
        idx = _sample_index(chain.subactivity_weights(k), temperature, rng)
        if idx is None:
            chain.flagged.add(k)
        else:
            chain.s_idx[k] = idx


def _zero_temperature_sweep(chain: _Chain) -> None:
    """Coordinate ascent on the exact posterior; never decreases it."""
    for k in range(len(chain.bounds)):
        idx = _argmax_keep(chain.action_weights(k), chain.a_idx[k])
        if idx is not None:
            chain.a_idx[k] = idx
        for j in range(chain.n_obj):
            idx = _argmax_keep(chain.affordance_weights(k, j), chain.u_idx[k][j])
            if idx is not None:
                chain.u_idx[k][j] = idx
        idx = _argmax_keep(chain.subactivity_posterior_weights(k), chain.s_idx[k])
        if idx is None:
            chain.flagged.add(k)
        else:
            chain.s_idx[k] = idx


def _merge_chain_segments(chain: _Chain) -> tuple[Segment, ...]:
    labels = []
    for seg in chain.segments():
        labels.extend([(seg.s, seg.a, seg.o, seg.u)] * seg.duration)
    return merge_frames(labels, start=chain.bounds[0][0])


def joint_parse(
    stream: Sequence[DetectionFrame],
    grammars: Mapping[str, Grammar],
    models: Mapping[str, EmissionModel],
    config: ParseConfig = ParseConfig(),
    seed: int = 0,
) -> tuple[str, ParseGraphSeq]:
    """Segment then refine under every candidate event; keep the best.

    Events are ranked by the refined joint log-posterior; when every
    candidate's grammar term is -inf the grammar-free part breaks the tie,
    then the event name.
    """
    if not grammars:
        raise StreamFormatError("need at least one candidate event")
    if set(grammars) != set(models):
        raise StreamFormatError("grammars and models must cover the same events")
    best = None
    for offset, event in enumerate(sorted(grammars)):
        grammar = grammars[event]
        model = models[event]
        pg = segment_stream(
            stream, model, max_seg_len=config.max_seg_len, mode=config.segment_score
        )
        refined = gibbs_refine(
            pg,
            stream,
            grammar,
            model,
            schedule=config.schedule,
            seed=seed + offset,
            mode=config.segment_score,
        )
        posterior = refined.log_posterior
        grammar_free = posterior
        if posterior == NEG_INF:
            chain = _Chain(stream, refined, grammar, model, config.segment_score)
            grammar_free = _grammar_free_posterior(chain)
        key = (posterior, grammar_free)
        if best is None or key > best[0]:
            best = (key, event, refined)
    _, event, refined = best
    return event, replace(refined, event=event)


def _grammar_free_posterior(chain: _Chain) -> float:
    total = 0.0
    for k in range(len(chain.bounds)):
        total += float(chain.det_action_row(k)[chain.a_idx[k]])
        for j in range(chain.n_obj):
            total += float(chain.det_object_row(k, j)[chain.o_idx[k][j]])
            total += float(chain.det_affordance_row(k, j)[chain.u_idx[k][j]])
        bracket = chain._prior_bracket(k, chain.s_idx[k])
        if bracket > NEG_INF:
            total += bracket
    return total
