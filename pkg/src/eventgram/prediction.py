"""Future-activity prediction from a parsed prefix.

The next sub-activity comes from the Earley prediction set weighted by
prefix parsing likelihoods; durations come from the learned log-normals.
Label prediction samples whole continuations, scores each one against a
synthetic future detection stream under the joint posterior and keeps the
best (or a posterior-weighted per-frame vote with ``marginal=True``).
Ungrammatical observed sentences are first snapped to the nearest corpus
sentence by longest common subsequence.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .earley import next_symbols, parse_prefix, prefix_likelihood
from .emission import EmissionModel, segment_prior
from .errors import StreamFormatError
from .grammar import Grammar, sample_sentence_with_rng
from .refinement import log_posterior
from .simulator import NoiseModel, sample_frames
from .stream import DetectionFrame, ParseGraphSeq, Segment, merge_frames

NEG_INF = float("-inf")

#: Padding labels when the grammar completes before the horizon does.
NULL_LABEL = "null"
STATIONARY = "stationary"

#: Rejection-sampling retry budget for the conditional duration draw.
DURATION_TRIES = 1000


@dataclass(frozen=True)
class PredictionConfig:
    """Horizon and sampling budget; 42 frames is 3 s at 14 Hz."""

    horizon_frames: int = 42
    num_samples: int = 100
    frame_rate: float = 14.0
    corpus_for_correction: tuple[tuple[str, ...], ...] | None = None
    correction_corpus_size: int = 1000
    observation_noise: NoiseModel = field(
        default_factory=lambda: NoiseModel(
            action_temperature=0.3,
            object_temperature=0.3,
            affordance_temperature=0.3,
            label_flip_rate=0.0,
            score_concentration=80.0,
        )
    )
    marginal: bool = False

    def __post_init__(self):
        if self.horizon_frames < 1:
            raise StreamFormatError("horizon_frames must be at least 1")
        if self.num_samples < 1:
            raise StreamFormatError("num_samples must be at least 1")


@dataclass(frozen=True)
class Prediction:
    """Per-frame future labels for frames t+1 .. t+d, plus the winning score."""

    start: int
    frames: tuple[tuple[str, str, tuple[str, ...]], ...]  # (s, a, u per object)
    log_score: float
    sentence: tuple[str, ...] = ()


def predict_next_subactivity(grammar: Grammar, parsed_prefix) -> dict[str, float]:
    """Distribution over the next sub-activity after an accepted prefix.

    Support is the Earley prediction set; weights are prefix likelihoods
    of the extended prefix, normalized.  Empty when the prefix is a
    complete sentence with no continuation (event finished).
    """
    chart = parse_prefix(grammar, parsed_prefix)
    scores = next_symbols(chart)
    total = math.fsum(scores.values())
    if not scores or total <= 0.0:
        return {}
    return {a: p / total for a, p in scores.items()}


def sample_remaining_duration(s: str, elapsed_frames: int, model: EmissionModel, rng) -> int:
    """Remaining frames of the current sub-activity.

    Draws the total duration from its log-normal conditioned on exceeding
    ``elapsed_frames`` (rejection sampling); after :data:`DURATION_TRIES`
    failures falls back to one remaining frame.
    """
    if elapsed_frames < 0:
        raise StreamFormatError("elapsed_frames must be non-negative")
    mu, sigma = model.durations[s]
    for _ in range(DURATION_TRIES):
        total = max(1, int(round(float(rng.lognormal(mu, sigma)))))
        if total > elapsed_frames:
            return total - elapsed_frames
    return 1


# ---------------------------------------------------------------------------
# Longest common subsequence correction


def lcs_length(x: Sequence, y: Sequence) -> int:
    """Classic O(len(x) * len(y)) longest-common-subsequence length."""
    m, n = len(x), len(y)
    row = [0] * (n + 1)
    for i in range(1, m + 1):
        prev_diag = 0
        for j in range(1, n + 1):
            tmp = row[j]
            if x[i - 1] == y[j - 1]:
                row[j] = prev_diag + 1
            elif row[j - 1] > row[j]:
                row[j] = row[j - 1]
            prev_diag = tmp
    return row[n]


def correct_sentence(observed, corpus: Sequence[Sequence[str]]) -> tuple[str, ...]:
    """Nearest corpus sentence by LCS length.

    Ties prefer the shorter corpus sentence, then lexicographic order.
    """
    if not corpus:
        raise StreamFormatError("correction corpus is empty")
    observed = tuple(observed)
    best = None
    for candidate in corpus:
        candidate = tuple(candidate)
        key = (-lcs_length(observed, candidate), len(candidate), candidate)
        if best is None or key < best:
            best = key
    return best[2]


def correction_corpus(grammar: Grammar, size: int, seed: int = 0) -> tuple[tuple[str, ...], ...]:
    """Sample a sentence corpus from the grammar for LCS correction."""
    rng = np.random.default_rng(seed)
    return tuple(sample_sentence_with_rng(grammar, rng) for _ in range(size))


# ---------------------------------------------------------------------------
# Monte Carlo label prediction


def predict_labels(
    current: ParseGraphSeq,
    stream_so_far: Sequence[DetectionFrame],
    grammar: Grammar,
    model: EmissionModel,
    config: PredictionConfig = PredictionConfig(),
    seed: int = 0,
) -> Prediction:
    """Predict (s, a, u) for the next ``horizon_frames`` frames.

    Draws ``num_samples`` continuations of the current parse: the current
    sub-activity's remaining duration, then grammar-sampled next
    sub-activities with their own durations and emission labels.  Each
    continuation is scored by the joint posterior of the extended parse
    against a synthetic future stream; the best continuation's frame
    labels are returned (ties go to the lowest sample index), or the
    posterior-weighted per-frame vote when ``config.marginal`` is set.
    """
    d = config.horizon_frames
    t = current.end
    object_ids = tuple(f"obj{j}" for j in range(len(current.segments[-1].o)))

    prefix = _conditioning_prefix(current, grammar, config, seed)

    seed_seq = np.random.SeedSequence(seed)
    child_seeds = seed_seq.spawn(config.num_samples)
    best_score = NEG_INF
    best_frames: list[tuple] | None = None
    best_sentence: tuple[str, ...] = ()
    votes: list[dict] | None = [dict() for _ in range(d)] if config.marginal else None
    scores_for_votes: list[tuple[float, list[tuple]]] = []

    for child in child_seeds:
        rng = np.random.default_rng(child)
        frames, sentence, current_total = _sample_continuation(
            current, prefix, grammar, model, d, rng
        )
        score = _score_continuation(
            current, frames, sentence, current_total, grammar, model, config, rng, object_ids
        )
        if votes is not None:
            scores_for_votes.append((score, frames))
        if best_frames is None or score > best_score:
            best_score = score
            best_frames = frames
            best_sentence = sentence

    if votes is not None:
        best_frames = _marginal_vote(scores_for_votes, d)

    out_frames = tuple((s, a, tuple(u)) for s, a, u in best_frames)
    return Prediction(
        start=t + 1, frames=out_frames, log_score=best_score, sentence=best_sentence
    )


def _conditioning_prefix(current, grammar, config, seed) -> tuple[str, ...]:
    """Observed sentence, snapped to the nearest corpus sentence if rejected."""
    sentence = current.sentence()
    chart = parse_prefix(grammar, sentence)
    if chart.accepted:
        return sentence
    corpus = config.corpus_for_correction
    if corpus is None:
        corpus = correction_corpus(grammar, config.correction_corpus_size, seed=seed)
    corrected = correct_sentence(sentence, corpus)
    return corrected[: len(sentence)] if len(corrected) > len(sentence) else corrected


def _sample_continuation(current, prefix, grammar, model, d, rng):
    """One future: frame labels for d frames plus the extended sentence.

    Returns (frame_labels, full_sentence, current_total_duration); padding
    past the language end uses the null/stationary labels.
    """
    last = current.segments[-1]
    n_obj = len(last.o)
    elapsed = last.duration
    remaining = sample_remaining_duration(last.s, elapsed, model, rng)
    frames: list[tuple] = []
    take = min(remaining, d)
    frames.extend([(last.s, last.a, list(last.u))] * take)
    current_total = elapsed + take

    sentence = list(prefix)
    while len(frames) < d:
        dist = predict_next_subactivity(grammar, tuple(sentence))
        if not dist:
            pad = (NULL_LABEL, NULL_LABEL, [STATIONARY] * n_obj)
            frames.extend([pad] * (d - len(frames)))
            break
        s = _draw_from(dist, rng)
        sentence.append(s)
        duration = max(1, int(round(float(rng.lognormal(*model.durations[s])))))
        a = _draw_from(model.actions_given_s[s], rng)
        u = [_draw_from(model.affordances_given_s[s], rng) for _ in range(n_obj)]
        take = min(duration, d - len(frames))
        frames.extend([(s, a, u)] * take)
    return frames, tuple(sentence), current_total


def _draw_from(dist: dict[str, float], rng) -> str:
    labels = list(dist)
    x = rng.random()
    acc = 0.0
    for label in labels:
        acc += dist[label]
        if x < acc:
            return label
    return labels[-1]


def _score_continuation(
    current, frames, sentence, current_total, grammar, model, config, rng, object_ids
):
    """Joint posterior of the extended parse against a sampled future stream.

    Detection terms cover the synthetic horizon; prior terms cover the
    future segments plus the duration adjustment of the extended current
    segment; the grammar term is the prefix likelihood of the extended
    sentence (the horizon may cut the event mid-derivation).
    """
    last = current.segments[-1]
    object_labels = last.o
    t = current.end

    labelled = [
        (s, a, tuple(object_labels), tuple(u)) for s, a, u in frames
    ]
    synth = sample_frames(
        labelled, model.alphabets, config.observation_noise, rng, object_ids, start=t + 1
    )

    # Detection terms of the sampled horizon against the continuation labels.
    # Padding frames past the event's end carry no evidence either way.
    det = 0.0
    for frame, (s, a, u) in zip(synth, frames):
        if s == NULL_LABEL:
            continue
        det += _frame_log(frame.action_scores, a)
        for j, track in enumerate(frame.object_tracks):
            det += _frame_log(track.object_scores, object_labels[j])
            det += _frame_log(track.affordance_scores, u[j])

    # Prior terms: future segments at their realized in-horizon lengths,
    # plus the current segment's duration term moving from elapsed to its
    # extended total.
    prior = 0.0
    future_segments = merge_frames(labelled, start=t + 1)
    consumed = 0
    for seg in future_segments:
        if seg.s == last.s and consumed == 0 and seg.start == t + 1 and seg.a == last.a:
            # continuation of the current segment: replace its duration term
            prior += model.log_duration(current_total, last.s) - model.log_duration(
                last.duration, last.s
            )
        elif seg.s != NULL_LABEL:
            prior += segment_prior(seg.a, seg.o, seg.u, seg.duration, seg.s, model)
        consumed += seg.duration

    mass = prefix_likelihood(grammar, sentence)
    grammar_term = math.log(mass) if mass > 0.0 else NEG_INF
    return det + prior + grammar_term


def _frame_log(scores: dict[str, float], label: str) -> float:
    v = scores.get(label, 0.0)
    return math.log(v) if v > 0.0 else NEG_INF


def _marginal_vote(scored: list[tuple[float, list[tuple]]], d: int) -> list[tuple]:
    """Per-frame argmax of posterior-weighted label votes."""
    finite = [s for s, _ in scored if s > NEG_INF]
    top = max(finite) if finite else 0.0
    weights = [math.exp(s - top) if s > NEG_INF else 0.0 for s, _ in scored]
    total = math.fsum(weights) or 1.0
    out = []
    for i in range(d):
        tally: dict[tuple, float] = {}
        for w, (_, frames) in zip(weights, scored):
            key = (frames[i][0], frames[i][1], tuple(frames[i][2]))
            tally[key] = tally.get(key, 0.0) + w / total
        best = max(sorted(tally), key=lambda k: tally[k])
        out.append((best[0], best[1], list(best[2])))
    return out
