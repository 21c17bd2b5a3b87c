"""Symbolic emission tables and the segment-duration model.

Per sub-activity: categorical tables over actions, objects and
affordances, a sub-activity prior, and a log-normal duration (in frames).
Together with the grammar's Viterbi likelihood these give the prior
probability of a labelled segmentation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import MalformedDocumentError, ModelError
from .grammar import Grammar, viterbi_log_likelihood
from .stream import ParseGraphSeq, Segment

LOG_2PI = math.log(2.0 * math.pi)

#: Floor applied to the log-duration deviation.
SIGMA_FLOOR = 0.1
#: Fallback duration parameters for sub-activities with no segments.
DEFAULT_DURATION = (math.log(20.0), 1.0)

ROW_ATOL = 1e-9


@dataclass(frozen=True)
class Alphabets:
    subactivities: tuple[str, ...]
    actions: tuple[str, ...]
    objects: tuple[str, ...]
    affordances: tuple[str, ...]

    def __post_init__(self):
        for name in ("subactivities", "actions", "objects", "affordances"):
            values = tuple(getattr(self, name))
            object.__setattr__(self, name, values)
            if len(set(values)) != len(values):
                raise ModelError(f"duplicate labels in {name} alphabet")
            if not values:
                raise ModelError(f"empty {name} alphabet")


def _check_row(row: Mapping[str, float], alphabet: Sequence[str], what: str) -> dict[str, float]:
    out = {}
    for label in alphabet:
        v = float(row.get(label, 0.0))
        if v < 0.0:
            raise ModelError(f"{what}: negative probability for {label!r}")
        out[label] = v
    extra = set(row) - set(alphabet)
    if extra:
        raise ModelError(f"{what}: labels outside the alphabet: {sorted(extra)}")
    total = math.fsum(out.values())
    if abs(total - 1.0) > ROW_ATOL:
        raise ModelError(f"{what}: row sums to {total!r}")
    return out


@dataclass(frozen=True)
class EmissionModel:
    """Immutable categorical tables plus per-sub-activity duration params."""

    alphabets: Alphabets
    actions_given_s: dict[str, dict[str, float]]
    objects_given_s: dict[str, dict[str, float]]
    affordances_given_s: dict[str, dict[str, float]]
    prior_s: dict[str, float]
    durations: dict[str, tuple[float, float]]
    defaulted: frozenset[str] = frozenset()

    def __post_init__(self):
        subs = self.alphabets.subactivities
        for table, alphabet, name in (
            (self.actions_given_s, self.alphabets.actions, "p(a|s)"),
            (self.objects_given_s, self.alphabets.objects, "p(o|s)"),
            (self.affordances_given_s, self.alphabets.affordances, "p(u|s)"),
        ):
            for s in subs:
                if s not in table:
                    raise ModelError(f"{name}: missing row for sub-activity {s!r}")
                table[s] = _check_row(table[s], alphabet, f"{name}[{s}]")
        object.__setattr__(self, "prior_s", _check_row(self.prior_s, subs, "p(s)"))
        for s in subs:
            if s not in self.durations:
                raise ModelError(f"duration: missing sub-activity {s!r}")
            mu, sigma = self.durations[s]
            if sigma <= 0.0 or not math.isfinite(sigma) or not math.isfinite(mu):
                raise ModelError(f"duration[{s}]: sigma must be positive, got {sigma}")
            self.durations[s] = (float(mu), float(sigma))
        object.__setattr__(self, "defaulted", frozenset(self.defaulted))

    # -- log lookups ---------------------------------------------------------
    def log_action(self, a: str, s: str) -> float:
        return _log(self.actions_given_s[s].get(a, 0.0))

    def log_object(self, o: str, s: str) -> float:
        return _log(self.objects_given_s[s].get(o, 0.0))

    def log_affordance(self, u: str, s: str) -> float:
        return _log(self.affordances_given_s[s].get(u, 0.0))

    def log_prior(self, s: str) -> float:
        return _log(self.prior_s.get(s, 0.0))

    def log_duration(self, frames: int, s: str) -> float:
        """Continuous log-normal density evaluated at the integer frame count."""
        if frames < 1:
            raise ModelError(f"duration must be at least one frame, got {frames}")
        mu, sigma = self.durations[s]
        x = math.log(frames)
        return -x - math.log(sigma) - 0.5 * LOG_2PI - 0.5 * ((x - mu) / sigma) ** 2

    def save(self, path) -> None:
        doc = {
            "alphabets": {
                "subactivities": list(self.alphabets.subactivities),
                "actions": list(self.alphabets.actions),
                "objects": list(self.alphabets.objects),
                "affordances": list(self.alphabets.affordances),
            },
            "actions_given_s": self.actions_given_s,
            "objects_given_s": self.objects_given_s,
            "affordances_given_s": self.affordances_given_s,
            "prior_s": self.prior_s,
            "durations": {s: {"mu": m, "sigma": v} for s, (m, v) in self.durations.items()},
            "defaulted": sorted(self.defaulted),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "EmissionModel":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise MalformedDocumentError(f"model file {path}: {exc}") from exc
        try:
            alphabets = Alphabets(
                subactivities=tuple(doc["alphabets"]["subactivities"]),
                actions=tuple(doc["alphabets"]["actions"]),
                objects=tuple(doc["alphabets"]["objects"]),
                affordances=tuple(doc["alphabets"]["affordances"]),
            )
            durations = {
                s: (float(d["mu"]), float(d["sigma"])) for s, d in doc["durations"].items()
            }
            return cls(
                alphabets=alphabets,
                actions_given_s={s: dict(r) for s, r in doc["actions_given_s"].items()},
                objects_given_s={s: dict(r) for s, r in doc["objects_given_s"].items()},
                affordances_given_s={s: dict(r) for s, r in doc["affordances_given_s"].items()},
                prior_s=dict(doc["prior_s"]),
                durations=durations,
                defaulted=frozenset(doc.get("defaulted", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDocumentError(f"model file {path}: {exc}") from exc


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else float("-inf")


def learn_emissions(
    segments: Sequence[Segment],
    alphabets: Alphabets,
    smoothing: float = 0.0,
) -> EmissionModel:
    """Fit the tables from labelled segments by relative frequency.

    Categorical entries become (count + smoothing) / (total + smoothing *
    alphabet size).  Duration parameters are the sample mean and standard
    deviation of log frame counts, with the deviation floored at
    :data:`SIGMA_FLOOR`.  Sub-activities with no segments get uniform rows
    and the default duration, and are reported in ``defaulted``.
    """
    if smoothing < 0:
        raise ModelError("smoothing must be non-negative")
    a_counts: dict[str, dict[str, float]] = {s: {} for s in alphabets.subactivities}
    o_counts: dict[str, dict[str, float]] = {s: {} for s in alphabets.subactivities}
    u_counts: dict[str, dict[str, float]] = {s: {} for s in alphabets.subactivities}
    s_counts: dict[str, float] = {}
    log_durations: dict[str, list[float]] = {s: [] for s in alphabets.subactivities}

    for seg in segments:
        if seg.s not in log_durations:
            raise ModelError(f"segment sub-activity {seg.s!r} outside the alphabet")
        if seg.duration < 1:
            raise ModelError("segment duration must be at least one frame")
        _bump(a_counts[seg.s], seg.a)
        for o in seg.o:
            _bump(o_counts[seg.s], o)
        for u in seg.u:
            _bump(u_counts[seg.s], u)
        s_counts[seg.s] = s_counts.get(seg.s, 0.0) + 1.0
        log_durations[seg.s].append(math.log(seg.duration))

    defaulted = set()
    actions_given_s = {}
    objects_given_s = {}
    affordances_given_s = {}
    durations = {}
    for s in alphabets.subactivities:
        if not log_durations[s]:
            defaulted.add(s)
            actions_given_s[s] = _uniform(alphabets.actions)
            objects_given_s[s] = _uniform(alphabets.objects)
            affordances_given_s[s] = _uniform(alphabets.affordances)
            durations[s] = DEFAULT_DURATION
            continue
        actions_given_s[s] = _normalize(a_counts[s], alphabets.actions, smoothing)
        objects_given_s[s] = _normalize(o_counts[s], alphabets.objects, smoothing)
        affordances_given_s[s] = _normalize(u_counts[s], alphabets.affordances, smoothing)
        logs = np.asarray(log_durations[s])
        mu = float(logs.mean())
        sigma = max(float(logs.std(ddof=0)), SIGMA_FLOOR)
        durations[s] = (mu, sigma)
    prior = _normalize(s_counts, alphabets.subactivities, smoothing)
    return EmissionModel(
        alphabets=alphabets,
        actions_given_s=actions_given_s,
        objects_given_s=objects_given_s,
        affordances_given_s=affordances_given_s,
        prior_s=prior,
        durations=durations,
        defaulted=frozenset(defaulted),
    )


def _bump(counter: dict[str, float], label: str) -> None:
    counter[label] = counter.get(label, 0.0) + 1.0


def _uniform(alphabet: Sequence[str]) -> dict[str, float]:
    p = 1.0 / len(alphabet)
    return {label: p for label in alphabet}


def _normalize(counts: Mapping[str, float], alphabet: Sequence[str], smoothing: float):
    extra = set(counts) - set(alphabet)
    if extra:
        raise ModelError(f"labels outside the alphabet: {sorted(extra)}")
    total = math.fsum(counts.values()) + smoothing * len(alphabet)
    if total <= 0.0:
        return _uniform(alphabet)
    return {label: (counts.get(label, 0.0) + smoothing) / total for label in alphabet}


def segment_prior(
    a: str,
    o: Sequence[str],
    u: Sequence[str],
    duration: int,
    s: str,
    model: EmissionModel,
) -> float:
    """log p(a|s) + sum_j log p(o_j|s) + sum_j log p(u_j|s) + log p(duration|s).

    Object and affordance factors multiply across the episode's objects.
    Zero-probability entries give -inf (ordering still defined).
    """
    total = model.log_action(a, s)
    for label in o:
        total += model.log_object(label, s)
    for label in u:
        total += model.log_affordance(label, s)
    return total + model.log_duration(duration, s)


def parse_graph_prior(pg: ParseGraphSeq, grammar: Grammar, model: EmissionModel) -> float:
    """Prior of a labelled segmentation under one event grammar.

    Sum of per-segment priors plus the log Viterbi likelihood of the
    sub-activity sentence; -inf when the grammar rejects the sentence.
    """
    total = 0.0
    for seg in pg.segments:
        total += segment_prior(seg.a, seg.o, seg.u, seg.duration, seg.s, model)
        if total == float("-inf"):
            return total
    return total + viterbi_log_likelihood(grammar, pg.sentence())


@dataclass(frozen=True)
class LogTables:
    """Dense log-probability views of an emission model for inference loops.

    Row order follows the model's alphabets; ``a_log[i, k]`` is
    log p(action i | sub-activity k).
    """

    model: EmissionModel
    sub_index: dict[str, int]
    a_index: dict[str, int]
    o_index: dict[str, int]
    u_index: dict[str, int]
    a_log: np.ndarray
    o_log: np.ndarray
    u_log: np.ndarray
    prior_log: np.ndarray
    dur_mu: np.ndarray
    dur_sigma: np.ndarray

    @classmethod
    def from_model(cls, model: EmissionModel) -> "LogTables":
        al = model.alphabets

        def table(rows: Mapping[str, Mapping[str, float]], labels: Sequence[str]) -> np.ndarray:
            data = [[rows[s].get(label, 0.0) for s in al.subactivities] for label in labels]
            with np.errstate(divide="ignore"):
                return np.log(np.asarray(data, dtype=float))

        with np.errstate(divide="ignore"):
            prior = np.log(
                np.asarray([model.prior_s.get(s, 0.0) for s in al.subactivities])
            )
        return cls(
            model=model,
            sub_index={s: i for i, s in enumerate(al.subactivities)},
            a_index={a: i for i, a in enumerate(al.actions)},
            o_index={o: i for i, o in enumerate(al.objects)},
            u_index={u: i for i, u in enumerate(al.affordances)},
            a_log=table(model.actions_given_s, al.actions),
            o_log=table(model.objects_given_s, al.objects),
            u_log=table(model.affordances_given_s, al.affordances),
            prior_log=prior,
            dur_mu=np.asarray([model.durations[s][0] for s in al.subactivities]),
            dur_sigma=np.asarray([model.durations[s][1] for s in al.subactivities]),
        )

    def log_duration_row(self, frames) -> np.ndarray:
        """Log-normal densities for one or more frame counts, per sub-activity."""
        scalar = np.ndim(frames) == 0
        x = np.log(np.atleast_1d(np.asarray(frames, dtype=float)))[:, None]
        out = (
            -x
            - np.log(self.dur_sigma)
            - 0.5 * LOG_2PI
            - 0.5 * ((x - self.dur_mu) / self.dur_sigma) ** 2
        )
        return out[0] if scalar else out
