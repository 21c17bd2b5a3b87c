"""Synthetic episodes and noisy detection streams from planted models.

Stands in for the perception stack: ground-truth label tracks are sampled
from a planted grammar plus emission model, and per-frame detector
surrogates are drawn from a Dirichlet centered on a softened one-hot of
the (possibly flipped) true label.  Two knobs per channel: the confusion
temperature controls how soft the center is, the flip rate how often the
center sits on a wrong label.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .emission import Alphabets, EmissionModel
from .errors import ModelError, StreamFormatError
from .grammar import Grammar, Production, sample_sentence_with_rng, save_grammar
from .induction import Corpus
from .stream import (
    DetectionFrame,
    ObjectTrack,
    ParseGraphSeq,
    Segment,
    merge_frames,
    save_parse_graph,
    save_stream,
)


@dataclass(frozen=True)
class NoiseModel:
    """Detector-surrogate noise: per-channel confusion plus label flips."""

    action_temperature: float = 0.0
    object_temperature: float = 0.0
    affordance_temperature: float = 0.0
    label_flip_rate: float = 0.0
    score_concentration: float = 100.0

    def __post_init__(self):
        for name in ("action_temperature", "object_temperature", "affordance_temperature"):
            if getattr(self, name) < 0:
                raise ModelError(f"{name} must be non-negative")
        if not (0.0 <= self.label_flip_rate < 1.0):
            raise ModelError("label_flip_rate must lie in [0, 1)")
        if self.score_concentration <= 0:
            raise ModelError("score_concentration must be positive")

    @property
    def noiseless(self) -> bool:
        return (
            self.label_flip_rate == 0.0
            and self.action_temperature == 0.0
            and self.object_temperature == 0.0
            and self.affordance_temperature == 0.0
        )


def _soften(size: int, index: int, temperature: float) -> np.ndarray:
    """One-hot blended toward uniform; temperature 0 keeps the exact one-hot."""
    row = np.zeros(size)
    row[index] = 1.0
    if temperature > 0.0:
        row = (row + temperature / size) / (1.0 + temperature)
    return row


def _score_row(alphabet, true_label, temperature, noise: NoiseModel, rng) -> dict[str, float]:
    size = len(alphabet)
    index = alphabet.index(true_label)
    if noise.label_flip_rate > 0.0 and rng.random() < noise.label_flip_rate:
        others = [i for i in range(size) if i != index]
        index = others[rng.integers(len(others))] if others else index
    center = _soften(size, index, temperature)
    if temperature <= 0.0:
        scores = center
    else:
        scores = rng.dirichlet(noise.score_concentration * center)
    return {label: float(p) for label, p in zip(alphabet, scores)}


def sample_frames(
    frame_labels: Sequence[tuple],
    alphabets: Alphabets,
    noise: NoiseModel,
    rng,
    object_ids: Sequence[str],
    start: int = 0,
) -> list[DetectionFrame]:
    """Detection frames for per-frame (s, a, o, u) ground-truth tuples.

    Labels outside the alphabets (prediction padding) yield uniform rows.
    """
    frames = []
    for offset, (_, a, o, u) in enumerate(frame_labels):
        if a in alphabets.actions:
            action_scores = _score_row(
                alphabets.actions, a, noise.action_temperature, noise, rng
            )
        else:
            action_scores = {x: 1.0 / len(alphabets.actions) for x in alphabets.actions}
        tracks = []
        for j, obj_id in enumerate(object_ids):
            if j < len(o) and o[j] in alphabets.objects:
                object_scores = _score_row(
                    alphabets.objects, o[j], noise.object_temperature, noise, rng
                )
            else:
                object_scores = {x: 1.0 / len(alphabets.objects) for x in alphabets.objects}
            if j < len(u) and u[j] in alphabets.affordances:
                affordance_scores = _score_row(
                    alphabets.affordances, u[j], noise.affordance_temperature, noise, rng
                )
            else:
                affordance_scores = {
                    x: 1.0 / len(alphabets.affordances) for x in alphabets.affordances
                }
            tracks.append(ObjectTrack(obj_id, object_scores, affordance_scores))
        frames.append(DetectionFrame(start + offset, action_scores, tuple(tracks)))
    return frames


def _draw(row: dict[str, float], rng) -> str:
    labels = list(row)
    x = rng.random()
    acc = 0.0
    for label in labels:
        acc += row[label]
        if x < acc:
            return label
    return labels[-1]


def sample_duration_frames(model: EmissionModel, s: str, rng) -> int:
    mu, sigma = model.durations[s]
    return max(1, int(round(float(rng.lognormal(mu, sigma)))))


def generate_episode(
    grammar: Grammar,
    model: EmissionModel,
    noise: NoiseModel,
    rng_seed: int,
    n_objects: int = 2,
) -> tuple[ParseGraphSeq, list[DetectionFrame]]:
    """One episode: ground-truth parse graph plus its noisy detection stream.

    The sub-activity sentence comes from the grammar, durations from the
    log-normals, actions and per-object affordances from the emission
    tables; object labels are fixed for the whole episode.  Deterministic
    per seed.
    """
    rng = np.random.default_rng(rng_seed)
    sentence = sample_sentence_with_rng(grammar, rng)
    object_ids = tuple(f"obj{j}" for j in range(n_objects))
    object_labels = tuple(
        model.alphabets.objects[rng.integers(len(model.alphabets.objects))]
        for _ in range(n_objects)
    )
    frame_labels: list[tuple] = []
    for s in sentence:
        duration = sample_duration_frames(model, s, rng)
        a = _draw(model.actions_given_s[s], rng)
        u = tuple(_draw(model.affordances_given_s[s], rng) for _ in range(n_objects))
        frame_labels.extend([(s, a, object_labels, u)] * duration)
    segments = merge_frames(frame_labels)
    truth = ParseGraphSeq(event=grammar.root, segments=segments, log_posterior=0.0)
    frames = sample_frames(frame_labels, model.alphabets, noise, rng, object_ids)
    return truth, frames


# ---------------------------------------------------------------------------
# Planted benchmark: alphabets, events, dataset generation


def default_alphabets() -> Alphabets:
    """Benchmark alphabet sizes: 10 sub-activities, 10 actions, 12 affordances."""
    return Alphabets(
        subactivities=(
            "reach",
            "grasp",
            "lift",
            "carry",
            "lower",
            "pour",
            "stir",
            "open_lid",
            "close_lid",
            "wipe",
        ),
        actions=(
            "reaching",
            "grasping",
            "lifting",
            "carrying",
            "lowering",
            "pouring",
            "stirring",
            "opening",
            "closing",
            "wiping",
        ),
        objects=("cup", "bowl", "kettle", "spoon", "lid", "cloth", "jar", "tray"),
        affordances=(
            "reachable",
            "graspable",
            "liftable",
            "carryable",
            "lowerable",
            "pourable",
            "pour_to",
            "stirrable",
            "openable",
            "closable",
            "wipeable",
            "stationary",
        ),
    )


#: Canonical action and affordance for each sub-activity of the benchmark.
_PRIMARY = {
    "reach": ("reaching", "reachable"),
    "grasp": ("grasping", "graspable"),
    "lift": ("lifting", "liftable"),
    "carry": ("carrying", "carryable"),
    "lower": ("lowering", "lowerable"),
    "pour": ("pouring", "pourable"),
    "stir": ("stirring", "stirrable"),
    "open_lid": ("opening", "openable"),
    "close_lid": ("closing", "closable"),
    "wipe": ("wiping", "wipeable"),
}


def _peaked(alphabet: Sequence[str], peak: str, mass: float = 0.8) -> dict[str, float]:
    rest = (1.0 - mass) / (len(alphabet) - 1)
    return {label: (mass if label == peak else rest) for label in alphabet}


def _uniform_row(alphabet: Sequence[str]) -> dict[str, float]:
    return {label: 1.0 / len(alphabet) for label in alphabet}


def planted_model(
    alphabets: Alphabets,
    mean_durations: dict[str, float] | None = None,
    sigma: float = 0.25,
    action_mass: float = 0.85,
    affordance_mass: float = 0.7,
) -> EmissionModel:
    """Peaked emission tables tied to the canonical label pairs."""
    mean_durations = mean_durations or {}
    actions_given_s = {}
    affordances_given_s = {}
    objects_given_s = {}
    durations = {}
    for s in alphabets.subactivities:
        primary_a, primary_u = _PRIMARY[s]
        actions_given_s[s] = _peaked(alphabets.actions, primary_a, action_mass)
        base = _peaked(alphabets.affordances, primary_u, affordance_mass)
        # spread most of the remaining affordance mass onto "stationary":
        # most objects are bystanders in any given segment.
        bump = 0.2
        base = {u: p * (1.0 - bump) for u, p in base.items()}
        base["stationary"] += bump
        affordances_given_s[s] = base
        objects_given_s[s] = _uniform_row(alphabets.objects)
        durations[s] = (math.log(mean_durations.get(s, 16.0)), sigma)
    prior = _uniform_row(alphabets.subactivities)
    return EmissionModel(
        alphabets=alphabets,
        actions_given_s=actions_given_s,
        objects_given_s=objects_given_s,
        affordances_given_s=affordances_given_s,
        prior_s=prior,
        durations=durations,
    )


def planted_events(alphabets: Alphabets | None = None) -> dict[str, tuple[Grammar, EmissionModel]]:
    """Four event grammars over the shared benchmark alphabets.

    Each grammar composes a few multi-step chunks and one or two
    interchangeable slots, so structure learning has real patterns and
    classes to find.
    """
    al = alphabets or default_alphabets()
    t = lambda *names: tuple(names)  # noqa: E731 - local shorthand

    def grammar(root, productions):
        return Grammar(root=root, productions=productions, terminals=frozenset(al.subactivities))

    events: dict[str, tuple[Grammar, EmissionModel]] = {}

    fetch = Production.sequence("Fetch", t("reach", "grasp"))
    move = Production.sequence("Move", t("lift", "carry", "lower"))

    # serve_drink: fetch, move, then pour or stir, then wipe up.
    events["serve_drink"] = (
        grammar(
            "serve_drink",
            {
                "Fetch": fetch,
                "Move": move,
                "Mix": Production.choice("Mix", [("pour", 0.6), ("stir", 0.4)]),
                "Full": Production.sequence("Full", t("Fetch", "Move", "Mix", "wipe")),
                "Short": Production.sequence("Short", t("Fetch", "Mix", "wipe")),
                "serve_drink": Production.choice(
                    "serve_drink", [("Full", 0.55), ("Short", 0.45)]
                ),
            },
        ),
        planted_model(al, {"pour": 22.0, "stir": 26.0, "wipe": 12.0}),
    )

    # heat_meal: open, load (pour or stir), close; sometimes fetch first.
    events["heat_meal"] = (
        grammar(
            "heat_meal",
            {
                "Fetch": fetch,
                "Load": Production.choice("Load", [("pour", 0.5), ("stir", 0.5)]),
                "Cycle": Production.sequence("Cycle", t("open_lid", "Load", "close_lid")),
                "WithFetch": Production.sequence("WithFetch", t("Fetch", "Cycle")),
                "Twice": Production.sequence("Twice", t("Cycle", "Cycle")),
                "heat_meal": Production.choice(
                    "heat_meal", [("WithFetch", 0.5), ("Cycle", 0.3), ("Twice", 0.2)]
                ),
            },
        ),
        planted_model(al, {"open_lid": 10.0, "close_lid": 10.0, "pour": 18.0, "stir": 18.0}),
    )

    # relocate_object: fetch then one or two carries, optional wipe.
    events["relocate_object"] = (
        grammar(
            "relocate_object",
            {
                "Fetch": fetch,
                "Move": move,
                "Once": Production.sequence("Once", t("Fetch", "Move")),
                "Twice": Production.sequence("Twice", t("Fetch", "Move", "Move")),
                "Clean": Production.sequence("Clean", t("Fetch", "Move", "wipe")),
                "relocate_object": Production.choice(
                    "relocate_object", [("Once", 0.45), ("Twice", 0.3), ("Clean", 0.25)]
                ),
            },
        ),
        planted_model(al, {"carry": 30.0, "lower": 10.0}),
    )

    # tidy_surface: a wipe or a stir-and-wipe pass, plain or under a lid.
    events["tidy_surface"] = (
        grammar(
            "tidy_surface",
            {
                "Fetch": fetch,
                "Pass": Production.choice("Pass", [("wipe", 0.5), ("ScrubPass", 0.5)]),
                "ScrubPass": Production.sequence("ScrubPass", t("stir", "wipe")),
                "Reveal": Production.sequence("Reveal", t("open_lid", "Pass", "close_lid")),
                "Plain": Production.sequence("Plain", t("Fetch", "Pass")),
                "tidy_surface": Production.choice(
                    "tidy_surface", [("Plain", 0.6), ("Reveal", 0.4)]
                ),
            },
        ),
        planted_model(al, {"wipe": 20.0, "open_lid": 8.0, "close_lid": 8.0}),
    )
    return events


@dataclass(frozen=True)
class BenchmarkSpec:
    """Counts and seeds for a reproducible dataset directory."""

    seed: int = 0
    events: tuple[str, ...] = ("serve_drink", "heat_meal", "relocate_object", "tidy_surface")
    train_episodes: int = 20
    test_episodes: int = 10
    corpus_sentences: int = 500
    n_objects: int = 2
    noise: NoiseModel = field(
        default_factory=lambda: NoiseModel(
            action_temperature=0.4,
            object_temperature=0.4,
            affordance_temperature=0.4,
            label_flip_rate=0.1,
            score_concentration=60.0,
        )
    )

    @classmethod
    def from_json(cls, doc: dict) -> "BenchmarkSpec":
        noise = NoiseModel(**doc.get("noise", {}))
        fields = {k: v for k, v in doc.items() if k != "noise"}
        if "events" in fields:
            fields["events"] = tuple(fields["events"])
        return cls(noise=noise, **fields)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "events": list(self.events),
            "train_episodes": self.train_episodes,
            "test_episodes": self.test_episodes,
            "corpus_sentences": self.corpus_sentences,
            "n_objects": self.n_objects,
            "noise": {
                "action_temperature": self.noise.action_temperature,
                "object_temperature": self.noise.object_temperature,
                "affordance_temperature": self.noise.affordance_temperature,
                "label_flip_rate": self.noise.label_flip_rate,
                "score_concentration": self.noise.score_concentration,
            },
        }


def _episode_seed(base: int, event: str, split: str, index: int) -> int:
    digest = hashlib.sha256(f"{base}:{event}:{split}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def generate_benchmark(spec: BenchmarkSpec, out_dir) -> Path:
    """Write corpora, grammars, models, episodes and ground truth.

    The layout is fully reproducible from the spec's seed; rerunning with
    the same spec produces byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    alphabets = default_alphabets()
    available = planted_events(alphabets)
    unknown = set(spec.events) - set(available)
    if unknown:
        raise ModelError(f"unknown benchmark events: {sorted(unknown)}")

    with open(out / "alphabets.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "subactivities": list(alphabets.subactivities),
                "actions": list(alphabets.actions),
                "objects": list(alphabets.objects),
                "affordances": list(alphabets.affordances),
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(spec.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    for event in spec.events:
        grammar, model = available[event]
        event_dir = out / "events" / event
        event_dir.mkdir(parents=True, exist_ok=True)
        save_grammar(grammar, event_dir / "grammar.json")
        model.save(event_dir / "model.json")

        corpus_rng = np.random.default_rng(_episode_seed(spec.seed, event, "corpus", 0))
        sentences = tuple(
            sample_sentence_with_rng(grammar, corpus_rng)
            for _ in range(spec.corpus_sentences)
        )
        Corpus(event, sentences).to_file(event_dir / "corpus.txt")

        for split, count in (("train", spec.train_episodes), ("test", spec.test_episodes)):
            split_dir = event_dir / split
            split_dir.mkdir(parents=True, exist_ok=True)
            for index in range(count):
                seed = _episode_seed(spec.seed, event, split, index)
                truth, frames = generate_episode(
                    grammar, model, spec.noise, seed, n_objects=spec.n_objects
                )
                stem = f"ep{index:03d}"
                save_stream(frames, split_dir / f"{stem}.stream.jsonl")
                save_parse_graph(truth, split_dir / f"{stem}.truth.json")
    return out
