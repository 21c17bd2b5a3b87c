"""Shared inference data model: detection streams, segments, parse graphs.

Detection streams abstract the perception stack as per-frame normalized
probability distributions over the action, object and affordance
alphabets.  Frames are indexed from 0; segment intervals are inclusive on
both ends.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import StreamFormatError

#: Slack allowed on per-frame categorical sums.
SCORE_ATOL = 1e-6

#: Log assigned to zero detection scores.  Prefix-sum segment scoring
#: cannot carry -inf (cumulative differences would produce NaN), so an
#: impossible label costs this much per frame instead; it dominates every
#: finite model term by orders of magnitude.
LOG_ZERO_SCORE = -1e4


def clamped_log_row(scores: Mapping[str, float], labels: Sequence[str]) -> np.ndarray:
    """Log scores over a fixed label order, zeros clamped to LOG_ZERO_SCORE."""
    row = np.asarray([scores.get(label, 0.0) for label in labels], dtype=float)
    with np.errstate(divide="ignore"):
        out = np.log(row)
    return np.maximum(out, LOG_ZERO_SCORE)


def _check_categorical(scores: Mapping[str, float], what: str, t: int) -> dict[str, float]:
    out = {}
    for label, value in scores.items():
        value = float(value)
        if value < 0.0 or not math.isfinite(value):
            raise StreamFormatError(f"frame {t}: {what} score for {label!r} is {value}")
        out[str(label)] = value
    total = math.fsum(out.values())
    if abs(total - 1.0) > SCORE_ATOL:
        raise StreamFormatError(f"frame {t}: {what} scores sum to {total!r}")
    return out


@dataclass(frozen=True)
class ObjectTrack:
    object_id: str
    object_scores: dict[str, float]
    affordance_scores: dict[str, float]


@dataclass(frozen=True)
class DetectionFrame:
    """One frame of detector output: normalized per-alphabet score tables."""

    t: int
    action_scores: dict[str, float]
    object_tracks: tuple[ObjectTrack, ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "action_scores", _check_categorical(self.action_scores, "action", self.t)
        )
        tracks = []
        for track in self.object_tracks:
            tracks.append(
                ObjectTrack(
                    track.object_id,
                    _check_categorical(track.object_scores, f"object {track.object_id}", self.t),
                    _check_categorical(
                        track.affordance_scores, f"affordance {track.object_id}", self.t
                    ),
                )
            )
        object.__setattr__(self, "object_tracks", tuple(tracks))


def validate_stream(frames: Sequence[DetectionFrame]) -> None:
    """Frames must be contiguous from frames[0].t with stable object ids."""
    if not frames:
        raise StreamFormatError("empty detection stream")
    ids = tuple(tr.object_id for tr in frames[0].object_tracks)
    start = frames[0].t
    for offset, frame in enumerate(frames):
        if frame.t != start + offset:
            raise StreamFormatError(
                f"frames not contiguous: expected t={start + offset}, got {frame.t}"
            )
        if tuple(tr.object_id for tr in frame.object_tracks) != ids:
            raise StreamFormatError(f"frame {frame.t}: object ids changed mid-stream")


@dataclass(frozen=True)
class Segment:
    """A maximal frame run sharing one label tuple; interval inclusive."""

    start: int
    end: int
    s: str
    a: str
    o: tuple[str, ...] = ()
    u: tuple[str, ...] = ()

    def __post_init__(self):
        if self.start > self.end:
            raise StreamFormatError(f"segment [{self.start}, {self.end}] is empty")
        object.__setattr__(self, "o", tuple(self.o))
        object.__setattr__(self, "u", tuple(self.u))
        if len(self.o) != len(self.u):
            raise StreamFormatError("per-object label vectors must align")

    @property
    def duration(self) -> int:
        return self.end - self.start + 1

    def labels(self) -> tuple:
        return (self.s, self.a, self.o, self.u)


@dataclass(frozen=True)
class ParseGraphSeq:
    """Segment decomposition of an episode, with its posterior score."""

    event: str | None
    segments: tuple[Segment, ...]
    log_posterior: float = float("nan")
    flagged_segments: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise StreamFormatError("parse graph needs at least one segment")
        prev = None
        for seg in self.segments:
            if prev is not None:
                if seg.start != prev.end + 1:
                    raise StreamFormatError(
                        f"segments do not tile: [{prev.start},{prev.end}] then "
                        f"[{seg.start},{seg.end}]"
                    )
                if (seg.s, seg.a, seg.u) == (prev.s, prev.a, prev.u):
                    raise StreamFormatError(
                        "consecutive segments share (s, a, u); merge them first"
                    )
            prev = seg

    @property
    def start(self) -> int:
        return self.segments[0].start

    @property
    def end(self) -> int:
        return self.segments[-1].end

    def sentence(self) -> tuple[str, ...]:
        return tuple(seg.s for seg in self.segments)

    def frame_labels(self) -> list[tuple]:
        """Per-frame (s, a, o, u) tuples, start..end."""
        out = []
        for seg in self.segments:
            out.extend([seg.labels()] * seg.duration)
        return out


def merge_frames(frame_labels: Sequence[tuple], start: int = 0) -> tuple[Segment, ...]:
    """Merge maximal runs of identical (s, a, o, u) tuples into segments."""
    if not frame_labels:
        raise StreamFormatError("no frame labels to merge")
    segments = []
    run_start = 0
    for t in range(1, len(frame_labels) + 1):
        if t == len(frame_labels) or frame_labels[t] != frame_labels[run_start]:
            s, a, o, u = frame_labels[run_start]
            segments.append(
                Segment(start + run_start, start + t - 1, s=s, a=a, o=tuple(o), u=tuple(u))
            )
            run_start = t
    return tuple(segments)


def segment_average_scores(stream: Sequence[DetectionFrame], start: int, end: int):
    """Per-label geometric mean of frame scores over [start, end], renormalized.

    Equivalent to exponentiating the mean log-score.  Labels scored zero in
    any frame stay zero; if every label zeroes out the result falls back to
    uniform.
    """
    if start > end:
        raise StreamFormatError(f"empty interval [{start}, {end}]")
    offset = stream[0].t
    lo, hi = start - offset, end - offset
    if lo < 0 or hi >= len(stream):
        raise StreamFormatError(f"interval [{start}, {end}] outside the stream")
    frames = stream[lo : hi + 1]

    def geo(dicts: list[Mapping[str, float]]) -> dict[str, float]:
        labels = sorted({k for d in dicts for k in d})
        means = {}
        for label in labels:
            logs = []
            for d in dicts:
                v = d.get(label, 0.0)
                if v <= 0.0:
                    logs = None
                    break
                logs.append(math.log(v))
            means[label] = math.exp(math.fsum(logs) / len(logs)) if logs else 0.0
        total = math.fsum(means.values())
        if total <= 0.0:
            return {label: 1.0 / len(labels) for label in labels}
        return {label: v / total for label, v in means.items()}

    actions = geo([f.action_scores for f in frames])
    per_object = []
    for j in range(len(frames[0].object_tracks)):
        per_object.append(
            (
                geo([f.object_tracks[j].object_scores for f in frames]),
                geo([f.object_tracks[j].affordance_scores for f in frames]),
            )
        )
    return actions, per_object


# ---------------------------------------------------------------------------
# Array view used by the inference modules


@dataclass(frozen=True)
class StreamArrays:
    """Log-score matrices with prefix sums for O(1) segment means.

    ``a_cum[t]`` holds the sum of the first ``t`` frame log-score rows, so
    the mean log-score of [b, f] is ``(a_cum[f + 1] - a_cum[b]) / len``.
    """

    actions: tuple[str, ...]
    objects: tuple[str, ...]
    affordances: tuple[str, ...]
    object_ids: tuple[str, ...]
    start: int
    a_cum: np.ndarray
    o_cum: tuple[np.ndarray, ...]
    u_cum: tuple[np.ndarray, ...]

    @property
    def n_frames(self) -> int:
        return self.a_cum.shape[0] - 1

    @property
    def end(self) -> int:
        return self.start + self.n_frames - 1

    def mean_action(self, b: int, f: int) -> np.ndarray:
        lo, hi = b - self.start, f - self.start
        return (self.a_cum[hi + 1] - self.a_cum[lo]) / (hi - lo + 1)

    def mean_object(self, j: int, b: int, f: int) -> np.ndarray:
        lo, hi = b - self.start, f - self.start
        return (self.o_cum[j][hi + 1] - self.o_cum[j][lo]) / (hi - lo + 1)

    def mean_affordance(self, j: int, b: int, f: int) -> np.ndarray:
        lo, hi = b - self.start, f - self.start
        return (self.u_cum[j][hi + 1] - self.u_cum[j][lo]) / (hi - lo + 1)


def _log_rows(dicts: Iterable[Mapping[str, float]], labels: Sequence[str]) -> np.ndarray:
    rows = [clamped_log_row(d, labels) for d in dicts]
    return np.stack(rows) if rows else np.zeros((0, len(labels)))


def stream_arrays(
    stream: Sequence[DetectionFrame],
    actions: Sequence[str],
    objects: Sequence[str],
    affordances: Sequence[str],
) -> StreamArrays:
    validate_stream(stream)
    actions = tuple(actions)
    objects = tuple(objects)
    affordances = tuple(affordances)
    object_ids = tuple(tr.object_id for tr in stream[0].object_tracks)

    def cum(rows: np.ndarray) -> np.ndarray:
        out = np.zeros((rows.shape[0] + 1, rows.shape[1]))
        np.cumsum(rows, axis=0, out=out[1:])
        return out

    a_cum = cum(_log_rows((f.action_scores for f in stream), actions))
    o_cum = []
    u_cum = []
    for j in range(len(object_ids)):
        o_cum.append(cum(_log_rows((f.object_tracks[j].object_scores for f in stream), objects)))
        u_cum.append(
            cum(_log_rows((f.object_tracks[j].affordance_scores for f in stream), affordances))
        )
    return StreamArrays(
        actions=actions,
        objects=objects,
        affordances=affordances,
        object_ids=object_ids,
        start=stream[0].t,
        a_cum=a_cum,
        o_cum=tuple(o_cum),
        u_cum=tuple(u_cum),
    )


# ---------------------------------------------------------------------------
# File formats


def frame_to_record(frame: DetectionFrame) -> dict:
    return {
        "t": frame.t,
        "actions": frame.action_scores,
        "objects": [
            {
                "id": tr.object_id,
                "labels": tr.object_scores,
                "affordances": tr.affordance_scores,
            }
            for tr in frame.object_tracks
        ],
    }


def frame_from_record(record: Mapping) -> DetectionFrame:
    try:
        tracks = tuple(
            ObjectTrack(obj["id"], obj["labels"], obj["affordances"])
            for obj in record.get("objects", [])
        )
        return DetectionFrame(int(record["t"]), dict(record["actions"]), tracks)
    except (KeyError, TypeError, ValueError) as exc:
        raise StreamFormatError(f"bad frame record: {exc}") from exc


def save_stream(frames: Sequence[DetectionFrame], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame in frames:
            fh.write(json.dumps(frame_to_record(frame), sort_keys=True) + "\n")


def load_stream(path) -> list[DetectionFrame]:
    frames = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise StreamFormatError(f"{path}:{line_no}: not valid JSON") from exc
            frames.append(frame_from_record(record))
    validate_stream(frames)
    return frames


def parse_graph_to_record(pg: ParseGraphSeq) -> dict:
    return {
        "event": pg.event,
        "log_posterior": pg.log_posterior,
        "segments": [
            {
                "start": seg.start,
                "end": seg.end,
                "s": seg.s,
                "a": seg.a,
                "o": list(seg.o),
                "u": list(seg.u),
            }
            for seg in pg.segments
        ],
    }


def parse_graph_from_record(record: Mapping) -> ParseGraphSeq:
    try:
        segments = tuple(
            Segment(
                int(seg["start"]),
                int(seg["end"]),
                s=seg["s"],
                a=seg["a"],
                o=tuple(seg.get("o", ())),
                u=tuple(seg.get("u", ())),
            )
            for seg in record["segments"]
        )
        log_post = float(record.get("log_posterior", float("nan")))
        return ParseGraphSeq(record.get("event"), segments, log_post)
    except (KeyError, TypeError, ValueError) as exc:
        raise StreamFormatError(f"bad parse graph record: {exc}") from exc


def save_parse_graph(pg: ParseGraphSeq, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(parse_graph_to_record(pg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_parse_graph(path) -> ParseGraphSeq:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_graph_from_record(json.load(fh))
