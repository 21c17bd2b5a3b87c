"""Online segmentation and labelling of a detection stream.

For every candidate segment the best action/object/affordance labels come
straight from the averaged detection scores; the sub-activity then
maximizes the emission tables times the duration density times the
sub-activity prior.  A forward dynamic program over segment end frames
(segment length capped at ``max_seg_len``) finds the exact optimum among
admissible segmentations; feeding frames one at a time gives identical
results to the batch run by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .emission import EmissionModel, LogTables
from .errors import StreamFormatError
from .stream import (
    DetectionFrame,
    ParseGraphSeq,
    StreamArrays,
    clamped_log_row,
    merge_frames,
    stream_arrays,
)

#: Default cap on segment length; bounds the DP cost at O(T * L).
DEFAULT_MAX_SEG_LEN = 200

#: Per-segment detection aggregation.  "product" scores every frame once
#: against its segment's label, so cut placement is driven by fit while
#: the duration model and prior arbitrate segment count.  "geomean"
#: length-normalizes each segment's detection term; with bounded per-frame
#: scores the per-segment prior costs then always favour one huge segment,
#: so it is kept only as an analysis mode.
SEGMENT_SCORE_MODES = ("product", "geomean")
DEFAULT_SEGMENT_SCORE = "product"


@dataclass(frozen=True)
class SegmentChoice:
    """Labels and score of one decoded segment."""

    start: int
    end: int
    s: str
    a: str
    o: tuple[str, ...]
    u: tuple[str, ...]
    log_score: float


def best_segment_interpretation(
    stream: Sequence[DetectionFrame] | StreamArrays,
    start: int,
    end: int,
    model: EmissionModel,
    mode: str = DEFAULT_SEGMENT_SCORE,
) -> SegmentChoice:
    """Best (a, o, u, s) for one segment, two-step.

    Detection labels are the per-channel argmax of the averaged scores;
    the sub-activity maximizes p(a|s) p(o|s) p(u|s) p(duration|s) p(s).
    The returned log-score composes both steps (detection means plus the
    winning sub-activity bracket), up to the shared normalizer.
    """
    arrays = _as_arrays(stream, model)
    tables = _tables(model)
    det, a_idx, o_idx, u_idx = _detection_choice(arrays, start, end, mode)
    bracket = _subactivity_bracket(tables, a_idx, o_idx, u_idx, end - start + 1)
    s_idx = int(np.argmax(bracket))
    al = model.alphabets
    return SegmentChoice(
        start=start,
        end=end,
        s=al.subactivities[s_idx],
        a=al.actions[a_idx],
        o=tuple(al.objects[j] for j in o_idx),
        u=tuple(al.affordances[j] for j in u_idx),
        log_score=float(det + bracket[s_idx]),
    )


def _as_arrays(stream, model: EmissionModel) -> StreamArrays:
    if isinstance(stream, StreamArrays):
        return stream
    al = model.alphabets
    return stream_arrays(stream, al.actions, al.objects, al.affordances)


def _tables(model: EmissionModel) -> LogTables:
    return LogTables.from_model(model)


def _detection_choice(arrays: StreamArrays, start: int, end: int, mode: str):
    scale = 1.0 if mode == "geomean" else float(end - start + 1)
    a_row = arrays.mean_action(start, end)
    a_idx = int(np.argmax(a_row))
    det = a_row[a_idx] * scale
    o_idx = []
    u_idx = []
    for j in range(len(arrays.object_ids)):
        o_row = arrays.mean_object(j, start, end)
        u_row = arrays.mean_affordance(j, start, end)
        oj = int(np.argmax(o_row))
        uj = int(np.argmax(u_row))
        o_idx.append(oj)
        u_idx.append(uj)
        det += (o_row[oj] + u_row[uj]) * scale
    return det, a_idx, o_idx, u_idx


def _subactivity_bracket(tables: LogTables, a_idx, o_idx, u_idx, duration: int) -> np.ndarray:
    bracket = tables.a_log[a_idx].copy()
    for oj, uj in zip(o_idx, u_idx):
        bracket += tables.o_log[oj] + tables.u_log[uj]
    bracket += tables.log_duration_row(duration) + tables.prior_log
    return bracket


class OnlineSegmenter:
    """Incremental forward DP; one :meth:`update` per frame.

    State after ``T`` frames is exactly the batch DP over those frames:
    ``best[f + 1]`` is the optimal score of a segmentation of frames
    ``start .. start + f``; ties prefer fewer segments, then the earlier
    start of the final segment.
    """

    def __init__(
        self,
        model: EmissionModel,
        max_seg_len: int = DEFAULT_MAX_SEG_LEN,
        mode: str = DEFAULT_SEGMENT_SCORE,
        start: int = 0,
    ):
        if max_seg_len < 1:
            raise StreamFormatError("max_seg_len must be at least 1")
        if mode not in SEGMENT_SCORE_MODES:
            raise StreamFormatError(f"unknown segment score mode {mode!r}")
        self.model = model
        self.tables = LogTables.from_model(model)
        self.max_seg_len = max_seg_len
        self.mode = mode
        self.start = start
        al = model.alphabets
        self._alphabets = al
        self._n_obj: int | None = None
        self._object_ids: tuple[str, ...] = ()
        self._a_cum: list[np.ndarray] = [np.zeros(len(al.actions))]
        self._o_cum: list[list[np.ndarray]] = []
        self._u_cum: list[list[np.ndarray]] = []
        self.best: list[float] = [0.0]
        self.nsegs: list[int] = [0]
        self.back: list[tuple[int, SegmentChoice]] = []

    @property
    def n_frames(self) -> int:
        return len(self._a_cum) - 1

    def update(self, frame: DetectionFrame) -> "OnlineSegmenter":
        """Consume one frame and extend the DP to its index."""
        al = self._alphabets
        expected_t = self.start + self.n_frames
        if frame.t != expected_t:
            raise StreamFormatError(f"expected frame t={expected_t}, got {frame.t}")
        if self._n_obj is None:
            self._n_obj = len(frame.object_tracks)
            self._object_ids = tuple(tr.object_id for tr in frame.object_tracks)
            self._o_cum = [[np.zeros(len(al.objects))] for _ in range(self._n_obj)]
            self._u_cum = [[np.zeros(len(al.affordances))] for _ in range(self._n_obj)]
        elif tuple(tr.object_id for tr in frame.object_tracks) != self._object_ids:
            raise StreamFormatError(f"frame {frame.t}: object ids changed mid-stream")

        self._a_cum.append(self._a_cum[-1] + clamped_log_row(frame.action_scores, al.actions))
        for j, track in enumerate(frame.object_tracks):
            self._o_cum[j].append(
                self._o_cum[j][-1] + clamped_log_row(track.object_scores, al.objects)
            )
            self._u_cum[j].append(
                self._u_cum[j][-1] + clamped_log_row(track.affordance_scores, al.affordances)
            )

        self._extend()
        return self

    def _extend(self):
        """DP step for the newest frame index f (0-based offset)."""
        f = self.n_frames - 1
        first_b = max(0, f - self.max_seg_len + 1)
        bs = np.arange(first_b, f + 1)
        lengths = (f - bs + 1).astype(float)
        inv_len = 1.0 / lengths if self.mode == "geomean" else np.ones_like(lengths)

        a_hi = self._a_cum[f + 1]
        a_mat = (a_hi - np.stack([self._a_cum[b] for b in bs])) * inv_len[:, None]
        a_best = np.argmax(a_mat, axis=1)
        det = a_mat[np.arange(len(bs)), a_best]

        o_best = []
        u_best = []
        for j in range(self._n_obj or 0):
            o_mat = (self._o_cum[j][f + 1] - np.stack([self._o_cum[j][b] for b in bs])) * inv_len[
                :, None
            ]
            u_mat = (self._u_cum[j][f + 1] - np.stack([self._u_cum[j][b] for b in bs])) * inv_len[
                :, None
            ]
            oj = np.argmax(o_mat, axis=1)
            uj = np.argmax(u_mat, axis=1)
            det = det + o_mat[np.arange(len(bs)), oj] + u_mat[np.arange(len(bs)), uj]
            o_best.append(oj)
            u_best.append(uj)

        # Sub-activity bracket per candidate start: (B, S)
        brackets = self.tables.a_log[a_best]
        for j in range(self._n_obj or 0):
            brackets = brackets + self.tables.o_log[o_best[j]] + self.tables.u_log[u_best[j]]
        brackets = brackets + self.tables.log_duration_row(lengths) + self.tables.prior_log
        s_best = np.argmax(brackets, axis=1)
        seg_scores = det + brackets[np.arange(len(bs)), s_best]

        best_total = -np.inf
        best_key = None
        best_entry = None
        for i, b in enumerate(bs):
            total = self.best[b] + float(seg_scores[i])
            key = (self.nsegs[b] + 1, int(b))
            if best_entry is None or total > best_total or (
                total == best_total and key < best_key
            ):
                best_total = total
                best_key = key
                best_entry = (int(b), i)

        b, i = best_entry
        al = self._alphabets
        choice = SegmentChoice(
            start=self.start + b,
            end=self.start + f,
            s=al.subactivities[int(s_best[i])],
            a=al.actions[int(a_best[i])],
            o=tuple(al.objects[int(o_best[j][i])] for j in range(self._n_obj or 0)),
            u=tuple(al.affordances[int(u_best[j][i])] for j in range(self._n_obj or 0)),
            log_score=float(seg_scores[i]),
        )
        self.best.append(best_total)
        self.nsegs.append(self.nsegs[b] + 1)
        self.back.append((b, choice))

    def decode(self) -> tuple[list[SegmentChoice], float]:
        """Traceback: decoded segments (left to right) and the total score."""
        if self.n_frames == 0:
            raise StreamFormatError("no frames segmented yet")
        segments: list[SegmentChoice] = []
        f = self.n_frames
        while f > 0:
            b, choice = self.back[f - 1]
            segments.append(choice)
            f = b
        segments.reverse()
        return segments, self.best[self.n_frames]

    def parse_graph(self) -> ParseGraphSeq:
        """Decoded segmentation as a parse graph (identical neighbours merged)."""
        segments, score = self.decode()
        labels = []
        for seg in segments:
            labels.extend([(seg.s, seg.a, seg.o, seg.u)] * (seg.end - seg.start + 1))
        merged = merge_frames(labels, start=self.start)
        return ParseGraphSeq(event=None, segments=merged, log_posterior=score)


def segment_stream(
    stream: Sequence[DetectionFrame],
    model: EmissionModel,
    max_seg_len: int = DEFAULT_MAX_SEG_LEN,
    mode: str = DEFAULT_SEGMENT_SCORE,
) -> ParseGraphSeq:
    """Batch segmentation: run the online DP over the whole stream."""
    if not stream:
        raise StreamFormatError("cannot segment an empty stream")
    state = OnlineSegmenter(model, max_seg_len=max_seg_len, mode=mode, start=stream[0].t)
    for frame in stream:
        state.update(frame)
    return state.parse_graph()


def online_update(state: OnlineSegmenter, frame: DetectionFrame) -> OnlineSegmenter:
    """Advance the DP by one frame; equivalent to re-running the batch DP."""
    return state.update(frame)
