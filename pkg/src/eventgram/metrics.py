"""Frame-label metrics in the micro/macro table conventions.

Micro precision equals micro recall (one label per frame), reported as
overall frame accuracy.  Macro precision/recall average over the classes
present in the truth; classes never predicted score zero precision.  All
values are percentages.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import EventGramError


class MetricError(EventGramError):
    code = "metric"
    exit_code = 4


@dataclass(frozen=True)
class ChannelScores:
    micro: float
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def as_row(self) -> dict[str, float]:
        return {
            "micro": self.micro,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
        }


def score_detection(pred: Sequence[str], truth: Sequence[str]) -> ChannelScores:
    """Micro P/R plus macro precision/recall/F1 over truth classes."""
    if len(pred) != len(truth):
        raise MetricError(f"length mismatch: {len(pred)} predictions, {len(truth)} truths")
    if not truth:
        raise MetricError("cannot score empty label sequences")
    correct = sum(1 for p, t in zip(pred, truth) if p == t)
    micro = 100.0 * correct / len(truth)

    classes = sorted(set(truth))
    precisions = []
    recalls = []
    for cls in classes:
        tp = sum(1 for p, t in zip(pred, truth) if p == cls and t == cls)
        predicted = sum(1 for p in pred if p == cls)
        actual = sum(1 for t in truth if t == cls)
        precisions.append(tp / predicted if predicted else 0.0)
        recalls.append(tp / actual)
    macro_p = 100.0 * sum(precisions) / len(classes)
    macro_r = 100.0 * sum(recalls) / len(classes)
    if macro_p + macro_r > 0:
        macro_f1 = 2.0 * macro_p * macro_r / (macro_p + macro_r)
    else:
        macro_f1 = 0.0
    return ChannelScores(micro, macro_p, macro_r, macro_f1)


def score_prediction(pred: Sequence[str], truth: Sequence[str]) -> ChannelScores:
    """Same metric tuple over one prediction horizon (non-empty)."""
    if not truth or not pred:
        raise MetricError("empty prediction horizon")
    return score_detection(pred, truth)


def average_scores(scores: Sequence[ChannelScores]) -> ChannelScores:
    """Unweighted mean over evaluation points."""
    if not scores:
        raise MetricError("no scores to average")
    n = len(scores)
    return ChannelScores(
        micro=sum(s.micro for s in scores) / n,
        macro_precision=sum(s.macro_precision for s in scores) / n,
        macro_recall=sum(s.macro_recall for s in scores) / n,
        macro_f1=sum(s.macro_f1 for s in scores) / n,
    )
