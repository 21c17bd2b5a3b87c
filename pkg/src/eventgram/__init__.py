"""Temporal And-Or grammars for activity parsing and prediction."""

__version__ = "0.1.0"

from .earley import (
    EarleyChart,
    EarleyState,
    next_symbols,
    parse_prefix,
    prefix_likelihood,
)
from .emission import (
    Alphabets,
    EmissionModel,
    learn_emissions,
    parse_graph_prior,
    segment_prior,
)
from .grammar import (
    Grammar,
    ParseTree,
    Production,
    Symbol,
    deserialize,
    enumerate_language,
    sample_sentence,
    sentence_likelihood,
    serialize,
    viterbi_likelihood,
)
from .induction import (
    AdiosGraph,
    Corpus,
    InductionConfig,
    estimate_branch_probabilities,
    find_equivalence_class,
    find_significant_pattern,
    induce,
    path_ratios,
    rewire,
)
from .metrics import ChannelScores, score_detection, score_prediction
from .prediction import (
    Prediction,
    PredictionConfig,
    correct_sentence,
    predict_labels,
    predict_next_subactivity,
    sample_remaining_duration,
)
from .refinement import GibbsSchedule, ParseConfig, gibbs_refine, joint_parse, log_posterior
from .segmentation import (
    OnlineSegmenter,
    best_segment_interpretation,
    online_update,
    segment_stream,
)
from .simulator import BenchmarkSpec, NoiseModel, generate_benchmark, generate_episode
from .stream import (
    DetectionFrame,
    ObjectTrack,
    ParseGraphSeq,
    Segment,
    merge_frames,
    segment_average_scores,
)

__all__ = [name for name in dir() if not name.startswith("_")]
