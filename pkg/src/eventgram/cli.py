"""Command line surface.

Verbs: simulate, induce, learn, parse-symbolic, segment, parse, predict,
eval, run.  Exit code 0 on success; error classes map to distinct
nonzero codes (see errors module).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .earley import next_symbols, parse_prefix
from .emission import Alphabets, EmissionModel, learn_emissions
from .errors import EventGramError
from .experiment import ExperimentConfig, render_report, run_experiment
from .grammar import load_grammar, save_grammar
from .induction import Corpus, InductionConfig, estimate_branch_probabilities, induce
from .metrics import score_detection
from .prediction import PredictionConfig, predict_labels
from .refinement import GibbsSchedule, ParseConfig, gibbs_refine, joint_parse
from .segmentation import OnlineSegmenter, segment_stream
from .simulator import BenchmarkSpec, generate_benchmark
from .stream import load_parse_graph, load_stream, parse_graph_to_record, save_parse_graph

log = logging.getLogger("eventgram")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eventgram",
        description="Learn temporal activity grammars; parse and predict detection streams.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for episode stages")
    parser.add_argument(
        "--log-level", default="warning", choices=("debug", "info", "warning", "error")
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a benchmark dataset")
    p.add_argument("--spec", type=Path, help="benchmark spec JSON (defaults built in)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("induce", help="induce a grammar from a sentence corpus")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--event", default="event", help="event label for the grammar root")
    p.add_argument("--eta", type=float, default=0.9)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--context-size", type=int, default=4)
    p.add_argument("--coverage", type=float, default=0.5)
    p.add_argument("--smoothing", type=float, default=0.0, help="branch pseudo-count")
    p.add_argument(
        "--structure-only",
        action="store_true",
        help="skip branch probability estimation (keep uniform)",
    )
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("learn", help="learn emission tables from ground-truth segments")
    p.add_argument("--truth-dir", type=Path, required=True, help="directory of *.truth.json")
    p.add_argument("--alphabets", type=Path, required=True, help="alphabets JSON")
    p.add_argument("--smoothing", type=float, default=1.0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("parse-symbolic", help="parse a sub-activity sentence")
    p.add_argument("--grammar", type=Path, required=True)
    p.add_argument("--sentence", required=True, help="whitespace-separated terminals")
    p.add_argument("--predict", action="store_true", help="also print the prediction set")

    p = sub.add_parser("segment", help="segment a detection stream")
    p.add_argument("--stream", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--max-seg-len", type=int, default=200)
    p.add_argument("--segment-score", choices=("product", "geomean"), default="product")
    p.add_argument("--online", action="store_true", help="feed frames one at a time")
    p.add_argument("--out", type=Path, help="optional parse graph JSON output")

    p = sub.add_parser("parse", help="joint event selection, segmentation and refinement")
    p.add_argument("--stream", type=Path, required=True)
    p.add_argument("--grammars", type=Path, required=True, help="dir of <event>.grammar.json")
    p.add_argument("--models", type=Path, required=True, help="dir of <event>.model.json")
    p.add_argument("--sweeps", type=int, default=100)
    p.add_argument("--t0", type=float, default=2.0)
    p.add_argument("--beta", type=float, default=0.9)
    p.add_argument("--max-seg-len", type=int, default=200)
    p.add_argument("--segment-score", choices=("product", "geomean"), default="product")
    p.add_argument("--out", type=Path, help="optional parse graph JSON output")

    p = sub.add_parser("predict", help="predict future labels from a stream prefix")
    p.add_argument("--stream", type=Path, required=True)
    p.add_argument("--grammar", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--at-frame", type=int, required=True)
    p.add_argument("--horizon", type=int, default=42)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--sweeps", type=int, default=100)
    p.add_argument("--marginal", action="store_true", help="per-frame vote instead of best path")

    p = sub.add_parser("eval", help="score predicted labels against ground truth")
    p.add_argument("--pred", type=Path, required=True, help="parse graph JSON")
    p.add_argument("--truth", type=Path, required=True, help="parse graph JSON")

    p = sub.add_parser("run", help="run a full experiment from a config file")
    p.add_argument("--config", type=Path, required=True)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper())
    try:
        return _dispatch(args)
    except EventGramError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 5


def _dispatch(args) -> int:
    handler = {
        "simulate": _cmd_simulate,
        "induce": _cmd_induce,
        "learn": _cmd_learn,
        "parse-symbolic": _cmd_parse_symbolic,
        "segment": _cmd_segment,
        "parse": _cmd_parse,
        "predict": _cmd_predict,
        "eval": _cmd_eval,
        "run": _cmd_run,
    }[args.command]
    return handler(args)


def _cmd_simulate(args) -> int:
    if args.spec:
        with open(args.spec, "r", encoding="utf-8") as fh:
            spec = BenchmarkSpec.from_json(json.load(fh))
    else:
        spec = BenchmarkSpec(seed=args.seed)
    out = generate_benchmark(spec, args.out)
    print(f"dataset written to {out}")
    return 0


def _cmd_induce(args) -> int:
    corpus = Corpus.from_file(args.corpus, args.event)
    config = InductionConfig(
        eta=args.eta,
        alpha=args.alpha,
        context_size=args.context_size,
        coverage=args.coverage,
    )
    grammar = induce(corpus, config)
    if not args.structure_only:
        grammar = estimate_branch_probabilities(grammar, corpus, smoothing=args.smoothing)
    save_grammar(grammar, args.out)
    print(
        f"induced grammar with {len(grammar.productions)} productions over "
        f"{len(grammar.terminals)} terminals -> {args.out}"
    )
    return 0


def _cmd_learn(args) -> int:
    with open(args.alphabets, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    alphabets = Alphabets(
        subactivities=tuple(doc["subactivities"]),
        actions=tuple(doc["actions"]),
        objects=tuple(doc["objects"]),
        affordances=tuple(doc["affordances"]),
    )
    segments = []
    for path in sorted(Path(args.truth_dir).glob("*.truth.json")):
        segments.extend(load_parse_graph(path).segments)
    model = learn_emissions(segments, alphabets, smoothing=args.smoothing)
    model.save(args.out)
    print(f"learned emission model from {len(segments)} segments -> {args.out}")
    return 0


def _cmd_parse_symbolic(args) -> int:
    grammar = load_grammar(args.grammar)
    sentence = tuple(args.sentence.split())
    chart = parse_prefix(grammar, sentence)
    if not chart.accepted:
        print(
            f"rejected at position {chart.failure_position}; "
            f"expected one of {sorted(chart.expected_at_failure)}"
        )
        return 0
    status = "complete sentence" if chart.is_complete_sentence() else "valid prefix"
    print(f"accepted ({status})")
    for k, states in enumerate(chart.state_sets):
        expected = sorted(
            {st.expected for st in states if not st.complete and st.expected in grammar.terminals}
        )
        print(f"S({k}): {len(states)} states; expected terminals: {' '.join(expected) or '-'}")
    if args.predict:
        scores = next_symbols(chart)
        total = sum(scores.values()) or 1.0
        for symbol in sorted(scores):
            print(f"predict {symbol}\t{scores[symbol]:.6g}\t({scores[symbol] / total:.4f})")
    return 0


def _cmd_segment(args) -> int:
    stream = load_stream(args.stream)
    model = EmissionModel.load(args.model)
    if args.online:
        state = OnlineSegmenter(
            model, max_seg_len=args.max_seg_len, mode=args.segment_score, start=stream[0].t
        )
        for frame in stream:
            state.update(frame)
        pg = state.parse_graph()
    else:
        pg = segment_stream(
            stream, model, max_seg_len=args.max_seg_len, mode=args.segment_score
        )
    for seg in pg.segments:
        print(
            f"{seg.start}\t{seg.end}\t{seg.s}\t{seg.a}\t{','.join(seg.o)}\t{','.join(seg.u)}"
        )
    print(f"log-score\t{pg.log_posterior:.6f}")
    if args.out:
        save_parse_graph(pg, args.out)
    return 0


def _load_event_dir(grammar_dir: Path, model_dir: Path):
    grammars = {}
    models = {}
    for path in sorted(Path(grammar_dir).glob("*.grammar.json")):
        event = path.name.replace(".grammar.json", "")
        grammars[event] = load_grammar(path)
    for path in sorted(Path(model_dir).glob("*.model.json")):
        event = path.name.replace(".model.json", "")
        models[event] = EmissionModel.load(path)
    return grammars, models


def _cmd_parse(args) -> int:
    stream = load_stream(args.stream)
    grammars, models = _load_event_dir(args.grammars, args.models)
    config = ParseConfig(
        max_seg_len=args.max_seg_len,
        schedule=GibbsSchedule(t0=args.t0, beta=args.beta, sweeps=args.sweeps),
        segment_score=args.segment_score,
    )
    event, pg = joint_parse(stream, grammars, models, config=config, seed=args.seed)
    print(f"event\t{event}")
    for seg in pg.segments:
        print(
            f"{seg.start}\t{seg.end}\t{seg.s}\t{seg.a}\t{','.join(seg.o)}\t{','.join(seg.u)}"
        )
    print(f"log-posterior\t{pg.log_posterior:.6f}")
    if args.out:
        save_parse_graph(pg, args.out)
    return 0


def _cmd_predict(args) -> int:
    stream = load_stream(args.stream)
    grammar = load_grammar(args.grammar)
    model = EmissionModel.load(args.model)
    start = stream[0].t
    upto = args.at_frame - start + 1
    if upto < 1 or upto > len(stream):
        raise EventGramError(f"--at-frame {args.at_frame} outside the stream")
    prefix = stream[:upto]
    pg = segment_stream(prefix, model)
    schedule = GibbsSchedule(sweeps=args.sweeps)
    pg = gibbs_refine(pg, prefix, grammar, model, schedule=schedule, seed=args.seed)
    config = PredictionConfig(
        horizon_frames=args.horizon, num_samples=args.samples, marginal=args.marginal
    )
    prediction = predict_labels(pg, prefix, grammar, model, config, seed=args.seed)
    for offset, (s, a, u) in enumerate(prediction.frames):
        print(f"{prediction.start + offset}\t{s}\t{a}\t{','.join(u)}")
    print(f"log-score\t{prediction.log_score:.6f}")
    return 0


def _cmd_eval(args) -> int:
    pred = load_parse_graph(args.pred)
    truth = load_parse_graph(args.truth)
    pred_frames = pred.frame_labels()
    truth_frames = truth.frame_labels()
    action = score_detection([f[1] for f in pred_frames], [f[1] for f in truth_frames])
    affordance = score_detection(
        [u for f in pred_frames for u in f[3]], [u for f in truth_frames for u in f[3]]
    )
    print(f"{'channel':<12}{'Micro P/R':>10}{'Prec.':>8}{'Recall':>8}{'F1':>8}")
    for name, row in (("action", action), ("affordance", affordance)):
        print(
            f"{name:<12}{row.micro:>10.1f}{row.macro_precision:>8.1f}"
            f"{row.macro_recall:>8.1f}{row.macro_f1:>8.1f}"
        )
    return 0


def _cmd_run(args) -> int:
    config = ExperimentConfig.from_file(args.config)
    report = run_experiment(config)
    print(render_report(report))
    return 0


if __name__ == "__main__":
    sys.exit(main())
