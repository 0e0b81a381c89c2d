"""Command-line front end: synth, build-pdm, build-dict, train, generate, eval.

Every command takes ``--seed`` and an optional ``--config`` file of
``key=value`` lines (keys are flag names, dashes or underscores); flags given
on the command line win over the file. Exit codes: 0 success, 1 usage
error, 2 data error, 3 numerical failure.

Sub-seeds fanned out from ``--seed``:
  synth       world and sequences (see ``corpus.synth_corpus``)
  build-dict  k-means restarts use seed, seed + 1, ...
  train lstm  weights [seed, 0], window order [seed, 1]
  train cgan  weights [seed, 0] and [seed, 1], minibatches and z [seed, 2]
  generate    sampling stream [seed, 3]

Report keys written by ``eval`` (dotted, one ``key=value`` per line):
  generated.mse, generated.frames, generated.history_frames,
  generated.smoothness.{mean_disp,max_disp,pixel_mean,pixel_max},
  truth.smoothness.{mean_disp,max_disp,pixel_mean,pixel_max},
  clusters.{ari,purity,subcluster_counts,subcluster_histogram,
            counts_in_range,min_subcluster_size},
  modes.{mse_overlap,mse_nonoverlap,overlap_better,mse_overlap_closed_loop,
         mse_nonoverlap_closed_loop,mse_by_horizon,frames,
         seconds_per_frame_overlap,seconds_per_frame_nonoverlap},
  methods.{dict,lstm,cgan}.{history_frames,seconds_per_frame}
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import cgan, clstm, dictionary, evaluation, plotting, sketch
from .corpus import (AffectClass, Corpus, DyadSequence, Standardizer, SynthConfig, load_corpus,
                     load_sequence, one_hot, save_corpus, save_sequence, synth, trailing_aggregate)
from .pdm import (DegenerateDataError, build_pdm, load_pdm, project_many, reconstruction_error, rotation_matrix,
                  save_pdm, shape_3d)
from .textio import FormatError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _say(text: str) -> None:
    print(text, flush=True)


def _echo(command: str, args: argparse.Namespace) -> None:
    skip = {"command", "method_cmd", "handler"}
    items = " ".join(f"{k}={v}" for k, v in sorted(vars(args).items()) if k not in skip)
    _say(f"# {command}: {items}")


# --- synth ------------------------------------------------------------------

def cmd_synth(args) -> None:
    cfg = SynthConfig(n_sequences=args.n_sequences, seq_len=args.seq_len, m=args.m,
                      n_intensity_levels=args.intensity_levels, seed=args.seed, start_index=args.start_index)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    corpus = synth(cfg)
    save_corpus(corpus, args.out)
    _say(f"wrote {len(corpus.sequences)} sequences ({corpus.n_frames()} frames, d={corpus.d}) to {args.out}")


# --- build-pdm ----------------------------------------------------------------

def posed_shapes(corpus: Corpus, stride: int) -> np.ndarray:
    """3-D landmark sets (scaled, rotated, translated) for every ``stride``-th frame."""
    if corpus.pdm is None:
        raise DataError("the corpus has no pdm.txt to reconstruct 3-D shapes from")
    _, shapes, _ = corpus.stacked()
    out = []
    for vec in shapes[::stride]:
        rot = rotation_matrix(*vec[1:4])
        pts = vec[0] * shape_3d(corpus.pdm, vec[6:]) @ rot.T
        pts[:, :2] += vec[4:6]
        out.append(pts)
    return np.stack(out)


def cmd_build_pdm(args) -> None:
    if args.stride < 1 or args.m < 1:
        raise UsageError("--stride and --m must be >= 1")
    corpus = load_corpus(args.corpus)
    shapes = posed_shapes(corpus, args.stride)
    pdm = build_pdm(shapes, args.m)
    save_pdm(pdm, args.out)
    total = float(np.sum(pdm.variances))
    _say(f"wrote PDM with m={pdm.m} from {len(shapes)} shapes to {args.out}")
    _say(f"reconstruction_mse={reconstruction_error(pdm, shapes):.6g} leading_variance={pdm.variances[0]:.6g} "
         f"total_variance={total:.6g}")


# --- build-dict ---------------------------------------------------------------

def cmd_build_dict(args) -> None:
    corpus = load_corpus(args.corpus)
    if args.pdm:
        pdm = load_pdm(args.pdm)
        if pdm.dim != corpus.d:
            raise DataError(f"PDM dimension {pdm.dim} does not match corpus dimension {corpus.d}")
    dic = dictionary.build_dictionary(corpus, min_size=args.min_size, seed=args.seed,
                                      affect_window=args.affect_window, max_k=args.max_k, min_k=args.min_k)
    dictionary.save_dictionary(dic, args.out)
    counts = dic.subcluster_counts()
    _say(f"wrote dictionary with {dic.n_members()} members to {args.out}")
    _say("subclusters " + " ".join(f"{AffectClass(c).name.lower()}={k}" for c, k in enumerate(counts)))


# --- train ----------------------------------------------------------------------

def cmd_train_lstm(args) -> None:
    corpus = load_corpus(args.corpus)
    config = clstm.CLstmConfig(d=corpus.d, hidden_dim=args.hidden_dim, window=args.window,
                               learning_rate=args.learning_rate, grad_clip=args.grad_clip, epochs=args.epochs,
                               batch_size=args.batch_size, seed=args.seed, use_aggregate=args.aggregate,
                               aggregate_window=args.aggregate_window)
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    model = clstm.CLstmModel.init(config)
    model, report = clstm.train(model, corpus.sequences, log=_say)
    clstm.save_clstm(model, args.out)
    _say(f"wrote C-LSTM checkpoint to {args.out}: {report.n_windows} windows, "
         f"loss {report.initial_loss:.6g} -> {report.epoch_losses[-1] if report.epoch_losses else report.initial_loss:.6g}")


def cgan_training_data(corpus: Corpus, affect_window: int):
    affect = np.vstack([trailing_aggregate(s.affect, affect_window) for s in corpus.sequences])
    _, shapes, _ = corpus.stacked()
    return affect, shapes


def cmd_train_cgan(args) -> None:
    corpus = load_corpus(args.corpus)
    affect, shapes = cgan_training_data(corpus, args.affect_window)
    standardizer = Standardizer.fit(shapes)
    config = cgan.CGanConfig(d=corpus.d, z_dim=corpus.d if args.z_dim is None else args.z_dim,
                             hidden=args.hidden, n_hidden=args.n_hidden, batch_size=args.batch_size,
                             learning_rate=args.learning_rate, seed=args.seed, z_source=args.z_source)
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    sampler = None
    if args.z_source == "dictionary":
        if not args.dictionary:
            raise UsageError("--z-source dictionary needs --dictionary")
        if config.z_dim != corpus.d:
            raise UsageError("dictionary z vectors have the shape dimension; leave --z-dim unset")
        sampler = cgan.dictionary_z_sampler(dictionary.load_dictionary(args.dictionary), standardizer)
    model = cgan.CGanModel.init(config, standardizer)
    rng = np.random.default_rng([args.seed, 2])
    history = cgan.train(model, affect, standardizer.transform(shapes), args.steps, rng, sampler, log=_say,
                         log_every=max(1, args.steps // 10))
    cgan.save_cgan(model, args.out)
    last = history[-1] if history else (float("nan"), float("nan"))
    _say(f"wrote CGAN checkpoint to {args.out}: {model.d_updates} D updates, {model.g_updates} G updates, "
         f"final d_loss {last[0]:.4f} g_loss {last[1]:.4f}")


# --- generate ----------------------------------------------------------------------

def _source_sequence(corpus: Corpus, index: int) -> DyadSequence:
    if not 0 <= index < len(corpus.sequences):
        raise DataError(f"--sequence {index} is out of range (corpus has {len(corpus.sequences)})")
    return corpus.sequences[index]


def _affect_stream(source: DyadSequence, start: int, steps: int, constant: str | None) -> np.ndarray:
    if constant is not None:
        try:
            cls = AffectClass.parse(constant)
        except (KeyError, ValueError):
            raise UsageError(f"unknown affect class {constant!r}") from None
        return np.tile(one_hot(cls), (steps, 1))
    if start + steps > len(source):
        raise DataError(f"sequence {source.id} has {len(source)} frames; {start + steps} are needed "
                        f"(use --affect for a constant stream)")
    return source.affect[start:start + steps]


def cmd_generate(args) -> None:
    if args.steps < 0:
        raise UsageError("--steps must be >= 0")
    corpus = load_corpus(args.corpus)
    source = _source_sequence(corpus, args.sequence)
    rng = np.random.default_rng([args.seed, 3])
    t0 = 0
    if args.method == "dict":
        if not args.dictionary:
            raise UsageError("--method dict needs --dictionary")
        dic = dictionary.load_dictionary(args.dictionary)
        stream = _affect_stream(source, 0, args.steps, args.affect)
        shapes = dictionary.generate_sequence(dic, stream, rng, args.top_k)
    elif args.method == "lstm":
        if not args.model:
            raise UsageError("--method lstm needs --model")
        model = clstm.load_clstm(args.model)
        n = model.config.window
        if len(source) < n:
            raise DataError(f"sequence {source.id} is shorter than the model window n = {n}")
        stream = _affect_stream(source, n, args.steps, args.affect)
        shapes = clstm.generate(model, source.slice(0, n), stream, args.steps, args.mode)
        t0 = n
    else:
        if not args.model:
            raise UsageError("--method cgan needs --model")
        model = cgan.load_cgan(args.model)
        stream = _affect_stream(source, 0, args.steps, args.affect)
        cond = trailing_aggregate(stream, args.affect_window) if len(stream) else stream
        shapes = np.zeros((args.steps, model.config.d))
        draw = None
        if model.config.z_source == "dictionary":
            if not args.dictionary:
                raise UsageError("this CGAN samples z from a dictionary; pass --dictionary")
            draw = cgan.dictionary_z_sampler(dictionary.load_dictionary(args.dictionary), model.standardizer,
                                             args.top_k)
        for t in range(args.steps):
            z = draw(cond[t:t + 1], rng) if draw else rng.normal(size=(1, model.z_dim))
            shapes[t] = cgan.generate(model, cond[t], z)[0]
    if shapes.shape[1] != corpus.d:
        raise DataError(f"model dimension {shapes.shape[1]} does not match corpus dimension {corpus.d}")
    if not np.all(np.isfinite(shapes)):
        raise FloatingPointError("generated shape parameters are not finite")
    out = DyadSequence(f"generated-{args.method}-of-{source.id}", stream, shapes, t0)
    save_sequence(out, args.out)
    _say(f"wrote {len(out)} generated frames to {args.out}")
    if args.frames:
        pdm = load_pdm(args.pdm) if args.pdm else corpus.pdm
        if pdm is None or pdm.dim != corpus.d:
            raise DataError("rendering needs a PDM matching the corpus dimension (--pdm)")
        frames = sketch.render_sequence(shapes, pdm, None, args.width, args.height)
        landmarks = project_many(pdm, shapes)
        written = sketch.export(frames, args.frames, args.format, landmarks)
        _say(f"rendered {len(frames)} frames into {args.frames} ({len(written)} files)")


# --- eval --------------------------------------------------------------------------

def _find_source(corpus: Corpus, generated_id: str) -> DyadSequence:
    source_id = generated_id.split("-of-", 1)[-1]
    for seq in corpus.sequences:
        if seq.id == source_id:
            return seq
    raise DataError(f"truth corpus has no sequence {source_id!r} for generated sequence {generated_id!r}")


def cmd_eval(args) -> None:
    truth_corpus = load_corpus(args.truth)
    generated = load_sequence(args.generated)
    source = _find_source(truth_corpus, generated.id)
    pdm = load_pdm(args.pdm) if args.pdm else truth_corpus.pdm
    if pdm is None or pdm.dim != truth_corpus.d or generated.d != truth_corpus.d:
        raise DataError("generated sequence, truth corpus and PDM must share the shape dimension")
    if generated.t0 + len(generated) > len(source):
        raise DataError(f"truth sequence {source.id} is too short for the generated frames")
    _, truth_shapes, _ = truth_corpus.stacked()
    standardizer = Standardizer.fit(truth_shapes)
    truth = source.shapes[generated.t0:generated.t0 + len(generated)]

    report = evaluation.EvalReport(config={
        "generated": str(args.generated), "truth": str(args.truth), "pdm": str(args.pdm or "truth/pdm.txt"),
        "dictionary": str(args.dictionary), "model": str(args.model), "seed": args.seed,
        "n_blocks": args.n_blocks, "mse_definition": "per_frame_per_dimension",
    })
    method = generated.id.split("-")[1] if generated.id.startswith("generated-") else "unknown"
    report.metrics["generated.method"] = method
    report.metrics["generated.frames"] = len(generated)
    report.metrics["generated.history_frames"] = generated.t0
    if len(generated):
        report.metrics["generated.mse"] = evaluation.mse(standardizer.transform(generated.shapes),
                                                         standardizer.transform(truth))
    if len(generated) >= 2:
        report.add("generated.smoothness", evaluation.smoothness(generated.shapes, pdm, standardizer))
        report.add("truth.smoothness", evaluation.smoothness(truth, pdm, standardizer))

    stem = Path(args.out).with_suffix("")
    figures = []
    if len(generated) >= 2:
        traces = {"generated": evaluation.displacement_trace(generated.shapes, standardizer),
                  "truth": evaluation.displacement_trace(truth, standardizer)}
        figures.append(plotting.plot_displacements(traces, f"{stem}_displacement.png"))

    if args.dictionary:
        dic = dictionary.load_dictionary(args.dictionary)
        if dic.d != truth_corpus.d:
            raise DataError("dictionary dimension does not match the truth corpus")
        rec = evaluation.cluster_recovery(dic, truth_corpus)
        report.add("clusters", rec)
        report.add("methods.dict", {
            "history_frames": 0,
            "seconds_per_frame": evaluation.dictionary_latency(dic, source.affect, args.seed),
        })
        figures.append(plotting.plot_subcluster_histogram(rec["subcluster_counts"], f"{stem}_subclusters.png"))

    if args.model:
        model = clstm.load_clstm(args.model)
        if model.config.d != truth_corpus.d:
            raise DataError("C-LSTM dimension does not match the truth corpus")
        test = load_corpus(args.test_corpus) if args.test_corpus else truth_corpus
        n = model.config.window
        usable = [s for s in test.sequences if len(s) >= 2 * n]
        if not usable:
            raise DataError(f"mode comparison needs sequences of at least 2n = {2 * n} frames")
        blocks = min(len(s) for s in usable) // n - 1
        if args.n_blocks:
            blocks = min(blocks, args.n_blocks)
        result = evaluation.compare_modes(model, usable, blocks)
        report.add("modes", evaluation.comparison_metrics(result))
        report.add("methods.lstm", {"history_frames": n, "seconds_per_frame": result.seconds_per_frame_overlap})
        figures.append(plotting.plot_horizon_mse(result.mse_by_horizon, result.mse_overlap,
                                                 f"{stem}_horizon_mse.png"))

    if args.cgan_model:
        gan = cgan.load_cgan(args.cgan_model)
        rng = np.random.default_rng([args.seed, 3])
        start = time.perf_counter()
        for affect in source.affect[:100]:
            cgan.generate(gan, affect, rng=rng)
        report.add("methods.cgan", {"history_frames": 0,
                                    "seconds_per_frame": (time.perf_counter() - start) / min(100, len(source))})

    report.check_finite()
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text("\n".join(report.to_lines()) + "\n", encoding="utf-8")
    json_path = Path(f"{stem}.json")
    json_path.write_text(report.to_json() + "\n", encoding="utf-8")
    for line in report.to_lines()[2:]:
        if not line.startswith("config."):
            _say(line)
    _say(f"wrote {args.out}, {json_path} and {len(figures)} figures")


# --- parser --------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed (fanned out into sub-seeds)")
    p.add_argument("--config", default=None, help="optional key=value file supplying flag defaults")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="dyadface", description="Affect-conditioned facial behaviour generation.",
                     formatter_class=argparse.RawDescriptionHelpFormatter, epilog=__doc__.split("\n\n", 1)[1])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic labelled corpus", formatter_class=fmt)
    _common(p)
    p.add_argument("--out", required=True, help="corpus directory")
    p.add_argument("--n-sequences", type=int, default=200, help="number of sequences")
    p.add_argument("--seq-len", type=int, default=100, help="frames per sequence")
    p.add_argument("--m", type=int, default=10, help="non-rigid PCA modes")
    p.add_argument("--intensity-levels", type=int, default=3, help="intensity levels per class, 3..9")
    p.add_argument("--start-index", type=int, default=0, help="index of the first sequence (held-out sets)")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("build-pdm", help="estimate a point distribution model from a corpus", formatter_class=fmt)
    _common(p)
    p.add_argument("--corpus", required=True, help="corpus directory (needs pdm.txt)")
    p.add_argument("--m", type=int, default=10, help="number of PCA modes")
    p.add_argument("--stride", type=int, default=10, help="use every stride-th frame")
    p.add_argument("--out", required=True, help="output PDM file")
    p.set_defaults(handler=cmd_build_pdm)

    p = sub.add_parser("build-dict", help="build the affect-shape dictionary", formatter_class=fmt)
    _common(p)
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--pdm", default=None, help="optional PDM file, checked for dimension agreement")
    p.add_argument("--min-size", type=int, default=100, help="minimum sub-cluster size")
    p.add_argument("--max-k", type=int, default=9, help="most sub-clusters per class")
    p.add_argument("--min-k", type=int, default=3, help="fewest sub-clusters per class when membership permits")
    p.add_argument("--affect-window", type=int, default=15, help="frames aggregated when labelling clusters")
    p.add_argument("--out", required=True, help="output dictionary file")
    p.set_defaults(handler=cmd_build_dict)

    p = sub.add_parser("train", help="train a generator (lstm or cgan)", formatter_class=fmt)
    methods = p.add_subparsers(dest="method_cmd", required=True, parser_class=_Parser)
    q = methods.add_parser("lstm", help="conditional LSTM", formatter_class=fmt)
    _common(q)
    q.add_argument("--corpus", required=True, help="corpus directory")
    q.add_argument("--out", required=True, help="checkpoint file")
    q.add_argument("--hidden-dim", type=int, default=64, help="LSTM hidden units")
    q.add_argument("--window", type=int, default=100, help="history window n in frames")
    q.add_argument("--learning-rate", type=float, default=1e-3, help="Adam step size")
    q.add_argument("--grad-clip", type=float, default=5.0, help="global gradient-norm cap")
    q.add_argument("--epochs", type=int, default=20, help="passes over the training windows")
    q.add_argument("--batch-size", type=int, default=32, help="windows per update")
    q.add_argument("--aggregate", action="store_true", help="feed the trailing aggregate affect instead of per-frame")
    q.add_argument("--aggregate-window", type=int, default=100, help="frames in the aggregate affect")
    q.set_defaults(handler=cmd_train_lstm)
    q = methods.add_parser("cgan", help="shape-space conditional GAN", formatter_class=fmt)
    _common(q)
    q.add_argument("--corpus", required=True, help="corpus directory")
    q.add_argument("--out", required=True, help="checkpoint file")
    q.add_argument("--steps", type=int, default=5000, help="training steps (1 D update + 2 G updates each)")
    q.add_argument("--batch-size", type=int, default=64, help="frames per step")
    q.add_argument("--learning-rate", type=float, default=2e-4, help="Adam step size for both nets")
    q.add_argument("--hidden", type=int, default=64, help="units per hidden layer")
    q.add_argument("--n-hidden", type=int, default=2, help="hidden layers")
    q.add_argument("--z-dim", type=int, default=None, help="noise dimension (unset: shape dimension)")
    q.add_argument("--z-source", choices=["gaussian", "dictionary"], default="gaussian", help="z distribution")
    q.add_argument("--dictionary", default=None, help="dictionary file for --z-source dictionary")
    q.add_argument("--affect-window", type=int, default=15, help="frames in the aggregate affect condition")
    q.set_defaults(handler=cmd_train_cgan)

    p = sub.add_parser("generate", help="generate a shape-parameter sequence", formatter_class=fmt)
    _common(p)
    p.add_argument("--method", choices=["dict", "lstm", "cgan"], required=True, help="generator")
    p.add_argument("--corpus", required=True, help="corpus supplying the partner affect (and C-LSTM history)")
    p.add_argument("--sequence", type=int, default=0, help="index of the conditioning sequence")
    p.add_argument("--affect", default=None, help="constant affect class instead of the sequence's stream")
    p.add_argument("--steps", type=int, default=100, help="frames to generate")
    p.add_argument("--dictionary", default=None, help="dictionary file (dict, or cgan with dictionary z)")
    p.add_argument("--model", default=None, help="checkpoint file (lstm or cgan)")
    p.add_argument("--mode", choices=["overlap", "nonoverlap"], default="overlap", help="C-LSTM generation mode")
    p.add_argument("--top-k", type=int, default=5, help="dictionary neighbourhood size")
    p.add_argument("--affect-window", type=int, default=15, help="frames in the CGAN aggregate affect")
    p.add_argument("--out", required=True, help="output sequence file")
    p.add_argument("--frames", default=None, help="directory for rendered sketch frames (optional)")
    p.add_argument("--format", choices=["pgm", "svg", "both"], default="pgm", help="frame file format")
    p.add_argument("--pdm", default=None, help="PDM for rendering (unset: the corpus PDM)")
    p.add_argument("--width", type=int, default=256, help="frame width in pixels")
    p.add_argument("--height", type=int, default=256, help="frame height in pixels")
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("eval", help="evaluate a generated sequence and models", formatter_class=fmt)
    _common(p)
    p.add_argument("--generated", required=True, help="generated sequence file")
    p.add_argument("--truth", required=True, help="labelled corpus the sequence was conditioned on")
    p.add_argument("--pdm", default=None, help="PDM for pixel metrics (unset: the truth corpus PDM)")
    p.add_argument("--dictionary", default=None, help="dictionary file: adds cluster recovery and latency")
    p.add_argument("--model", default=None, help="C-LSTM checkpoint: adds the Overlap/NonOverlap comparison")
    p.add_argument("--cgan-model", default=None, help="CGAN checkpoint: adds its per-frame latency")
    p.add_argument("--test-corpus", default=None, help="held-out corpus for the mode comparison (unset: truth)")
    p.add_argument("--n-blocks", type=int, default=0, help="cap on blocks of n target frames per sequence (0: all)")
    p.add_argument("--out", required=True, help="key=value report; JSON and PNG figures are written alongside")
    p.set_defaults(handler=cmd_eval)
    return parser


def _leaf_parser(parser, argv):
    """The subcommand parser that owns the flags of ``argv``."""
    node = parser
    for tok in argv:
        actions = [a for a in node._actions if isinstance(a, argparse._SubParsersAction)]
        if not actions:
            break
        if tok in actions[0].choices:
            node = actions[0].choices[tok]
    return node


def read_config(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _config_defaults(leaf, path) -> dict:
    known = {a.dest: a for a in leaf._actions}
    defaults = {}
    for key, raw in read_config(path).items():
        if key not in known or key in ("config", "help"):
            raise UsageError(f"{path}: unknown option {key!r}")
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes")
            continue
        try:
            defaults[key] = (action.type or str)(raw)
        except ValueError:
            raise UsageError(f"{path}: bad value for {key!r}: {raw!r}") from None
        if action.choices is not None and defaults[key] not in action.choices:
            raise UsageError(f"{path}: {key} must be one of {sorted(action.choices)}")
    return defaults


def parse_args(argv=None) -> argparse.Namespace:
    """Parse ``argv``; a ``--config`` file supplies defaults that flags override."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    path = _config_path(argv)
    if path is not None:
        leaf = _leaf_parser(parser, argv)
        defaults = _config_defaults(leaf, path)
        for action in leaf._actions:
            if action.dest in defaults:
                action.required = False
        leaf.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    name = args.command + (f" {args.method_cmd}" if getattr(args, "method_cmd", None) else "")
    _echo(name, args)
    try:
        args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FormatError, DegenerateDataError, dictionary.CoverageError, ValueError, KeyError,
            OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
