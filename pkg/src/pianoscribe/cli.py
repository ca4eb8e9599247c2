"""Command-line front end tying the transcription pipeline together.

Subcommands: extract, train-acoustic, train-mlm, decode, evaluate,
bench-beam, gen-toy. Config precedence is flags > config file (JSON) >
built-in defaults; PS_SEED is the seed fallback. Exit codes: 0 success,
1 runtime failure, 2 usage or config error.
"""

import argparse
import concurrent.futures
import csv
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import acoustic, decode, features, metrics, mlm, pianoroll, serialize, toydata


class UsageError(ValueError):
    pass


def _get_seed(args):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("PS_SEED")
    if env is not None:
        return int(env)
    raise UsageError("a seed is required (pass --seed or set PS_SEED)")


def _load_config_file(args):
    path = getattr(args, "config", None)
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _option(args, config, name, default):
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in config:
        return config[name]
    return default


# ---------------------------------------------------------------------------
# extract

def cmd_extract(args):
    if not args.inputs:
        raise UsageError("no input files given")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    failures = 0
    for name in args.inputs:
        path = Path(name)
        try:
            if path.suffix.lower() in (".mid", ".midi"):
                events = pianoroll.midi_to_events(path.read_bytes())
                duration = max((e.offset for e in events), default=0.0)
                roll = pianoroll.events_to_roll(events, args.frame_rate, duration)
                out = out_dir / (path.stem + ".pspr")
                serialize.write_roll(out, roll.frames, roll.frame_rate)
                print(f"{path}: {roll.n_frames} frames -> {out}")
            else:
                samples, rate = features.read_wav(path)
                samples = features.resample_to_16k(samples, rate)
                fs = features.cqt(samples)
                out = out_dir / (path.stem + ".psft")
                serialize.write_features(out, fs.frames, fs.frame_rate)
                print(f"{path}: {fs.n_frames} frames x {fs.dim} dims -> {out}")
        except Exception as exc:  # per-file diagnostics, nonzero exit
            print(f"{path}: error: {exc}", file=sys.stderr)
            failures += 1
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# training

def _paired_data(feature_files, roll_files):
    if len(feature_files) != len(roll_files):
        raise UsageError("feature and roll file counts differ")
    pairs = []
    for f, r in zip(feature_files, roll_files):
        frames, rate = serialize.read_features(f)
        roll_frames, roll_rate = serialize.read_roll(r)
        fs = features.FeatureSequence(frames, rate)
        roll = pianoroll.PianoRoll(roll_frames, roll_rate)
        pairs.append((fs, roll))
    return pairs


def _split_valid(items, valid_fraction, seed):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(items))
    n_valid = max(1, int(round(valid_fraction * len(items))))
    valid_idx = set(order[:n_valid].tolist())
    train = [items[i] for i in range(len(items)) if i not in valid_idx]
    valid = [items[i] for i in sorted(valid_idx)]
    if not train:
        raise UsageError("validation split leaves no training data")
    return train, valid


def cmd_train_acoustic(args):
    config_file = _load_config_file(args)
    seed = _get_seed(args)
    pairs = _paired_data(args.features, args.rolls)
    if args.valid_features:
        valid = _paired_data(args.valid_features, args.valid_rolls)
        train = pairs
    elif args.valid_fraction:
        train, valid = _split_valid(pairs, args.valid_fraction, seed)
    else:
        raise UsageError("provide --valid-features/--valid-rolls or --valid-fraction")

    standardizer = features.fit_standardizer([fs for fs, _ in train])
    train = [(features.apply_standardizer(fs, standardizer), r) for fs, r in train]
    valid = [(features.apply_standardizer(fs, standardizer), r) for fs, r in valid]

    kind = _option(args, config_file, "kind", "dnn")
    overrides = dict(config_file.get("acoustic", {}))
    overrides["seed"] = seed
    if args.max_epochs is not None:
        overrides["max_epochs"] = args.max_epochs
    cfg = acoustic.AcousticConfig.standard_defaults(kind, **overrides)
    model = acoustic.build_acoustic(cfg)
    print(f"{kind}: {acoustic.parameter_count(model)} parameters")
    model, log = acoustic.train_acoustic(model, train, valid, cfg)
    acoustic.save_acoustic(args.out, model, standardizer=standardizer)
    _write_log(args.out + ".log", log)
    print(f"best epoch {log.best_epoch}: valid NLL "
          f"{log.valid_nll[log.best_epoch]:.4f} -> {args.out}")
    return 0


def cmd_train_mlm(args):
    config_file = _load_config_file(args)
    seed = _get_seed(args)
    rolls = []
    for path in args.rolls:
        frames, rate = serialize.read_roll(path)
        rolls.append(pianoroll.PianoRoll(frames, rate))
    if args.valid_rolls:
        valid = []
        for path in args.valid_rolls:
            frames, rate = serialize.read_roll(path)
            valid.append(pianoroll.PianoRoll(frames, rate))
        train = rolls
    elif args.valid_fraction:
        train, valid = _split_valid(rolls, args.valid_fraction, seed)
    else:
        raise UsageError("provide --valid-rolls or --valid-fraction")
    kw = dict(config_file.get("mlm", {}))
    kw.setdefault("n_rnn", 200)
    kw.setdefault("n_nade", 150)
    if args.max_epochs is not None:
        kw["max_epochs"] = args.max_epochs
    model, log = mlm.train_mlm(train, valid, seed=seed, **kw)
    model.save(args.out)
    _write_log(args.out + ".log", log)
    print(f"best epoch {log.best_epoch}: valid NLL "
          f"{log.valid_nll[log.best_epoch]:.4f} -> {args.out}")
    return 0


def _write_log(path, log):
    lines = ["epoch\ttrain_nll\tvalid_nll"]
    for i, (t, v) in enumerate(zip(log.train_nll, log.valid_nll)):
        lines.append(f"{i}\t{t:.6f}\t{v:.6f}")
    lines.append(f"# best_epoch {log.best_epoch}")
    serialize.atomic_write(path, ("\n".join(lines) + "\n").encode())


# ---------------------------------------------------------------------------
# decoding

def _load_posteriogram(args):
    if args.posteriogram:
        probs, rate = serialize.read_posteriogram(args.posteriogram)
        return acoustic.Posteriogram(probs, rate)
    if not args.model:
        raise UsageError("need --model with --feature-file, or --posteriogram")
    model, standardizer = acoustic.load_acoustic(args.model)
    frames, rate = serialize.read_features(args.feature_file)
    fs = features.FeatureSequence(frames, rate)
    if standardizer is not None:
        fs = features.apply_standardizer(fs, standardizer)
    return acoustic.predict_posteriogram(model, fs)


def _decode_one(pg, args):
    if args.post == "threshold":
        theta = args.threshold if args.threshold is not None else 0.5
        return decode.threshold_decode(pg, theta), 0.0
    if args.post == "hmm":
        if not args.hmm_rolls:
            raise UsageError("--post hmm needs --hmm-rolls training rolls")
        rolls = []
        for path in args.hmm_rolls:
            frames, rate = serialize.read_roll(path)
            rolls.append(pianoroll.PianoRoll(frames, rate))
        hmms = decode.fit_pitch_hmms(rolls)
        return decode.hmm_decode(pg, hmms), 0.0
    if args.post == "hybrid":
        if not args.mlm:
            raise UsageError("--post hybrid needs --mlm")
        model = mlm.RnnNade.load(args.mlm)
        if args.no_marginal or not args.marginal_rolls:
            marginals = decode.PitchMarginals.uniform()
        else:
            rolls = []
            for path in args.marginal_rolls:
                frames, rate = serialize.read_roll(path)
                rolls.append(pianoroll.PianoRoll(frames, rate))
            marginals = decode.PitchMarginals.from_rolls(rolls)
        hash_n = None if args.hash_n == 0 else args.hash_n
        return decode.hybrid_decode(
            pg, model, marginals, width=args.beam_width, branch=args.branch,
            chain=args.chain, hash_frames=hash_n)
    raise UsageError(f"unknown post-processing mode {args.post!r}")


def cmd_decode(args):
    pg = _load_posteriogram(args)
    start = time.perf_counter()
    roll, score = _decode_one(pg, args)
    elapsed = time.perf_counter() - start
    out = Path(args.out)
    serialize.write_roll(out, roll.frames, roll.frame_rate)
    events = pianoroll.roll_to_events(roll)
    serialize.atomic_write(out.with_suffix(".csv"),
                           pianoroll.events_to_csv(events).encode())
    print(f"log score {score:.4f}, wall time {elapsed:.2f} s -> {out}")
    return 0


# ---------------------------------------------------------------------------
# evaluation

def cmd_evaluate(args):
    if len(args.pred) != len(args.truth):
        raise UsageError("prediction and truth file counts differ")
    rows = []
    frame_reports, note_reports = [], []
    for p_file, t_file in zip(args.pred, args.truth):
        pf, pr = serialize.read_roll(p_file)
        tf, tr = serialize.read_roll(t_file)
        pred = pianoroll.PianoRoll(pf, pr)
        truth = pianoroll.PianoRoll(tf, tr)
        if pred.frame_rate != truth.frame_rate:
            pred = metrics.resample_roll(pred, truth.frame_rate)
        frame_rep = metrics.frame_metrics(pred, truth)
        note_rep = metrics.note_metrics(
            pianoroll.roll_to_events(pred), pianoroll.roll_to_events(truth))
        frame_reports.append(frame_rep)
        note_reports.append(note_rep)
        rows.append((Path(p_file).stem, frame_rep, note_rep))
    rows.append(("corpus", metrics.corpus_report(frame_reports),
                 metrics.corpus_report(note_reports)))
    report = metrics.format_report_rows(rows)
    sys.stdout.write(report)
    if args.out:
        serialize.atomic_write(args.out, report.encode())
    return 0


# ---------------------------------------------------------------------------
# beam-width sweep

def cmd_bench_beam(args):
    probs, rate = serialize.read_posteriogram(args.posteriogram)
    pg = acoustic.Posteriogram(probs, rate)
    model = mlm.RnnNade.load(args.mlm)
    truth = None
    if args.truth:
        tf, tr = serialize.read_roll(args.truth)
        truth = pianoroll.PianoRoll(tf, tr)
    widths = [int(w) for w in args.widths.split(",")]
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["decoder", "width", "f_measure", "wall_time"])
    for decoder, fn in (("hashed", decode.hybrid_decode),
                        ("legacy", decode.legacy_beam_decode)):
        for w in widths:
            start = time.perf_counter()
            roll, _ = fn(pg, model, width=w)
            elapsed = time.perf_counter() - start
            f = (metrics.frame_metrics(roll, truth).f_measure
                 if truth is not None else float("nan"))
            writer.writerow([decoder, w, f"{f:.4f}", f"{elapsed:.4f}"])
            print(f"{decoder} w={w}: F={f:.4f} time={elapsed:.2f}s")
    serialize.atomic_write(args.out, buf.getvalue().encode())
    return 0


# ---------------------------------------------------------------------------
# toy corpus

def cmd_gen_toy(args):
    seed = _get_seed(args)
    config = toydata.ToyConfig(n_tracks=args.tracks, seed=seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def write_track(item):
        idx, track = item
        stem = out_dir / f"toy{idx:04d}"
        features.write_wav(stem.with_suffix(".wav"), track.samples,
                           features.TARGET_RATE)
        serialize.write_roll(stem.with_suffix(".pspr"), track.roll.frames,
                             track.roll.frame_rate)
        return stem

    tracks = toydata.generate_corpus(config)
    items = list(enumerate(tracks))
    if args.jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(args.jobs) as pool:
            list(pool.map(write_track, items))
    else:
        for item in items:
            write_track(item)
    print(f"wrote {len(tracks)} tracks to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser():
    parser = argparse.ArgumentParser(
        prog="pianoscribe",
        description="Polyphonic piano transcription pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="audio -> PSFT features, MIDI -> PSPR rolls")
    p.add_argument("inputs", nargs="*")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--frame-rate", type=float, default=features.FRAME_RATE)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-acoustic", help="train a frame-level acoustic model")
    p.add_argument("--kind", choices=["dnn", "rnn", "convnet"])
    p.add_argument("--features", nargs="+", required=True)
    p.add_argument("--rolls", nargs="+", required=True)
    p.add_argument("--valid-features", nargs="*", default=None)
    p.add_argument("--valid-rolls", nargs="*", default=None)
    p.add_argument("--valid-fraction", type=float, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_train_acoustic)

    p = sub.add_parser("train-mlm", help="train the RNN-NADE language model")
    p.add_argument("--rolls", nargs="+", required=True)
    p.add_argument("--valid-rolls", nargs="*", default=None)
    p.add_argument("--valid-fraction", type=float, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_train_mlm)

    p = sub.add_parser("decode", help="posteriogram -> binary roll + note CSV")
    p.add_argument("--model")
    p.add_argument("--feature-file")
    p.add_argument("--posteriogram")
    p.add_argument("--mlm")
    p.add_argument("--post", choices=["threshold", "hmm", "hybrid"],
                   default="threshold")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--hmm-rolls", nargs="*", default=None)
    p.add_argument("--marginal-rolls", nargs="*", default=None)
    p.add_argument("--no-marginal", action="store_true")
    p.add_argument("--beam-width", type=int, default=decode.DEFAULT_BEAM_WIDTH)
    p.add_argument("--branch", type=int, default=decode.DEFAULT_BRANCH)
    p.add_argument("--chain", type=int, default=decode.DEFAULT_CHAIN)
    p.add_argument("--hash-n", type=int, default=decode.DEFAULT_HASH_FRAMES,
                   help="frames hashed for pruning (0 = full sequence)")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("evaluate", help="frame/note metrics for roll pairs")
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--truth", nargs="+", required=True)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench-beam", help="beam-width sweep: F vs wall time")
    p.add_argument("--posteriogram", required=True)
    p.add_argument("--mlm", required=True)
    p.add_argument("--truth")
    p.add_argument("--widths", default="1,2,4,8,10")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_bench_beam)

    p = sub.add_parser("gen-toy", help="render the synthetic harmonic corpus")
    p.add_argument("--tracks", type=int, default=200)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_gen_toy)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
