"""Command-line pipeline: generate, train, eval, detect, sweep, replay.

Every command writes a manifest next to its main output. The manifest holds
the fully resolved flags, so ``puffgrammar replay run.manifest`` rebuilds the
same artifacts byte for byte.

Exit codes: 0 ok, 2 usage, 3 missing file, 4 parse/data, 5 numeric, 6 compatibility.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from . import numerics as nx
from .dataset import (FEATURE_ORDER, SAMPLE_RATE_HZ, WINDOW, build_dataset, default_metadata, encode_targets,
                      extract_windows, ingest, meta_path, read_metadata, window_streams, write_stream_csv)
from .errors import CompatibilityError, ParseError, PuffGrammarError
from .evaluation import confusion, report, round_half_up, write_report_csv
from .grammar import GrammarConfig, group_sessions, parse, tokenize, write_events_csv
from .models import WIDTH_SCHEDULES, TrainConfig, accuracy, build_model, load, save, train, write_trace_csv
from .synth import SynthConfig, generate

log = logging.getLogger("puffgrammar")

MANIFEST_VERSION = 1
EXIT_USAGE, EXIT_MISSING, EXIT_PARSE, EXIT_NUMERIC, EXIT_COMPAT = 2, 3, 4, 5, 6

SWEEP_HEADER = "rank,epoch,batch,arch,loss,val_loss,acc,val_acc,test_acc,combined_loss"


class UsageError(Exception):
    pass


def int_list(text):
    try:
        values = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    return values


def positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def non_negative_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


# --- parser ----------------------------------------------------------------------

def _common(p):
    p.add_argument("--seed", type=non_negative_int, default=0, help="root seed; data/init/shuffle seeds derive from it")
    p.add_argument("--config", help="key=value file supplying defaults for any flag")
    p.add_argument("--manifest", help="manifest path (default: <main output>.manifest)")


def _data_flags(p):
    p.add_argument("--windowing", choices=("regions", "rolling"), default="regions",
                   help="regions: windows inside single-label runs; rolling: every window, majority label")
    p.add_argument("--stride", type=positive_int, default=1)
    p.add_argument("--normalize", choices=("none", "minmax"), default="none")
    p.add_argument("--leak-mode", choices=("balance_first", "no_leak"), default="balance_first")
    p.add_argument("--factor", type=positive_int, default=30, help="duplication factor for H2L/HOffL windows")
    p.add_argument("--ignore-rate", action="store_true", help="skip the 25 Hz sample-rate check")


def _train_flags(p):
    p.add_argument("--family", choices=("mlp", "lstm"), default="mlp")
    p.add_argument("--lstm-mode", choices=("stacked", "wide"), default="stacked")
    p.add_argument("--loss", choices=nx.LOSSES, default=None, help="default: bce for mlp, mse for lstm")
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.add_argument("--no-shuffle", action="store_true")


def _grammar_flags(p):
    p.add_argument("--min-hol", type=float, default=0.5)
    p.add_argument("--max-hol", type=float, default=3.0)
    p.add_argument("--tolerance", type=non_negative_int, default=2)
    p.add_argument("--min-puffs", type=non_negative_int, default=2)
    p.add_argument("--max-gap", type=float, default=60.0)
    p.add_argument("--strict-bounds", action="store_true", help="exclude the duration bounds themselves")


def build_parser():
    parser = argparse.ArgumentParser(prog="puffgrammar", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic labeled stream")
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="ground-truth events CSV (default: <out stem>.events.csv)")
    p.add_argument("--puffs", type=non_negative_int, default=10)
    p.add_argument("--distractors", type=non_negative_int, default=5)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--hol-min", type=float, default=0.5)
    p.add_argument("--hol-max", type=float, default=3.0)
    p.add_argument("--rest-min", type=float, default=2.0)
    p.add_argument("--rest-max", type=float, default=6.0)
    _common(p)

    p = sub.add_parser("train", help="train a classifier on a labeled CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--trace", help="per-epoch curve CSV (default: <out>.trace.csv)")
    p.add_argument("--layers", type=int_list, default="12,8",
                   help="hidden-layer widths, e.g. 12,8")
    p.add_argument("--units", type=positive_int, default=3)
    p.add_argument("--epochs", type=positive_int, default=200)
    p.add_argument("--batch", type=positive_int, default=100)
    _train_flags(p)
    _data_flags(p)
    _common(p)

    p = sub.add_parser("eval", help="confusion matrix and report for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report CSV")
    p.add_argument("--confusion", help="optional confusion-matrix CSV")
    p.add_argument("--all", action="store_true", help="use every window instead of the test partition")
    p.add_argument("--ignore-rate", action="store_true")
    _common(p)

    p = sub.add_parser("detect", help="find puffs and sessions in a stream")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="events CSV")
    p.add_argument("--stride", type=positive_int, default=1)
    p.add_argument("--ignore-rate", action="store_true")
    _grammar_flags(p)
    _common(p)

    p = sub.add_parser("sweep", help="train a grid of configurations and rank them")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="ranked results CSV")
    p.add_argument("--epochs", type=int_list, default="50")
    p.add_argument("--batches", type=int_list, default="50,100")
    p.add_argument("--layers", type=int_list, default="2,3,4", help="hidden-layer counts (mlp)")
    p.add_argument("--units", type=int_list, default="2,3,4", help="LSTM units (lstm)")
    p.add_argument("--loss-decimals", type=non_negative_int, default=2,
                   help="combined loss is rounded to this many decimals before ranking")
    p.add_argument("--workers", type=positive_int, default=1)
    _train_flags(p)
    _data_flags(p)
    _common(p)

    p = sub.add_parser("replay", help="re-run a command from its manifest")
    p.add_argument("manifest")
    return parser, sub


# --- manifests and config files -------------------------------------------------------

def read_config(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ParseError(f"{path}: expected key=value", line=lineno)
            out[key.strip().replace("-", "_")] = value.strip()
    version = out.pop("config_version", "1")
    if version != "1":
        raise ParseError(f"{path}: unsupported config version {version!r}")
    return out


def _flag_value(value):
    if isinstance(value, (list, tuple)):
        return ",".join(map(str, value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def resolved_argv(subparser, args) -> list[str]:
    """Flags reproducing ``args`` exactly, independent of any config file."""
    argv = []
    for action in subparser._actions:
        if not action.option_strings or action.dest in ("help", "config"):
            continue
        value = getattr(args, action.dest, None)
        flag = max(action.option_strings, key=len)
        if isinstance(action, argparse._StoreTrueAction):
            if value:
                argv.append(flag)
        elif value is not None:
            argv += [flag, _flag_value(value)]
    for action in subparser._actions:
        if not action.option_strings:
            argv.append(str(getattr(args, action.dest)))
    return argv


def write_manifest(path, command, argv, args, inputs, outputs):
    lines = [
        "# puffgrammar run manifest",
        f"manifest_version={MANIFEST_VERSION}",
        f"tool_version={__version__}",
        f"command={command}",
        f"seed={getattr(args, 'seed', '')}",
        f"argv={json.dumps([command] + argv)}",
    ]
    lines += [f"input={p}" for p in inputs]
    lines += [f"output={p}" for p in outputs]
    for key in sorted(vars(args)):
        if key not in ("command", "config", "verbose"):
            lines.append(f"config.{key}={_flag_value(getattr(args, key))}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path) -> dict:
    out = {"input": [], "output": []}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            if key in ("input", "output"):
                out[key].append(value)
            else:
                out[key] = value
    if out.get("manifest_version") != str(MANIFEST_VERSION):
        raise ParseError(f"{path}: unsupported manifest version {out.get('manifest_version')!r}")
    return out


# --- shared helpers ------------------------------------------------------------------

def _require(path):
    if not os.path.exists(path):
        raise FileNotFoundError(path)


def _load_stream(path, ignore_rate):
    _require(path)
    streams = ingest(path, check_sample_rate=not ignore_rate)
    meta = read_metadata(meta_path(path)) if os.path.exists(meta_path(path)) else {}
    return streams, meta


def _check_compat(model, data_meta):
    want = model.meta.get("feature_order", FEATURE_ORDER)
    have = data_meta.get("feature_order", FEATURE_ORDER)
    if want != have:
        raise CompatibilityError(f"model expects feature order {want!r}, dataset declares {have!r}")
    rate_m = float(model.meta.get("sample_rate_hz", SAMPLE_RATE_HZ))
    rate_d = float(data_meta.get("sample_rate_hz", SAMPLE_RATE_HZ))
    if rate_m != rate_d:
        raise CompatibilityError(f"model trained at {rate_m} Hz, dataset declares {rate_d} Hz")


def _dataset_from_args(streams, args, seed):
    windows = window_streams(streams, WINDOW, args.stride, args.windowing, args.normalize)
    if len(windows) < 3:
        raise PuffGrammarError("too few windows to split")
    return build_dataset(windows, seed=nx.sub_seed(seed, "data"), leak_mode=args.leak_mode, factor=args.factor)


def _data_meta(args):
    return {
        "feature_order": FEATURE_ORDER,
        "normalize": args.normalize,
        "sample_rate_hz": SAMPLE_RATE_HZ,
        "window": WINDOW,
        "stride": args.stride,
        "windowing": args.windowing,
        "leak_mode": args.leak_mode,
        "balance_factor": args.factor,
        "data_seed": args.seed,
    }


def _train_config(args, epochs, batch, hidden=(12, 8), units=3):
    return TrainConfig(family=args.family, epochs=epochs, batch=batch, hidden=hidden, units=units,
                       lstm_mode=args.lstm_mode, loss=args.loss, lr=args.lr, beta1=args.beta1, beta2=args.beta2,
                       epsilon=args.epsilon, seed=args.seed, shuffle=not args.no_shuffle)


# --- commands -------------------------------------------------------------------

def cmd_generate(args):
    if args.noise < 0:
        raise UsageError("--noise must be non-negative")
    try:
        cfg = SynthConfig(seed=args.seed, puffs=args.puffs, distractors=args.distractors, noise_sigma=args.noise,
                          hol_range=(args.hol_min, args.hol_max), rest_range=(args.rest_min, args.rest_max))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    res = generate(cfg)
    truth = args.truth or os.path.splitext(args.out)[0] + ".events.csv"
    write_stream_csv(res.stream, args.out, default_metadata(seed=args.seed))
    gcfg = GrammarConfig(sample_rate_hz=cfg.sample_rate_hz)
    write_events_csv(res.events, group_sessions(res.events, gcfg), truth)
    return [], [args.out, meta_path(args.out), truth]


def cmd_train(args):
    streams, _ = _load_stream(args.data, args.ignore_rate)
    hidden = tuple(args.layers)
    try:
        cfg = _train_config(args, args.epochs, args.batch, hidden, args.units)
        model = build_model(cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    dataset = _dataset_from_args(streams, args, args.seed)
    log.info("windows per class %s, partitions %s", dataset.class_counts, dataset.sizes())
    model, trace = train(model, dataset, cfg)
    model.meta = _data_meta(args)
    trace_path = args.trace or args.out + ".trace.csv"
    save(model, args.out)
    write_trace_csv(trace, trace_path)
    return [args.data], [args.out, trace_path]


def cmd_eval(args):
    _require(args.model)
    model = load(args.model)
    streams, data_meta = _load_stream(args.data, args.ignore_rate)
    _check_compat(model, data_meta)
    meta = model.meta
    stride = int(meta.get("stride", 1))
    normalize = meta.get("normalize", "none")
    if args.all:
        windows = window_streams(streams, WINDOW, stride, "rolling", normalize)
    else:
        windows = window_streams(streams, WINDOW, stride, meta.get("windowing", "regions"), normalize)
        ds = build_dataset(windows, seed=nx.sub_seed(int(meta.get("data_seed", 0)), "data"),
                           leak_mode=meta.get("leak_mode", "balance_first"), factor=int(meta.get("balance_factor", 30)))
        windows = ds.partition("test")
    if len(windows) == 0:
        raise PuffGrammarError("no labeled windows to evaluate")
    probs = model.forward(windows.features)
    predicted = np.argmax(probs, axis=1) + 1
    cm = confusion(predicted, windows.labels)
    rep = report(cm)
    write_report_csv(rep, args.out)
    outputs = [args.out]
    if args.confusion:
        with open(args.confusion, "w", encoding="utf-8", newline="") as fh:
            fh.write("actual,Rest,H-to-L,H-on-L,H-off-L\n")
            for name, row in zip(("Rest", "H-to-L", "H-on-L", "H-off-L"), cm):
                fh.write(name + "," + ",".join(map(str, row)) + "\n")
        outputs.append(args.confusion)
    elementwise = accuracy(probs, encode_targets(windows.labels), mode="elementwise")
    print(f"{len(windows)} windows: argmax accuracy {rep.accuracy:.4f}, elementwise accuracy {elementwise:.4f}")
    return [args.model, args.data], outputs


def cmd_detect(args):
    try:
        gcfg = GrammarConfig(sample_rate_hz=SAMPLE_RATE_HZ, min_hol_s=args.min_hol, max_hol_s=args.max_hol,
                             noise_tolerance=args.tolerance, stride=args.stride, min_puffs=args.min_puffs,
                             max_gap_s=args.max_gap, inclusive=not args.strict_bounds)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _require(args.model)
    model = load(args.model)
    streams, data_meta = _load_stream(args.data, args.ignore_rate)
    _check_compat(model, data_meta)
    puffs = []
    for stream in streams:
        windows = extract_windows(stream, WINDOW, args.stride, require_labels=False,
                                  normalize=model.meta.get("normalize", "none"))
        if len(windows) == 0:
            continue
        tokens = tokenize(model.forward(windows.features), windows.starts)
        puffs.extend(parse(tokens, gcfg))
    sessions = group_sessions(puffs, gcfg)
    write_events_csv(puffs, sessions, args.out)
    log.info("%d puffs, %d sessions", len(puffs), len(sessions))
    return [args.model, args.data], [args.out]


def _arch_label(family, arch):
    return ",".join(map(str, arch)) if family == "mlp" else str(arch)


def _sweep_cell(job):
    dataset, cfg, arch = job
    model, trace = train(build_model(cfg), dataset, cfg)
    x_test, y_test = dataset.arrays("test")
    test_acc = accuracy(model.forward(x_test), y_test)
    return (trace.train_loss[-1], trace.val_loss[-1], trace.train_acc[-1], trace.val_acc[-1], test_acc)


def rank_rows(rows, decimals=2):
    """Order by rounded train+val loss, then smaller architecture, then grid order."""
    keyed = []
    for k, row in enumerate(rows):
        combined = round_half_up(row["loss"] + row["val_loss"], decimals)
        keyed.append((combined, row["size"], k, row))
    return [r for *_, r in sorted(keyed, key=lambda t: t[:3])]


def cmd_sweep(args):
    archs = args.layers if args.family == "mlp" else args.units
    if not (args.epochs and args.batches and archs):
        raise UsageError("empty sweep grid")
    if args.family == "mlp" and any(a not in WIDTH_SCHEDULES for a in archs):
        raise UsageError(f"layer counts must be in {sorted(WIDTH_SCHEDULES)}")
    streams, _ = _load_stream(args.data, args.ignore_rate)
    dataset = _dataset_from_args(streams, args, args.seed)
    grid, jobs = [], []
    for epochs in args.epochs:
        for batch in args.batches:
            for a in archs:
                if epochs < 1 or batch < 1:
                    raise UsageError("epochs and batch sizes must be positive")
                try:
                    if args.family == "mlp":
                        cfg = _train_config(args, epochs, batch, hidden=WIDTH_SCHEDULES[a])
                    else:
                        cfg = _train_config(args, epochs, batch, units=a)
                except ValueError as exc:
                    raise UsageError(str(exc)) from None
                grid.append((epochs, batch, a))
                jobs.append((dataset, cfg, a))
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    rows = [{"epoch": e, "batch": b, "arch": a, "size": a, "loss": r[0], "val_loss": r[1], "acc": r[2],
             "val_acc": r[3], "test_acc": r[4]} for (e, b, a), r in zip(grid, results)]
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(SWEEP_HEADER + "\n")
        for rank, row in enumerate(rank_rows(rows, args.loss_decimals), start=1):
            combined = row["loss"] + row["val_loss"]
            fh.write(f"{rank},{row['epoch']},{row['batch']},{row['arch']},{row['loss']!r},{row['val_loss']!r},"
                     f"{row['acc']!r},{row['val_acc']!r},{row['test_acc']!r},{combined!r}\n")
    return [args.data], [args.out]


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "detect": cmd_detect,
            "sweep": cmd_sweep}


def _parse(argv):
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        return parser, sub, args
    subparser = sub.choices[args.command]
    if args.config:
        try:
            defaults = read_config(args.config)
        except FileNotFoundError:
            raise
        known = {a.dest for a in subparser._actions}
        unknown = sorted(set(defaults) - known)
        if unknown:
            subparser.error(f"unknown keys in config file: {', '.join(unknown)}")
        subparser.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return parser, sub, args


def run(argv) -> int:
    parser, sub, args = _parse(argv)
    if args.command == "replay":
        _require(args.manifest)
        manifest = read_manifest(args.manifest)
        return run(json.loads(manifest["argv"]))
    subparser = sub.choices[args.command]
    started = time.perf_counter()
    try:
        inputs, outputs = COMMANDS[args.command](args)
    except UsageError as exc:
        subparser.error(str(exc))
    manifest = args.manifest = args.manifest or outputs[0] + ".manifest"
    resolved = resolved_argv(subparser, args)
    write_manifest(manifest, args.command, resolved, args, inputs, outputs)
    # wall-clock time is logged, not written, so manifests stay byte-identical across reruns
    log.info("%s finished in %.2f s; manifest %s", args.command, time.perf_counter() - started, manifest)
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO if ("-v" in argv or "--verbose" in argv) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return run(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"puffgrammar: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except PuffGrammarError as exc:
        print(f"puffgrammar: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"puffgrammar: {exc}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
