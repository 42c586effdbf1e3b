"""Command-line surface: synth | train | score | eval | oracle.

Every command writes a JSON manifest (resolved configuration, input file
digests, seed, artifact paths, wall-clock timings) next to its primary
output; ``tsgad --manifest <file>`` replays the recorded run. Exit codes:
0 success, 1 usage/configuration error, 2 data error, 3 numeric failure,
4 property-suite failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict, fields

from . import __version__
from .dataio import (
    AnomalyInterval,
    SeriesDataset,
    normalize_with,
    read_series,
    split_normalize,
    synth_generate,
    window_table,
    write_series,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataFormatError,
    DivergenceError,
    MetricUndefinedError,
)
from .graph import adjacency_export, build_graphs
from .oracles import run_all
from .train import (
    PAPER_SCALE,
    TrainConfig,
    decode_array,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    score,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3
EXIT_SUITE = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; usage is 1 here
        self.print_usage(sys.stderr)
        raise SystemExit_(EXIT_USAGE, f"{self.prog}: error: {message}")


class SystemExit_(Exception):
    def __init__(self, code, message=None):
        super().__init__(message or "")
        self.code = code
        self.message = message


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path, command, argv, config, inputs, outputs, seed, timings):
    payload = {
        "tool": "tsgad",
        "tool_version": __version__,
        "command": command,
        "argv": list(argv),
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "timings_seconds": timings,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path


def _parse_interval(text, kind):
    try:
        start, stop = text.split(":")
        return AnomalyInterval(kind, int(start), int(stop))
    except (ValueError, TypeError):
        raise ConfigError(
            f"bad interval {text!r}; expected START:STOP, e.g. --{'shift' if kind != 'spike' else 'spike'} 1200:1320"
        ) from None


def _add_train_config_flags(parser):
    parser.add_argument("--window", type=int, help="window length T")
    parser.add_argument("--stride", type=int, help="window stride S")
    parser.add_argument("--batch", dest="batch_size", type=int, help="windows per batch B")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", dest="learning_rate", type=float)
    parser.add_argument("--lam", type=float, help="alignment weight in the loss")
    parser.add_argument("--beta", type=float, help="entropic regularization weight")
    parser.add_argument("--dropout", type=float)
    parser.add_argument("--ablation", choices=("full", "no_wd", "no_gwd", "no_ga"))
    parser.add_argument("--omega-mode", dest="omega_mode", choices=("mean", "concat"))
    parser.add_argument("--attention-key-index", dest="attention_key_index", choices=("i", "j"))
    parser.add_argument("--embedding-reduce", dest="embedding_reduce", choices=("concat", "mean"))
    parser.add_argument("--hidden", type=int, help="recurrent hidden width")
    parser.add_argument("--d-step", dest="d_step", type=int, help="per-step embedding width")
    parser.add_argument("--flow-layers", dest="flow_layers", type=int)
    parser.add_argument("--flow-init-scale", dest="flow_init_scale", type=float)
    parser.add_argument("--flow-cond-init-scale", dest="flow_cond_init_scale", type=float)
    parser.add_argument("--encoder-out-scale", dest="encoder_out_scale", type=float)
    parser.add_argument("--grad-clip", dest="grad_clip", type=float)
    parser.add_argument("--score-lambda-scaled", dest="score_lambda_scaled", action="store_true", default=None)
    parser.add_argument("--score-passes", dest="score_passes", type=int)
    parser.add_argument("--split-fraction", dest="split_fraction", type=float)


def _read_config_file(path):
    values = {}
    valid = {f.name for f in fields(TrainConfig)}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = (part.strip() for part in line.partition("="))
            if key not in valid:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = value
    typed = {}
    for f in fields(TrainConfig):
        if f.name not in values:
            continue
        raw = values[f.name]
        if f.type in ("int",):
            typed[f.name] = int(raw)
        elif f.type in ("float",):
            typed[f.name] = float(raw)
        elif f.type in ("bool",):
            typed[f.name] = raw.lower() in ("1", "true", "yes")
        else:
            typed[f.name] = raw
    return typed


def _resolve_config(args):
    """Precedence: flags > config file > paper-scale switch > defaults."""
    values = {}
    if getattr(args, "paper_scale", False):
        values.update(PAPER_SCALE)
    if getattr(args, "config", None):
        values.update(_read_config_file(args.config))
    for f in fields(TrainConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    values["seed"] = args.seed
    return TrainConfig.from_dict(values)


def _slice_series(ds, lo, hi):
    return SeriesDataset(
        channel_names=list(ds.channel_names),
        values=ds.values[lo:hi].copy(),
        labels=ds.labels[lo:hi].copy(),
    )


def _split_for_scoring(ds, split, fraction):
    cut = int(ds.length * fraction)
    if split == "train":
        return _slice_series(ds, 0, cut), 0
    if split == "test":
        return _slice_series(ds, cut, ds.length), cut
    return _slice_series(ds, 0, ds.length), 0


def _format_float(x):
    return repr(float(x))


def _write_score_outputs(report, offset, out_prefix):
    scores_path = f"{out_prefix}.scores.csv"
    summary_path = f"{out_prefix}.summary.json"
    with open(scores_path, "w", encoding="utf-8") as fh:
        fh.write("window_start,label,d_ga,nll,score,predicted\n")
        for i in range(len(report.scores)):
            fh.write(
                f"{int(report.window_starts[i]) + offset},{int(report.labels[i])},"
                f"{_format_float(report.d_ga[i])},{_format_float(report.nll[i])},"
                f"{_format_float(report.scores[i])},{int(report.predicted[i])}\n"
            )
    summary = {
        "auc": report.auc,
        "threshold": report.threshold,
        "counts": report.counts,
        "n_windows": int(len(report.scores)),
        "n_predicted_anomalous": int(report.predicted.sum()),
    }
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return scores_path, summary_path


def cmd_synth(args, argv):
    t0 = time.time()
    spec = [_parse_interval(s, "interdependency_shift") for s in args.shift or []]
    spec += [_parse_interval(s, "spike") for s in args.spike or []]
    ds = synth_generate(
        n_channels=args.channels, length=args.length, anomaly_spec=spec,
        seed=args.seed, noise=args.noise,
    )
    write_series(ds, args.out)
    manifest = _write_manifest(
        f"{args.out}.manifest.json", "synth", argv,
        {"channels": args.channels, "length": args.length, "noise": args.noise,
         "anomalies": [[iv.kind, iv.start, iv.stop] for iv in spec]},
        [], [args.out], args.seed, {"total": time.time() - t0},
    )
    print(f"wrote {args.out} ({ds.length} rows x {ds.n_channels} channels, "
          f"{int(ds.labels.sum())} anomalous steps); manifest {manifest}")
    return EXIT_OK


def cmd_train(args, argv):
    t0 = time.time()
    config = _resolve_config(args)
    train_ds, _ = (
        split_normalize(read_series(args.data, label_column=args.label_column), config.split_fraction)
    )
    t_load = time.time() - t0
    result = train(train_ds, config)
    t_train = time.time() - t0 - t_load
    save_checkpoint(result.checkpoint, args.out)
    curve_path = args.loss_curve or f"{args.out}.loss.csv"
    with open(curve_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,batch,loss\n")
        for epoch, batch, loss in result.loss_curve:
            fh.write(f"{epoch},{batch},{_format_float(loss)}\n")
    manifest = _write_manifest(
        f"{args.out}.manifest.json", "train", argv, asdict(config),
        [args.data], [args.out, curve_path], config.seed,
        {"load": t_load, "train": t_train, "total": time.time() - t0},
    )
    print(
        f"trained {config.epochs} epochs on {train_ds.length} rows; "
        f"final epoch loss {result.epoch_means[-1]:.6g}; checkpoint {args.out}; manifest {manifest}"
    )
    return EXIT_OK


def _run_scoring(args, argv, command):
    t0 = time.time()
    checkpoint = load_checkpoint(args.checkpoint)
    config = TrainConfig.from_dict(checkpoint["config"])
    full = read_series(args.data, label_column=args.label_column)
    part, offset = _split_for_scoring(full, args.split, config.split_fraction)
    report = score(part, checkpoint)
    if command == "eval" and report.auc is None:
        raise MetricUndefinedError(
            "eval needs both normal and anomalous windows in the data; "
            "use `tsgad score` for unlabeled data"
        )
    outputs = list(_write_score_outputs(report, offset, args.out_prefix))
    if args.export_graphs:
        model = model_from_checkpoint(checkpoint)
        norm = normalize_with(part, decode_array(checkpoint["normalization"]["mean"]),
                              decode_array(checkpoint["normalization"]["std"]))
        windows, starts, _ = window_table(norm, config.window, config.stride)
        graphs, _ = build_graphs(
            windows, starts + offset, model.attention, key_index=config.attention_key_index
        )
        adjacency_export(graphs, args.export_graphs)
        outputs.append(args.export_graphs)
    manifest = _write_manifest(
        f"{args.out_prefix}.manifest.json", command, argv, asdict(config),
        [args.data, args.checkpoint], outputs, config.seed, {"total": time.time() - t0},
    )
    auc_text = "n/a" if report.auc is None else f"{report.auc:.4f}"
    print(
        f"{command}: {len(report.scores)} windows, auc {auc_text}, threshold {report.threshold:.6g}, "
        f"flagged {int(report.predicted.sum())}; outputs {', '.join(outputs)}; manifest {manifest}"
    )
    return EXIT_OK


def cmd_oracle(args, argv):
    t0 = time.time()
    results = run_all(seeds=args.seeds, inject_fault=args.inject_fault)
    all_passed = True
    for suite in results:
        status = "PASS" if suite["passed"] else "FAIL"
        all_passed &= suite["passed"]
        print(
            f"[{status}] {suite['name']}: {suite['checks']} checks, "
            f"max deviation {suite['max_deviation']:.3e}, {suite['seconds']:.1f}s"
        )
        for failure in suite["failures"]:
            print(f"         {failure}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(results, sort_keys=True, indent=2, default=str) + "\n")
        _write_manifest(
            f"{args.out}.manifest.json", "oracle", argv, {"seeds": args.seeds},
            [], [args.out], args.seeds, {"total": time.time() - t0},
        )
    return EXIT_OK if all_passed else EXIT_SUITE


def build_parser():
    parser = _Parser(prog="tsgad", description=__doc__)
    parser.add_argument("--manifest", help="replay a previously recorded run")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap (currently single-threaded; recorded in manifests)")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    p.add_argument("--channels", type=int, default=5)
    p.add_argument("--length", type=int, default=2000)
    p.add_argument("--shift", action="append", metavar="START:STOP",
                   help="interdependency_shift interval (repeatable)")
    p.add_argument("--spike", action="append", metavar="START:STOP",
                   help="spike interval (repeatable)")
    p.add_argument("--noise", type=float, default=0.08)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a detector on the train split of a CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-curve", help="loss curve CSV (default: <out>.loss.csv)")
    p.add_argument("--label-column", default="label")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--paper-scale", action="store_true",
                   help="switch window/batch/epochs to the full-scale experiment values")
    p.add_argument("--seed", type=int, required=True)
    _add_train_config_flags(p)

    for name, help_text in (
        ("score", "score windows of a CSV with a checkpoint"),
        ("eval", "score and require a labeled dataset (AUC-ROC)"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--data", required=True)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--out-prefix", required=True)
        p.add_argument("--label-column", default="label")
        p.add_argument("--split", choices=("test", "train", "all"), default="test")
        p.add_argument("--export-graphs", metavar="CSV", help="also export per-window adjacency")

    p = sub.add_parser("oracle", help="run solver-vs-enumeration and gradient suites")
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--out", help="write suite results as JSON")
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)

    return parser


def _dispatch(args, argv):
    if args.command == "synth":
        return cmd_synth(args, argv)
    if args.command == "train":
        return cmd_train(args, argv)
    if args.command in ("score", "eval"):
        return _run_scoring(args, argv, args.command)
    if args.command == "oracle":
        return cmd_oracle(args, argv)
    raise ConfigError("no command given; see tsgad --help")


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.manifest:
            with open(args.manifest, encoding="utf-8") as fh:
                recorded = json.load(fh)
            replay_argv = recorded.get("argv")
            if not isinstance(replay_argv, list) or not replay_argv:
                raise ConfigError(f"{args.manifest}: manifest has no recorded argv to replay")
            print(f"replaying {recorded.get('command')} from {args.manifest}")
            args = parser.parse_args(replay_argv)
            args.manifest = None
            return _dispatch(args, replay_argv)
        return _dispatch(args, argv)
    except SystemExit_ as exc:
        if exc.message:
            print(exc.message, file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"tsgad: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, CheckpointError, MetricUndefinedError) as exc:
        print(f"tsgad: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"tsgad: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, FloatingPointError) as exc:
        print(f"tsgad: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
