"""``sigverify`` command line: batch feature extraction, rendering, lr scan, training, evaluation.

Every artifact directory gets a ``manifest.json`` holding the resolved flags,
the seed, a checksum of the input data and the tool version, so any output
can be regenerated from its manifest.

Exit codes: 0 success, 1 usage or data error, 2 I/O error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__, nn, pipeline
from .estimators import ESTIMATORS, load_network, save_network
from .ink import InkFormatError, NoFilesFound, label_for_sample, load_corpus, read_instance
from .models import DECISION_THRESHOLD, build_model
from .preprocess import DEFAULT_RESAMPLE_N, normalize, resample_uniform
from .psf import VARIANTS, rasterize, read_tensor, write_tensor

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
MODEL_KINDS = {"cnn": "cnn_fixed", "rnn": "rnn_points", "cnn-lstm": "cnn_lstm"}
PSFT_RE = re.compile(r"^U(\d+)S(\d+)\.psft$", re.IGNORECASE)
MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for I/O failures here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- data --------------------------------------------------------------------------

class Dataset:
    """Model inputs plus the identity of each instance."""

    def __init__(self, X, labels, writers, keys, source: Path, checksum: str):
        self.X = X
        self.labels = np.asarray(labels, dtype=int)
        self.writers = np.asarray(writers)
        self.keys = keys
        self.source = source
        self.checksum = checksum

    def subset(self, idx):
        idx = list(idx)
        return [self.X[i] for i in idx], self.labels[idx]


def checksum_files(paths) -> str:
    h = hashlib.sha256()
    for p in sorted(paths, key=lambda p: p.name):
        h.update(p.name.encode())
        h.update(b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()


def _task(args) -> str:
    return f"task{args.task}"


def load_dataset(args) -> Dataset:
    kind = MODEL_KINDS[args.model]
    if bool(args.corpus) == bool(args.features):
        raise UsageError("give exactly one of --corpus or --features")
    if args.features:
        if kind == "rnn_points":
            raise UsageError("the rnn model reads point sequences; use --corpus")
        root = Path(args.features)
        if not root.is_dir():
            raise FileNotFoundError(f"no such directory: {root}")
        files = sorted(
            (int(m.group(1)), int(m.group(2)), p)
            for p in root.iterdir()
            if (m := PSFT_RE.match(p.name))
        )
        if not files:
            raise NoFilesFound(f"no files found in {root}")
        X, labels, writers, keys = [], [], [], []
        for w, s, p in files:
            t = read_tensor(p)
            if t.variant != args.variant:
                raise UsageError(f"{p.name} holds {t.variant} features, --variant is {args.variant}")
            X.append(t.data)
            labels.append(int(label_for_sample(s)))
            writers.append(w)
            keys.append(f"U{w}S{s}")
        return Dataset(X, labels, writers, keys, root, checksum_files([f[2] for f in files]))
    root = Path(args.corpus)
    if not root.is_dir():
        raise FileNotFoundError(f"no such directory: {root}")
    corpus = load_corpus(root, _task(args), permissive=getattr(args, "permissive", False))
    if kind == "rnn_points":
        X = [resample_uniform(normalize(s), args.n_points) for s in corpus]
    else:
        X = [rasterize(normalize(s), args.variant).data for s in corpus]
    files = [p for p in root.iterdir() if p.suffix.lower() == ".txt"]
    return Dataset(
        X, corpus.labels, [s.writer_id for s in corpus], [s.key for s in corpus], root, checksum_files(files)
    )


def split(ds: Dataset, fraction: float, seed: int, by_writer: bool):
    groups = ds.writers if by_writer else None
    return pipeline.split_indices(ds.labels, fraction, seed, groups)


# -- manifests and writers -------------------------------------------------------------

def write_manifest(out: Path, args, source: Path | None = None, checksum: str | None = None, **extra) -> Path:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "seed_given")}
    manifest = {
        "tool": "sigverify",
        "version": __version__,
        "command": args.command,
        "config": flags,
        "seed": args.seed,
        "corpus": {"path": None if source is None else str(source), "sha256": checksum},
        "variant": args.variant,
        "model": args.model,
    }
    manifest.update(extra)
    path = out / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def pgm_bytes(channel: np.ndarray) -> bytes:
    """Plain (P2) greymap; each pixel is ceil(255 |v| / max |v|)."""
    a = np.abs(np.asarray(channel, dtype=np.float64))
    peak = a.max() if a.size else 0.0
    img = np.ceil(255.0 * a / peak).astype(int) if peak > 0 else np.zeros(a.shape, dtype=int)
    h, w = img.shape
    lines = [f"P2\n{w} {h}\n255"]
    lines.extend(" ".join(map(str, row)) for row in img)
    return ("\n".join(lines) + "\n").encode("ascii")


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


# -- commands ----------------------------------------------------------------------

def cmd_extract(args) -> int:
    root = Path(args.corpus)
    if not root.is_dir():
        raise FileNotFoundError(f"no such directory: {root}")
    corpus = load_corpus(root, _task(args), permissive=args.permissive)
    out = _out_dir(args)
    for inst in corpus:
        write_tensor(out / f"{inst.key}.psft", rasterize(normalize(inst), args.variant))
    files = [p for p in root.iterdir() if p.suffix.lower() == ".txt"]
    write_manifest(out, args, root, checksum_files(files), n_files=len(corpus))
    print(f"wrote {len(corpus)} tensors to {out}")
    return EXIT_OK


def cmd_render(args) -> int:
    src = Path(args.instance)
    if src.suffix.lower() == ".psft":
        t = read_tensor(src)
    else:
        t = rasterize(normalize(read_instance(src)), args.variant)
    out = _out_dir(args)
    for c in range(t.channels):
        (out / f"{src.stem}_ch{c:02d}.pgm").write_bytes(pgm_bytes(t.data[c]))
    write_manifest(out, args, src, checksum_files([src]), n_channels=t.channels, width=t.width)
    print(f"wrote {t.channels} images to {out}")
    return EXIT_OK


def _estimator(args, epochs: int, lr):
    kind = MODEL_KINDS[args.model]
    common = dict(
        epochs=epochs,
        lr=lr,
        batch_size=getattr(args, "batch_size", pipeline.BATCH_SIZE),
        lr_decay=getattr(args, "lr_decay", pipeline.LR_DECAY),
        seed=args.seed,
    )
    if kind == "rnn_points":
        return ESTIMATORS[kind](n_points=args.n_points, **common)
    if kind == "cnn_lstm":
        return ESTIMATORS[kind](variant=args.variant, dropout=getattr(args, "dropout", False), **common)
    return ESTIMATORS[kind](variant=args.variant, **common)


def cmd_lr_find(args) -> int:
    if not 0 < args.lr_min < args.lr_max:
        raise UsageError("need 0 < --lr-min < --lr-max")
    ds = load_dataset(args)
    train_idx, _ = split(ds, args.train_fraction, args.seed, args.by_writer)
    X, y = ds.subset(train_idx)
    est = _estimator(args, 0, 1.0)
    X = est._check_X(X)
    net = build_model(est._make_config(), seed=args.seed)
    est._fit_scaling(net, X)
    res = pipeline.lr_range_test(
        net, X, y, args.lr_min, args.lr_max, args.steps, args.batch_size, args.seed
    )
    out = _out_dir(args)
    with open(out / "lr_scan.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "lr", "smoothed_loss"])
        for k, (lr, loss) in enumerate(res.points):
            w.writerow([k, _fmt(lr), _fmt(loss)])
    write_manifest(out, args, ds.source, ds.checksum, lr_chosen=res.lr_chosen, flat=res.flat)
    print(f"{res.lr_chosen!r}")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = load_dataset(args)
    train_idx, test_idx = split(ds, args.train_fraction, args.seed, args.by_writer)
    X, y = ds.subset(train_idx)
    X_test = y_test = None
    if args.track_test:
        X_test, y_test = ds.subset(test_idx)
    lr = args.lr if args.lr == "auto" else float(args.lr)
    est = _estimator(args, args.epochs, lr)

    est.fit(X, y, X_test, y_test)
    out = _out_dir(args)
    extra = {
        "seed": args.seed,
        "lr": est.lr_,
        "train_fraction": args.train_fraction,
        "by_writer": args.by_writer,
        "task": args.task,
    }
    save_network(est.network_, out / "model.svmd", extra)
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_train_loss", "lr"] + (["test_accuracy"] if args.track_test else []))
        for rec in est.history_:
            row = [rec.epoch, _fmt(rec.mean_train_loss), _fmt(rec.lr)]
            if args.track_test:
                row.append(_fmt(rec.test_accuracy))
            w.writerow(row)
    write_manifest(out, args, ds.source, ds.checksum, lr_used=est.lr_, n_train=len(train_idx))
    print(f"trained {len(est.history_)} epochs on {len(train_idx)} instances; checkpoint {out / 'model.svmd'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net, config = load_network(args.checkpoint)
    kind = net.cfg.kind
    args.model = {v: k for k, v in MODEL_KINDS.items()}[kind]
    if kind != "rnn_points":
        args.variant = net.cfg.feature_variant
    else:
        args.n_points = net.cfg.resample_n
    ds = load_dataset(args)
    fraction = float(config.get("train_fraction", pipeline.TRAIN_FRACTION))
    by_writer = config.get("by_writer", "False") == "True"
    # the split seed comes from the checkpoint unless --seed was given explicitly
    seed = args.seed if args.seed_given else int(config.get("seed", args.seed))
    args.seed = seed
    train_idx, test_idx = split(ds, fraction, seed, by_writer)
    chosen = {"test": test_idx, "train": train_idx, "all": list(range(len(ds.labels)))}[args.split]
    if not chosen:
        raise pipeline.EmptyTestSet(f"the {args.split} selection is empty")
    X, y = ds.subset(chosen)
    X = _estimator(args, 0, 1.0)._check_X(X)
    m = pipeline.evaluate(net, X, y, args.threshold)
    out = _out_dir(args)
    report = dict(m.to_dict(), threshold=args.threshold, seed=seed)
    (out / "metrics.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_manifest(out, args, ds.source, ds.checksum, checkpoint=str(args.checkpoint), n_eval=len(chosen))
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import time_dilated_pairs, write_svc_corpus

    out = _out_dir(args)
    paths = write_svc_corpus(time_dilated_pairs(args.n_pairs, args.seed), out)
    write_manifest(out, args, None, checksum_files(paths), n_files=len(paths))
    print(f"wrote {len(paths)} files to {out}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def _lr_arg(v: str):
    if v == "auto":
        return v
    try:
        x = float(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {v!r}") from None
    if not x > 0:
        raise argparse.ArgumentTypeError("lr must be > 0")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--task", type=int, choices=(1, 2), default=1)
    common.add_argument("--variant", choices=VARIANTS, default="original")
    common.add_argument("--model", choices=tuple(MODEL_KINDS), default="cnn-lstm")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--config", help="flat key=value file; explicit flags win")
    common.add_argument("-v", "--verbose", action="store_true")

    data = _Parser(add_help=False)
    data.add_argument("--corpus", help="directory of U<w>S<s>.TXT files")
    data.add_argument("--features", help="directory of .psft files written by extract")
    data.add_argument("--n-points", type=int, default=DEFAULT_RESAMPLE_N, help="rnn sequence length")
    data.add_argument("--permissive", action="store_true", help="skip unparseable files")

    training = _Parser(add_help=False)
    training.add_argument("--batch-size", type=int, default=pipeline.BATCH_SIZE)
    training.add_argument("--lr-decay", type=float, default=pipeline.LR_DECAY)
    training.add_argument("--train-fraction", type=float, default=pipeline.TRAIN_FRACTION)
    training.add_argument("--by-writer", action="store_true", help="writer-disjoint split")
    training.add_argument("--dropout", action="store_true", help="dropout after the first FC layer")

    parser = _Parser(prog="sigverify", description="Online signature verification with path-signature features.")
    parser.add_argument("--version", action="version", version=f"sigverify {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", parents=[common], help="corpus -> .psft feature tensors")
    p.add_argument("--corpus", required=True)
    p.add_argument("--permissive", action="store_true")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("render", parents=[common], help="one instance -> per-channel PGM images")
    p.add_argument("--instance", required=True, help="a .TXT signature file or a .psft tensor")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("lr-find", parents=[common, data, training], help="learning-rate range test")
    p.add_argument("--lr-min", type=float, default=1e-7)
    p.add_argument("--lr-max", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=100)
    p.set_defaults(func=cmd_lr_find)

    p = sub.add_parser("train", parents=[common, data, training], help="train a model")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=_lr_arg, default="1e-3", help="initial lr, or 'auto' for the range test")
    p.add_argument("--track-test", action="store_true", help="log held-out accuracy each epoch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common, data], help="metrics of a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--threshold", type=float, default=DECISION_THRESHOLD)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic time-dilated corpus")
    p.add_argument("--n-pairs", type=int, default=100)
    p.set_defaults(func=cmd_synth)
    return parser


def read_config(path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv)
    if args.config:
        values = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for k, v in values.items():
            a = actions.get(k)
            if a is None or k in ("help", "config"):
                raise UsageError(f"unknown config key {k!r} for {args.command}")
            if a.nargs == 0:  # store_true flags
                defaults[k] = v.lower() in ("1", "true", "yes")
            else:
                defaults[k] = v
        # re-parse so explicit flags override file values and types/choices are checked
        sub.set_defaults(**{k: (v if isinstance(v, bool) else _typed(actions[k], v)) for k, v in defaults.items()})
        args = parser.parse_args(argv)
        args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv) or "seed" in values
    if args.command in ("train", "lr-find"):
        if not 0 < args.train_fraction < 1:
            raise UsageError("--train-fraction must lie in (0, 1)")
        if args.batch_size < 1:
            raise UsageError("--batch-size must be >= 1")
    if args.command == "train" and args.epochs < 0:
        raise UsageError("--epochs must be >= 0")
    return args


def _typed(action, raw: str):
    try:
        v = action.type(raw) if action.type else raw
    except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
        raise UsageError(f"config value {raw!r} for {action.dest}: {exc}") from None
    if action.choices is not None and v not in action.choices:
        raise UsageError(f"config value {raw!r} for {action.dest} not in {list(action.choices)}")
    return v


def main(argv=None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        with np.errstate(over="ignore", under="ignore"):
            return args.func(args)
    except (pipeline.NonFiniteLoss, nn.NonFiniteError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, NoFilesFound, InkFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
