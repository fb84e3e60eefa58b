"""Command-line entry point: ``malgrid {convert,synth,kfold,train-final,evaluate,predict}``."""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import datasets, imaging
from .evaluation import FoldResult, confusion_matrix, evaluate_model_cv, summarize_performance
from .imaging import ImagingError
from .layers import ShapeError
from .model import ARCHITECTURES, ModelFileError, build_model, load_model, predict_proba, save_model
from .reports import emit_reports, write_history_csv
from .training import TrainConfig, evaluate_dataset, fit

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("malgrid")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _add_training_flags(p: argparse.ArgumentParser, arch_default: str) -> None:
    p.add_argument("--arch", choices=ARCHITECTURES, default=arch_default, help="network architecture")
    p.add_argument("--lr", type=float, default=0.01, help="SGD learning rate")
    p.add_argument("--momentum", type=float, default=0.9, help="classical momentum coefficient")
    p.add_argument("--epochs", type=_positive_int, default=10, help="training epochs")
    p.add_argument("--batch-size", type=_positive_int, default=32, help="mini-batch size")
    p.add_argument("--seed", type=int, default=1, help="seed for splits, shuffling and initialisation")
    p.add_argument("--input-side", type=_positive_int, default=imaging.INPUT_SIDE, help="network input side in pixels")
    p.add_argument("--train-fraction", type=float, default=0.7, help="fraction of the corpus used for training")
    p.add_argument("--split-stratify", action=argparse.BooleanOptionalAction, default=True,
                   help="stratify the train/test split by family")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="malgrid", description=__doc__, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("convert", help="render a binary as a grayscale PGM image", formatter_class=fmt)
    p.add_argument("binary", type=Path)
    p.add_argument("-o", "--output", type=Path, default=None, help="output PGM path (default: <binary>.pgm)")

    p = sub.add_parser("synth", help="write a synthetic byte-texture corpus", formatter_class=fmt)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--families", type=_positive_int, default=5, help="number of families")
    p.add_argument("--per-family", type=_positive_int, default=200, help="samples per family")
    p.add_argument("--seed", type=int, default=1, help="generator seed")
    p.add_argument("--noise", type=float, default=0.1, help="fraction of bytes replaced by uniform noise")

    p = sub.add_parser("kfold", help="k-fold cross-validate an architecture on a corpus", formatter_class=fmt)
    p.add_argument("corpus", type=Path)
    _add_training_flags(p, "baseline")
    p.add_argument("--folds", type=int, default=5, help="number of folds k")
    p.add_argument("--stratify", action=argparse.BooleanOptionalAction, default=False,
                   help="stratified fold assignment")
    p.add_argument("--cv-on", choices=("train", "all"), default="train",
                   help="cross-validate on the training split or on the whole corpus")
    p.add_argument("--out-dir", type=Path, default=Path("reports"), help="report directory")

    p = sub.add_parser("train-final", help="fit on the training split, save, score the hold-out",
                       formatter_class=fmt)
    p.add_argument("corpus", type=Path)
    _add_training_flags(p, "improved")
    p.add_argument("--out-dir", type=Path, default=Path("final"), help="directory for model.bin and history.csv")

    p = sub.add_parser("evaluate", help="accuracy and confusion matrix of a saved model", formatter_class=fmt)
    p.add_argument("model", type=Path)
    p.add_argument("corpus", type=Path)

    p = sub.add_parser("predict", help="top family guesses for one sample", formatter_class=fmt)
    p.add_argument("model", type=Path)
    p.add_argument("sample", type=Path)
    p.add_argument("--top", type=_positive_int, default=3, help="number of families to print")
    return parser


@contextlib.contextmanager
def _staged_dir(final: Path):
    """Write into a scratch directory; move files into ``final`` only on success."""
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{final.name}-", dir=final.parent))
    try:
        yield tmp
        final.mkdir(parents=True, exist_ok=True)
        for item in sorted(tmp.iterdir()):
            os.replace(item, final / item.name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _config(args) -> TrainConfig:
    try:
        cfg = TrainConfig(args.lr, args.momentum, args.epochs, args.batch_size, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not 0.0 < args.train_fraction < 1.0:
        raise UsageError("--train-fraction must lie strictly between 0 and 1")
    return cfg


def _require(path: Path, kind: str) -> None:
    ok = path.is_dir() if kind == "dir" else path.is_file()
    if not ok:
        raise FileNotFoundError(f"{path}: no such {'directory' if kind == 'dir' else 'file'}")


def cmd_convert(args) -> int:
    _require(args.binary, "file")
    out = args.output or args.binary.with_name(args.binary.name + ".pgm")
    img = imaging.bytes_to_image(args.binary.read_bytes())
    with _staged_dir(out.parent) as tmp:
        imaging.write_pgm(img, tmp / out.name)
    print(f"{out}\t{img.width}x{img.height}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if not 0.0 <= args.noise <= 1.0:
        raise UsageError("--noise must lie in [0, 1]")
    if args.families < 2 or args.per_family < 2:
        raise UsageError("need at least 2 families and 2 samples per family")
    if args.seed < 0:
        raise UsageError("--seed must be non-negative")
    with _staged_dir(args.out_dir) as tmp:
        datasets.write_synthetic_corpus(tmp, args.families, args.per_family, args.seed, args.noise)
    print(f"{args.out_dir}\t{args.families} families x {args.per_family} samples")
    return EXIT_OK


def cmd_kfold(args) -> int:
    cfg = _config(args)
    if args.folds < 2:
        raise UsageError("--folds must be >= 2")
    _require(args.corpus, "dir")
    ds = datasets.load_corpus(args.corpus, args.input_side)
    if args.cv_on == "train":
        ds, _ = datasets.split_train_test(ds, args.train_fraction, cfg.seed, args.split_stratify)
    results = evaluate_model_cv(ds, args.arch, cfg, args.folds, args.stratify,
                                on_fold=lambda r: print(f"> {r.accuracy * 100.0:.3f}", flush=True))
    extra = {
        "config": {
            "arch": args.arch, "folds": args.folds, "seed": cfg.seed, "learning_rate": cfg.learning_rate,
            "momentum": cfg.momentum, "epochs": cfg.epochs, "batch_size": cfg.batch_size,
            "input_side": args.input_side, "stratify": args.stratify, "cv_on": args.cv_on,
            "samples": len(ds), "classes": list(ds.class_names),
        }
    }
    with _staged_dir(args.out_dir) as tmp:
        emit_reports(results, tmp, extra)
    s = summarize_performance([r.accuracy for r in results])
    print(f"Accuracy: mean={s.mean * 100:.3f} std={s.std * 100:.3f}, n={s.n}")
    return EXIT_OK


def cmd_train_final(args) -> int:
    cfg = _config(args)
    _require(args.corpus, "dir")
    ds = datasets.load_corpus(args.corpus, args.input_side)
    train, test = datasets.split_train_test(ds, args.train_fraction, cfg.seed, args.split_stratify)
    model = build_model(args.arch, args.input_side, ds.num_classes, cfg.seed, ds.class_names)
    history = fit(model, train, test, cfg)
    _, acc = evaluate_dataset(model, test)
    with _staged_dir(args.out_dir) as tmp:
        save_model(model, tmp / "model.bin")
        write_history_csv([FoldResult(0, acc, history)], tmp / "history.csv")
    print(f"> {acc * 100.0:.3f}")
    return EXIT_OK


def _check_classes(model, ds) -> None:
    if model.class_names and tuple(model.class_names) != ds.class_names:
        raise datasets.DatasetError(
            f"corpus families {list(ds.class_names)} do not match the model's {model.class_names}"
        )


def cmd_evaluate(args) -> int:
    _require(args.model, "file")
    _require(args.corpus, "dir")
    model = load_model(args.model)
    ds = datasets.load_corpus(args.corpus, model.input_side)
    _check_classes(model, ds)
    preds = np.argmax(predict_proba(model, ds.images), axis=1)
    cm = confusion_matrix(preds, ds.labels, model.num_classes)
    acc = float(np.trace(cm)) / len(ds)
    names = list(model.class_names) or [str(i) for i in range(model.num_classes)]
    print(f"accuracy\t{acc:.6f}\t{int(np.trace(cm))}/{len(ds)}")
    print("true\\pred\t" + "\t".join(names))
    for name, row in zip(names, cm):
        print(name + "\t" + "\t".join(str(int(v)) for v in row))
    return EXIT_OK


def cmd_predict(args) -> int:
    _require(args.model, "file")
    _require(args.sample, "file")
    model = load_model(args.model)
    x = datasets.load_sample(args.sample, model.input_side)
    probs = predict_proba(model, x)
    names = list(model.class_names) or [str(i) for i in range(model.num_classes)]
    order = np.argsort(-probs, kind="stable")[: args.top]
    for i in order:
        print(f"{names[i]}\t{float(probs[i]):.6f}")
    return EXIT_OK


COMMANDS = {
    "convert": cmd_convert, "synth": cmd_synth, "kfold": cmd_kfold, "train-final": cmd_train_final,
    "evaluate": cmd_evaluate, "predict": cmd_predict,
}


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except (datasets.DatasetError, ImagingError, ModelFileError, ShapeError) as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, "io", str(exc))


if __name__ == "__main__":
    sys.exit(main())
