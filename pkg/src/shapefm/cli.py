"""Command-line entry point: pretrain, finetune, zeroshot, explain, evalstats.

Every command writes its resolved configuration next to its outputs, so a
run can be reproduced from the output directory alone. Exit codes: 0 on
success, 2 on usage errors, 1 on runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .checkpoint import ModelCheckpoint
from .data import TEST, TRAIN, build_pretrain_corpus, load_tsv_dataset
from .errors import ParseError, ValidationError
from .evaluation import (
    EvalReport,
    compare_methods,
    extract_features,
    read_accuracy_table,
    zero_shot_eval,
)
from .interpret import build_explain_record, score_heatmap
from .model import ModelConfig
from .prototypes import ContrastiveConfig
from .training import TrainConfig, finetune, pretrain


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scales", default="64,32,16,8,4",
                   help="comma-separated window lengths, coarse to fine (stride = length)")
    p.add_argument("--target-length", type=int, default=512)
    p.add_argument("--embed-dim", type=int, default=256)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--ff-dim", type=int, default=512)
    p.add_argument("--dropout", type=float, default=0.1)


def _add_train_flags(p: argparse.ArgumentParser, epochs: int, lr: float) -> None:
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--learning-rate", type=float, default=lr)
    p.add_argument("--weight-decay", type=float, default=1e-5)
    p.add_argument("--key-momentum", type=float, default=0.99)
    p.add_argument("--tau", type=float, default=0.2)
    p.add_argument("--epsilon", type=float, default=0.6)
    p.add_argument("--lambda", dest="lam", type=float, default=0.01)
    p.add_argument("--mu", type=float, default=0.01)
    p.add_argument("--beta", type=float, default=0.9, help="prototype EMA momentum")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapefm", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="pretrain on a directory of TSV train splits")
    p.add_argument("--data", required=True, help="directory of *_TRAIN.tsv files")
    p.add_argument("--out", required=True)
    p.add_argument("--label-ratio", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ema-from-pseudo-labels", action="store_true")
    _add_model_flags(p)
    _add_train_flags(p, epochs=30, lr=1e-3)

    p = sub.add_parser("finetune", help="fine-tune a checkpoint on one dataset")
    p.add_argument("--data", required=True,
                   help="dataset directory or prefix with _TRAIN.tsv/_TEST.tsv files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_train_flags(p, epochs=300, lr=1e-4)

    p = sub.add_parser("zeroshot", help="random forest on frozen features, per dataset")
    p.add_argument("--data", required=True, help="directory of *_TRAIN.tsv/*_TEST.tsv pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("explain", help="export per-scale window attention for one sample")
    p.add_argument("--data", required=True, help="a TSV file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sample-index", type=int, required=True)
    p.add_argument("--heatmap", action="store_true", help="also write heatmap.csv")

    p = sub.add_parser("evalstats", help="rank methods and run pairwise Wilcoxon tests")
    p.add_argument("--table", required=True, help="CSV with header dataset,method,accuracy")
    p.add_argument("--out", required=True)

    return parser


def _validate_args(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    if getattr(args, "label_ratio", None) is not None and not 0.0 <= args.label_ratio <= 1.0:
        parser.error(f"--label-ratio must be in [0, 1], got {args.label_ratio}")
    if getattr(args, "epochs", None) is not None and args.epochs < 0:
        parser.error(f"--epochs must be >= 0, got {args.epochs}")
    if getattr(args, "batch_size", None) is not None and args.batch_size < 1:
        parser.error(f"--batch-size must be >= 1, got {args.batch_size}")
    if getattr(args, "sample_index", None) is not None and args.sample_index < 0:
        parser.error(f"--sample-index must be >= 0, got {args.sample_index}")
    if hasattr(args, "scales"):
        try:
            _parse_scales(args.scales)
        except (ValidationError, ValueError) as exc:
            parser.error(f"--scales: {exc}")


def _parse_scales(text: str) -> tuple[tuple[int, int], ...]:
    from .adapter import ScaleConfig

    lengths = [int(tok) for tok in text.split(",") if tok.strip()]
    if not lengths:
        raise ValidationError("no window lengths given")
    scales = tuple((w, w) for w in lengths)
    ScaleConfig(scales)
    return scales


def _model_config(args: argparse.Namespace) -> ModelConfig:
    return ModelConfig(
        target_length=args.target_length,
        embed_dim=args.embed_dim,
        scales=_parse_scales(args.scales),
        depth=args.depth,
        heads=args.heads,
        ff_dim=args.ff_dim,
        dropout=args.dropout,
    )


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        weight_decay=args.weight_decay,
        key_momentum=args.key_momentum,
        seed=args.seed,
        contrastive=ContrastiveConfig(tau=args.tau, epsilon=args.epsilon, lam=args.lam),
        mu=args.mu,
        label_ratio=getattr(args, "label_ratio", 0.0) or 0.0,
        prototype_beta=args.beta,
        ema_from_pseudo_labels=getattr(args, "ema_from_pseudo_labels", False),
    )


def _resolved_config(args: argparse.Namespace) -> dict:
    resolved = {}
    for key, value in sorted(vars(args).items()):
        resolved[key] = str(value) if isinstance(value, Path) else value
    return resolved


def _write_json(payload: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _find_train_files(data_dir: Path) -> list[Path]:
    if not data_dir.is_dir():
        raise ValidationError(f"not a directory: {data_dir}")
    files = sorted(data_dir.glob("*_TRAIN.tsv"))
    if not files:
        files = sorted(data_dir.glob("*.tsv"))
    if not files:
        raise ValidationError(f"no .tsv files in {data_dir}")
    return files


def _find_split_pair(data: str) -> tuple[Path, Path]:
    path = Path(data)
    if path.is_dir():
        trains = sorted(path.glob("*_TRAIN.tsv"))
        if len(trains) != 1:
            raise ValidationError(
                f"{path} must contain exactly one *_TRAIN.tsv (found {len(trains)}); "
                "pass a dataset prefix instead"
            )
        train = trains[0]
    else:
        train = Path(str(path) + "_TRAIN.tsv")
    test = Path(str(train)[: -len("_TRAIN.tsv")] + "_TEST.tsv")
    if not train.is_file():
        raise ValidationError(f"missing train split: {train}")
    if not test.is_file():
        raise ValidationError(f"missing test split: {test}")
    return train, test


def _find_split_pairs(data_dir: Path) -> list[tuple[str, Path, Path]]:
    pairs = []
    for train in sorted(data_dir.glob("*_TRAIN.tsv")):
        test = Path(str(train)[: -len("_TRAIN.tsv")] + "_TEST.tsv")
        if test.is_file():
            pairs.append((train.name[: -len("_TRAIN.tsv")], train, test))
    if not pairs:
        raise ValidationError(f"no *_TRAIN.tsv/*_TEST.tsv pairs in {data_dir}")
    return pairs


def _load_checkpoint(path: str) -> ModelCheckpoint:
    p = Path(path)
    if not p.is_dir():
        raise ValidationError(f"checkpoint directory not found: {p}")
    return ModelCheckpoint.load(p)


def _cmd_pretrain(args: argparse.Namespace) -> int:
    out = Path(args.out)
    datasets = [
        load_tsv_dataset(f, split=TRAIN, target_length=args.target_length)
        for f in _find_train_files(Path(args.data))
    ]
    corpus = build_pretrain_corpus(datasets, label_ratio=args.label_ratio, seed=args.seed)
    checkpoint, history = pretrain(corpus, _train_config(args), _model_config(args))
    checkpoint.config["run"] = _resolved_config(args)
    checkpoint.save(out)
    with open(out / "losses.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "l_proto", "l_self", "total"])
        for epoch, parts in enumerate(history.epoch_parts):
            writer.writerow([epoch, parts["l_proto"], parts["l_self"], history.epoch_loss[epoch]])
    print(f"wrote checkpoint to {out}")
    return 0


def _cmd_finetune(args: argparse.Namespace) -> int:
    out = Path(args.out)
    base = _load_checkpoint(args.checkpoint)
    target_length = base.model_config().target_length
    train_path, test_path = _find_split_pair(args.data)
    train_ds = load_tsv_dataset(train_path, split=TRAIN, target_length=target_length)
    test_ds = load_tsv_dataset(
        test_path, split=TEST, target_length=target_length, label_values=train_ds.label_values
    )
    checkpoint, history = finetune(base, train_ds, _train_config(args))
    checkpoint.config["run"] = _resolved_config(args)
    checkpoint.save(out)

    model, _ = checkpoint.build_model()
    model.eval()
    dtype = next(model.parameters()).dtype
    values, labels = test_ds.values_matrix(), test_ds.labels()
    correct = 0
    with torch.no_grad():
        for lo in range(0, len(test_ds), args.batch_size):
            logits = model.logits(
                torch.as_tensor(values[lo : lo + args.batch_size], dtype=dtype)
            )
            correct += int((logits.argmax(dim=-1).numpy() == labels[lo : lo + args.batch_size]).sum())
    metrics = {
        "train_loss_curve": history.epoch_loss,
        "train_accuracy_curve": history.epoch_accuracy,
        "best_epoch": history.best_epoch,
        "test_accuracy": correct / len(test_ds),
    }
    _write_json(metrics, out / "metrics.json")
    print(f"test accuracy {metrics['test_accuracy']:.4f} -> {out / 'metrics.json'}")
    return 0


def _cmd_zeroshot(args: argparse.Namespace) -> int:
    out = Path(args.out)
    checkpoint = _load_checkpoint(args.checkpoint)
    target_length = checkpoint.model_config().target_length
    model, _ = checkpoint.build_model()
    model.eval()
    per_dataset = {}
    for name, train_path, test_path in _find_split_pairs(Path(args.data)):
        train_ds = load_tsv_dataset(train_path, split=TRAIN, target_length=target_length)
        test_ds = load_tsv_dataset(
            test_path, split=TEST, target_length=target_length,
            label_values=train_ds.label_values,
        )
        acc = zero_shot_eval(
            extract_features(model, train_ds),
            extract_features(model, test_ds),
            seed=args.seed,
        )
        per_dataset[name] = {"zeroshot": acc}
    report = EvalReport(
        per_dataset_accuracy=per_dataset,
        avg_acc={"zeroshot": float(np.mean([row["zeroshot"] for row in per_dataset.values()]))},
    )
    _write_json(report.to_dict(), out / "report.json")
    _write_json(_resolved_config(args), out / "config.json")
    print(f"wrote report for {len(per_dataset)} dataset(s) to {out / 'report.json'}")
    return 0


def _cmd_explain(args: argparse.Namespace) -> int:
    out = Path(args.out)
    checkpoint = _load_checkpoint(args.checkpoint)
    target_length = checkpoint.model_config().target_length
    dataset = load_tsv_dataset(args.data, split=TEST, target_length=target_length)
    if not 0 <= args.sample_index < len(dataset):
        raise ValidationError(
            f"sample index {args.sample_index} out of range [0, {len(dataset)})"
        )
    model, _ = checkpoint.build_model()
    sample = dataset.samples[args.sample_index]
    record = build_explain_record(
        model, sample.values, args.sample_index, true_class=sample.label
    )
    _write_json(record.to_dict(), out / "explain.json")
    _write_json(_resolved_config(args), out / "config.json")
    if args.heatmap:
        heat = score_heatmap(record, target_length)
        with open(out / "heatmap.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in heat:
                writer.writerow([f"{v:.8g}" for v in row])
    print(f"wrote explanation to {out / 'explain.json'}")
    return 0


def _cmd_evalstats(args: argparse.Namespace) -> int:
    out = Path(args.out)
    table = read_accuracy_table(args.table)
    report = compare_methods(table)
    _write_json(report.to_dict(), out / "report.json")
    _write_json(_resolved_config(args), out / "config.json")
    print(f"wrote comparison of {len(report.avg_acc)} method(s) to {out / 'report.json'}")
    return 0


_COMMANDS = {
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "zeroshot": _cmd_zeroshot,
    "explain": _cmd_explain,
    "evalstats": _cmd_evalstats,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _validate_args(parser, args)
    try:
        return _COMMANDS[args.command](args)
    except (ValidationError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
