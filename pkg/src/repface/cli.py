"""``repface`` command line: ``gen``, ``train`` and ``audit``.

Exit codes: 0 ok, 1 configuration problem, 2 I/O or file-format problem,
3 numerical failure during training.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import os
import sys
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as cfgio
from . import model as mdl
from . import pipeline as pl
from .errors import ConfigError, DatasetFormatError, NumericalError
from .synth import DatasetSpec, generate, generate_holdout, read_dataset, write_dataset
from .trainer import TrainConfig, train

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
AUDIT_ETA_REPEATS = 10
AUDIT_HEADER = ["index", "noisy_label", "category", "corrected_label", "d_i", "indicator"]
_FIXED_TIME = (1980, 1, 1, 0, 0, 0)


def holdout_path(data_path) -> Path:
    p = Path(data_path)
    return p.with_name(p.stem + ".holdout" + p.suffix)


# -- model file -------------------------------------------------------------

def save_model(path, state: mdl.ModelState, config: TrainConfig) -> None:
    """npz-compatible archive with fixed timestamps so reruns are byte-identical."""
    arrays = dict(state.to_arrays())
    arrays["config"] = np.array(cfgio.dump(config))
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.save(buf, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(name + ".npy", date_time=_FIXED_TIME), buf.getvalue())


def load_model(path):
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    config = cfgio.from_pairs(TrainConfig, cfgio.parse_pairs(str(arrays.pop("config"))), str(path))
    return mdl.ModelState.from_arrays(arrays), config


# -- audit ------------------------------------------------------------------

@dataclass(frozen=True)
class AuditRecord:
    sample_index: int
    noisy_label: int
    category: pl.Category
    corrected_label: int | None
    d_i: float
    indicator: int

    def row(self):
        return [self.sample_index, self.noisy_label, self.category.tag,
                "" if self.corrected_label is None else self.corrected_label,
                repr(self.d_i), self.indicator]


def audit_records(state: mdl.ModelState, config: TrainConfig, dataset, seed: int,
                  repeats: int = AUDIT_ETA_REPEATS) -> list[AuditRecord]:
    """Inference-only splitting and filtering of every sample in ``dataset``.

    The threshold is the average over ``repeats`` draws of ``n_aux`` random
    samples relabelled at random.
    """
    if state.num_classes != dataset.num_classes:
        raise ConfigError(f"model has {state.num_classes} classes, dataset has {dataset.num_classes}")
    C = dataset.num_classes
    cos, _ = mdl.forward(state, dataset.features)
    labels = dataset.noisy_labels.astype(np.int64)
    n = len(dataset)
    M = min(config.n_aux, n)
    rows = np.arange(n)
    if M:
        rng = np.random.default_rng(seed)
        etas = []
        for _ in range(repeats):
            src = rng.choice(n, size=M, replace=False)
            rand = (labels[src] + rng.integers(1, C, size=M)) % C
            etas.append(pl.asc_threshold(cos[src, rand], config.alpha).eta)
        indicator = pl.noise_indicator(cos[rows, labels], float(np.mean(etas)))
    else:
        indicator = np.ones(n, np.int8)
    d, nearest, cats = pl.split_batch(cos, labels, config.tau)
    out = []
    for i in range(n):
        cat = pl.Category(int(cats[i]))
        out.append(AuditRecord(i, int(labels[i]), cat,
                               int(nearest[i]) if cat == pl.Category.NOISE else None,
                               float(d[i]), int(indicator[i])))
    return out


def write_audit(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AUDIT_HEADER)
        for r in records:
            w.writerow(r.row())


# -- commands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    if not args.config:
        raise ConfigError("gen needs --config")
    spec = cfgio.load(DatasetSpec, args.config)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    ds = generate(spec)
    write_dataset(ds, args.out)
    if spec.n_holdout_per_class > 0:
        write_dataset(generate_holdout(spec), holdout_path(args.out))
    print(f"wrote {len(ds)} samples ({int(ds.flipped.sum())} noisy) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = cfgio.load(TrainConfig, args.config) if args.config else TrainConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    dataset = read_dataset(args.data)
    hpath = Path(args.holdout) if args.holdout else holdout_path(args.data)
    holdout = read_dataset(hpath) if (args.holdout or hpath.exists()) else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.jsonl"
    metrics_path.write_text("")

    def append(rec):
        with open(metrics_path, "a") as fh:
            fh.write(rec.to_json() + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    result = train(config, dataset, holdout, on_epoch=append)
    save_model(out / "model.npz", result.state, config)
    last = result.history[-1]
    print(f"trained {config.epochs} epochs: loss {last.loss:.4f}, holdout_acc {last.holdout_acc}")
    return EXIT_OK


def cmd_audit(args) -> int:
    if not args.model:
        raise ConfigError("audit needs --model")
    state, config = load_model(args.model)
    if args.config:
        config = cfgio.load(TrainConfig, args.config)
    dataset = read_dataset(args.data)
    seed = config.seed if args.seed is None else args.seed
    records = audit_records(state, config, dataset, seed)
    write_audit(records, args.out)
    n_noise = sum(r.category == pl.Category.NOISE for r in records)
    print(f"audited {len(records)} samples: {n_noise} flagged as closed-set noise")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="repface", description="Generate noisy datasets, train, and audit labels.",
                                epilog="exit codes: 0 ok, 1 config, 2 I/O, 3 numerical failure")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="key = value config file")
        if data:
            sp.add_argument("--data", required=True, help="dataset file (.rpfd)")
        sp.add_argument("--out", required=True, help="output file (gen, audit) or directory (train)")
        sp.add_argument("--seed", type=lambda s: int(s, 0), help="overrides the config seed")

    g = sub.add_parser("gen", help="generate a synthetic noisy dataset")
    common(g, data=False)
    g.set_defaults(func=cmd_gen)
    t = sub.add_parser("train", help="train and write metrics.jsonl + model.npz to --out")
    common(t)
    t.add_argument("--holdout", help="clean holdout dataset (default: <data>.holdout.rpfd if present)")
    t.set_defaults(func=cmd_train)
    a = sub.add_parser("audit", help="categorise every sample with a trained model, write CSV")
    common(a)
    a.add_argument("--model", help="model file written by train")
    a.set_defaults(func=cmd_audit)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DatasetFormatError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
