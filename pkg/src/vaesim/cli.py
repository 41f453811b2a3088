"""Command-line interface.

Subcommands: train, eval, baseline, sweep, export-embeddings. Settings
resolve as flags > config file > defaults, and every run writes the
fully resolved configuration next to its outputs so it can be replayed
with --config. Exit codes: 0 success, 2 argument or configuration
errors, 1 runtime failures; errors are a single line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

from . import baselines, checkpoint, data_io, evaluation, trainer
from .errors import ConfigError, InvalidArgument, IoError, VaesimError

ENV_DATA_DIR = "VAESIM_DATA_DIR"

# Keys allowed in a config file beyond the TrainConfig fields; these come
# back out in config.resolved.json so a snapshot is itself a valid config.
EXTRA_KEYS = {
    "subcommand": str,
    "dataset": str,
    "data_dir": str,
    "outdir": str,
    "checkpoint": str,
    "split": str,
    "axis": str,
    "values": str,
    "knn_k": int,
    "bank_size": int,
}

DATASET_DEFAULT_PROTOTYPES = {"mnist": 10, "pneumonia": 8}


class _UsageError(Exception):
    """Raised for problems that should exit with status 2."""


def _coerce(key, value, expected):
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if expected is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    raise ConfigError(key, f"unsupported config type {expected}")


def resolve_config(config_path, flag_values: dict) -> tuple[trainer.TrainConfig, dict]:
    """Merge defaults, an optional JSON file and flag overrides.

    Returns the validated TrainConfig plus the extra (non-training) keys
    that were present. Precedence is flags > file > defaults.
    """
    field_types = {f.name: f.type for f in fields(trainer.TrainConfig)}
    # dataclass field types may be strings under `from __future__ import annotations`
    type_map = {"int": int, "float": float, "str": str}
    field_types = {k: type_map.get(v, v) if isinstance(v, str) else v for k, v in field_types.items()}

    merged = asdict(trainer.TrainConfig())
    explicit = set()
    extras = {}

    if config_path:
        try:
            raw = json.loads(Path(config_path).read_text())
        except OSError as exc:
            raise IoError(f"cannot read config {config_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(str(config_path), f"invalid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(str(config_path), "config file must hold a JSON object")
        for key, value in raw.items():
            if key in field_types:
                merged[key] = _coerce(key, value, field_types[key])
                explicit.add(key)
            elif key in EXTRA_KEYS:
                extras[key] = _coerce(key, value, EXTRA_KEYS[key])
            else:
                raise ConfigError(key, "unknown configuration key")

    for key, value in flag_values.items():
        if value is None:
            continue
        if key in field_types:
            merged[key] = _coerce(key, value, field_types[key])
            explicit.add(key)
        elif key in EXTRA_KEYS:
            extras[key] = value

    # dataset-dependent prototype default when nobody chose one
    dataset = extras.get("dataset")
    if "n_prototypes" not in explicit and dataset in DATASET_DEFAULT_PROTOTYPES:
        merged["n_prototypes"] = DATASET_DEFAULT_PROTOTYPES[dataset]

    cfg = trainer.TrainConfig(**merged)
    cfg.validate()
    return cfg, extras


def _flag_values(args) -> dict:
    keys = [f.name for f in fields(trainer.TrainConfig)] + list(EXTRA_KEYS)
    return {key: getattr(args, key, None) for key in keys}


def _prepare(args, need_dataset=True):
    """Resolve configuration; usage problems exit 2 before anything is written."""
    try:
        cfg, extras = resolve_config(getattr(args, "config", None), _flag_values(args))
        dataset_name = extras.get("dataset")
        if need_dataset and dataset_name is None:
            raise _UsageError("a dataset is required (--dataset or config file)")
        if dataset_name is not None and dataset_name not in data_io.DATASET_NAMES:
            raise _UsageError(f"unknown dataset {dataset_name!r}, expected one of {data_io.DATASET_NAMES}")
        return cfg, extras
    except (ConfigError, InvalidArgument, IoError) as exc:
        raise _UsageError(str(exc)) from exc


def _data_dir(args, extras) -> Path:
    value = getattr(args, "data_dir", None) or extras.get("data_dir") or os.environ.get(ENV_DATA_DIR)
    if not value:
        raise _UsageError(f"no data directory given (--data-dir or ${ENV_DATA_DIR})")
    return Path(value)


def _eval_params(args, extras) -> tuple[int, int]:
    """knn_k and bank_size with flag > config-file > default precedence."""
    knn_k = args.knn_k if args.knn_k is not None else extras.get("knn_k", evaluation.DEFAULT_KNN_K)
    bank_size = (
        args.bank_size if args.bank_size is not None else extras.get("bank_size", evaluation.DEFAULT_BANK_SIZE)
    )
    return knn_k, bank_size


def _write_snapshot(outdir: Path, subcommand: str, cfg: trainer.TrainConfig, extras: dict) -> dict:
    snapshot = dict(asdict(cfg))
    snapshot.update(extras)
    snapshot["subcommand"] = subcommand
    snapshot["outdir"] = str(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.resolved.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n")
    return snapshot


def cmd_train(args) -> int:
    cfg, extras = _prepare(args)
    data_dir = _data_dir(args, extras)
    dataset = data_io.load_dataset(extras["dataset"], data_dir)
    outdir = Path(args.outdir)
    extras["data_dir"] = str(data_dir)
    _write_snapshot(outdir, "train", cfg, extras)
    result = trainer.train(
        cfg,
        dataset.train.images,
        metrics_path=outdir / "metrics.jsonl",
        checkpoint_path=outdir / "model.vsim",
    )
    final = result.history[-1]
    print(f"trained {cfg.epochs} epochs (final loss {final.loss_total:.4f}); "
          f"checkpoint at {outdir / 'model.vsim'}")
    return 0


def cmd_eval(args) -> int:
    cfg, extras = _prepare(args)
    if not getattr(args, "checkpoint", None) and "checkpoint" not in extras:
        raise _UsageError("--checkpoint is required for eval")
    ckpt_path = getattr(args, "checkpoint", None) or extras["checkpoint"]
    data_dir = _data_dir(args, extras)
    knn_k, bank_size = _eval_params(args, extras)
    dataset = data_io.load_dataset(extras["dataset"], data_dir)
    state = checkpoint.load_state(ckpt_path)
    outdir = Path(args.outdir)
    extras.update(checkpoint=str(ckpt_path), data_dir=str(data_dir),
                  knn_k=knn_k, bank_size=bank_size)
    snapshot = _write_snapshot(outdir, "eval", cfg, extras)
    report = evaluation.evaluate(
        state.encoder, state.bank, dataset,
        knn_k=knn_k, bank_size=bank_size, seed=cfg.seed,
        digest=evaluation.config_digest(snapshot),
    )
    (outdir / "report.json").write_text(report.to_json() + "\n")
    print(report.to_json())
    return 0


def cmd_baseline(args) -> int:
    cfg, extras = _prepare(args)
    data_dir = _data_dir(args, extras)
    knn_k, bank_size = _eval_params(args, extras)
    dataset = data_io.load_dataset(extras["dataset"], data_dir)
    outdir = Path(args.outdir)
    extras.update(data_dir=str(data_dir), knn_k=knn_k, bank_size=bank_size)
    snapshot = _write_snapshot(outdir, "baseline", cfg, extras)
    result = baselines.vae_kmeans_pipeline(
        cfg, dataset,
        knn_k=knn_k, bank_size=bank_size,
        metrics_path=outdir / "metrics.jsonl",
        digest=evaluation.config_digest(snapshot),
    )
    (outdir / "report.json").write_text(result.report.to_json() + "\n")
    (outdir / "elbow.json").write_text(result.elbow_curve.to_json() + "\n")
    print(result.report.to_json())
    return 0


def cmd_sweep(args) -> int:
    cfg, extras = _prepare(args)
    axis = getattr(args, "axis", None) or extras.get("axis")
    raw_values = getattr(args, "values", None) or extras.get("values")
    if not axis or not raw_values:
        raise _UsageError("--axis and --values are required for sweep")
    try:
        values = [int(v) for v in str(raw_values).split(",") if v.strip()]
    except ValueError as exc:
        raise _UsageError(f"--values must be comma-separated integers: {exc}") from exc
    if axis not in trainer.SWEEP_AXES:
        raise _UsageError(f"--axis must be one of {trainer.SWEEP_AXES}")
    if not values:
        raise _UsageError("--values must list at least one integer")
    data_dir = _data_dir(args, extras)
    knn_k, bank_size = _eval_params(args, extras)
    dataset = data_io.load_dataset(extras["dataset"], data_dir)
    outdir = Path(args.outdir)
    extras.update(data_dir=str(data_dir), axis=axis, values=",".join(map(str, values)),
                  knn_k=knn_k, bank_size=bank_size)
    _write_snapshot(outdir, "sweep", cfg, extras)
    rows = trainer.sweep(cfg, axis, values, dataset, knn_k=knn_k, bank_size=bank_size)
    (outdir / "sweep.json").write_text(json.dumps(rows, indent=2) + "\n")
    print(json.dumps(rows, indent=2))
    return 0


def cmd_export(args) -> int:
    cfg, extras = _prepare(args)
    if not getattr(args, "checkpoint", None) and "checkpoint" not in extras:
        raise _UsageError("--checkpoint is required for export-embeddings")
    ckpt_path = getattr(args, "checkpoint", None) or extras["checkpoint"]
    split = args.split or extras.get("split") or "test"
    if split not in ("train", "test"):
        raise _UsageError(f"--split must be train or test, got {split!r}")
    data_dir = _data_dir(args, extras)
    dataset = data_io.load_dataset(extras["dataset"], data_dir)
    state = checkpoint.load_state(ckpt_path)
    outdir = Path(args.outdir)
    extras.update(checkpoint=str(ckpt_path), data_dir=str(data_dir), split=split)
    _write_snapshot(outdir, "export-embeddings", cfg, extras)
    part = dataset.train if split == "train" else dataset.test
    rows = evaluation.export_embeddings(state.encoder, state.bank, part, outdir / "embeddings.csv")
    print(f"wrote {rows} rows to {outdir / 'embeddings.csv'}")
    return 0


def _add_common(p: argparse.ArgumentParser, with_outdir=True):
    p.add_argument("--dataset", choices=data_io.DATASET_NAMES, default=None)
    p.add_argument("--data-dir", default=None, help=f"dataset directory (falls back to ${ENV_DATA_DIR})")
    p.add_argument("--config", default=None, help="JSON config file; flags override it")
    p.add_argument("--seed", type=int, default=None)
    if with_outdir:
        p.add_argument("--outdir", default=".", help="directory for run artifacts (default: current directory)")


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--latent-dim", type=int, default=None)
    p.add_argument("--n-prototypes", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--lambda-ortho", type=float, default=None)
    p.add_argument("--similarity", choices=("cosine", "dot"), default=None)
    p.add_argument("--ema-convention", choices=("paper", "standard"), default=None)
    p.add_argument("--hard-assign", choices=("sample", "argmax"), default=None)


def _add_eval_flags(p: argparse.ArgumentParser):
    p.add_argument("--knn-k", type=int, default=None)
    p.add_argument("--bank-size", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vaesim", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("train", help="train the prototype-conditioned VAE")
    _add_common(p)
    _add_train_flags(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint with the three accuracy protocols")
    _add_common(p)
    p.add_argument("--checkpoint", default=None)
    _add_eval_flags(p)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("baseline", help="plain VAE + elbow/kmeans baseline, same metrics")
    _add_common(p)
    _add_train_flags(p)
    _add_eval_flags(p)
    p.set_defaults(handler=cmd_baseline)

    p = sub.add_parser("sweep", help="train/eval once per value of one hyperparameter")
    _add_common(p)
    _add_train_flags(p)
    _add_eval_flags(p)
    p.add_argument("--axis", choices=trainer.SWEEP_AXES, default=None)
    p.add_argument("--values", default=None, help="comma-separated integers")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("export-embeddings", help="write per-sample latent means to CSV")
    _add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--split", choices=("train", "test"), default=None)
    p.set_defaults(handler=cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.handler(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VaesimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # keep the contract: one diagnostic line, exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
