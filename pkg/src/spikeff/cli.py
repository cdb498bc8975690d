"""Experiment front door: presets, config files, and the run subcommands.

Config files are flat `key = value` text (see README for the full key list);
command-line flags override file values, which override preset values.
Every training run directory ends up with a config echo, a metrics CSV, a
summary JSON and a checkpoint — or a single machine-readable error record.
"""

import argparse
import dataclasses
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import dataio, predictor, trainer
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    ConfigError,
    DataConsistencyError,
    FormatError,
    NumericError,
    UsageError,
)
from .layer import parameter_counts
from .network import build_network
from .neuron import RESET_MODES, NeuronConfig
from .numerics import RngStream

DATA_ROOT_ENV = "SPIKEFF_DATA_ROOT"
KEY_INIT = 100  # rng substream for weight init

# Shipped presets; every field can still be overridden by config file or flag.
PRESETS = {
    "mnist": dict(dataset="mnist", input_dim=784, class_count=10, epochs=300,
                  lr=0.001, batch_size=4096, timesteps=10, loss_sharpness=0.6,
                  threshold=1.0, decay=0.99, hidden_sizes=[500, 500],
                  decay_learnable=True, recurrent=False),
    "fmnist": dict(dataset="fmnist", input_dim=784, class_count=10, epochs=300,
                   lr=0.001, batch_size=4096, timesteps=10, loss_sharpness=0.6,
                   threshold=1.0, decay=0.99, hidden_sizes=[500, 500],
                   decay_learnable=True, recurrent=False),
    "kmnist": dict(dataset="kmnist", input_dim=784, class_count=10, epochs=300,
                   lr=0.001, batch_size=4096, timesteps=10, loss_sharpness=0.6,
                   threshold=1.2, decay=0.99, hidden_sizes=[500, 500],
                   decay_learnable=True, recurrent=False),
    "cifar10": dict(dataset="cifar10", input_dim=3072, class_count=10, epochs=300,
                    lr=0.001, batch_size=4096, timesteps=10, loss_sharpness=0.6,
                    threshold=1.2, decay=0.8, hidden_sizes=[2000, 2000],
                    decay_learnable=True, recurrent=False),
    "nmnist": dict(dataset="nmnist", input_dim=2312, class_count=10, epochs=300,
                   lr=0.001, batch_size=4096, timesteps=10, loss_sharpness=0.6,
                   threshold=1.0, decay=0.9, hidden_sizes=[500, 500],
                   decay_learnable=True, recurrent=False),
    "shd": dict(dataset="shd", input_dim=700, class_count=20, epochs=500,
                lr=0.001, batch_size=4096, timesteps=10, loss_sharpness=0.6,
                threshold=5.0, decay=0.9, hidden_sizes=[500, 500],
                decay_learnable=False, recurrent=True),
}


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic:blobs"
    hidden_sizes: List[int] = field(default_factory=lambda: [100, 100])
    input_dim: Optional[int] = None  # derived from the dataset when omitted
    class_count: Optional[int] = None
    threshold: float = 1.0
    decay: float = 0.99
    decay_learnable: bool = False
    recurrent: bool = False
    reset_mode: str = "subtract"
    timesteps: int = 10
    loss_sharpness: float = 0.6
    surrogate_slope: float = 2.0
    epochs: int = 1
    batch_size: int = 128
    lr: float = 0.001
    lr_milestones: Optional[List[int]] = None
    lr_factors: Optional[List[float]] = None
    seed: int = 0
    eval_every: int = 1
    out_dir: str = "runs/latest"


# field name -> value kind, for the flat key=value config format
_FIELD_KINDS = {
    "dataset": "str",
    "hidden_sizes": "int_list",
    "input_dim": "opt_int",
    "class_count": "opt_int",
    "threshold": "float",
    "decay": "float",
    "decay_learnable": "bool",
    "recurrent": "bool",
    "reset_mode": "str",
    "timesteps": "int",
    "loss_sharpness": "float",
    "surrogate_slope": "float",
    "epochs": "int",
    "batch_size": "int",
    "lr": "float",
    "lr_milestones": "opt_int_list",
    "lr_factors": "opt_float_list",
    "seed": "int",
    "eval_every": "int",
    "out_dir": "str",
}


def _format_value(kind: str, value) -> str:
    if value is None:
        return "none"
    if kind == "bool":
        return "true" if value else "false"
    if kind in ("int_list", "opt_int_list"):
        return ",".join(str(int(v)) for v in value)
    if kind == "opt_float_list":
        return ",".join(repr(float(v)) for v in value)
    if kind == "float":
        return repr(float(value))
    return str(value)


def _parse_value(kind: str, text: str, key: str):
    text = text.strip()
    if kind.startswith("opt_") and text.lower() == "none":
        return None
    base = kind[4:] if kind.startswith("opt_") else kind
    try:
        if base == "int":
            return int(text)
        if base == "float":
            return float(text)
        if base == "bool":
            if text.lower() in ("true", "false"):
                return text.lower() == "true"
            raise ValueError(text)
        if base == "int_list":
            return [int(v) for v in text.split(",") if v.strip()]
        if base == "float_list":
            return [float(v) for v in text.split(",") if v.strip()]
        return text
    except ValueError as exc:
        raise ConfigError([f"{key}: cannot parse {text!r} as {base}"]) from exc


def serialize_config(config: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(ExperimentConfig):
        kind = _FIELD_KINDS[f.name]
        lines.append(f"{f.name} = {_format_value(kind, getattr(config, f.name))}")
    return "\n".join(lines) + "\n"


def parse_config_values(text: str) -> dict:
    """Parse a flat key=value config into just the keys it sets."""
    values = {}
    problems = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value', got {raw!r}")
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _FIELD_KINDS:
            problems.append(f"line {lineno}: unknown key {key!r}")
            continue
        try:
            values[key] = _parse_value(_FIELD_KINDS[key], value, key)
        except ConfigError as exc:
            problems.extend(f"line {lineno}: {v}" for v in exc.violations)
    if problems:
        raise ConfigError(problems)
    return values


def parse_config(text: str) -> ExperimentConfig:
    return ExperimentConfig(**parse_config_values(text))


def validate_config(config: ExperimentConfig) -> None:
    """Raise ConfigError listing every violated field."""
    bad = []
    if not config.dataset:
        bad.append("dataset: must not be empty")
    if not config.hidden_sizes or any(h < 1 for h in config.hidden_sizes):
        bad.append(f"hidden_sizes: need nonempty sizes >= 1, got {config.hidden_sizes}")
    if not config.threshold > 0:
        bad.append(f"threshold: must be > 0, got {config.threshold}")
    if not 0.0 < config.decay <= 1.0:
        bad.append(f"decay: must be in (0, 1], got {config.decay}")
    if config.reset_mode not in RESET_MODES:
        bad.append(f"reset_mode: must be one of {RESET_MODES}, got {config.reset_mode!r}")
    if config.timesteps < 1:
        bad.append(f"timesteps: must be >= 1, got {config.timesteps}")
    if not config.loss_sharpness > 0:
        bad.append(f"loss_sharpness: must be > 0, got {config.loss_sharpness}")
    if not config.surrogate_slope > 0:
        bad.append(f"surrogate_slope: must be > 0, got {config.surrogate_slope}")
    if config.epochs < 0:
        bad.append(f"epochs: must be >= 0, got {config.epochs}")
    if config.batch_size < 2:
        bad.append(f"batch_size: must be >= 2, got {config.batch_size}")
    if not config.lr > 0:
        bad.append(f"lr: must be > 0, got {config.lr}")
    if config.eval_every < 0:
        bad.append(f"eval_every: must be >= 0, got {config.eval_every}")
    if (config.lr_milestones is None) != (config.lr_factors is None) or (
        config.lr_milestones is not None
        and len(config.lr_milestones) != len(config.lr_factors)
    ):
        bad.append("lr_milestones/lr_factors: must be given together, same length")
    if bad:
        raise ConfigError(bad)


def data_root(override: Optional[str] = None) -> Path:
    return Path(override or os.environ.get(DATA_ROOT_ENV, "data"))


def _idx_pair(root: Path, name: str, split: str):
    stem = "train" if split == "train" else "t10k"
    images = root / name / f"{stem}-images-idx3-ubyte"
    labels = root / name / f"{stem}-labels-idx1-ubyte"
    found = []
    for path in (images, labels):
        if path.exists():
            found.append(path)
        elif path.with_suffix(path.suffix + ".gz").exists():
            found.append(path.with_suffix(path.suffix + ".gz"))
        else:
            raise FileNotFoundError(
                f"missing {name} file: {path} (or {path}.gz); place the "
                f"canonical IDX files under {root / name}/ or point "
                f"{DATA_ROOT_ENV} at the directory that holds them"
            )
    return found


def load_datasets(config: ExperimentConfig, root: Optional[str] = None):
    """Resolve the config's dataset id to a (train, test) pair."""
    name = config.dataset
    base = data_root(root)
    if name in ("mnist", "fmnist", "kmnist"):
        train = dataio.load_idx(*_idx_pair(base, name, "train"), class_count=10)
        test = dataio.load_idx(*_idx_pair(base, name, "test"), class_count=10)
        return train, test
    if name == "cifar10":
        folder = base / "cifar-10-batches-py"
        return (
            dataio.load_cifar10(folder, "train"),
            dataio.load_cifar10(folder, "test"),
        )
    if name.startswith("bse:"):
        folder = Path(name[len("bse:"):])
        return (
            dataio.load_binned_events(folder / "train.bse"),
            dataio.load_binned_events(folder / "test.bse"),
        )
    if name.startswith("synthetic:"):
        kind = name[len("synthetic:"):]
        if kind == "blobs":
            return (
                dataio.make_blob_dataset(2000, seed=config.seed * 2 + 1),
                dataio.make_blob_dataset(500, seed=config.seed * 2 + 2),
            )
        if kind == "temporal":
            return (
                dataio.make_temporal_dataset(2000, seed=config.seed * 2 + 1),
                dataio.make_temporal_dataset(500, seed=config.seed * 2 + 2),
            )
        raise ConfigError([f"dataset: unknown synthetic generator {kind!r}"])
    raise ConfigError(
        [
            f"dataset: unknown id {name!r}; expected mnist | fmnist | kmnist | "
            "cifar10 | bse:<path> | synthetic:<generator>"
        ]
    )


def build_from_config(config: ExperimentConfig, train_ds: dataio.Dataset):
    neuron_cfg = NeuronConfig(
        threshold=config.threshold,
        decay=config.decay,
        decay_learnable=config.decay_learnable,
        reset_mode=config.reset_mode,
        surrogate_slope=config.surrogate_slope,
    )
    return build_network(
        config.hidden_sizes,
        train_ds.input_dim,
        train_ds.class_count,
        config.timesteps,
        neuron_cfg,
        RngStream(config.seed).substream(KEY_INIT),
        recurrent=config.recurrent,
        lr=config.lr,
    )


def _check_dataset_matches(config: ExperimentConfig, train_ds: dataio.Dataset):
    bad = []
    if config.input_dim is not None and config.input_dim != train_ds.input_dim:
        bad.append(
            f"input_dim: config says {config.input_dim}, dataset has "
            f"{train_ds.input_dim}"
        )
    if config.class_count is not None and config.class_count != train_ds.class_count:
        bad.append(
            f"class_count: config says {config.class_count}, dataset has "
            f"{train_ds.class_count}"
        )
    if train_ds.temporal and train_ds.timesteps != config.timesteps:
        bad.append(
            f"timesteps: temporal dataset has {train_ds.timesteps}, config "
            f"says {config.timesteps}"
        )
    if bad:
        raise ConfigError(bad)


def run_train(config: ExperimentConfig, root: Optional[str] = None) -> int:
    """Train per config; writes artifacts into config.out_dir. Returns exit code."""
    out = Path(config.out_dir)
    artifacts = {
        "config": out / "config.txt",
        "metrics": out / "metrics.csv",
        "summary": out / "summary.json",
        "checkpoint": out / "checkpoint.sffc",
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        validate_config(config)
        train_ds, test_ds = load_datasets(config, root)
        _check_dataset_matches(config, train_ds)
        net = build_from_config(config, train_ds)
        artifacts["config"].write_text(serialize_config(config))

        train_cfg = trainer.TrainConfig(
            epochs=config.epochs,
            batch_size=config.batch_size,
            lr=config.lr,
            lr_milestones=config.lr_milestones,
            lr_factors=config.lr_factors,
            loss_sharpness=config.loss_sharpness,
            seed=config.seed,
            dataset=config.dataset,
            eval_every=config.eval_every,
        )
        started = time.perf_counter()
        with open(artifacts["metrics"], "w") as csv:
            csv.write(trainer.metrics_csv_header(len(net.layers)) + "\n")
            history = trainer.train(
                net,
                train_ds,
                train_cfg,
                eval_dataset=test_ds,
                on_epoch=lambda m: csv.write(trainer.metrics_csv_row(m) + "\n"),
            )
        total_seconds = time.perf_counter() - started
        save_checkpoint(
            artifacts["checkpoint"], net,
            meta={"dataset": config.dataset, "seed": config.seed},
        )
        test_accs = [m.test_accuracy for m in history if m.test_accuracy is not None]
        summary = {
            "config": dataclasses.asdict(config),
            "epochs_run": len(history),
            "final_test_accuracy": test_accs[-1] if test_accs else None,
            "best_test_accuracy": max(test_accs) if test_accs else None,
            "final_train_accuracy": next(
                (m.train_accuracy for m in reversed(history)
                 if m.train_accuracy is not None), None
            ),
            "final_total_loss": history[-1].total_loss if history else None,
            "checkpoint": str(artifacts["checkpoint"]),
            "total_seconds": total_seconds,
            "epoch_seconds": [m.seconds for m in history],
        }
        artifacts["summary"].write_text(json.dumps(summary, indent=2) + "\n")
        return 0
    except Exception as exc:  # single error record, never a partial silent state
        for path in artifacts.values():
            if path.exists():
                path.unlink()
        record = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, ConfigError):
            record["violations"] = exc.violations
        try:
            (out / "error.json").write_text(json.dumps(record, indent=2) + "\n")
        except OSError:
            print(json.dumps(record), file=sys.stderr)
        else:
            print(f"error: {record['message']}", file=sys.stderr)
        return 1


def run_inspect(path: str) -> int:
    net, meta = load_checkpoint(path)
    print(f"checkpoint: {path}")
    if meta:
        print(f"meta: {json.dumps(meta, sort_keys=True)}")
    sizes = [net.input_dim] + [layer.n_out for layer in net.layers]
    print(f"architecture: {'-'.join(str(s) for s in sizes)}")
    print(f"classes: {net.class_count}  timesteps: {net.timesteps}")
    total = 0
    for i, layer in enumerate(net.layers):
        counts = parameter_counts(layer)
        layer_total = sum(counts.values())
        total += layer_total
        pieces = ", ".join(f"{name}={n}" for name, n in counts.items())
        print(f"layer {i}: {layer.n_in} -> {layer.n_out}  [{pieces}]  "
              f"total={layer_total}")
        cfg = layer.neuron
        print(f"  neuron: threshold={cfg.threshold} decay={cfg.decay} "
              f"learnable={cfg.decay_learnable} reset={cfg.reset_mode} "
              f"surrogate_slope={cfg.surrogate_slope}")
        if layer.stats_populated:
            print(
                f"  running stats ({layer.batches_tracked} batches): "
                f"mean in [{layer.running_mean.min():.4g}, "
                f"{layer.running_mean.max():.4g}], "
                f"var in [{layer.running_var.min():.4g}, "
                f"{layer.running_var.max():.4g}]"
            )
        else:
            print("  running stats: unpopulated (train before eval-mode use)")
    print(f"total trainable parameters: {total}")
    return 0


def run_eval(checkpoint_path: str, config: ExperimentConfig,
             root: Optional[str], split: str) -> int:
    net, _ = load_checkpoint(checkpoint_path)
    train_ds, test_ds = load_datasets(config, root)
    ds = train_ds if split == "train" else test_ds
    acc = predictor.evaluate(net, ds)
    print(json.dumps({"dataset": config.dataset, "split": split, "accuracy": acc}))
    return 0


def run_predict(checkpoint_path: str, config: ExperimentConfig,
                root: Optional[str], split: str, out_path: Optional[str]) -> int:
    net, _ = load_checkpoint(checkpoint_path)
    train_ds, test_ds = load_datasets(config, root)
    ds = train_ds if split == "train" else test_ds
    lines = ["sample,true_label,predicted," + ",".join(
        f"score_{y}" for y in range(net.class_count))]
    offset = 0
    for batch in dataio.iter_batches(ds, 256, shuffle=False):
        result = predictor.score_labels(net, batch)
        for i in range(batch.size):
            scores = ",".join(repr(float(s)) for s in result.scores[i])
            lines.append(
                f"{offset + i},{batch.labels[i]},{result.predicted[i]},{scores}"
            )
        offset += batch.size
    text = "\n".join(lines) + "\n"
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def run_make_fixtures(out_dir: str) -> int:
    """Emit the tiny IDX and BSE1 files used by the test suite and docs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images = np.arange(2 * 28 * 28, dtype=np.uint64) % 256
    images = images.astype(np.uint8).reshape(2, 28, 28)
    dataio.write_idx_images(out / "two-images-idx3-ubyte", images)
    dataio.write_idx_labels(out / "two-labels-idx1-ubyte", np.array([3, 7]))
    tiny = dataio.Dataset(
        np.array([[1.0, 0.0, 0.0, 2.0, 0.0, 1.0, 0.0, 0.0]]),
        np.array([1]),
        class_count=2,
        input_dim=4,
        temporal=True,
        timesteps=2,
    )
    dataio.write_binned_events(out / "tiny.bse", tiny)
    for name in ("two-images-idx3-ubyte", "two-labels-idx1-ubyte", "tiny.bse"):
        print(out / name)
    return 0


def _resolve_config(args) -> ExperimentConfig:
    values = {}
    if getattr(args, "preset", None):
        if args.preset not in PRESETS:
            raise ConfigError(
                [f"preset: unknown {args.preset!r}; have {sorted(PRESETS)}"]
            )
        values.update(
            {k: list(v) if isinstance(v, list) else v
             for k, v in PRESETS[args.preset].items()}
        )
    if getattr(args, "config", None):
        values.update(parse_config_values(Path(args.config).read_text()))
    for flag, key in (
        ("dataset", "dataset"),
        ("seed", "seed"),
        ("epochs", "epochs"),
        ("batch_size", "batch_size"),
        ("out", "out_dir"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    return ExperimentConfig(**values)


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--dataset", help="dataset id (see README)")
    p.add_argument("--preset", help="named preset: " + ", ".join(sorted(PRESETS)))
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--data-root", dest="data_root",
                   help=f"dataset directory (or ${DATA_ROOT_ENV})")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="spikeff",
        description="Forward-forward training for spiking networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a network and write artifacts")
    _add_common_flags(p_train)
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--out", help="run directory")

    p_eval = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset")
    p_eval.add_argument("checkpoint")
    _add_common_flags(p_eval)
    p_eval.add_argument("--split", choices=("train", "test"), default="test")

    p_pred = sub.add_parser("predict", help="per-sample label scores as CSV")
    p_pred.add_argument("checkpoint")
    _add_common_flags(p_pred)
    p_pred.add_argument("--split", choices=("train", "test"), default="test")
    p_pred.add_argument("--out", help="CSV path (default: stdout)")

    p_inspect = sub.add_parser("inspect", help="describe a checkpoint")
    p_inspect.add_argument("checkpoint")

    p_fix = sub.add_parser("make-fixtures", help="emit tiny IDX/BSE1 fixture files")
    p_fix.add_argument("--out", default="fixtures")

    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return run_train(_resolve_config(args), args.data_root)
        if args.command == "eval":
            return run_eval(args.checkpoint, _resolve_config(args),
                            args.data_root, args.split)
        if args.command == "predict":
            return run_predict(args.checkpoint, _resolve_config(args),
                               args.data_root, args.split, args.out)
        if args.command == "inspect":
            return run_inspect(args.checkpoint)
        if args.command == "make-fixtures":
            return run_make_fixtures(args.out)
    except ConfigError as exc:
        print(json.dumps({"error": "ConfigError", "violations": exc.violations}),
              file=sys.stderr)
        return 2
    except (FileNotFoundError, OSError, FormatError, DataConsistencyError,
            UsageError, NumericError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
