"""Command-line entry point.

    illumdiff datagen --output DIR [--input SRC] [--count N] [--seed S]
    illumdiff train --input DATASET --output RUN [--epochs E]
    illumdiff restore --checkpoint CKPT --input DIR --output DIR
    illumdiff eval --input RESTORED --reference GT --output DIR
    illumdiff cluster-diagnose --checkpoint CKPT --input DATASET --output DIR

Every command also takes ``--config FILE`` (flat ``key = value`` lines) and
any number of ``--set key=value`` overrides; overrides beat the file and
dedicated flags beat both. Exit status: 0 ok, 1 invalid usage or input,
2 failure while running.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import data, metrics, plotting
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, apply_to_dataclass, dump_config, load_config, parse_overrides
from .diffusion import ScheduleConfig, ScheduleError
from .model import ModelConfig
from .training import TrainConfig, restore, train_loop

log = logging.getLogger("illumdiff")

COMMANDS = ("datagen", "train", "restore", "eval", "cluster-diagnose")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="illumdiff", description="Prompt-steered pyramid diffusion for illumination correction")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--input", type=Path)
        p.add_argument("--output", type=Path)
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        if name == "datagen":
            p.add_argument("--count", type=int)
        if name == "train":
            p.add_argument("--epochs", type=int)
        if name in ("restore", "cluster-diagnose"):
            p.add_argument("--checkpoint", type=Path)
        if name == "eval":
            p.add_argument("--reference", type=Path)
    return parser


EXTRA_KEYS = {"seed", "split", "holdout", "count", "mode", "size", "batch_size"}


def known_keys() -> set[str]:
    keys = set(EXTRA_KEYS)
    for cls in (ModelConfig, ScheduleConfig, TrainConfig, data.SynthRanges):
        keys.update(f.name for f in dataclasses.fields(cls))
    return keys


def _settings(args) -> dict[str, str]:
    values = load_config(args.config) if args.config else {}
    values.update(parse_overrides(args.overrides))
    unknown = sorted(set(values) - known_keys())
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    if args.seed is not None:
        values["seed"] = str(args.seed)
    return values


def _require(path, what) -> Path:
    if path is None:
        raise UsageError(f"{what} is required")
    if not Path(path).exists():
        raise UsageError(f"{what} does not exist: {path}")
    return Path(path)


def _output_dir(path) -> Path:
    if path is None:
        raise UsageError("--output is required")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _int(values, key, default):
    try:
        return int(values.get(key, default))
    except ValueError as exc:
        raise ConfigError(f"{key} must be an integer, got {values[key]!r}") from exc


def _corrupted_inputs(root: Path, values):
    """Images to restore: a dataset root (uses input/ and split keys) or a plain folder."""
    if (root / "manifest.csv").exists():
        rows = data.split_rows(
            data.read_manifest(root / "manifest.csv"), values.get("split", "all"), _int(values, "holdout", 0)
        )
        return [(r["id"], root / "input" / f"{r['id']}.png") for r in rows]
    return [(p.stem, p) for p in data.list_images(root)]


def cmd_datagen(args, values):
    out = _output_dir(args.output)
    source = _require(args.input, "--input") if args.input is not None else None
    count = args.count if args.count is not None else _int(values, "count", 200)
    ranges = apply_to_dataclass(data.SynthRanges(), values)
    rows = data.generate_dataset(
        out,
        count,
        seed=_int(values, "seed", 0),
        source_dir=source,
        mode=values.get("mode", "ev_shift"),
        size=_int(values, "size", 64),
        ranges=ranges,
    )
    counts = {}
    for r in rows:
        counts[r["label"]] = counts.get(r["label"], 0) + 1
    print(f"wrote {len(rows)} pairs to {out} ({', '.join(f'{k}={v}' for k, v in counts.items())})")


def cmd_train(args, values):
    root = _require(args.input, "--input")
    if not (root / "manifest.csv").exists():
        raise UsageError(f"--input has no manifest.csv: {root}")
    out = _output_dir(args.output)
    if args.epochs is not None:
        values["epochs"] = str(args.epochs)
    model_cfg = apply_to_dataclass(ModelConfig(), values).validate()
    schedule_cfg = apply_to_dataclass(ScheduleConfig(), values)
    schedule_cfg.build()
    train_cfg = apply_to_dataclass(TrainConfig(), values).validate()
    samples = data.load_paired_dataset(root, values.get("split", "train"), _int(values, "holdout", 0))
    if not samples:
        raise UsageError(f"no training samples selected from {root}")
    m = model_cfg.multiple * max(schedule_cfg.build().coarsest, 1)
    h, w = samples[0].ground_truth.shape[-2:]
    if h % m or w % m:
        raise UsageError(f"image size {h}x{w} must be divisible by {m} for this model and schedule")

    (out / "run_config.txt").write_text(
        dump_config({**model_cfg.to_dict(), **schedule_cfg.to_dict(), **vars(train_cfg)})
    )
    result = train_loop(samples, train_cfg, model_cfg, schedule_cfg, out_dir=out)
    plotting.plot_loss_trace(result.trace, out / "loss.png")
    print(f"trained {len(result.trace)} steps on {len(samples)} pairs; final loss {result.trace[-1][2]:.5f}")
    print(f"checkpoint: {result.checkpoint}")


def cmd_restore(args, values):
    ckpt = _require(args.checkpoint, "--checkpoint")
    root = _require(args.input, "--input")
    out = _output_dir(args.output)
    model, schedule_cfg, _ = load_checkpoint(ckpt)
    schedule_cfg = apply_to_dataclass(schedule_cfg, values)
    items = _corrupted_inputs(root, values)
    if not items:
        raise UsageError(f"no images found in {root}")
    images = np.stack([data.read_image(p) for _, p in items])
    restored = restore(
        model, schedule_cfg.build(), images, seed=_int(values, "seed", 0), batch_size=_int(values, "batch_size", 8)
    )
    for (name, _), img in zip(items, restored):
        data.write_image(out / f"{name}.png", img)
    print(f"restored {len(items)} images into {out}")


def cmd_eval(args, values):
    restored = _require(args.input, "--input")
    reference = _require(args.reference, "--reference")
    out = _output_dir(args.output)
    try:
        report = metrics.evaluate_directories(restored, reference)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc
    report.write_csv(out / "metrics.csv")
    plotting.plot_metric_report(report, out / "metrics.png")
    print(f"images {len(report.rows)}")
    print(f"AGGREGATE psnr {report.mean_psnr:.4f} +- {report.std_psnr:.4f} dB  ssim {report.mean_ssim:.6f} +- {report.std_ssim:.6f}")


def cmd_cluster(args, values):
    ckpt = _require(args.checkpoint, "--checkpoint")
    root = _require(args.input, "--input")
    out = _output_dir(args.output)
    model, _, _ = load_checkpoint(ckpt)
    samples = data.load_paired_dataset(root, values.get("split", "all"), _int(values, "holdout", 0))
    if len({s.label for s in samples}) < 2:
        raise UsageError("cluster-diagnose needs at least two degradation labels in the selection")
    feats = metrics.extract_prompt_features(model, samples, batch_size=_int(values, "batch_size", 8))
    rows = metrics.cluster_table(feats)
    metrics.write_cluster_csv(out / "prompt_dbi.csv", rows)
    plotting.plot_cluster_diagnostic(feats, rows, out / "prompt_clusters.png")
    print(f"{'block':>5}  {'dim':>4}  {'n':>5}  {'DBI':>8}")
    for r in rows:
        print(f"{r['block']:>5}  {r['dim']:>4}  {r['n_samples']:>5}  {r['dbi']:>8.4f}")


HANDLERS = {
    "datagen": cmd_datagen,
    "train": cmd_train,
    "restore": cmd_restore,
    "eval": cmd_eval,
    "cluster-diagnose": cmd_cluster,
}


def run(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        values = _settings(args)
        seed = _int(values, "seed", 0)
        torch.manual_seed(seed)
        HANDLERS[args.command](args, values)
    except (UsageError, ConfigError, ScheduleError) as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 1
    except (CheckpointError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
