"""L1 training of the restoration network under pyramid diffusion."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .data import PairedSample
from .diffusion import ScheduleConfig, Schedules, forward_sample, resize_down, sample
from .model import ModelConfig, RestorationTransformer

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 1e-4
    batch_size: int = 4
    seed: int = 0
    max_steps: int | None = None
    grad_clip: float | None = None
    log_every: int = 50

    def validate(self) -> "TrainConfig":
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        return self


@dataclass
class TrainResult:
    model: RestorationTransformer
    trace: list[tuple[int, int, float]] = field(default_factory=list)
    checkpoint: Path | None = None
    trace_path: Path | None = None


def stack_batch(samples: list[PairedSample], dtype=torch.float32):
    cond = torch.from_numpy(np.stack([s.corrupted for s in samples])).to(dtype)
    gt = torch.from_numpy(np.stack([s.ground_truth for s in samples])).to(dtype)
    return cond, gt


def l1_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return (pred - target).abs().mean()


def diffusion_loss(model, cond, gt, steps, schedules: Schedules, generator=None):
    """Mean over the batch of per-sample L1 between prediction and level target.

    Samples are grouped by scaling factor so each group runs as one batch.
    """
    total = 0.0
    batch = gt.shape[0]
    factors = torch.tensor([schedules.factor(int(s)) for s in steps])
    for factor in factors.unique().tolist():
        idx = (factors == factor).nonzero().flatten()
        t = steps[idx]
        x_t = forward_sample(gt[idx], t, schedules, generator=generator)
        target = resize_down(gt[idx], factor)
        pred = model(x_t, resize_down(cond[idx], factor), t)
        total = total + (pred - target).abs().mean(dim=(1, 2, 3)).sum()
    return total / batch


def train_step(model, optimizer, cond, gt, schedules: Schedules, generator=None, grad_clip=None) -> float:
    model.train()
    steps = torch.randint(1, schedules.T + 1, (gt.shape[0],), generator=generator)
    loss = diffusion_loss(model, cond, gt, steps, schedules, generator)
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss.item()} at steps {steps.tolist()}")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return float(loss.detach())


def write_trace(path, trace) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "step", "loss"])
            for epoch, step, loss in trace:
                w.writerow([epoch, step, f"{loss:.8f}"])
    except OSError as exc:
        raise OSError(f"cannot write loss trace {path}: {exc}") from exc
    return path


def read_trace(path) -> list[tuple[int, int, float]]:
    with open(path, newline="") as fh:
        return [(int(r["epoch"]), int(r["step"]), float(r["loss"])) for r in csv.DictReader(fh)]


def train_loop(
    dataset: list[PairedSample],
    train_cfg: TrainConfig | None = None,
    model_cfg: ModelConfig | None = None,
    schedule_cfg: ScheduleConfig | None = None,
    out_dir=None,
) -> TrainResult:
    """Train from scratch; with ``out_dir``, write ``checkpoint.npz`` and ``loss_trace.csv``.

    Deterministic for a fixed seed on a fixed platform: model init, batch
    order, step draws and noise all come from seeded generators.
    """
    if not dataset:
        raise ValueError("empty dataset")
    train_cfg = (train_cfg or TrainConfig()).validate()
    model_cfg = model_cfg or ModelConfig()
    schedule_cfg = schedule_cfg or ScheduleConfig()
    schedules = schedule_cfg.build()

    torch.manual_seed(train_cfg.seed)
    model = RestorationTransformer(model_cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.learning_rate)
    generator = torch.Generator().manual_seed(train_cfg.seed)
    order_rng = np.random.default_rng(train_cfg.seed)

    steps_per_epoch = math.ceil(len(dataset) / train_cfg.batch_size)
    trace = []
    step = 0
    done = False
    for epoch in range(1, train_cfg.epochs + 1):
        order = order_rng.permutation(len(dataset))
        for b in range(steps_per_epoch):
            picked = [dataset[i] for i in order[b * train_cfg.batch_size : (b + 1) * train_cfg.batch_size]]
            cond, gt = stack_batch(picked)
            loss = train_step(model, optimizer, cond, gt, schedules, generator, train_cfg.grad_clip)
            step += 1
            trace.append((epoch, step, loss))
            if train_cfg.log_every and step % train_cfg.log_every == 0:
                recent = [l for _, _, l in trace[-train_cfg.log_every :]]
                log.info("epoch %d step %d loss %.5f", epoch, step, sum(recent) / len(recent))
            if train_cfg.max_steps and step >= train_cfg.max_steps:
                done = True
                break
        if done:
            break

    model.eval()
    result = TrainResult(model=model, trace=trace)
    if out_dir is not None:
        out_dir = Path(out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
        result.checkpoint = save_checkpoint(
            out_dir / "checkpoint.npz",
            model,
            schedule_cfg,
            extra={"steps": step, "seed": train_cfg.seed, "learning_rate": train_cfg.learning_rate},
        )
        result.trace_path = write_trace(out_dir / "loss_trace.csv", trace)
    return result


def restore(model, schedules: Schedules, images: np.ndarray | torch.Tensor, seed: int = 0, batch_size: int = 8):
    """Run the sampler over a stack of corrupted images ``(N, C, H, W)``."""
    ref = next(model.parameters())
    cond = torch.as_tensor(np.asarray(images) if not torch.is_tensor(images) else images).to(ref.dtype)
    generator = torch.Generator().manual_seed(seed)
    model.eval()
    outputs = []
    for start in range(0, cond.shape[0], batch_size):
        outputs.append(sample(model, cond[start : start + batch_size], schedules, generator=generator))
    return torch.cat(outputs).numpy()
