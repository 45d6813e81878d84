"""Pyramid diffusion: schedules, forward corruption, reverse posterior and sampler.

The latent shrinks as noise grows. ``ScalingSchedule.factors[t]`` is the
downscale factor of ``x_t`` relative to the full-resolution image, so the
reverse chain starts at the coarsest grid and upsamples on the way back.

Step indices follow the usual convention: ``t`` runs over ``1..T`` and
``alpha_bar(0) == 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch
import torch.nn.functional as F

Predictor = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    alphas: tuple[float, ...]
    alpha_bars: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        if not alphas:
            raise ScheduleError("noise schedule needs at least one step")
        for t, a in enumerate(alphas, start=1):
            if not (0.0 < a < 1.0) or not math.isfinite(a):
                raise ScheduleError(f"alpha_{t} = {a} is not in (0, 1)")
        for t in range(1, len(alphas)):
            if alphas[t] > alphas[t - 1] + 1e-12:
                raise ScheduleError(
                    f"alphas must be nonincreasing: alpha_{t} = {alphas[t - 1]} < alpha_{t + 1} = {alphas[t]}"
                )
        bars = []
        running = 1.0
        for a in alphas:
            running *= a
            bars.append(running)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", tuple(bars))

    @property
    def T(self) -> int:
        return len(self.alphas)

    def alpha(self, t: int) -> float:
        self._check(t, lo=1)
        return self.alphas[t - 1]

    def alpha_bar(self, t: int) -> float:
        self._check(t, lo=0)
        return 1.0 if t == 0 else self.alpha_bars[t - 1]

    def _check(self, t, lo):
        if not lo <= t <= self.T:
            raise ScheduleError(f"step {t} outside [{lo}, {self.T}]")


@dataclass(frozen=True)
class ScalingSchedule:
    factors: tuple[int, ...]

    def __post_init__(self):
        factors = tuple(self.factors)
        if len(factors) < 2:
            raise ScheduleError("scaling schedule needs T+1 >= 2 entries")
        if factors[0] != 1:
            raise ScheduleError(f"U_0 must be 1, got {factors[0]}")
        clean = []
        for t, u in enumerate(factors):
            if isinstance(u, float):
                if not u.is_integer():
                    raise ScheduleError(f"U_{t} = {u} is not an integer factor")
                u = int(u)
            if u < 1:
                raise ScheduleError(f"U_{t} = {u} < 1")
            clean.append(int(u))
        for t in range(1, len(clean)):
            if clean[t] < clean[t - 1]:
                raise ScheduleError(f"scaling schedule decreases at t={t}")
            if clean[t] % clean[t - 1]:
                raise ScheduleError(
                    f"U_{t}/U_{t - 1} = {clean[t]}/{clean[t - 1]} is not an integer ratio"
                )
        object.__setattr__(self, "factors", tuple(clean))

    @property
    def T(self) -> int:
        return len(self.factors) - 1

    def ratio(self, t: int) -> int:
        """Resize factor between step ``t-1`` and ``t``."""
        return self.factors[t] // self.factors[t - 1]


@dataclass(frozen=True)
class Schedules:
    noise: NoiseSchedule
    scaling: ScalingSchedule

    def __post_init__(self):
        if self.noise.T != self.scaling.T:
            raise ScheduleError(
                f"noise schedule has T={self.noise.T} but scaling schedule has T={self.scaling.T}"
            )

    @property
    def T(self) -> int:
        return self.noise.T

    def factor(self, t: int) -> int:
        return self.scaling.factors[t]

    @property
    def coarsest(self) -> int:
        return self.scaling.factors[-1]


@dataclass(frozen=True)
class LinearAlphaBar:
    """alpha_bar_t spaced linearly from ``start`` (t=1) to ``end`` (t=T)."""

    start: float = 0.9999
    end: float = 0.02

    def alphas(self, T: int) -> list[float]:
        if T == 1:
            bars = [self.start]
        else:
            step = (self.start - self.end) / (T - 1)
            bars = [self.start - i * step for i in range(T)]
        prev = 1.0
        out = []
        for b in bars:
            out.append(b / prev)
            prev = b
        return out


def build_schedules(
    T: int,
    noise_spec: LinearAlphaBar | Sequence[float] = LinearAlphaBar(),
    scaling_spec: Sequence[int | tuple[int, int]] = (),
) -> Schedules:
    """Validate and assemble the noise and scaling schedules.

    ``noise_spec`` is either a :class:`LinearAlphaBar` or the explicit
    per-step alphas. ``scaling_spec`` lists the steps at which the latent
    loses resolution: a bare step ``t`` halves it, ``(t, r)`` divides by ``r``.
    """
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if isinstance(noise_spec, LinearAlphaBar):
        alphas = noise_spec.alphas(T)
    else:
        alphas = list(noise_spec)
        if len(alphas) != T:
            raise ScheduleError(f"expected {T} alphas, got {len(alphas)}")

    ratios = [1] * (T + 1)
    for entry in scaling_spec:
        step, r = (entry, 2) if isinstance(entry, int) else entry
        if not 1 <= step <= T:
            raise ScheduleError(f"scaling step {step} outside [1, {T}]")
        if isinstance(r, float) and not r.is_integer():
            raise ScheduleError(f"scaling ratio {r} at step {step} is not an integer")
        if int(r) < 1:
            raise ScheduleError(f"scaling ratio {r} at step {step} is < 1")
        ratios[step] *= int(r)
    factors = [1]
    for t in range(1, T + 1):
        factors.append(factors[-1] * ratios[t])
    return Schedules(NoiseSchedule(tuple(alphas)), ScalingSchedule(tuple(factors)))


@dataclass
class ScheduleConfig:
    steps: int = 8
    alpha_bar_start: float = 0.9999
    alpha_bar_end: float = 0.02
    scaling_steps: tuple[int, ...] = (4,)

    def build(self) -> Schedules:
        return build_schedules(
            self.steps, LinearAlphaBar(self.alpha_bar_start, self.alpha_bar_end), self.scaling_steps
        )

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "alpha_bar_start": self.alpha_bar_start,
            "alpha_bar_end": self.alpha_bar_end,
            "scaling_steps": list(self.scaling_steps),
        }


# -- resampling -------------------------------------------------------------


def _as4d(x: torch.Tensor):
    if x.dim() < 2:
        raise ValueError(f"need at least 2 spatial dims, got shape {tuple(x.shape)}")
    lead = x.shape[:-2]
    return x.reshape(-1, 1, *x.shape[-2:]), lead


def resize_down(x: torch.Tensor, factor: int) -> torch.Tensor:
    """Block-mean pooling by an integer ``factor`` over the last two dims."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise ValueError(f"spatial size {h}x{w} not divisible by {factor}")
    flat, lead = _as4d(x)
    out = F.avg_pool2d(flat, factor)
    return out.reshape(*lead, h // factor, w // factor)


def resize_up(x: torch.Tensor, factor: int) -> torch.Tensor:
    """Bilinear upsampling by an integer ``factor`` over the last two dims."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    flat, lead = _as4d(x)
    out = F.interpolate(flat, scale_factor=factor, mode="bilinear", align_corners=False)
    return out.reshape(*lead, *out.shape[-2:])


# -- forward / reverse ------------------------------------------------------


def _gaussian_like(shape, ref: torch.Tensor, noise, generator):
    if noise is not None:
        if tuple(noise.shape) != tuple(shape):
            raise ValueError(f"noise shape {tuple(noise.shape)} != expected {tuple(shape)}")
        return noise
    return torch.randn(shape, generator=generator, dtype=ref.dtype, device=ref.device)


def forward_sample(
    x0: torch.Tensor,
    t: int | torch.Tensor,
    schedules: Schedules,
    noise: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Draw ``x_t`` straight from ``x_0`` (marginal form, cumulative factor U_t).

    ``t`` may be a ``(B,)`` tensor for a batch ``(B, C, H, W)`` as long as
    every step in it shares one scaling factor.
    """
    steps = [int(s) for s in t.reshape(-1)] if torch.is_tensor(t) else [int(t)]
    for s in steps:
        if not 1 <= s <= schedules.T:
            raise ScheduleError(f"step {s} outside [1, {schedules.T}]")
    factors = {schedules.factor(s) for s in steps}
    if len(factors) != 1:
        raise ValueError(f"steps {steps} span several resolutions {sorted(factors)}")
    base = resize_down(x0, factors.pop())
    eps = _gaussian_like(base.shape, base, noise, generator)
    if torch.is_tensor(t):
        if base.dim() != 4 or base.shape[0] != len(steps):
            raise ValueError("a step tensor needs a (B, C, H, W) batch with one step per item")
        abar = torch.tensor([schedules.noise.alpha_bar(s) for s in steps], dtype=base.dtype, device=base.device)
        abar = abar[:, None, None, None]
        return abar.sqrt() * base + (1.0 - abar).sqrt() * eps
    abar = schedules.noise.alpha_bar(steps[0])
    return math.sqrt(abar) * base + math.sqrt(1.0 - abar) * eps


def posterior_moments(x_t: torch.Tensor, t: int, y_pred: torch.Tensor, schedules: Schedules):
    """Mean and (scalar) variance of ``p(x_{t-1} | x_t)`` given the clean-image estimate."""
    if not 1 <= t <= schedules.T:
        raise ScheduleError(f"step {t} outside [1, {schedules.T}]")
    if y_pred.shape != x_t.shape:
        raise ValueError(
            f"y_pred shape {tuple(y_pred.shape)} must match x_t shape {tuple(x_t.shape)}"
        )
    a_t = schedules.noise.alpha(t)
    abar_t = schedules.noise.alpha_bar(t)
    abar_prev = schedules.noise.alpha_bar(t - 1)
    ratio = schedules.scaling.ratio(t)
    if ratio == 1:
        c_y = math.sqrt(abar_prev) * (1.0 - a_t) / (1.0 - abar_t)
        c_x = math.sqrt(a_t) * (1.0 - abar_prev) / (1.0 - abar_t)
        mean = c_y * y_pred + c_x * x_t
        var = (1.0 - abar_prev) * (1.0 - a_t) / (1.0 - abar_t)
    else:
        mean = math.sqrt(abar_prev) * resize_up(y_pred, ratio)
        var = 1.0 - abar_prev
    return mean, var


def reverse_step(
    x_t: torch.Tensor,
    t: int,
    y_pred: torch.Tensor,
    schedules: Schedules,
    noise: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Sample ``x_{t-1}``; the step into ``t=0`` returns the mean."""
    mean, var = posterior_moments(x_t, t, y_pred, schedules)
    if t == 1:
        return mean
    eps = _gaussian_like(mean.shape, mean, noise, generator)
    return mean + math.sqrt(var) * eps


@torch.no_grad()
def sample(
    model: Predictor,
    cond: torch.Tensor,
    schedules: Schedules,
    generator: torch.Generator | None = None,
    trace: list | None = None,
) -> torch.Tensor:
    """Run the reverse chain from pure noise at the coarsest grid.

    ``model(x_t, cond_t, t)`` receives batched tensors and a ``(B,)`` step
    tensor, with ``cond`` block-averaged to the resolution of ``x_t``. If
    ``trace`` is a list, ``(t, spatial shape of x_t)`` is appended per step.
    """
    squeeze = cond.dim() == 3
    if squeeze:
        cond = cond.unsqueeze(0)
    if cond.dim() != 4:
        raise ValueError(f"cond must be (C,H,W) or (B,C,H,W), got {tuple(cond.shape)}")
    h, w = cond.shape[-2:]
    top = schedules.coarsest
    if h % top or w % top:
        raise ValueError(f"cond size {h}x{w} not divisible by coarsest factor {top}")

    b = cond.shape[0]
    x = torch.randn(
        (b, cond.shape[1], h // top, w // top),
        generator=generator,
        dtype=cond.dtype,
        device=cond.device,
    )
    for t in range(schedules.T, 0, -1):
        if trace is not None:
            trace.append((t, tuple(x.shape[-2:])))
        cond_t = resize_down(cond, schedules.factor(t))
        steps = torch.full((b,), t, dtype=torch.long, device=cond.device)
        y = model(x, cond_t, steps)
        x = reverse_step(x, t, y, schedules, generator=generator)
    if trace is not None:
        trace.append((0, tuple(x.shape[-2:])))
    x = x.clamp(0.0, 1.0)
    return x[0] if squeeze else x
