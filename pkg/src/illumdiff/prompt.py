"""Illumination prompt blocks.

``AdaptivePromptIntegration`` turns decoder features into gate weights over
a bank of learnable prompt components and emits one prompt map ``P'``.
``GlobalPromptScanner`` concatenates ``P'`` to the features and mixes them
with a gated linear recurrence run along four corner-to-corner traversals.

All modules take batched ``(B, C, H, W)`` tensors.
"""

from __future__ import annotations

import enum

import torch
import torch.nn as nn
import torch.nn.functional as F


class ScanDirection(enum.IntEnum):
    """Traversal orders; the integer values fix the checkpoint ordering."""

    TL_BR = 0  # row-major
    BR_TL = 1  # row-major, reversed
    TR_BL = 2  # columns top to bottom, starting at the right edge
    BL_TR = 3  # TR_BL reversed

    @property
    def inverse(self) -> "ScanDirection":
        return {
            ScanDirection.TL_BR: ScanDirection.BR_TL,
            ScanDirection.BR_TL: ScanDirection.TL_BR,
            ScanDirection.TR_BL: ScanDirection.BL_TR,
            ScanDirection.BL_TR: ScanDirection.TR_BL,
        }[self]


def scan_order(h: int, w: int, direction: ScanDirection) -> torch.Tensor:
    """Flat (row-major) pixel indices in traversal order."""
    grid = torch.arange(h * w).reshape(h, w)
    if direction in (ScanDirection.TL_BR, ScanDirection.BR_TL):
        order = grid.reshape(-1)
    else:
        order = grid.flip(1).t().reshape(-1)
    if direction in (ScanDirection.BR_TL, ScanDirection.BL_TR):
        order = order.flip(0)
    return order


def directional_flatten(x: torch.Tensor, direction: ScanDirection) -> torch.Tensor:
    """``(..., C, H, W)`` -> ``(..., H*W, C)`` sequence of C-vectors."""
    h, w = x.shape[-2:]
    order = scan_order(h, w, direction).to(x.device)
    return x.flatten(-2)[..., order].transpose(-1, -2)


def directional_unflatten(seq: torch.Tensor, direction: ScanDirection, h: int, w: int) -> torch.Tensor:
    if seq.shape[-2] != h * w:
        raise ValueError(f"sequence length {seq.shape[-2]} != {h}*{w}")
    order = scan_order(h, w, direction).to(seq.device)
    inverse = torch.empty_like(order)
    inverse[order] = torch.arange(order.numel(), device=order.device)
    flat = seq.transpose(-1, -2)[..., inverse]
    return flat.reshape(*flat.shape[:-1], h, w)


# -- recurrence -------------------------------------------------------------

_CHUNK = 32


def _doubling(a, x, dim):
    # Hillis-Steele: after round r, x holds the recurrence folded over its
    # last 2**r inputs and a the matching product of gates.
    n = x.shape[dim]
    shift = 1
    while shift < n:
        tail_a = a.narrow(dim, shift, n - shift)
        x = torch.cat([x.narrow(dim, 0, shift), x.narrow(dim, shift, n - shift) + tail_a * x.narrow(dim, 0, n - shift)], dim)
        a = torch.cat([a.narrow(dim, 0, shift), tail_a * a.narrow(dim, 0, n - shift)], dim)
        shift *= 2
    return a, x


def _scan(a, x):
    b, length, c = x.shape
    if length <= _CHUNK:
        return _doubling(a, x, 1)[1]
    pad = (-length) % _CHUNK
    if pad:
        a = F.pad(a, (0, 0, 0, pad), value=1.0)
        x = F.pad(x, (0, 0, 0, pad))
    n = x.shape[1] // _CHUNK
    decay, local = _doubling(a.reshape(b, n, _CHUNK, c), x.reshape(b, n, _CHUNK, c), 2)
    # chunk-end states obey the same recurrence one level up
    ends = _scan(decay[:, :, -1], local[:, :, -1])
    carry = F.pad(ends[:, :-1], (0, 0, 1, 0))
    return (local + decay * carry.unsqueeze(2)).reshape(b, -1, c)[:, :length]


def linear_recurrence(a: torch.Tensor, x: torch.Tensor, reverse: bool = False) -> torch.Tensor:
    """Solve ``h_k = a_k * h_{k-1} + x_k`` with ``h_0 = 0`` along dim 1.

    Inputs are ``(B, L, C)``. Vectorized: a doubling scan inside fixed-size
    chunks, then the same scan over the chunk carries. Only products of
    gates are formed, so nothing overflows.
    """
    if x.dim() != 3 or a.shape != x.shape:
        raise ValueError(f"expected matching (B, L, C) tensors, got {tuple(a.shape)} and {tuple(x.shape)}")
    if x.shape[1] == 0:
        raise ValueError("empty sequence")
    if reverse:
        return _scan(a.flip(1), x.flip(1)).flip(1)
    return _scan(a, x)


def gated_recurrence(u, a, b, c, reverse: bool = False) -> torch.Tensor:
    """``y_k = c_k * h_k`` with ``h_k = a_k * h_{k-1} + b_k * u_k`` for explicit gates."""
    return c * linear_recurrence(a, b * u, reverse=reverse)


class SelectiveScan(nn.Module):
    """Input-dependent gated recurrence over a ``(B, L, C)`` sequence.

    Per step, ``a = sigmoid(W_a u)``, ``b = W_b u`` and ``c = W_c u``; the
    state is diagonal (one scalar per channel). Swap this class out in
    :class:`GlobalPromptScanner` to try a richer state-space core.
    """

    def __init__(self, channels: int, init_decay: float = 0.9):
        super().__init__()
        self.gate_a = nn.Linear(channels, channels)
        self.gate_b = nn.Linear(channels, channels)
        self.gate_c = nn.Linear(channels, channels)
        with torch.no_grad():
            self.gate_a.weight.mul_(0.1)
            self.gate_a.bias.fill_(float(torch.logit(torch.tensor(init_decay))))

    def gates(self, u):
        return torch.sigmoid(self.gate_a(u)), self.gate_b(u), self.gate_c(u)

    def forward(self, u: torch.Tensor, reverse: bool = False) -> torch.Tensor:
        return gated_recurrence(u, *self.gates(u), reverse=reverse)


def selective_scan_1d(seq: torch.Tensor, scan: SelectiveScan, reverse: bool = False) -> torch.Tensor:
    squeeze = seq.dim() == 2
    out = scan(seq.unsqueeze(0) if squeeze else seq, reverse=reverse)
    return out[0] if squeeze else out


# -- prompt integration -----------------------------------------------------


class MultiScaleExtract(nn.Module):
    """Depthwise 3/5/7 convolutions in parallel, fused back to C by a 1x1."""

    def __init__(self, channels: int, kernel_sizes=(3, 5, 7)):
        super().__init__()
        self.kernel_sizes = tuple(kernel_sizes)
        self.branches = nn.ModuleList(
            nn.Conv2d(channels, channels, k, padding=k // 2, groups=channels) for k in self.kernel_sizes
        )
        self.fuse = nn.Conv2d(channels * len(self.kernel_sizes), channels, 1)

    def forward(self, x):
        return self.fuse(torch.cat([branch(x) for branch in self.branches], dim=1))


class AdaptivePromptIntegration(nn.Module):
    def __init__(self, channels: int, prompt_channels: int, num_prompts: int = 5, prompt_size: int = 8):
        super().__init__()
        self.num_prompts = num_prompts
        self.components = nn.Parameter(torch.rand(num_prompts, prompt_channels, prompt_size, prompt_size))
        self.extract = MultiScaleExtract(channels)
        self.gate_conv = nn.Conv2d(2, num_prompts, 3, padding=1)
        self.gate_fcn = nn.Linear(num_prompts, num_prompts)
        self.out_conv = nn.Conv2d(prompt_channels, prompt_channels, 3, padding=1, bias=False)

    def prompt_weights(self, x):
        xa = self.extract(x)
        pooled = torch.cat([xa.mean(dim=1, keepdim=True), xa.amax(dim=1, keepdim=True)], dim=1)
        gate = torch.sigmoid(self.gate_conv(pooled)).mean(dim=(2, 3))
        return self.gate_fcn(gate)

    def forward(self, x):
        weights = self.prompt_weights(x)
        prompt = torch.einsum("bn,nchw->bchw", weights, self.components)
        prompt = F.interpolate(prompt, size=x.shape[-2:], mode="bilinear", align_corners=False)
        return self.out_conv(prompt)


class StaticPrompt(nn.Module):
    """Ablation stand-in for the API block: one learnable prompt, no gating."""

    def __init__(self, prompt_channels: int, prompt_size: int = 8):
        super().__init__()
        self.components = nn.Parameter(torch.rand(1, prompt_channels, prompt_size, prompt_size))

    def forward(self, x):
        prompt = self.components.expand(x.shape[0], -1, -1, -1)
        return F.interpolate(prompt, size=x.shape[-2:], mode="bilinear", align_corners=False)


class GlobalPromptScanner(nn.Module):
    """Cross-scan over ``[x || P']`` plus a 1x1 -> 3x3 skip path on ``x``.

    The four directional outputs are summed, then projected back to the
    feature width. ``cross_scan=False`` keeps the projection and skip path
    but drops the recurrence (used for the no-GPS ablation).
    """

    def __init__(self, channels: int, prompt_channels: int, cross_scan: bool = True, scan_cls=SelectiveScan):
        super().__init__()
        joint = channels + prompt_channels
        self.cross_scan = cross_scan
        if cross_scan:
            self.scans = nn.ModuleList(scan_cls(joint) for _ in ScanDirection)
        self.proj = nn.Conv2d(joint, channels, 1)
        self.skip_in = nn.Conv2d(channels, channels, 1)
        self.skip_out = nn.Conv2d(channels, channels, 3, padding=1)

    def mix(self, xp):
        h, w = xp.shape[-2:]
        total = 0
        for direction, scan in zip(ScanDirection, self.scans):
            seq = directional_flatten(xp, direction)
            total = total + directional_unflatten(scan(seq), direction, h, w)
        return total

    def forward(self, x, prompt):
        if x.shape[-2:] != prompt.shape[-2:]:
            raise ValueError(f"feature grid {tuple(x.shape[-2:])} != prompt grid {tuple(prompt.shape[-2:])}")
        xp = torch.cat([x, prompt], dim=1)
        mixed = self.mix(xp) if self.cross_scan else xp
        return self.proj(mixed) + self.skip_out(self.skip_in(x))


class IlluminationPrompt(nn.Module):
    """Prompt generation followed by prompt/feature fusion.

    With both ``use_api`` and ``use_gps`` off the block is the identity.
    """

    def __init__(self, channels, num_prompts=5, prompt_size=8, use_api=True, use_gps=True):
        super().__init__()
        self.enabled = use_api or use_gps
        if not self.enabled:
            return
        if use_api:
            self.api = AdaptivePromptIntegration(channels, channels, num_prompts, prompt_size)
        else:
            self.api = StaticPrompt(channels, prompt_size)
        self.gps = GlobalPromptScanner(channels, channels, cross_scan=use_gps)

    def forward(self, x):
        if not self.enabled:
            return x
        return self.gps(x, self.api(x))
