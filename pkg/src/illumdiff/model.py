"""U-shaped restoration transformer with prompt-steered decoder.

Layout for ``levels = L``::

    SFE -> [blocks, down] x (L-1) -> bottleneck blocks
        -> [up, prompt, concat skip, 1x1 fuse, blocks] x (L-1) -> OUT

The network predicts the clean image at the resolution of its input.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .prompt import IlluminationPrompt


@dataclass
class ModelConfig:
    image_channels: int = 3
    levels: int = 4
    base_channels: int = 16
    channel_mults: tuple[int, ...] = (1, 2, 2, 4)
    heads: tuple[int, ...] = (1, 2, 2, 4)
    enc_blocks: int = 1
    dec_blocks: int = 1
    bottleneck_blocks: int = 2
    ffn_expansion: int = 2
    prompt_N: int = 5
    prompt_size: int = 8
    time_embed_dim: int = 64
    block_type: str = "transformer"
    use_api: bool = True
    use_gps: bool = True

    def __post_init__(self):
        self.channel_mults = tuple(int(m) for m in self.channel_mults)
        self.heads = tuple(int(h) for h in self.heads)

    def validate(self) -> "ModelConfig":
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")
        if len(self.channel_mults) != self.levels or len(self.heads) != self.levels:
            raise ValueError(
                f"channel_mults {self.channel_mults} and heads {self.heads} need {self.levels} entries"
            )
        for width, h in zip(self.widths, self.heads):
            if h < 1 or width % h:
                raise ValueError(f"width {width} not divisible by {h} heads")
        if self.block_type not in ("transformer", "conv"):
            raise ValueError(f"unknown block_type {self.block_type!r}")
        if self.time_embed_dim < 2 or self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be an even number >= 2")
        return self

    @property
    def widths(self) -> list[int]:
        return [self.base_channels * m for m in self.channel_mults]

    @property
    def multiple(self) -> int:
        return 2 ** (self.levels - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_mults"] = list(self.channel_mults)
        d["heads"] = list(self.heads)
        return d


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1))
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([args.sin(), args.cos()], dim=1)


class TimeEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        ref = self.mlp[0].weight
        return self.mlp(sinusoidal_embedding(t, self.dim).to(ref.dtype))


class TransformerBlock(nn.Module):
    """Pre-norm attention and FFN, both residual, with the step embedding added in between."""

    def __init__(self, channels: int, heads: int, time_dim: int, ffn_expansion: int = 2):
        super().__init__()
        self.heads = heads
        self.norm1 = nn.LayerNorm(channels)
        self.qkv = nn.Linear(channels, 3 * channels)
        self.attn_out = nn.Linear(channels, channels)
        self.t_proj = nn.Linear(time_dim, channels)
        self.norm2 = nn.LayerNorm(channels)
        hidden = channels * ffn_expansion
        self.ffn = nn.Sequential(nn.Linear(channels, hidden), nn.GELU(), nn.Linear(hidden, channels))

    def attention(self, tokens):
        b, n, c = tokens.shape
        q, k, v = self.qkv(tokens).reshape(b, n, 3, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        out = F.scaled_dot_product_attention(q, k, v)
        return self.attn_out(out.transpose(1, 2).reshape(b, n, c))

    def forward(self, x, temb):
        b, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        x1 = tokens + self.attention(self.norm1(tokens))
        x1 = x1 + self.t_proj(temb)[:, None, :]
        x2 = x1 + self.ffn(self.norm2(x1))
        return x2.transpose(1, 2).reshape(b, c, h, w)


class ConvBlock(nn.Module):
    """Residual conv block used when the transformer is ablated away."""

    def __init__(self, channels: int, heads: int, time_dim: int, ffn_expansion: int = 2):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.t_proj = nn.Linear(time_dim, channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x, temb):
        h = self.conv1(F.gelu(x)) + self.t_proj(temb)[:, :, None, None]
        return x + self.conv2(F.gelu(h))


class Stage(nn.Module):
    def __init__(self, block_cls, depth, channels, heads, time_dim, ffn_expansion):
        super().__init__()
        self.blocks = nn.ModuleList(block_cls(channels, heads, time_dim, ffn_expansion) for _ in range(depth))

    def forward(self, x, temb):
        for block in self.blocks:
            x = block(x, temb)
        return x


class Upsample(nn.Module):
    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class DecoderStage(nn.Module):
    def __init__(self, cfg: ModelConfig, level: int, block_cls):
        super().__init__()
        widths = cfg.widths
        c = widths[level]
        self.up = Upsample(widths[level + 1], c)
        self.prompt = IlluminationPrompt(c, cfg.prompt_N, cfg.prompt_size, cfg.use_api, cfg.use_gps)
        self.fuse = nn.Conv2d(2 * c, c, 1)
        self.body = Stage(block_cls, cfg.dec_blocks, c, cfg.heads[level], cfg.time_embed_dim, cfg.ffn_expansion)


class RestorationTransformer(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg = (cfg or ModelConfig()).validate()
        block_cls = TransformerBlock if cfg.block_type == "transformer" else ConvBlock
        widths = cfg.widths
        td = cfg.time_embed_dim

        self.time_embed = TimeEmbedding(td)
        self.sfe = nn.Conv2d(2 * cfg.image_channels, widths[0], 3, padding=1)
        self.encoder = nn.ModuleList(
            Stage(block_cls, cfg.enc_blocks, widths[l], cfg.heads[l], td, cfg.ffn_expansion)
            for l in range(cfg.levels - 1)
        )
        self.down = nn.ModuleList(
            nn.Conv2d(widths[l], widths[l + 1], 3, stride=2, padding=1) for l in range(cfg.levels - 1)
        )
        top = cfg.levels - 1
        self.bottleneck = Stage(block_cls, cfg.bottleneck_blocks, widths[top], cfg.heads[top], td, cfg.ffn_expansion)
        # decoder[0] sits just above the bottleneck; prompt block k is decoder[k-1]
        self.decoder = nn.ModuleList(DecoderStage(cfg, l, block_cls) for l in reversed(range(cfg.levels - 1)))
        self.out = nn.Conv2d(widths[0], cfg.image_channels, 3, padding=1)

    def _check(self, x_t, cond):
        if x_t.dim() != 4 or x_t.shape != cond.shape:
            raise ValueError(f"x_t {tuple(x_t.shape)} and cond {tuple(cond.shape)} must be equal (B,C,H,W)")
        if x_t.shape[1] != self.cfg.image_channels:
            raise ValueError(f"expected {self.cfg.image_channels} image channels, got {x_t.shape[1]}")
        h, w = x_t.shape[-2:]
        m = self.cfg.multiple
        if h % m or w % m:
            raise ValueError(f"spatial size {h}x{w} not divisible by {m}")

    def forward(self, x_t, cond, t, trace: list | None = None, prompt_hook=None):
        """Predict the clean image.

        ``t`` is an int or a ``(B,)`` tensor. ``trace`` collects
        ``(name, shape)`` pairs; ``prompt_hook(k, features)`` sees the
        output of prompt block ``k`` (1-based, coarse to fine).
        """
        self._check(x_t, cond)
        if not torch.is_tensor(t):
            t = torch.full((x_t.shape[0],), int(t), dtype=torch.long)
        t = t.to(x_t.device).reshape(-1)
        if t.numel() == 1 and x_t.shape[0] > 1:
            t = t.expand(x_t.shape[0])

        def note(name, value):
            if trace is not None:
                trace.append((name, tuple(value.shape)))

        temb = self.time_embed(t)
        x = self.sfe(torch.cat([x_t, cond], dim=1))
        note("sfe", x)
        skips = []
        for level, (stage, down) in enumerate(zip(self.encoder, self.down)):
            x = stage(x, temb)
            skips.append(x)
            note(f"skip{level}", x)
            x = down(x)
        x = self.bottleneck(x, temb)
        note("bottleneck", x)
        for k, stage in enumerate(self.decoder, start=1):
            x = stage.up(x)
            x = stage.prompt(x)
            if prompt_hook is not None:
                prompt_hook(k, x)
            skip = skips.pop()
            note(f"dec{k}.prompt", x)
            x = stage.fuse(torch.cat([x, skip], dim=1))
            x = stage.body(x, temb)
            note(f"dec{k}", x)
        y = self.out(x)
        note("out", y)
        return y


def dit_forward(model: RestorationTransformer, x_t, cond, t):
    """Accept unbatched ``(C,H,W)`` inputs as well as batches."""
    if x_t.dim() == 3:
        return model(x_t[None], cond[None], t)[0]
    return model(x_t, cond, t)
