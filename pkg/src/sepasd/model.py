"""Conformer encoder-decoder separator with average-pooling embedding taps."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import dsp
from .dsp import Spectrogram, StftConfig
from .errors import CheckpointNotFound, ConfigMismatch, CorruptCheckpoint, NonFiniteValues

CHECKPOINT_FORMAT = "sepasd-separator"
CHECKPOINT_VERSION = 1
DECODER_STYLES = ("mask_plus_complex", "complex_only")


@dataclass(frozen=True)
class SeparatorConfig:
    channels: int = 64
    num_blocks: int = 4
    tap_blocks: tuple[int, int] | None = None
    attention_heads: int = 4
    freq_downsample: int = 2
    decoder_style: str = "mask_plus_complex"
    dense_depth: int = 4
    ff_mult: int = 4
    conv_kernel: int = 31
    seed: int = 0

    def __post_init__(self):
        if self.channels <= 0:
            raise ValueError("channels must be positive")
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        if self.channels % self.attention_heads:
            raise ValueError(f"channels={self.channels} not divisible by attention_heads={self.attention_heads}")
        if self.decoder_style not in DECODER_STYLES:
            raise ValueError(f"decoder_style must be one of {DECODER_STYLES}")
        if self.freq_downsample < 1:
            raise ValueError("freq_downsample must be >= 1")
        taps = self.tap_blocks
        if taps is None:
            taps = (min(2, self.num_blocks), self.num_blocks)
        taps = tuple(int(t) for t in taps)
        if len(taps) != 2 or not all(1 <= t <= self.num_blocks for t in taps):
            raise ValueError(f"tap_blocks must be two indices in [1, {self.num_blocks}], got {taps}")
        object.__setattr__(self, "tap_blocks", taps)

    @property
    def embedding_dim(self) -> int:
        return 3 * self.channels


class PooledTaps(NamedTuple):
    """Per-channel means of the encoder output and two conformer block outputs."""

    encoder_vec: torch.Tensor
    mid_vec: torch.Tensor
    last_vec: torch.Tensor


class SeparatorOutput(NamedTuple):
    y: torch.Tensor
    Y: Spectrogram
    taps: PooledTaps


def pool_map(fmap: torch.Tensor) -> torch.Tensor:
    """Average a ``(..., C, T, F)`` activation map over time and frequency."""
    return fmap.mean(dim=(-2, -1))


def pooled_embedding(taps: PooledTaps) -> torch.Tensor:
    return torch.cat([taps.encoder_vec, taps.mid_vec, taps.last_vec], dim=-1)


class DenseBlock(nn.Module):
    """Dilated 2D convolutions along time, each layer fed all previous outputs."""

    def __init__(self, channels: int, depth: int):
        super().__init__()
        self.layers = nn.ModuleList()
        for i in range(depth):
            dil = 2**i
            self.layers.append(nn.Sequential(
                nn.Conv2d(channels * (i + 1), channels, kernel_size=(3, 3), dilation=(dil, 1), padding=(dil, 1)),
                nn.InstanceNorm2d(channels, affine=True),
                nn.PReLU(channels),
            ))

    def forward(self, x):
        skip = x
        for layer in self.layers:
            x = layer(skip)
            skip = torch.cat([x, skip], dim=1)
        return x


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int):
        super().__init__()
        self.net = nn.Sequential(nn.LayerNorm(dim), nn.Linear(dim, dim * mult), nn.SiLU(), nn.Linear(dim * mult, dim))

    def forward(self, x):
        return self.net(x)


class ConvModule(nn.Module):
    def __init__(self, dim: int, kernel: int, expansion: int = 2):
        super().__init__()
        inner = dim * expansion
        self.norm = nn.LayerNorm(dim)
        self.pointwise_in = nn.Conv1d(dim, inner * 2, 1)
        self.depthwise = nn.Conv1d(inner, inner, kernel, padding=kernel // 2, groups=inner)
        self.group_norm = nn.GroupNorm(1, inner)
        self.pointwise_out = nn.Conv1d(inner, dim, 1)

    def forward(self, x):
        # x: (N, L, D)
        h = self.norm(x).transpose(1, 2)
        h = F.glu(self.pointwise_in(h), dim=1)
        h = F.silu(self.group_norm(self.depthwise(h)))
        return self.pointwise_out(h).transpose(1, 2)


class ConformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, ff_mult: int, kernel: int):
        super().__init__()
        self.ff1 = FeedForward(dim, ff_mult)
        self.attn_norm = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.conv = ConvModule(dim, kernel)
        self.ff2 = FeedForward(dim, ff_mult)
        self.out_norm = nn.LayerNorm(dim)

    def forward(self, x):
        x = x + 0.5 * self.ff1(x)
        h = self.attn_norm(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        x = x + self.conv(x)
        x = x + 0.5 * self.ff2(x)
        return self.out_norm(x)


class TwoStageConformer(nn.Module):
    """Conformer along time, then along frequency, of a ``(B, C, T, F)`` map."""

    def __init__(self, cfg: SeparatorConfig):
        super().__init__()
        args = (cfg.channels, cfg.attention_heads, cfg.ff_mult, cfg.conv_kernel)
        self.time = ConformerBlock(*args)
        self.freq = ConformerBlock(*args)

    def forward(self, x):
        b, c, t, f = x.shape
        h = x.permute(0, 3, 2, 1).reshape(b * f, t, c)
        h = self.time(h) + h
        h = h.reshape(b, f, t, c).permute(0, 2, 1, 3).reshape(b * t, f, c)
        h = self.freq(h) + h
        return h.reshape(b, t, f, c).permute(0, 3, 1, 2)


class Encoder(nn.Module):
    """Strided input projection along frequency, then a dense block at the reduced resolution."""

    def __init__(self, cfg: SeparatorConfig):
        super().__init__()
        c = cfg.channels
        self.down = nn.Sequential(
            nn.Conv2d(3, c, kernel_size=(1, 3), stride=(1, cfg.freq_downsample), padding=(0, 1)),
            nn.InstanceNorm2d(c, affine=True),
            nn.PReLU(c),
        )
        self.dense = DenseBlock(c, cfg.dense_depth)

    def forward(self, x):
        return self.dense(self.down(x))


class DecoderHead(nn.Module):
    """Dense block at the reduced resolution, then a transposed conv back to full frequency resolution."""

    def __init__(self, cfg: SeparatorConfig, out_channels: int):
        super().__init__()
        c = cfg.channels
        self.dense = DenseBlock(c, cfg.dense_depth)
        self.up = nn.ConvTranspose2d(c, out_channels, kernel_size=(1, 3), stride=(1, cfg.freq_downsample),
                                     padding=(0, 1))

    def forward(self, x, bins: int):
        h = self.up(self.dense(x))
        if h.shape[-1] >= bins:
            return h[..., :bins]
        return F.pad(h, (0, bins - h.shape[-1]))


class SeparatorNet(nn.Module):
    def __init__(self, config: SeparatorConfig = SeparatorConfig(), stft_cfg: StftConfig = StftConfig()):
        super().__init__()
        self.config = config
        self.stft_cfg = stft_cfg
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.encoder = Encoder(config)
            self.blocks = nn.ModuleList(TwoStageConformer(config) for _ in range(config.num_blocks))
            self.complex_head = DecoderHead(config, 2)
            if config.decoder_style == "mask_plus_complex":
                self.mask_head = DecoderHead(config, 1)
                self.mask_slope = nn.Parameter(torch.ones(stft_cfg.bins))
            else:
                self.mask_head = None

    def describe(self) -> dict:
        return {
            "separator": asdict(self.config),
            "stft": asdict(self.stft_cfg),
            "parameters": sum(p.numel() for p in self.parameters()),
            "embedding_dim": self.config.embedding_dim,
        }

    def forward(self, features: torch.Tensor) -> tuple[Spectrogram, PooledTaps]:
        """Map ``(B, 3, T, F)`` features to an output spectrogram and pooled taps."""
        if features.dim() != 4 or features.shape[1] != 3:
            raise ValueError(f"features must have shape (B, 3, T, F), got {tuple(features.shape)}")
        bins = features.shape[-1]
        if bins != self.stft_cfg.bins:
            raise ValueError(f"features have {bins} bins, network expects {self.stft_cfg.bins}")
        enc = self.encoder(features)
        h = enc
        lo, hi = self.config.tap_blocks
        outputs = []
        for block in self.blocks:
            h = block(h)
            outputs.append(h)
        mid, last = outputs[lo - 1], outputs[hi - 1]
        taps = PooledTaps(pool_map(enc), pool_map(mid), pool_map(last))

        refine = self.complex_head(last, bins)
        real, imag = refine[:, 0], refine[:, 1]
        if self.mask_head is not None:
            mask = 2.0 * torch.sigmoid(self.mask_slope * self.mask_head(last, bins)[:, 0])
            in_real, in_imag, in_mag = features[:, 0], features[:, 1], features[:, 2]
            phase = torch.atan2(in_imag, in_real)
            mag = mask * in_mag
            real = real + mag * torch.cos(phase)
            imag = imag + mag * torch.sin(phase)
        return Spectrogram(real, imag), taps

    def separate(self, features, length: int) -> SeparatorOutput:
        """Run the network and resynthesize the time-domain estimate of ``length`` samples."""
        features = torch.as_tensor(features, dtype=next(self.parameters()).dtype)
        squeeze = features.dim() == 3
        if squeeze:
            features = features.unsqueeze(0)
        if self.stft_cfg.frames(length) != features.shape[-2]:
            raise ValueError(f"length {length} inconsistent with {features.shape[-2]} frames")
        Y, taps = self(features)
        y = dsp.istft(Y, self.stft_cfg, length)
        for name, t in (("y", y), ("Y.real", Y.real), ("Y.imag", Y.imag), ("taps", pooled_embedding(taps))):
            if not torch.isfinite(t).all():
                raise NonFiniteValues(f"non-finite activations in {name}; the network has diverged")
        if squeeze:
            y = y[0]
            Y = Spectrogram(Y.real[0], Y.imag[0])
            taps = PooledTaps(*(v[0] for v in taps))
        return SeparatorOutput(y, Y, taps)


def forward(net: SeparatorNet, features, length: int) -> SeparatorOutput:
    return net.separate(features, length)


def build_separator(config: SeparatorConfig = SeparatorConfig(), stft_cfg: StftConfig = StftConfig(),
                    dtype: torch.dtype = torch.float32) -> SeparatorNet:
    return SeparatorNet(config, stft_cfg).to(dtype)


def config_from_dict(d: dict) -> SeparatorConfig:
    d = dict(d)
    if d.get("tap_blocks") is not None:
        d["tap_blocks"] = tuple(d["tap_blocks"])
    return SeparatorConfig(**d)


def save_params(net: SeparatorNet, path: str | os.PathLike) -> Path:
    """Write a versioned checkpoint: config echo plus named parameter tensors."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "separator": asdict(net.config),
        "stft": asdict(net.stft_cfg),
        "state_dict": {k: v.detach().clone() for k, v in net.state_dict().items()},
    }
    torch.save(payload, path)
    return path


def load_params(path: str | os.PathLike, expected: SeparatorConfig | None = None) -> SeparatorNet:
    path = Path(path)
    if not path.is_file():
        raise CheckpointNotFound(f"CheckpointNotFound: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises a zoo of types for damaged archives
        raise CorruptCheckpoint(f"CorruptCheckpoint: cannot decode {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpoint(f"CorruptCheckpoint: {path} is not a separator checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigMismatch(f"checkpoint version {payload.get('version')} != supported {CHECKPOINT_VERSION}")
    config = config_from_dict(payload["separator"])
    if expected is not None and config != expected:
        diff = {k: (v, getattr(expected, k)) for k, v in asdict(config).items() if getattr(expected, k) != v}
        raise ConfigMismatch(f"ConfigMismatch: checkpoint vs expected (file, expected): {diff}")
    state = payload["state_dict"]
    dtype = next(iter(state.values())).dtype if state else torch.float32
    net = SeparatorNet(config, StftConfig(**payload["stft"])).to(dtype)
    try:
        net.load_state_dict(state)
    except RuntimeError as exc:
        raise CorruptCheckpoint(f"CorruptCheckpoint: {exc}") from exc
    net.eval()
    return net
