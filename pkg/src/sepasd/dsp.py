"""Time-frequency transforms and decibel-matched mixing.

All functions accept numpy arrays or torch tensors. Numpy input is computed in
float64 and returned as numpy; tensor input stays a tensor so autograd flows
through (the separator's decoder relies on this for its time-domain output).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np
import torch

from .errors import SepAsdError, SilentSignal

Array = Union[np.ndarray, torch.Tensor]

SAMPLE_RATE = 16000


class StftError(SepAsdError):
    pass


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 400
    hop: int = 100
    window: str = "hann"
    center: bool = True

    def __post_init__(self):
        if not 0 < self.hop <= self.n_fft:
            raise StftError(f"hop must satisfy 0 < hop <= n_fft, got hop={self.hop}, n_fft={self.n_fft}")
        if self.window not in _WINDOWS:
            raise StftError(f"unknown window {self.window!r}; choose from {sorted(_WINDOWS)}")
        check_overlap_add(self)

    @property
    def bins(self) -> int:
        return self.n_fft // 2 + 1

    def frames(self, length: int) -> int:
        pad = self.n_fft if self.center else 0
        return 1 + (length + pad - self.n_fft) // self.hop


@dataclass(frozen=True)
class MixConfig:
    delta_db: float = -5.0
    rms_floor: float = 1e-6

    def __post_init__(self):
        if not self.rms_floor > 0:
            raise ValueError("rms_floor must be positive")


@dataclass
class Spectrogram:
    """Complex STFT stored as separate real and imaginary planes.

    Planes have shape ``(..., frames, bins)``; leading axes are batch axes.
    """

    real: Array
    imag: Array

    def __post_init__(self):
        if tuple(self.real.shape) != tuple(self.imag.shape):
            raise StftError(f"real/imag shape mismatch: {tuple(self.real.shape)} vs {tuple(self.imag.shape)}")

    @property
    def shape(self) -> tuple:
        return tuple(self.real.shape)

    @property
    def magnitude(self) -> Array:
        if isinstance(self.real, torch.Tensor):
            return torch.sqrt(self.real**2 + self.imag**2)
        return np.sqrt(self.real**2 + self.imag**2)

    def scaled(self, k: float) -> "Spectrogram":
        return Spectrogram(self.real * k, self.imag * k)


_WINDOWS = {
    "hann": lambda n, dtype: torch.hann_window(n, periodic=True, dtype=dtype),
    "hamming": lambda n, dtype: torch.hamming_window(n, periodic=True, dtype=dtype),
    "rect": lambda n, dtype: torch.ones(n, dtype=dtype),
}


def window_tensor(cfg: StftConfig, dtype=torch.float64) -> torch.Tensor:
    return _WINDOWS[cfg.window](cfg.n_fft, dtype)


def check_overlap_add(cfg: StftConfig) -> None:
    """Raise if the squared analysis window does not overlap-add to a positive envelope.

    A strictly positive envelope is what makes windowed overlap-add inversion exact.
    """
    w2 = window_tensor(cfg).numpy() ** 2
    envelope = np.zeros(cfg.hop)
    for start in range(0, cfg.n_fft, cfg.hop):
        seg = w2[start:start + cfg.hop]
        envelope[: len(seg)] += seg
    if envelope.min() <= 1e-11 * max(envelope.max(), 1e-300):
        raise StftError(f"window {cfg.window!r} with n_fft={cfg.n_fft}, hop={cfg.hop} violates overlap-add")


def _as_tensor(x: Array) -> tuple[torch.Tensor, bool]:
    if isinstance(x, torch.Tensor):
        return x, True
    arr = np.asarray(x, dtype=np.float64)
    if not arr.flags.writeable:
        arr = arr.copy()
    return torch.from_numpy(arr), False


def stft(x: Array, cfg: StftConfig = StftConfig()) -> Spectrogram:
    """Short-time Fourier transform of ``x`` with shape ``(..., samples)``."""
    xt, is_tensor = _as_tensor(x)
    if xt.shape[-1] == 0:
        raise StftError("empty input")
    if not torch.isfinite(xt).all():
        raise StftError("non-finite values in input")
    if not cfg.center and xt.shape[-1] < cfg.n_fft:
        raise StftError(f"input of {xt.shape[-1]} samples is shorter than n_fft={cfg.n_fft}")
    lead = xt.shape[:-1]
    flat = xt.reshape(-1, xt.shape[-1])
    spec = torch.stft(
        flat,
        n_fft=cfg.n_fft,
        hop_length=cfg.hop,
        win_length=cfg.n_fft,
        window=window_tensor(cfg, flat.dtype).to(flat.device),
        center=cfg.center,
        pad_mode="reflect",
        return_complex=True,
    )
    # torch returns (batch, bins, frames)
    spec = spec.transpose(-1, -2).reshape(*lead, -1, cfg.bins)
    real, imag = spec.real, spec.imag
    if not is_tensor:
        real, imag = real.numpy().copy(), imag.numpy().copy()
    return Spectrogram(real, imag)


def istft(S: Spectrogram, cfg: StftConfig = StftConfig(), length: int | None = None) -> Array:
    """Invert :func:`stft` by windowed overlap-add, trimming to ``length`` samples."""
    real, is_tensor = _as_tensor(S.real)
    imag, _ = _as_tensor(S.imag)
    if real.shape[-1] != cfg.bins:
        raise StftError(f"spectrogram has {real.shape[-1]} bins, config expects {cfg.bins}")
    frames = real.shape[-2]
    if length is not None and cfg.frames(length) != frames:
        raise StftError(f"{frames} frames is inconsistent with length {length} (expected {cfg.frames(length)})")
    lead = real.shape[:-2]
    spec = torch.complex(real, imag).reshape(-1, frames, cfg.bins).transpose(-1, -2)
    wave = torch.istft(
        spec,
        n_fft=cfg.n_fft,
        hop_length=cfg.hop,
        win_length=cfg.n_fft,
        window=window_tensor(cfg, real.dtype).to(real.device),
        center=cfg.center,
        length=length,
    )
    wave = wave.reshape(*lead, wave.shape[-1])
    return wave if is_tensor else wave.numpy().copy()


def rms(x: Array) -> float:
    if isinstance(x, torch.Tensor):
        return float(torch.sqrt(torch.mean(x.double() ** 2)))
    x = np.asarray(x, dtype=np.float64)
    return float(np.sqrt(np.mean(x**2)))


def match_db_scale(d: Array, n: Array, cfg: MixConfig = MixConfig()) -> float:
    """Gain for ``n`` that puts its RMS ``cfg.delta_db`` dB relative to ``d``."""
    rd, rn = rms(d), rms(n)
    if rd < cfg.rms_floor or rn < cfg.rms_floor:
        which = "target" if rd < cfg.rms_floor else "non-target"
        raise SilentSignal(f"{which} RMS below floor {cfg.rms_floor:g} (target={rd:.3g}, non-target={rn:.3g})")
    return 10.0 ** (cfg.delta_db / 20.0) * rd / rn


def level_db(x: Array, reference: Array) -> float:
    """Level of ``x`` relative to ``reference`` in dB (RMS ratio)."""
    return 20.0 * np.log10(rms(x) / rms(reference))


class Mixture(NamedTuple):
    wave: np.ndarray
    spec: Spectrogram
    exceeds_full_scale: bool


def mix(d: np.ndarray, n: np.ndarray, s: float, cfg: StftConfig = StftConfig()) -> Mixture:
    """Weighted sum ``d + s * n`` and its STFT. No clipping or renormalization."""
    d = np.asarray(d, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    if d.shape != n.shape:
        raise ValueError(f"length mismatch: {d.shape} vs {n.shape}")
    m = d + s * n
    return Mixture(m, stft(m, cfg), bool(np.max(np.abs(m), initial=0.0) > 1.0))


def make_input_features(S: Spectrogram) -> Array:
    """Stack real, imaginary and magnitude planes on a new axis ``-3``."""
    planes = (S.real, S.imag, S.magnitude)
    if isinstance(S.real, torch.Tensor):
        return torch.stack(planes, dim=-3)
    return np.stack(planes, axis=-3)
