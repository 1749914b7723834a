"""Separation loss, training-pair construction for the three training modes, and the optimization loop."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch

from . import dsp
from .dataset import Clip, Manifest, random_trim, read_clips
from .dsp import MixConfig, Spectrogram, StftConfig
from .errors import Diverged, EmptyClassPool, NoNontargetClasses, NonFiniteValues
from .model import SeparatorNet

log = logging.getLogger(__name__)

TRAIN_MODES = ("proposed_nontarget_sep", "conventional_target_sep", "autoencoder")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.5
    beta: float = 6.0
    gamma: float = 1.0

    def __post_init__(self):
        w = (self.alpha, self.beta, self.gamma)
        if min(w) < 0 or max(w) == 0:
            raise ValueError(f"loss weights must be >= 0 and not all zero, got {w}")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "proposed_nontarget_sep"
    target_class: str = ""
    nontarget_classes: tuple[str, ...] = ()
    delta_db: float = -5.0
    epochs: int = 50
    batch_size: int = 8
    lr: float = 1e-3
    weight_decay: float = 1e-2
    step_size: int = 10
    lr_gamma: float = 0.5
    seed: int = 0
    crop_seconds: float = 2.0
    loss: LossWeights = field(default_factory=LossWeights)
    literal_abs: bool = True

    def __post_init__(self):
        object.__setattr__(self, "nontarget_classes", tuple(self.nontarget_classes))
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        if self.target_class and self.target_class in self.nontarget_classes:
            raise ValueError(f"target class {self.target_class!r} is also listed as non-target")
        if self.epochs < 0 or self.batch_size < 1 or self.step_size < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and step_size >= 1 required")

    @property
    def mixes(self) -> bool:
        return self.mode != "autoencoder"


def _t(x, like: torch.Tensor | None = None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if like is not None else torch.float64
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def separation_loss(y, Y: Spectrogram, target_wave, target_spec: Spectrogram,
                    w: LossWeights = LossWeights(), literal_abs: bool = True) -> torch.Tensor:
    """Weighted L1 waveform error plus squared errors of the real and imaginary planes.

    With ``literal_abs`` the planes are compared through their elementwise absolute
    values; otherwise the signed components are compared.
    """
    y = _t(y)
    yr, yi = _t(Y.real, y), _t(Y.imag, y)
    tw, tr, ti = _t(target_wave, y), _t(target_spec.real, y), _t(target_spec.imag, y)
    if y.shape != tw.shape or yr.shape != tr.shape or yi.shape != ti.shape:
        raise ValueError(f"shape mismatch: y {tuple(y.shape)} vs {tuple(tw.shape)}, "
                         f"Y {tuple(yr.shape)} vs {tuple(tr.shape)}")
    for name, t in (("y", y), ("Y.real", yr), ("Y.imag", yi), ("target", tw), ("target.real", tr), ("target.imag", ti)):
        if not torch.isfinite(t).all():
            raise NonFiniteValues(f"non-finite values in {name}")
    if literal_abs:
        d_re = tr.abs() - yr.abs()
        d_im = ti.abs() - yi.abs()
    else:
        d_re = tr - yr
        d_im = ti - yi
    return (w.alpha * (tw - y).abs().mean()
            + w.beta * (d_re**2).mean()
            + w.gamma * (d_im**2).mean())


class TrainingPair(NamedTuple):
    features: np.ndarray
    target_wave: np.ndarray
    target_spec: Spectrogram
    scale: float


def make_training_pair(mode: str, d: np.ndarray, n: np.ndarray | None, delta_db: float = -5.0,
                       stft_cfg: StftConfig = StftConfig(), mix_cfg: MixConfig = MixConfig()) -> TrainingPair:
    """Build (network input, target waveform, target spectrogram) for one training example."""
    if mode not in TRAIN_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    d = np.asarray(d, dtype=np.float64)
    if mode == "autoencoder":
        S = dsp.stft(d, stft_cfg)
        return TrainingPair(dsp.make_input_features(S), d, S, 0.0)
    if n is None:
        raise ValueError(f"mode {mode!r} needs a non-target signal")
    s = dsp.match_db_scale(d, n, MixConfig(delta_db=delta_db, rms_floor=mix_cfg.rms_floor))
    mixture = dsp.mix(d, n, s, stft_cfg)
    features = dsp.make_input_features(mixture.spec)
    if mode == "proposed_nontarget_sep":
        target = s * np.asarray(n, dtype=np.float64)
    else:
        target = d
    return TrainingPair(features, target, dsp.stft(target, stft_cfg), s)


class EpochRecord(NamedTuple):
    epoch: int
    mean_loss: float
    lr: float


def write_history(history: Sequence[EpochRecord], path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss", "lr"])
        for rec in history:
            writer.writerow([rec.epoch, repr(rec.mean_loss), repr(rec.lr)])
    return path


def read_history(path: str | os.PathLike) -> list[EpochRecord]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        return [EpochRecord(int(r["epoch"]), float(r["mean_loss"]), float(r["lr"])) for r in csv.DictReader(fh)]


def class_pools(manifest: Manifest, cfg: TrainConfig) -> tuple[list[Clip], dict[str, list[Clip]]]:
    """Load target-class and non-target train clips (source and target domains pooled)."""
    targets = read_clips(manifest.select(machine_type=cfg.target_class, split="train"))
    if not targets:
        raise EmptyClassPool(f"no train clips for target class {cfg.target_class!r}")
    others: dict[str, list[Clip]] = {}
    if cfg.mixes:
        if not cfg.nontarget_classes:
            raise NoNontargetClasses(f"NoNontargetClasses: mode {cfg.mode!r} needs at least one non-target class")
        for name in cfg.nontarget_classes:
            pool = read_clips(manifest.select(machine_type=name, split="train"))
            if not pool:
                raise EmptyClassPool(f"no train clips for non-target class {name!r}")
            others[name] = pool
    return targets, others


def make_optimizer(params, cfg: TrainConfig) -> tuple[torch.optim.Optimizer, torch.optim.lr_scheduler.StepLR]:
    """AdamW (decoupled weight decay) with a learning rate stepped down every ``step_size`` epochs."""
    optimizer = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    return optimizer, torch.optim.lr_scheduler.StepLR(optimizer, step_size=cfg.step_size, gamma=cfg.lr_gamma)


def fit(net: SeparatorNet, manifest: Manifest | None, cfg: TrainConfig, mix_cfg: MixConfig = MixConfig(),
        pools: tuple[list[Clip], dict[str, list[Clip]]] | None = None) -> tuple[SeparatorNet, list[EpochRecord]]:
    """Train ``net`` in place with AdamW and a step learning-rate schedule.

    Every epoch draws a fresh crop of every target-class clip; mixing modes pair each
    crop with a non-target crop chosen class-first, then clip, both uniformly.
    """
    targets, others = pools if pools is not None else class_pools(manifest, cfg)
    if cfg.mixes and not others:
        raise NoNontargetClasses(f"NoNontargetClasses: mode {cfg.mode!r} needs at least one non-target class")
    stft_cfg = net.stft_cfg
    crop_len = int(round(cfg.crop_seconds * dsp.SAMPLE_RATE))
    dtype = next(net.parameters()).dtype
    rng = np.random.default_rng(cfg.seed)
    other_names = sorted(others)

    optimizer, scheduler = make_optimizer(net.parameters(), cfg)
    history: list[EpochRecord] = []
    net.train()
    for epoch in range(1, cfg.epochs + 1):
        lr = optimizer.param_groups[0]["lr"]
        order = rng.permutation(len(targets))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            pairs = []
            for idx in order[start:start + cfg.batch_size]:
                d = random_trim(targets[idx], cfg.crop_seconds, rng)
                n = None
                if cfg.mixes:
                    pool = others[other_names[rng.integers(len(other_names))]]
                    n = random_trim(pool[rng.integers(len(pool))], cfg.crop_seconds, rng)
                pairs.append(make_training_pair(cfg.mode, d, n, cfg.delta_db, stft_cfg, mix_cfg))
            features = torch.as_tensor(np.stack([p.features for p in pairs]), dtype=dtype)
            target_wave = torch.as_tensor(np.stack([p.target_wave for p in pairs]), dtype=dtype)
            target_spec = Spectrogram(
                torch.as_tensor(np.stack([p.target_spec.real for p in pairs]), dtype=dtype),
                torch.as_tensor(np.stack([p.target_spec.imag for p in pairs]), dtype=dtype),
            )
            Y, _ = net(features)
            y = dsp.istft(Y, stft_cfg, crop_len)
            try:
                loss = separation_loss(y, Y, target_wave, target_spec, cfg.loss, cfg.literal_abs)
            except NonFiniteValues as exc:
                raise Diverged(epoch) from exc
            if not torch.isfinite(loss):
                raise Diverged(epoch)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(pairs)
            count += len(pairs)
        mean_loss = total / count
        history.append(EpochRecord(epoch, mean_loss, lr))
        log.info("epoch %d/%d  loss %.6g  lr %.3g", epoch, cfg.epochs, mean_loss, lr)
        scheduler.step()
    net.eval()
    return net, history
