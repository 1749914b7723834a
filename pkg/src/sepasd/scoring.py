"""Pooled-embedding extraction, Gaussian fitting and Mahalanobis anomaly scores."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch

from . import dsp
from .dataset import Clip
from .errors import ClipTooShort, NonFiniteValues
from .model import SeparatorNet, pooled_embedding

AGGREGATIONS = ("mean", "max")


class EmbeddingRow(NamedTuple):
    clip_id: str
    segment: int
    vector: np.ndarray


@dataclass
class EmbeddingSet:
    machine_type: str
    dim: int
    rows: list[EmbeddingRow] = field(default_factory=list)
    source: str = "train"

    def __post_init__(self):
        keys = set()
        for r in self.rows:
            if r.vector.shape != (self.dim,):
                raise ValueError(f"row {r.clip_id}/{r.segment} has shape {r.vector.shape}, expected ({self.dim},)")
            keys.add((r.clip_id, r.segment))
        if len(keys) != len(self.rows):
            raise ValueError("(clip_id, segment) pairs must be unique")

    @property
    def matrix(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, self.dim))
        return np.stack([r.vector for r in self.rows])

    def by_clip(self) -> dict[str, list[EmbeddingRow]]:
        grouped: dict[str, list[EmbeddingRow]] = {}
        for r in self.rows:
            grouped.setdefault(r.clip_id, []).append(r)
        return grouped


def segment_waveform(x: np.ndarray, seconds: float = 2.0, sample_rate: int = dsp.SAMPLE_RATE) -> np.ndarray:
    """Consecutive non-overlapping windows; a shorter tail is dropped."""
    width = int(round(seconds * sample_rate))
    count = len(x) // width
    if count == 0:
        raise ClipTooShort(f"clip of {len(x)} samples is shorter than one {seconds} s segment")
    return np.asarray(x[: count * width]).reshape(count, width)


@torch.no_grad()
def clip_embeddings(net: SeparatorNet, x: np.ndarray, segment_seconds: float = 2.0) -> np.ndarray:
    segments = segment_waveform(x, segment_seconds)
    features = dsp.make_input_features(dsp.stft(segments, net.stft_cfg))
    dtype = next(net.parameters()).dtype
    _, taps = net(torch.as_tensor(features, dtype=dtype))
    emb = pooled_embedding(taps).double().numpy()
    if not np.isfinite(emb).all():
        raise NonFiniteValues("non-finite embedding")
    return emb


def extract_embeddings(net: SeparatorNet, clips: Sequence[Clip], segment_seconds: float = 2.0,
                       source: str = "train") -> EmbeddingSet:
    """One pooled embedding per 2 s segment of every clip, no mixing applied."""
    net.eval()
    rows: list[EmbeddingRow] = []
    machine = clips[0].machine_type if clips else ""
    seen: dict[str, int] = {}
    for clip in clips:
        emb = clip_embeddings(net, clip.samples, segment_seconds)
        # a clip listed twice keeps unique keys by continuing its segment numbering
        offset = seen.get(clip.id, 0)
        rows.extend(EmbeddingRow(clip.id, offset + i, v) for i, v in enumerate(emb))
        seen[clip.id] = offset + len(emb)
    return EmbeddingSet(machine, net.config.embedding_dim, rows, source)


@dataclass(frozen=True)
class GaussianModel:
    mean: np.ndarray
    covariance: np.ndarray
    ridge: float
    precision: np.ndarray
    n_fit: int

    @property
    def dim(self) -> int:
        return len(self.mean)

    def summary(self) -> dict:
        reg = self.covariance + self.ridge * np.eye(self.dim)
        return {
            "dim": self.dim,
            "n_fit": self.n_fit,
            "mean_norm": float(np.linalg.norm(self.mean)),
            "ridge": self.ridge,
            "covariance_condition": float(np.linalg.cond(self.covariance)),
            "regularized_condition": float(np.linalg.cond(reg)),
        }


def fit_gaussian(data: EmbeddingSet | np.ndarray, ridge_rel: float = 1e-6) -> GaussianModel:
    """Sample mean and maximum-likelihood covariance (divisor N) with a trace-scaled ridge."""
    X = data.matrix if isinstance(data, EmbeddingSet) else np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError(f"need at least 2 fitting vectors, got {X.shape[0] if X.ndim == 2 else 0}")
    if not np.isfinite(X).all():
        raise NonFiniteValues("non-finite fitting vectors")
    if ridge_rel < 0:
        raise ValueError("ridge_rel must be >= 0")
    n, dim = X.shape
    mu = X.mean(axis=0)
    centered = X - mu
    cov = centered.T @ centered / n
    cov = (cov + cov.T) / 2
    ridge = ridge_rel * np.trace(cov) / dim
    if ridge == 0 and np.linalg.matrix_rank(cov) < dim:
        # degenerate fit (e.g. identical vectors); keep distances finite
        ridge = max(ridge_rel, np.finfo(float).eps)
    precision = np.linalg.inv(cov + ridge * np.eye(dim))
    precision = (precision + precision.T) / 2
    return GaussianModel(mu, cov, float(ridge), precision, n)


def mahalanobis(model: GaussianModel, x: np.ndarray) -> np.ndarray | float:
    """Distance of one vector (or each row of a matrix) from the fitted mean."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dim:
        raise ValueError(f"dimension mismatch: got {x.shape[-1]}, model has {model.dim}")
    diff = x - model.mean
    q = np.einsum("...i,ij,...j->...", diff, model.precision, diff)
    d = np.sqrt(np.maximum(q, 0.0))
    return float(d) if d.ndim == 0 else d


def score_clip(model: GaussianModel, rows: Sequence[EmbeddingRow | np.ndarray], aggregation: str = "mean") -> float:
    if len(rows) == 0:
        raise ValueError("cannot score a clip with no segments")
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
    vecs = np.stack([r.vector if isinstance(r, EmbeddingRow) else np.asarray(r) for r in rows])
    d = mahalanobis(model, vecs)
    return float(np.max(d)) if aggregation == "max" else float(np.mean(d))


def score_set(model: GaussianModel, emb: EmbeddingSet, aggregation: str = "mean") -> dict[str, float]:
    """Clip-level scores keyed by clip id, in first-appearance order."""
    return {cid: score_clip(model, rows, aggregation) for cid, rows in emb.by_clip().items()}


def write_embeddings(emb: EmbeddingSet, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["clip_id", "segment"] + [f"e{i}" for i in range(emb.dim)])
        for r in emb.rows:
            writer.writerow([r.clip_id, r.segment] + [repr(float(v)) for v in r.vector])
    return path


def read_embeddings(path: str | os.PathLike, machine_type: str = "", source: str = "train") -> EmbeddingSet:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 2
        rows = [EmbeddingRow(r[0], int(r[1]), np.array([float(v) for v in r[2:]])) for r in reader]
    return EmbeddingSet(machine_type, dim, rows, source)


def write_scores(rows: Sequence[tuple[str, str, str, str, float]], path: str | os.PathLike) -> Path:
    """Rows of ``(clip_id, machine_type, domain, label, score)``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["clip_id", "machine_type", "domain", "label", "score"])
        for cid, machine, domain, label, score in rows:
            writer.writerow([cid, machine, domain, label, repr(float(score))])
    return path
