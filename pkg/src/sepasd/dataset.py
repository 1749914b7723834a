"""Clip manifests, WAV ingestion, random cropping and a synthetic machine-sound generator."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .dsp import SAMPLE_RATE
from .errors import (
    AnomalousInTrain,
    AudioError,
    ClipTooShort,
    DuplicateId,
    InvalidDomain,
    InvalidLabel,
    InvalidSplit,
    ManifestError,
    SampleRateMismatch,
)

MANIFEST_COLUMNS = ("id", "path", "machine_type", "domain", "split", "label")
DOMAINS = ("source", "target")
SPLITS = ("train", "test")
LABELS = ("normal", "anomalous", "unknown")
ANOMALY_KINDS = ("tone_shift", "band_noise", "amplitude_mod")
PCM16_FULL_SCALE = 32768.0


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: Path
    machine_type: str
    domain: str
    split: str
    label: str

    def validate(self, where: str = "") -> None:
        where = where or f"row id={self.id!r}"
        if not self.id:
            raise ManifestError(f"{where}: empty id")
        if not self.machine_type:
            raise ManifestError(f"{where}: empty machine_type")
        if self.domain not in DOMAINS:
            raise InvalidDomain(f"{where}: domain {self.domain!r} not in {DOMAINS}")
        if self.split not in SPLITS:
            raise InvalidSplit(f"{where}: split {self.split!r} not in {SPLITS}")
        if self.label not in LABELS:
            raise InvalidLabel(f"{where}: label {self.label!r} not in {LABELS}")
        if self.split == "train" and self.label == "anomalous":
            raise AnomalousInTrain(f"{where}: train clips must not be labeled anomalous")
        if self.split == "train" and self.label == "unknown":
            raise InvalidLabel(f"{where}: label 'unknown' is only allowed in the test split")


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]
    root: Path

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def machine_types(self) -> list[str]:
        seen: dict[str, None] = {}
        for e in self.entries:
            seen.setdefault(e.machine_type)
        return list(seen)

    def select(self, machine_type: str | None = None, split: str | None = None,
               domain: str | None = None, label: str | None = None) -> list[ManifestEntry]:
        return [
            e for e in self.entries
            if (machine_type is None or e.machine_type == machine_type)
            and (split is None or e.split == split)
            and (domain is None or e.domain == domain)
            and (label is None or e.label == label)
        ]


@dataclass(frozen=True, eq=False)
class Clip:
    id: str
    path: Path
    machine_type: str
    domain: str
    split: str
    label: str
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples.setflags(write=False)

    @property
    def seconds(self) -> float:
        return len(self.samples) / self.sample_rate


def load_manifest(path: str | os.PathLike, check_files: bool = True) -> Manifest:
    """Read and validate a manifest CSV. Relative paths resolve against the CSV's directory."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = path.resolve().parent
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_COLUMNS:
            raise ManifestError(f"{path}: header must be exactly {','.join(MANIFEST_COLUMNS)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            where = f"{path}:{lineno}"
            if len(row) != len(MANIFEST_COLUMNS):
                raise ManifestError(f"{where}: expected {len(MANIFEST_COLUMNS)} fields, got {len(row)}")
            rid, rpath, machine, domain, split, label = (v.strip() for v in row)
            entry = ManifestEntry(rid, (root / rpath).resolve(), machine, domain, split, label)
            entry.validate(where)
            if rid in seen:
                raise DuplicateId(f"{where}: duplicate id {rid!r}")
            seen.add(rid)
            if check_files and not entry.path.is_file():
                raise ManifestError(f"{where}: referenced file does not exist: {entry.path}")
            entries.append(entry)
    return Manifest(tuple(entries), root)


def write_manifest(manifest: Manifest, path: str | os.PathLike) -> Path:
    """Write ``manifest`` as CSV; paths under ``manifest.root`` are stored relative to the CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.resolve().parent
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for e in manifest.entries:
            p = Path(e.path)
            try:
                stored = p.resolve().relative_to(base).as_posix()
            except ValueError:
                stored = str(p)
            writer.writerow([e.id, stored, e.machine_type, e.domain, e.split, e.label])
    return path


def read_wav(path: str | os.PathLike, expected_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Decode a 16-bit PCM WAV to a mono float64 waveform in [-1, 1]."""
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise AudioError(f"cannot read {path}: {exc}") from exc
    if rate != expected_rate:
        raise SampleRateMismatch(rate)
    if data.dtype != np.int16:
        raise AudioError(f"{path}: expected 16-bit PCM, got {data.dtype}")
    x = data.astype(np.float64) / PCM16_FULL_SCALE
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise AudioError(f"{path}: empty audio")
    if not np.isfinite(x).all():
        raise AudioError(f"{path}: non-finite samples")
    return x


def write_wav(path: str | os.PathLike, x: np.ndarray, rate: int = SAMPLE_RATE) -> None:
    pcm = np.clip(np.round(np.asarray(x) * (PCM16_FULL_SCALE - 1)), -PCM16_FULL_SCALE, PCM16_FULL_SCALE - 1)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, rate, pcm.astype("<i2"))


def read_clip(entry: ManifestEntry) -> Clip:
    samples = read_wav(entry.path)
    return Clip(entry.id, entry.path, entry.machine_type, entry.domain, entry.split, entry.label, samples)


def read_clips(entries, workers: int = 1) -> list[Clip]:
    entries = list(entries)
    if workers <= 1:
        return [read_clip(e) for e in entries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(read_clip, entries))


def random_trim(clip: Clip | np.ndarray, seconds: float, rng: np.random.Generator,
                sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Contiguous window of ``seconds`` starting at a uniformly drawn offset."""
    x = clip.samples if isinstance(clip, Clip) else np.asarray(clip)
    width = int(round(seconds * sample_rate))
    if len(x) < width:
        raise ClipTooShort(f"clip has {len(x)} samples, need {width}")
    start = int(rng.integers(0, len(x) - width + 1))
    return np.array(x[start:start + width])


# --- synthetic machines -----------------------------------------------------

DEFAULT_MACHINES = ("bearing", "fan", "gearbox", "slider", "toycar", "toytrain")


@dataclass(frozen=True)
class SynthSpec:
    machine_types: tuple[str, ...] = DEFAULT_MACHINES
    clips_per_type: int = 40
    test_clips_per_type: int = 40
    clip_seconds: float = 4.0
    tones_per_machine: int = 4
    tone_band: tuple[float, float] = (150.0, 4000.0)
    noise_level: float = 0.02
    anomaly_kind: str = "band_noise"
    anomaly_strength: float = 0.5
    seed: int = 0
    tone_rms: float = 0.1
    target_train_fraction: float = 0.1
    domain_shift: float = 0.03

    def __post_init__(self):
        object.__setattr__(self, "machine_types", tuple(self.machine_types))
        object.__setattr__(self, "tone_band", tuple(float(b) for b in self.tone_band))
        lo, hi = self.tone_band
        if not 0 < lo < hi < SAMPLE_RATE / 2:
            raise ValueError(f"tone_band must lie within (0, {SAMPLE_RATE // 2}) Hz, got {self.tone_band}")
        if self.anomaly_strength <= 0:
            raise ValueError("anomaly_strength must be > 0")
        if self.clip_seconds < 2:
            raise ValueError("clip_seconds must be >= 2")
        if self.anomaly_kind not in ANOMALY_KINDS:
            raise ValueError(f"anomaly_kind must be one of {ANOMALY_KINDS}")
        if not self.machine_types or len(set(self.machine_types)) != len(self.machine_types):
            raise ValueError("machine_types must be non-empty and unique")
        if self.clips_per_type < 1 or self.test_clips_per_type < 0 or self.tones_per_machine < 1:
            raise ValueError("clip and tone counts must be positive")


@dataclass(frozen=True)
class MachineSignature:
    tone_freqs: np.ndarray
    tone_amps: np.ndarray
    noise_band: tuple[float, float]
    anomaly_band: tuple[float, float]
    am_rate: float


def _random_band(rng: np.random.Generator, lo: float = 100.0, hi: float = 7800.0) -> tuple[float, float]:
    center = float(np.exp(rng.uniform(np.log(lo * 2), np.log(hi / 1.5))))
    width = center * rng.uniform(0.3, 0.8)
    return max(lo, center - width / 2), min(hi, center + width / 2)


def machine_signature(spec: SynthSpec, machine_index: int) -> MachineSignature:
    rng = np.random.default_rng([spec.seed, 0, machine_index])
    lo, hi = spec.tone_band
    freqs = np.sort(rng.uniform(lo, hi, size=spec.tones_per_machine))
    amps = rng.uniform(0.3, 1.0, size=spec.tones_per_machine)
    return MachineSignature(freqs, amps / np.sqrt(np.sum(amps**2)), _random_band(rng),
                            _random_band(rng), float(rng.uniform(2.0, 8.0)))


def _band_noise(rng: np.random.Generator, n: int, band: tuple[float, float], level: float) -> np.ndarray:
    sos = signal.butter(4, band, btype="bandpass", fs=SAMPLE_RATE, output="sos")
    x = signal.sosfilt(sos, rng.standard_normal(n + 2048))[2048:]
    return x * (level / np.sqrt(np.mean(x**2)))


def render_clip(spec: SynthSpec, sig: MachineSignature, rng: np.random.Generator,
                domain: str, anomalous: bool) -> np.ndarray:
    n = int(round(spec.clip_seconds * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    freqs = sig.tone_freqs * (1.0 + rng.normal(0.0, 0.002, size=sig.tone_freqs.shape))
    if domain == "target":
        freqs = freqs * (1.0 + spec.domain_shift)
    if anomalous and spec.anomaly_kind == "tone_shift":
        freqs = freqs * (1.0 + spec.anomaly_strength)
    amps = sig.tone_amps * (1.0 + rng.normal(0.0, 0.05, size=sig.tone_amps.shape))
    phases = rng.uniform(0.0, 2 * np.pi, size=freqs.shape)
    tones = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(axis=0)
    tones *= spec.tone_rms / np.sqrt(np.mean(tones**2))
    if anomalous and spec.anomaly_kind == "amplitude_mod":
        tones = tones * (1.0 + spec.anomaly_strength * np.sin(2 * np.pi * sig.am_rate * t + rng.uniform(0, 2 * np.pi)))
    x = tones + _band_noise(rng, n, sig.noise_band, spec.noise_level)
    if anomalous and spec.anomaly_kind == "band_noise":
        x = x + _band_noise(rng, n, sig.anomaly_band, spec.anomaly_strength * spec.tone_rms)
    return x


def synth_generate(spec: SynthSpec, out_dir: str | os.PathLike) -> Manifest:
    """Write a reproducible synthetic dataset and its manifest under ``out_dir``."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory not writable: {out_dir} ({exc})") from exc

    entries: list[ManifestEntry] = []
    for m_idx, machine in enumerate(spec.machine_types):
        sig = machine_signature(spec, m_idx)
        n_target = int(round(spec.target_train_fraction * spec.clips_per_type))
        plan = [("train", "source" if i < spec.clips_per_type - n_target else "target", "normal")
                for i in range(spec.clips_per_type)]
        for i in range(spec.test_clips_per_type):
            label = "normal" if i % 2 == 0 else "anomalous"
            domain = "source" if (i // 2) % 2 == 0 else "target"
            plan.append(("test", domain, label))
        for c_idx, (split, domain, label) in enumerate(plan):
            rng = np.random.default_rng([spec.seed, 1, m_idx, c_idx])
            x = render_clip(spec, sig, rng, domain, label == "anomalous")
            cid = f"{machine}_{split}_{domain}_{label}_{c_idx:04d}"
            path = out_dir / machine / split / f"{cid}.wav"
            write_wav(path, x)
            entries.append(ManifestEntry(cid, path.resolve(), machine, domain, split, label))
    manifest = Manifest(tuple(entries), out_dir.resolve())
    write_manifest(manifest, out_dir / "manifest.csv")
    return manifest
