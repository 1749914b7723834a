import csv
from pathlib import Path

import numpy as np
import pytest
from scipy import stats
from scipy.io import wavfile

from sepasd import dataset
from sepasd.dataset import (
    Clip,
    Manifest,
    ManifestEntry,
    SynthSpec,
    load_manifest,
    machine_signature,
    random_trim,
    read_clip,
    read_wav,
    synth_generate,
    write_manifest,
)
from sepasd.errors import (
    AnomalousInTrain,
    ClipTooShort,
    DuplicateId,
    InvalidDomain,
    InvalidLabel,
    ManifestError,
    SampleRateMismatch,
)

HEADER = "id,path,machine_type,domain,split,label\n"


def _wav(path, data, rate=16000):
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, rate, np.asarray(data, dtype=np.int16))
    return path


def _manifest(tmp_path, rows):
    for r in rows:
        _wav(tmp_path / r[1], np.zeros(32000))
    p = tmp_path / "m.csv"
    p.write_text(HEADER + "".join(",".join(r) + "\n" for r in rows))
    return p


VALID_ROWS = [
    ("a", "fan/a.wav", "fan", "source", "train", "normal"),
    ("b", "fan/b.wav", "fan", "target", "train", "normal"),
    ("c", "fan/c.wav", "fan", "source", "test", "anomalous"),
    ("d", "pump/d.wav", "pump", "target", "test", "unknown"),
]


class TestManifest:
    def test_valid_rows_preserve_order(self, tmp_path):
        m = load_manifest(_manifest(tmp_path, VALID_ROWS))
        assert [e.id for e in m] == ["a", "b", "c", "d"]
        assert m.entries[0].path == (tmp_path / "fan/a.wav").resolve()
        assert m.machine_types == ["fan", "pump"]

    def test_invalid_domain_names_row(self, tmp_path):
        rows = VALID_ROWS[:1] + [("x", "fan/x.wav", "fan", "src", "train", "normal")]
        with pytest.raises(InvalidDomain, match=r"m\.csv:3"):
            load_manifest(_manifest(tmp_path, rows))

    def test_anomalous_in_train(self, tmp_path):
        with pytest.raises(AnomalousInTrain):
            load_manifest(_manifest(tmp_path, [("x", "x.wav", "fan", "source", "train", "anomalous")]))

    def test_unknown_label_in_train(self, tmp_path):
        with pytest.raises(InvalidLabel):
            load_manifest(_manifest(tmp_path, [("x", "x.wav", "fan", "source", "train", "unknown")]))

    def test_duplicate_id(self, tmp_path):
        with pytest.raises(DuplicateId):
            load_manifest(_manifest(tmp_path, [VALID_ROWS[0], VALID_ROWS[0]]))

    def test_bad_header_and_missing(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("id,path\n")
        with pytest.raises(ManifestError):
            load_manifest(p)
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path / "nope.csv")

    def test_malformed_row(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text(HEADER + "a,b,c\n")
        with pytest.raises(ManifestError, match="expected 6 fields"):
            load_manifest(p, check_files=False)

    def test_missing_audio_file(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text(HEADER + ",".join(VALID_ROWS[0]) + "\n")
        with pytest.raises(ManifestError, match="does not exist"):
            load_manifest(p)

    def test_round_trip(self, tmp_path):
        m = load_manifest(_manifest(tmp_path, VALID_ROWS))
        for out, first in ((tmp_path / "m2.csv", "fan/a.wav"),
                           (tmp_path / "copy" / "m3.csv", str((tmp_path / "fan/a.wav").resolve()))):
            write_manifest(m, out)
            assert load_manifest(out).entries == m.entries
            with out.open() as fh:
                assert next(csv.DictReader(fh))["path"] == first

    def test_select(self, tmp_path):
        m = load_manifest(_manifest(tmp_path, VALID_ROWS))
        assert [e.id for e in m.select(machine_type="fan", split="train")] == ["a", "b"]
        assert [e.id for e in m.select(label="unknown")] == ["d"]


class TestAudio:
    def test_mono_clip(self, tmp_path):
        p = _wav(tmp_path / "a.wav", np.arange(32000) % 1000)
        entry = ManifestEntry("a", p, "fan", "source", "train", "normal")
        clip = read_clip(entry)
        assert isinstance(clip, Clip) and len(clip.samples) == 32000
        assert clip.samples[999] == pytest.approx(999 / 32768)
        with pytest.raises(ValueError):
            clip.samples[0] = 1.0

    def test_wrong_rate(self, tmp_path):
        p = _wav(tmp_path / "a.wav", np.zeros(100), rate=44100)
        with pytest.raises(SampleRateMismatch, match=r"SampleRateMismatch\(44100\)"):
            read_wav(p)

    def test_stereo_antiphase_is_silent(self, tmp_path):
        x = np.random.default_rng(0).integers(-20000, 20000, 4000)
        p = _wav(tmp_path / "s.wav", np.stack([x, -x], axis=1))
        np.testing.assert_array_equal(read_wav(p), np.zeros(4000))

    def test_empty_and_unreadable(self, tmp_path):
        p = _wav(tmp_path / "e.wav", np.zeros(0))
        with pytest.raises(dataset.AudioError):
            read_wav(p)
        bad = tmp_path / "bad.wav"
        bad.write_bytes(b"not a wav")
        with pytest.raises(dataset.AudioError):
            read_wav(bad)

    def test_float_wav_rejected(self, tmp_path):
        p = tmp_path / "f.wav"
        wavfile.write(p, 16000, np.zeros(100, dtype=np.float32))
        with pytest.raises(dataset.AudioError, match="16-bit"):
            read_wav(p)


class TestRandomTrim:
    def test_exact_length_returns_clip(self, rng):
        x = rng.standard_normal(32000)
        np.testing.assert_array_equal(random_trim(x, 2.0, rng), x)

    def test_deterministic(self):
        x = np.arange(64000, dtype=float)
        a = random_trim(x, 2.0, np.random.default_rng(5))
        b = random_trim(x, 2.0, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)
        assert len(a) == 32000

    def test_offsets_uniform(self):
        x = np.arange(64000, dtype=float)
        r = np.random.default_rng(11)
        offsets = np.array([random_trim(x, 2.0, r)[0] for _ in range(10000)])
        assert offsets.min() >= 0 and offsets.max() <= 32000
        counts, _ = np.histogram(offsets, bins=16, range=(0, 32001))
        assert stats.chisquare(counts).pvalue > 0.01

    def test_too_short(self, rng):
        with pytest.raises(ClipTooShort):
            random_trim(np.zeros(100), 2.0, rng)


class TestSynth:
    def test_counts_and_labels(self, tmp_path):
        spec = SynthSpec(machine_types=("a", "b", "c"), clips_per_type=20, test_clips_per_type=4, seed=1,
                         clip_seconds=2.0)
        m = synth_generate(spec, tmp_path)
        assert len(m.select(split="train")) == 60
        assert len(m.select(split="test")) == 12
        assert all(e.label == "normal" for e in m.select(split="train"))
        for machine in spec.machine_types:
            test = m.select(machine_type=machine, split="test")
            assert sum(e.label == "anomalous" for e in test) == len(test) // 2
        assert load_manifest(tmp_path / "manifest.csv").entries == m.entries

    def test_byte_identical(self, tmp_path):
        spec = SynthSpec(machine_types=("a", "b"), clips_per_type=3, test_clips_per_type=2, seed=7,
                         clip_seconds=2.0)
        synth_generate(spec, tmp_path / "one")
        synth_generate(spec, tmp_path / "two")
        files = sorted(p.relative_to(tmp_path / "one") for p in (tmp_path / "one").rglob("*") if p.is_file())
        assert files
        for f in files:
            assert (tmp_path / "one" / f).read_bytes() == (tmp_path / "two" / f).read_bytes()

    def test_tone_shift_moves_centroid(self, tmp_path):
        spec = SynthSpec(machine_types=("m",), clips_per_type=1, test_clips_per_type=40, clip_seconds=2.0,
                         anomaly_kind="tone_shift", anomaly_strength=0.1, seed=2)
        m = synth_generate(spec, tmp_path)
        freqs = np.fft.rfftfreq(32000, 1 / 16000)

        def centroid(path):
            p = np.abs(np.fft.rfft(read_wav(path))) ** 2
            return np.sum(freqs * p) / np.sum(p)

        normal = [centroid(e.path) for e in m.select(split="test", label="normal")]
        anom = [centroid(e.path) for e in m.select(split="test", label="anomalous")]
        se = np.sqrt(np.var(normal, ddof=1) / len(normal) + np.var(anom, ddof=1) / len(anom))
        assert abs(np.mean(anom) - np.mean(normal)) > 3 * se

    def test_signatures_differ_across_seeds(self):
        tone_sets = {tuple(np.round(machine_signature(SynthSpec(seed=s), 0).tone_freqs, 6)) for s in range(120)}
        assert len(tone_sets) == 120

    @pytest.mark.parametrize("kwargs", [
        {"tone_band": (0.0, 100.0)},
        {"tone_band": (100.0, 9000.0)},
        {"anomaly_strength": 0.0},
        {"clip_seconds": 1.5},
        {"anomaly_kind": "rattle"},
    ])
    def test_invalid_spec(self, kwargs):
        with pytest.raises(ValueError):
            SynthSpec(**kwargs)

    def test_unwritable_out_dir(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match=str(blocker)):
            synth_generate(SynthSpec(clips_per_type=1, test_clips_per_type=0, clip_seconds=2.0), blocker / "sub")
