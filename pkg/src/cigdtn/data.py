"""Paired clean/noisy datasets: directory layout, manifest, synthetic generation."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import AudioClip, mix_at_snr
from .wavio import WavError, wav_read, wav_write

log = logging.getLogger(__name__)

MANIFEST = "manifest.tsv"
NOISE_KINDS = ("white", "pink", "babble")


@dataclass
class Pair:
    name: str
    clean: AudioClip
    noisy: AudioClip


@dataclass
class ManifestEntry:
    name: str
    snr_db: float
    noise: str
    freqs: tuple[float, ...]


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry]
    sample_rate: int = 16000
    split: str = "train"

    def clean_path(self, name: str) -> Path:
        return self.root / "clean" / name

    def noisy_path(self, name: str) -> Path:
        return self.root / "noisy" / name

    def write(self) -> None:
        lines = [f"# split={self.split}\tsample_rate={self.sample_rate}", "name\tsnr_db\tnoise\tfreqs_hz"]
        for e in self.entries:
            freqs = ",".join(f"{f:.6f}" for f in e.freqs)
            lines.append(f"{e.name}\t{e.snr_db:g}\t{e.noise}\t{freqs}")
        _atomic_write_text(self.root / MANIFEST, "\n".join(lines) + "\n")

    @classmethod
    def read(cls, root: str | os.PathLike) -> "DatasetManifest":
        root = Path(root)
        text = (root / MANIFEST).read_text(encoding="utf-8").splitlines()
        meta = dict(kv.split("=", 1) for kv in text[0].lstrip("# ").split("\t"))
        entries = []
        for line in text[2:]:
            if not line.strip():
                continue
            name, snr, noise, freqs = line.split("\t")
            entries.append(ManifestEntry(name, float(snr), noise, tuple(float(f) for f in freqs.split(",") if f)))
        return cls(root, entries, int(meta.get("sample_rate", 16000)), meta.get("split", "train"))


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def load_pairs(root: str | os.PathLike, sample_rate: int | None = None) -> tuple[list[Pair], int]:
    """Read every ``clean/<name>`` + ``noisy/<name>`` pair under ``root``.

    Unreadable or mismatched pairs are skipped with a warning; the count of
    skipped pairs is returned alongside the pairs (sorted by name).
    """
    root = Path(root)
    clean_dir, noisy_dir = root / "clean", root / "noisy"
    if not clean_dir.is_dir() or not noisy_dir.is_dir():
        raise FileNotFoundError(f"{root} must contain clean/ and noisy/ directories")
    pairs, skipped = [], 0
    for path in sorted(clean_dir.glob("*.wav")):
        try:
            clean = wav_read(path)
            noisy = wav_read(noisy_dir / path.name)
        except (OSError, WavError) as e:
            log.warning("skipping %s: %s", path.name, e)
            skipped += 1
            continue
        rate = sample_rate or clean.sample_rate
        if clean.sample_rate != rate or noisy.sample_rate != rate:
            log.warning("skipping %s: sample rate %d/%d, expected %d", path.name, clean.sample_rate, noisy.sample_rate, rate)
            skipped += 1
            continue
        n = min(len(clean), len(noisy))
        pairs.append(Pair(path.name, AudioClip(clean.samples[:n], rate), AudioClip(noisy.samples[:n], rate)))
    return pairs, skipped


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------


def _clean_signal(rng: np.random.Generator, n: int, sr: int) -> tuple[np.ndarray, list[float]]:
    t = np.arange(n) / sr
    x = np.zeros(n)
    freqs = []
    for _ in range(rng.integers(2, 5)):
        f = float(rng.uniform(150.0, 2000.0))
        amp = rng.uniform(0.3, 1.0)
        # slow amplitude envelope so content changes across frames
        env = 1.0 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.2, 1.5) * t + rng.uniform(0, 2 * np.pi))
        x += amp * env * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        freqs.append(f)
    f0, f1 = rng.uniform(200.0, 800.0), rng.uniform(800.0, 2000.0)
    phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) * t**2 / t[-1])
    x += 0.4 * np.sin(phase)
    return x, freqs


def _noise(rng: np.random.Generator, kind: str, n: int, sr: int) -> np.ndarray:
    if kind == "white":
        return rng.standard_normal(n)
    if kind == "pink":
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.arange(spec.shape[0], dtype=float)
        f[0] = 1.0
        return np.fft.irfft(spec / np.sqrt(f), n=n)
    # babble-like: several amplitude-modulated harmonic "voices" over a noise floor
    t = np.arange(n) / sr
    out = 0.3 * rng.standard_normal(n)
    for _ in range(6):
        f0 = rng.uniform(90.0, 260.0)
        am = 0.5 * (1 + np.sin(2 * np.pi * rng.uniform(2.0, 6.0) * t + rng.uniform(0, 2 * np.pi)))
        voice = sum(np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi)) / h for h in range(1, 12))
        out += am * voice
    return out


def synth_dataset(
    out_dir: str | os.PathLike,
    n_clips: int,
    seed: int = 0,
    length: int = 65536,
    sample_rate: int = 16000,
    snrs=(0.0, 5.0, 10.0),
    split: str = "train",
) -> DatasetManifest:
    """Write ``n_clips`` clean/noisy pairs and a manifest under ``out_dir``.

    Clean clips are sinusoid mixtures plus a linear chirp; noise is white,
    pink or babble-like, mixed at an SNR drawn from ``snrs``. Both signals
    are scaled together to a 0.9 peak, which leaves the SNR untouched.
    """
    root = Path(out_dir)
    (root / "clean").mkdir(parents=True, exist_ok=True)
    (root / "noisy").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 0xDA7A])
    entries = []
    for i in range(n_clips):
        x, freqs = _clean_signal(rng, length, sample_rate)
        kind = NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
        snr = float(snrs[int(rng.integers(len(snrs)))])
        clean = AudioClip(x, sample_rate)
        noisy = mix_at_snr(clean, AudioClip(_noise(rng, kind, length, sample_rate), sample_rate), snr)
        peak = max(np.abs(noisy.samples).max(), np.abs(x).max())
        g = 0.9 / peak
        name = f"clip{i:04d}.wav"
        wav_write(root / "clean" / name, AudioClip(x * g, sample_rate))
        wav_write(root / "noisy" / name, AudioClip(noisy.samples * g, sample_rate))
        entries.append(ManifestEntry(name, snr, kind, tuple(freqs)))
    manifest = DatasetManifest(root, entries, sample_rate, split)
    manifest.write()
    return manifest
