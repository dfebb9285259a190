"""Audio <-> complex spectrogram conversion and the fixed-size image resize.

Frames are not centred: frame ``t`` covers samples ``t*hop .. t*hop+window-1``
and the clip is zero-padded at the end so every sample lies under at least
one frame. Inversion is weighted overlap-add normalised by the accumulated
squared window, so any hop up to the window length reconstructs exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .numerics import Tensor, matmul, primitive

HOP_DIVISOR = 256
MODEL_SIDE = 256


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 2:
            # (frames, channels) -> mono
            s = s.mean(axis=1)
        if s.ndim != 1:
            raise ValueError(f"audio must be 1-d (or frames x channels), got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("audio contains non-finite samples")
        self.samples = s

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class StftConfig:
    window_length: int = 500
    fft_size: int = 512
    hop: int | None = None  # None: derive per clip with hop_for

    def __post_init__(self):
        if self.window_length < 1 or self.fft_size < self.window_length:
            raise ValueError(
                f"need 1 <= window_length <= fft_size, got {self.window_length}, {self.fft_size}"
            )
        if self.hop is not None and self.hop < 1:
            raise ValueError("hop must be >= 1")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def window(self) -> np.ndarray:
        return hamming(self.window_length)

    def padded_window(self) -> np.ndarray:
        w = np.zeros(self.fft_size)
        w[: self.window_length] = self.window
        return w


@dataclass
class ComplexSpectrogram:
    real_part: np.ndarray  # [freq_bins, frames]
    imag_part: np.ndarray
    source_length: int
    config: StftConfig
    hop: int

    def __post_init__(self):
        if self.real_part.shape != self.imag_part.shape:
            raise ValueError(f"real/imag shape mismatch: {self.real_part.shape} vs {self.imag_part.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.real_part.shape

    def as_complex(self) -> np.ndarray:
        return self.real_part + 1j * self.imag_part


@dataclass
class ModelImage:
    """Real/imaginary grids resized onto the model lattice."""

    real: np.ndarray
    imag: np.ndarray
    original_shape: tuple[int, int]
    source_length: int = 0
    config: StftConfig = field(default_factory=StftConfig)
    hop: int = 1


@lru_cache(maxsize=16)
def _hamming(n: int) -> np.ndarray:
    w = np.hamming(n)
    w.setflags(write=False)
    return w


def hamming(n: int) -> np.ndarray:
    """Symmetric Hamming window of length ``n``."""
    return _hamming(int(n))


def hop_for(clip: AudioClip | int) -> int:
    """Frame shift: ``length // 256``."""
    n = clip if isinstance(clip, (int, np.integer)) else len(clip)
    if n < HOP_DIVISOR:
        raise ValueError(f"clip of {n} samples is shorter than {HOP_DIVISOR}")
    return int(n) // HOP_DIVISOR


def n_frames(length: int, hop: int, window_length: int) -> int:
    if length <= window_length:
        return 1
    return 1 + -(-(length - window_length) // hop)


def _resolve_hop(length: int, cfg: StftConfig) -> int:
    return cfg.hop if cfg.hop is not None else hop_for(length)


def stft(clip: AudioClip, cfg: StftConfig | None = None) -> ComplexSpectrogram:
    cfg = cfg or StftConfig()
    x = clip.samples
    n = len(x)
    if n < HOP_DIVISOR and cfg.hop is None:
        raise ValueError(f"clip of {n} samples is shorter than {HOP_DIVISOR}")
    hop = _resolve_hop(n, cfg)
    T = n_frames(n, hop, cfg.window_length)
    padded = np.zeros((T - 1) * hop + cfg.window_length)
    padded[:n] = x
    idx = np.arange(cfg.window_length)[None, :] + hop * np.arange(T)[:, None]
    frames = padded[idx] * cfg.window
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=1).T
    return ComplexSpectrogram(
        np.ascontiguousarray(spec.real), np.ascontiguousarray(spec.imag), n, cfg, hop
    )


def window_norm(length: int, hop: int, cfg: StftConfig, T: int) -> np.ndarray:
    """Accumulated squared synthesis window over the first ``length`` samples."""
    w2 = cfg.window**2
    total = np.zeros((T - 1) * hop + cfg.window_length)
    for t in range(T):
        total[t * hop : t * hop + cfg.window_length] += w2
    if length > total.shape[0]:
        total = np.concatenate([total, np.zeros(length - total.shape[0])])
    return total[:length]


def istft(spec: ComplexSpectrogram, target_length: int | None = None) -> AudioClip:
    cfg = spec.config
    F, T = spec.shape
    if F != cfg.n_bins:
        raise ValueError(f"spectrogram has {F} bins, config expects {cfg.n_bins}")
    length = spec.source_length if target_length is None else int(target_length)
    hop = spec.hop
    norm = window_norm(length, hop, cfg, T)
    if np.any(norm <= 0.0):
        raise ValueError("ISTFT normalisation is zero somewhere (frames do not overlap)")
    frames = np.fft.irfft(spec.as_complex().T, n=cfg.fft_size, axis=1)[:, : cfg.window_length]
    frames = frames * cfg.window
    out = np.zeros(max((T - 1) * hop + cfg.window_length, length))
    for t in range(T):
        out[t * hop : t * hop + cfg.window_length] += frames[t]
    return AudioClip(out[:length] / norm)


# ---------------------------------------------------------------------------
# differentiable inverse used inside the training loss
# ---------------------------------------------------------------------------


@lru_cache(maxsize=8)
def _synthesis_bases(window_length: int, fft_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Matrices mapping (real, imag) bins to one windowed time frame."""
    M = fft_size
    F = M // 2 + 1
    n = np.arange(window_length)[:, None]
    k = np.arange(F)[None, :]
    c = np.full(F, 2.0)
    c[0] = 1.0
    if M % 2 == 0:
        c[-1] = 1.0
    ang = 2 * np.pi * n * k / M
    w = hamming(window_length)[:, None]
    cos_b = w * c * np.cos(ang) / M
    sin_b = -w * c * np.sin(ang) / M
    # irfft ignores the imaginary part of DC and Nyquist
    sin_b[:, 0] = 0.0
    if M % 2 == 0:
        sin_b[:, -1] = 0.0
    cos_b.setflags(write=False)
    sin_b.setflags(write=False)
    return cos_b, sin_b


def overlap_add(frames: Tensor, hop: int, norm: np.ndarray) -> Tensor:
    """Overlap-add columns of ``frames`` [window x T] and divide by ``norm``.

    The output has ``len(norm)`` samples.
    """
    Wl, T = frames.shape
    length = norm.shape[0]
    total = max((T - 1) * hop + Wl, length)
    cols = (np.arange(Wl)[:, None] + hop * np.arange(T)[None, :]).reshape(-1)
    out = np.bincount(cols, weights=frames.data.reshape(-1), minlength=total)
    inv = 1.0 / norm
    y = out[:length] * inv

    def vjp(g):
        gp = np.zeros(total)
        gp[:length] = g * inv
        return (gp[cols].reshape(Wl, T),)

    return primitive("overlap_add", y, (frames,), vjp)


def istft_tensor(real: Tensor, imag: Tensor, cfg: StftConfig, hop: int, length: int) -> Tensor:
    """ISTFT expressed on the gradient tape; agrees with :func:`istft`."""
    cos_b, sin_b = _synthesis_bases(cfg.window_length, cfg.fft_size)
    T = real.shape[1]
    norm = window_norm(length, hop, cfg, T)
    if np.any(norm <= 0.0):
        raise ValueError("ISTFT normalisation is zero somewhere (frames do not overlap)")
    frames = matmul(Tensor(cos_b), real) + matmul(Tensor(sin_b), imag)
    return overlap_add(frames, hop, norm)


# ---------------------------------------------------------------------------
# bilinear resize (corner-aligned)
# ---------------------------------------------------------------------------


def _lerp_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    i0 = np.minimum(np.floor(pos).astype(int), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, pos - i0


def bilinear(grid: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Corner-aligned bilinear interpolation of a 2-d grid onto ``shape``."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.shape == tuple(shape):
        return grid.copy()
    r0, r1, fr = _lerp_coords(grid.shape[0], shape[0])
    c0, c1, fc = _lerp_coords(grid.shape[1], shape[1])
    # lerp form keeps constants exact
    rows = grid[r0] + fr[:, None] * (grid[r1] - grid[r0])
    return rows[:, c0] + fc[None, :] * (rows[:, c1] - rows[:, c0])


@lru_cache(maxsize=64)
def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense [n_out x n_in] matrix of the 1-d bilinear map."""
    i0, i1, f = _lerp_coords(n_in, n_out)
    R = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(R, (rows, i0), 1.0 - f)
    np.add.at(R, (rows, i1), f)
    R.setflags(write=False)
    return R


def resize_tensor(grid: Tensor, shape: tuple[int, int]) -> Tensor:
    """Bilinear resize on the tape: ``R_rows @ grid @ R_cols.T``."""
    if grid.shape == tuple(shape):
        return grid
    Ry = interp_matrix(grid.shape[0], shape[0])
    Rx = interp_matrix(grid.shape[1], shape[1])
    return matmul(matmul(Tensor(Ry), grid), Tensor(np.ascontiguousarray(Rx.T)))


def resize_to_model(spec: ComplexSpectrogram, side: int = MODEL_SIDE) -> ModelImage:
    if spec.real_part.size == 0:
        raise ValueError("empty spectrogram")
    shape = (side, side)
    return ModelImage(
        bilinear(spec.real_part, shape),
        bilinear(spec.imag_part, shape),
        spec.shape,
        spec.source_length,
        spec.config,
        spec.hop,
    )


def resize_from_model(img: ModelImage, real=None, imag=None) -> ComplexSpectrogram:
    """Interpolate model-lattice grids back to the original spectrogram shape.

    ``real``/``imag`` override the grids stored on ``img`` (e.g. a model's
    prediction for that image).
    """
    real = img.real if real is None else np.asarray(real)
    imag = img.imag if imag is None else np.asarray(imag)
    return ComplexSpectrogram(
        bilinear(real, img.original_shape),
        bilinear(imag, img.original_shape),
        img.source_length,
        img.config,
        img.hop,
    )


def noise_gain(clean: AudioClip, noise: AudioClip, snr_db: float) -> float:
    """Gain ``g`` such that ``clean`` over ``g*noise`` has the given SNR."""
    if len(clean) != len(noise):
        raise ValueError(f"length mismatch: {len(clean)} vs {len(noise)}")
    if clean.sample_rate != noise.sample_rate:
        raise ValueError(f"sample-rate mismatch: {clean.sample_rate} vs {noise.sample_rate}")
    e_noise = float(np.dot(noise.samples, noise.samples))
    if e_noise == 0.0:
        raise ValueError("noise has zero energy")
    e_clean = float(np.dot(clean.samples, clean.samples))
    return float(np.sqrt(e_clean / (e_noise * 10.0 ** (snr_db / 10.0))))


def mix_at_snr(clean: AudioClip, noise: AudioClip, snr_db: float) -> AudioClip:
    """``clean + g*noise`` with ``g`` from :func:`noise_gain`."""
    g = noise_gain(clean, noise, snr_db)
    return AudioClip(clean.samples + g * noise.samples, clean.sample_rate)


def snr_db(clean: np.ndarray, noise: np.ndarray) -> float:
    return 10.0 * np.log10(np.dot(clean, clean) / np.dot(noise, noise))
