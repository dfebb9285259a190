"""SDR scoring of denoised audio."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .data import Pair
from .dsp import AudioClip, StftConfig, istft, resize_from_model, resize_to_model, stft
from .model import Denoiser

log = logging.getLogger(__name__)

SDR_CAP_DB = 100.0

# (noisy real grid, noisy imag grid) -> (pred real grid, pred imag grid)
GridFn = Callable[[np.ndarray, np.ndarray], tuple]


def sdr(reference, estimate) -> float:
    """``10 log10(|x|^2 / |x - x_hat|^2)`` in dB, capped at +100 dB."""
    x = _arr(reference)
    y = _arr(estimate)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    num = float(np.dot(x, x))
    if num == 0.0:
        raise ValueError("reference has zero energy")
    err = x - y
    den = float(np.dot(err, err))
    if den == 0.0:
        return SDR_CAP_DB
    return min(SDR_CAP_DB, 10.0 * np.log10(num / den))


def _arr(x) -> np.ndarray:
    return x.samples if isinstance(x, AudioClip) else np.asarray(x, dtype=float)


def denoise(model: Union[Denoiser, GridFn], clip: AudioClip, stft_cfg: StftConfig, side: int | None = None) -> AudioClip:
    """STFT -> resize -> model -> resize back -> ISTFT, trimmed to the input length."""
    if isinstance(model, Denoiser):
        side = model.cfg.image_side
        fn = lambda r, i: tuple(t.data for t in model.forward(r, i))
    else:
        fn = model
    img = resize_to_model(stft(clip, stft_cfg), side)
    pr, pi = fn(img.real, img.imag)
    out = istft(resize_from_model(img, pr, pi), len(clip))
    return AudioClip(out.samples, clip.sample_rate)


@dataclass
class EvalReport:
    names: list[str]
    sdr_db: list[float]
    skipped: int = 0
    fingerprint: str = ""

    @property
    def count(self) -> int:
        return len(self.sdr_db)

    @property
    def mean_sdr(self) -> float:
        return float(np.mean(self.sdr_db)) if self.sdr_db else float("nan")

    def format(self) -> str:
        lines = [f"{n}\t{v:.6f}" for n, v in zip(self.names, self.sdr_db)]
        lines.append(f"mean\t{self.mean_sdr:.6f}")
        return "\n".join(lines) + "\n"


def fingerprint(model: Denoiser | None, stft_cfg: StftConfig) -> str:
    h = hashlib.blake2b(digest_size=8)
    h.update(json.dumps({"stft": [stft_cfg.window_length, stft_cfg.fft_size, stft_cfg.hop]}).encode())
    if isinstance(model, Denoiser):
        h.update(json.dumps(model.cfg.to_dict(), sort_keys=True).encode())
        for k in sorted(model.params):
            h.update(np.ascontiguousarray(model.params[k], dtype="<f8").tobytes())
    return h.hexdigest()


def evaluate(
    model: Union[Denoiser, GridFn],
    pairs: Sequence[Pair],
    stft_cfg: StftConfig | None = None,
    side: int | None = None,
    skipped: int = 0,
) -> EvalReport:
    """Denoise each pair's noisy clip and score it against the clean clip.

    Pairs that fail to process are skipped with a warning and counted.
    """
    stft_cfg = stft_cfg or StftConfig()
    names, scores = [], []
    for pair in sorted(pairs, key=lambda p: p.name):
        try:
            est = denoise(model, pair.noisy, stft_cfg, side)
            scores.append(sdr(pair.clean, est))
        except ValueError as e:
            log.warning("skipping %s: %s", pair.name, e)
            skipped += 1
            continue
        names.append(pair.name)
    return EvalReport(names, scores, skipped, fingerprint(model, stft_cfg))
