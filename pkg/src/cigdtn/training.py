"""Denoising objective, AdamW, and the batch training loop.

The objective blends an image-domain term with a waveform term::

    image = L1(real) + L1(imag) + L1(noise - estimated noise)
    total = blend * image + (1 - blend) * L1(istft(prediction) - clean audio)

All L1 terms are mean absolute errors.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import numerics as nx
from .data import Pair
from .dsp import AudioClip, ModelImage, StftConfig, istft_tensor, resize_tensor, resize_to_model, stft
from .model import Denoiser, ModelConfig, as_leaves
from .numerics import GradTape, NonFiniteError, ShapeError, Tensor

log = logging.getLogger(__name__)

TRACE_FIELDS = ("real_image_l1", "imag_image_l1", "noise_l1", "image_total", "recon_l1", "blend_weight", "total")


@dataclass(frozen=True)
class LossBreakdown:
    real_image_l1: float
    imag_image_l1: float
    noise_l1: float
    image_total: float
    recon_l1: float
    blend_weight: float
    total: float

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, f) for f in TRACE_FIELDS)

    @classmethod
    def mean(cls, parts: Sequence["LossBreakdown"]) -> "LossBreakdown":
        n = len(parts)
        return cls(*(sum(p.values()[i] for p in parts) / n for i in range(len(TRACE_FIELDS))))


# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------


def l1(a: Tensor, b) -> Tensor:
    b = b if isinstance(b, Tensor) else Tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"L1 shape mismatch: {a.shape} vs {b.shape}")
    return nx.mean_all(nx.abs_(nx.sub(a, b)))


def image_loss(pred_real, pred_imag, clean_real, clean_imag, noisy_real, noisy_imag) -> tuple[Tensor, Tensor, Tensor]:
    """(real term, imaginary term, noise term) of the image loss.

    The noise term compares the true noise ``noisy - clean`` with the implied
    estimate ``noisy - pred`` on both parts.
    """
    pr, pi = nx.as_tensor(pred_real), nx.as_tensor(pred_imag)
    shapes = {pr.shape, pi.shape} | {np.shape(g) for g in (clean_real, clean_imag, noisy_real, noisy_imag)}
    if len(shapes) != 1:
        raise ShapeError(f"image_loss grids disagree in shape: {sorted(shapes)}")
    nr, ni = np.asarray(noisy_real), np.asarray(noisy_imag)
    eps_r, eps_i = nr - np.asarray(clean_real), ni - np.asarray(clean_imag)
    est_r = nx.sub(Tensor(nr), pr)
    est_i = nx.sub(Tensor(ni), pi)
    noise = nx.add(l1(est_r, eps_r), l1(est_i, eps_i))
    return l1(pr, clean_real), l1(pi, clean_imag), noise


def recon_loss(estimate, reference) -> Tensor:
    est = estimate if isinstance(estimate, Tensor) else Tensor(_samples(estimate))
    ref = _samples(reference)
    if est.shape != ref.shape:
        raise ShapeError(f"reconstruction length mismatch: {est.shape[0]} vs {ref.shape[0]}")
    return l1(est, ref)


def _samples(x) -> np.ndarray:
    return x.samples if isinstance(x, AudioClip) else np.asarray(x, dtype=float)


def total_loss(image_total, recon, blend: float):
    if not 0.0 <= blend <= 1.0:
        raise ValueError(f"loss blend must lie in [0, 1], got {blend}")
    if isinstance(image_total, Tensor) or isinstance(recon, Tensor):
        return nx.add(nx.scale(nx.as_tensor(image_total), blend), nx.scale(nx.as_tensor(recon), 1.0 - blend))
    return blend * image_total + (1.0 - blend) * recon


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    learning_rate: float = 1e-4
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: OptimizerState
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One decoupled-weight-decay Adam update; returns new params, mutates ``state``."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {k}; step aborted")
    state.step += 1
    t = state.step
    b1, b2, lr = state.beta1, state.beta2, state.learning_rate
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    out = {}
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p)
        m = b1 * state.m.get(k, np.zeros_like(p)) + (1.0 - b1) * g
        v = b2 * state.v.get(k, np.zeros_like(p)) + (1.0 - b2) * g * g
        state.m[k], state.v[k] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        out[k] = p - lr * state.weight_decay * p - lr * update
    return out, state


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm is None or total <= max_norm:
        return dict(grads), total
    s = max_norm / (total + 1e-12)
    return {k: g * s for k, g in grads.items()}, total


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 8
    iterations: int = 100  # passes over the batch sequence
    max_steps: int | None = None
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float | None = 1.0
    loss_blend: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.iterations < 0:
            raise ValueError("learning_rate >= 0, batch_size >= 1 and iterations >= 0 are required")
        if not 0.0 <= self.loss_blend <= 1.0:
            raise ValueError("loss_blend must lie in [0, 1]")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive (or None to disable)")


@dataclass
class PreparedPair:
    """STFT images computed once per pair before training."""

    name: str
    noisy: ModelImage
    clean: ModelImage
    clean_audio: np.ndarray


def prepare(pair: Pair, stft_cfg: StftConfig, side: int) -> PreparedPair:
    if len(pair.clean) != len(pair.noisy):
        raise ShapeError(f"{pair.name}: clean/noisy lengths differ")
    return PreparedPair(
        pair.name,
        resize_to_model(stft(pair.noisy, stft_cfg), side),
        resize_to_model(stft(pair.clean, stft_cfg), side),
        pair.clean.samples,
    )


def reconstruct(pred_real: Tensor, pred_imag: Tensor, ref: ModelImage) -> Tensor:
    """Model-lattice prediction -> waveform on the tape (resize back + ISTFT)."""
    r = resize_tensor(pred_real, ref.original_shape)
    i = resize_tensor(pred_imag, ref.original_shape)
    return istft_tensor(r, i, ref.config, ref.hop, ref.source_length)


def pair_loss(model: Denoiser, leaves: Mapping[str, Tensor], item: PreparedPair, blend: float):
    """Differentiable total loss for one pair, and its breakdown."""
    pr, pi = model.forward(item.noisy.real, item.noisy.imag, leaves)
    lr_, li_, ln_ = image_loss(pr, pi, item.clean.real, item.clean.imag, item.noisy.real, item.noisy.imag)
    img = nx.add(nx.add(lr_, li_), ln_)
    rec = recon_loss(reconstruct(pr, pi, item.noisy), item.clean_audio)
    tot = total_loss(img, rec, blend)
    parts = LossBreakdown(
        float(lr_.data), float(li_.data), float(ln_.data), float(img.data), float(rec.data), blend, float(tot.data)
    )
    return tot, parts


def batch_loss(model: Denoiser, leaves, items: Sequence[PreparedPair], blend: float):
    totals, parts = [], []
    for it in items:
        t, p = pair_loss(model, leaves, it, blend)
        totals.append(t)
        parts.append(p)
    acc = totals[0]
    for t in totals[1:]:
        acc = nx.add(acc, t)
    return nx.scale(acc, 1.0 / len(totals)), LossBreakdown.mean(parts)


@dataclass
class TraceRecord:
    step: int
    loss: LossBreakdown
    wall_ms: float

    def format(self, timing: bool = True) -> str:
        vals = "\t".join(f"{v:.17g}" for v in self.loss.values())
        return f"{self.step}\t{vals}\t{self.wall_ms:.3f}" if timing else f"{self.step}\t{vals}"


@dataclass
class TrainResult:
    model: Denoiser
    trace: list[TraceRecord]
    optimizer: OptimizerState


def train(
    dataset: Sequence[Pair],
    model_cfg: ModelConfig,
    stft_cfg: StftConfig | None = None,
    cfg: TrainConfig | None = None,
    params: Mapping[str, np.ndarray] | None = None,
    trace_path=None,
) -> TrainResult:
    """Fit a denoiser on ``dataset`` in fixed batch order.

    STFT images are computed once up front; each step runs the forward pass
    on every pair of the batch, the blended loss through the ISTFT, one
    backward pass and one AdamW update.
    """
    cfg = cfg or TrainConfig()
    stft_cfg = stft_cfg or StftConfig()
    if not dataset:
        raise ValueError("dataset is empty")
    model = Denoiser(model_cfg, params, seed=cfg.seed)
    items = [prepare(p, stft_cfg, model_cfg.image_side) for p in dataset]
    batches = [items[i : i + cfg.batch_size] for i in range(0, len(items), cfg.batch_size)]
    opt = OptimizerState(cfg.learning_rate, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps)
    trace: list[TraceRecord] = []
    sink = open(trace_path, "a", encoding="utf-8") if trace_path else None
    step = 0
    try:
        for _ in range(cfg.iterations):
            for batch in batches:
                if cfg.max_steps is not None and step >= cfg.max_steps:
                    return TrainResult(model, trace, opt)
                t0 = time.perf_counter()
                leaves = as_leaves(model.params)
                try:
                    with GradTape() as tape:
                        loss, parts = batch_loss(model, leaves, batch, cfg.loss_blend)
                    g = nx.backward(loss, tape, leaves.values())
                    grads = {k: g[t] for k, t in leaves.items()}
                    grads, _ = clip_grad_norm(grads, cfg.clip_norm)
                    model.params, opt = adamw_step(model.params, grads, opt)
                except NonFiniteError as e:
                    raise NonFiniteError(f"training aborted at step {step}: {e}") from None
                rec = TraceRecord(step, parts, (time.perf_counter() - t0) * 1e3)
                trace.append(rec)
                if sink:
                    sink.write(rec.format() + "\n")
                    sink.flush()
                step += 1
    finally:
        if sink:
            sink.close()
    return TrainResult(model, trace, opt)
