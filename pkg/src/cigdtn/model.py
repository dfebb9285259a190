"""Two-stream diffusion-transformer denoiser over real/imaginary spectrogram images.

Each stream (``real`` and ``imag``) has its own weights: patch embedding plus
position table, ``depth`` adaLN-Zero blocks with sparse diffused attention,
and a final adaptive norm followed by a linear decode to two channels per
pixel. The real stream's channel 0 and the imaginary stream's channel 1 form
the prediction.

Parameters live in a flat ``dict[str, np.ndarray]``; forward passes accept
the same names mapped to :class:`~cigdtn.numerics.Tensor` leaves so that the
tape can differentiate through them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Mapping

import numpy as np

from . import numerics as nx
from .attention import DiffusionConfig, SparsePattern, build_pattern, diffused_attention
from .numerics import NonFiniteError, ShapeError, Tensor

STREAMS = ("real", "imag")


@dataclass(frozen=True)
class ModelConfig:
    image_side: int = 256
    patch_size: int = 16
    hidden_dim: int = 256
    depth: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    channels: int = 1
    conditioning_dim: int = 64
    window_radius: int = 4
    global_tokens: tuple[int, ...] = (0,)
    random_links: int = 2
    pattern_seed: int = 0
    teleport: float = 0.15
    diffusion_steps: int = 8
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.image_side % self.patch_size:
            raise ValueError(f"image_side {self.image_side} is not a multiple of patch_size {self.patch_size}")
        if self.hidden_dim % self.heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} is not divisible by heads {self.heads}")
        if self.channels != 1:
            raise ValueError("only single-channel spectrogram images are supported")
        for name in ("depth", "heads", "mlp_ratio", "conditioning_dim", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        DiffusionConfig(self.teleport, self.diffusion_steps)
        object.__setattr__(self, "global_tokens", tuple(int(g) for g in self.global_tokens))

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        """32x32 images, 8x8 patches, D=16, two blocks, two heads, K=4."""
        base = dict(
            image_side=32, patch_size=8, hidden_dim=16, depth=2, heads=2,
            conditioning_dim=16, diffusion_steps=4,
        )
        base.update(overrides)
        return cls(**base)

    @property
    def grid(self) -> int:
        return self.image_side // self.patch_size

    @property
    def n_tokens(self) -> int:
        return self.grid**2

    @property
    def patch_dim(self) -> int:
        return self.patch_size**2 * self.channels

    @property
    def diffusion(self) -> DiffusionConfig:
        return DiffusionConfig(self.teleport, self.diffusion_steps)

    def pattern(self) -> SparsePattern:
        return build_pattern(
            self.n_tokens, self.window_radius, self.global_tokens, self.random_links, self.pattern_seed
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "global_tokens" in d:
            d["global_tokens"] = tuple(d["global_tokens"])
        return cls(**d)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    D, C, N = cfg.hidden_dim, cfg.conditioning_dim, cfg.n_tokens
    H = cfg.mlp_ratio * D
    shapes: dict[str, tuple[int, ...]] = {"cond.c": (C,), "cond.t_table": (1, C)}
    for s in STREAMS:
        shapes[f"{s}.embed"] = (cfg.patch_dim, D)
        shapes[f"{s}.pos"] = (N, D)
        for l in range(cfg.depth):
            b = f"{s}.blocks.{l}."
            shapes.update({
                b + "ada.w1": (C, C), b + "ada.b1": (C,),
                b + "ada.w2": (C, 6 * D), b + "ada.b2": (6 * D,),
            })
            for p in "qkvo":
                shapes[b + f"attn.w{p}"] = (D, D)
                shapes[b + f"attn.b{p}"] = (D,)
            shapes.update({
                b + "mlp.w1": (D, H), b + "mlp.b1": (H,),
                b + "mlp.w2": (H, D), b + "mlp.b2": (D,),
            })
        f = f"{s}.final."
        shapes.update({
            f + "ada.w1": (C, C), f + "ada.b1": (C,),
            f + "ada.w2": (C, 2 * D), f + "ada.b2": (2 * D,),
            f + "w": (D, cfg.patch_size**2 * 2 * cfg.channels),
            f + "b": (cfg.patch_size**2 * 2 * cfg.channels,),
        })
    return shapes


def _is_zero_init(name: str) -> bool:
    # adaLN regressor output layers and the decoder projection start at zero
    return name.endswith(("ada.w2", "ada.b2", "final.w", "final.b"))


def init_params(cfg: ModelConfig, seed: int | np.random.Generator = 0) -> dict[str, np.ndarray]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name == "cond.c":
            params[name] = rng.standard_normal(shape)
        elif _is_zero_init(name) or name == "cond.t_table" or len(shape) == 1:
            params[name] = np.zeros(shape)
        elif name.endswith(".pos"):
            params[name] = 0.02 * rng.standard_normal(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def randomized_params(cfg: ModelConfig, seed: int = 0, scale: float = 0.2) -> dict[str, np.ndarray]:
    """Fresh parameters with every entry perturbed, zero-initialised layers included.

    At the adaLN-Zero initialisation most gradients vanish, which would make
    a gradient check vacuous.
    """
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    return {k: v + scale * rng.standard_normal(v.shape) for k, v in params.items()}


def as_leaves(params: Mapping[str, np.ndarray], requires_grad: bool = True) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in params.items()}


def sub_params(params: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------


def patch_tokens(image: Tensor, patch: int) -> Tensor:
    """Rearrange an H x W grid into row-major P x P patches, one per row."""
    H, W = image.shape
    if H % patch or W % patch:
        raise ShapeError(f"{image.shape} grid is not divisible into {patch}x{patch} patches")
    gh, gw = H // patch, W // patch

    def fwd(a):
        return a.reshape(gh, patch, gw, patch).transpose(0, 2, 1, 3).reshape(gh * gw, patch * patch)

    def inv(a):
        return a.reshape(gh, gw, patch, patch).transpose(0, 2, 1, 3).reshape(H, W)

    return nx.primitive("patch_tokens", fwd(image.data), (image,), lambda g: (inv(g),))


def unpatchify(tokens: Tensor, side: int, patch: int) -> Tensor:
    """Inverse of :func:`patch_tokens` for a ``side x side`` grid."""
    g = side // patch
    if tokens.shape != (g * g, patch * patch):
        raise ShapeError(f"expected {(g * g, patch * patch)} tokens, got {tokens.shape}")

    def fwd(a):
        return a.reshape(g, g, patch, patch).transpose(0, 2, 1, 3).reshape(side, side)

    def inv(a):
        return a.reshape(g, patch, g, patch).transpose(0, 2, 1, 3).reshape(g * g, patch * patch)

    return nx.primitive("unpatchify", fwd(tokens.data), (tokens,), lambda gr: (inv(gr),))


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


@dataclass
class Modulation:
    gamma1: Tensor
    beta1: Tensor
    alpha1: Tensor
    gamma2: Tensor
    beta2: Tensor
    alpha2: Tensor


def patchify(image, params: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Patch tokens projected by ``embed`` plus the position table."""
    image = _t(image)
    if image.shape != (cfg.image_side, cfg.image_side):
        raise ShapeError(f"image must be {cfg.image_side}x{cfg.image_side}, got {image.shape}")
    tokens = patch_tokens(image, cfg.patch_size)
    return nx.add(nx.matmul(tokens, params["embed"]), params["pos"])


def modulate(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    return nx.add(nx.mul_rows(x, gamma), beta)


def _regress(cond: Tensor, p: Mapping[str, Tensor], n_vectors: int) -> list[Tensor]:
    h = nx.silu(nx.add(nx.matmul(nx.reshape(cond, (1, cond.size)), p["ada.w1"]), p["ada.b1"]))
    out = nx.add(nx.matmul(h, p["ada.w2"]), p["ada.b2"])
    D = out.shape[1] // n_vectors
    return [nx.reshape(nx.slice_cols(out, i * D, (i + 1) * D), (D,)) for i in range(n_vectors)]


def adaln_modulation(cond: Tensor, block: Mapping[str, Tensor]) -> Modulation:
    """Regress (gamma1, beta1, alpha1, gamma2, beta2, alpha2) from ``cond``.

    Scales are offset by one so a zero regressor gives identity scale and
    zero gates.
    """
    g1, b1, a1, g2, b2, a2 = _regress(cond, block, 6)
    return Modulation(nx.add_scalar(g1, 1.0), b1, a1, nx.add_scalar(g2, 1.0), b2, a2)


def multi_head_attention(
    h: Tensor, block: Mapping[str, Tensor], pattern: SparsePattern, diffusion: DiffusionConfig, heads: int
) -> Tensor:
    q = nx.add(nx.matmul(h, block["attn.wq"]), block["attn.bq"])
    k = nx.add(nx.matmul(h, block["attn.wk"]), block["attn.bk"])
    v = nx.add(nx.matmul(h, block["attn.wv"]), block["attn.bv"])
    dh = h.shape[1] // heads
    outs = []
    for i in range(heads):
        sl = (i * dh, (i + 1) * dh)
        outs.append(diffused_attention(nx.slice_cols(q, *sl), nx.slice_cols(k, *sl), nx.slice_cols(v, *sl), pattern, diffusion))
    merged = outs[0] if heads == 1 else nx.concat_cols(outs)
    return nx.add(nx.matmul(merged, block["attn.wo"]), block["attn.bo"])


def mlp(h: Tensor, block: Mapping[str, Tensor]) -> Tensor:
    u = nx.gelu(nx.add(nx.matmul(h, block["mlp.w1"]), block["mlp.b1"]))
    return nx.add(nx.matmul(u, block["mlp.w2"]), block["mlp.b2"])


def cigdt_block(
    x: Tensor,
    cond: Tensor,
    block: Mapping[str, Tensor],
    pattern: SparsePattern,
    diffusion: DiffusionConfig,
    heads: int,
    eps: float = 1e-5,
) -> Tensor:
    mod = adaln_modulation(cond, block)
    h = modulate(nx.layernorm(x, eps), mod.gamma1, mod.beta1)
    x = nx.add(x, nx.mul_rows(multi_head_attention(h, block, pattern, diffusion, heads), mod.alpha1))
    h = modulate(nx.layernorm(x, eps), mod.gamma2, mod.beta2)
    return nx.add(x, nx.mul_rows(mlp(h, block), mod.alpha2))


def decode(x: Tensor, cond: Tensor, dec: Mapping[str, Tensor], cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Final adaptive norm, linear map to ``P*P*2`` per token, unpatchify.

    Returns the two channel grids (channel 0, channel 1).
    """
    gamma, beta = _regress(cond, dec, 2)
    h = modulate(nx.layernorm(x, cfg.ln_eps), nx.add_scalar(gamma, 1.0), beta)
    y = nx.add(nx.matmul(h, dec["w"]), dec["b"])
    pp = cfg.patch_size**2
    return tuple(
        unpatchify(nx.slice_cols(y, c * pp, (c + 1) * pp), cfg.image_side, cfg.patch_size) for c in range(2)
    )


def conditioning(params: Mapping[str, Tensor], t: int = 0) -> Tensor:
    """Learned conditioning vector plus the (single-entry) step embedding."""
    row = nx.reshape(nx.slice_cols(nx.transpose(params["cond.t_table"]), t, t + 1), (params["cond.c"].size,))
    return nx.add(params["cond.c"], row)


class Denoiser:
    """Config, sparse pattern and parameters bundled for repeated forwards."""

    def __init__(self, cfg: ModelConfig, params: Mapping[str, np.ndarray] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = dict(params) if params is not None else init_params(cfg, seed)
        missing = set(param_shapes(cfg)) - set(self.params)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)[:5]}")
        for k, shape in param_shapes(cfg).items():
            if self.params[k].shape != shape:
                raise ShapeError(f"parameter {k} has shape {self.params[k].shape}, config needs {shape}")
        self.pattern = cfg.pattern()

    def stream(self, image, leaves: Mapping[str, Tensor], name: str, cond: Tensor) -> tuple[Tensor, Tensor]:
        cfg = self.cfg
        p = sub_params(leaves, f"{name}.")
        x = patchify(image, p, cfg)
        for l in range(cfg.depth):
            try:
                x = cigdt_block(
                    x, cond, sub_params(p, f"blocks.{l}."), self.pattern, cfg.diffusion, cfg.heads, cfg.ln_eps
                )
            except NonFiniteError as e:
                raise NonFiniteError(f"{name} stream, block {l}: {e}") from None
        try:
            return decode(x, cond, sub_params(p, "final."), cfg)
        except NonFiniteError as e:
            raise NonFiniteError(f"{name} stream, decoder: {e}") from None

    def forward(self, real_img, imag_img, leaves: Mapping[str, Tensor] | None = None) -> tuple[Tensor, Tensor]:
        """Predicted (real, imag) grids; ``leaves`` defaults to untracked params."""
        leaves = leaves if leaves is not None else as_leaves(self.params, requires_grad=False)
        cond = conditioning(leaves)
        pred_real, _ = self.stream(real_img, leaves, "real", cond)
        _, pred_imag = self.stream(imag_img, leaves, "imag", cond)
        return pred_real, pred_imag

    __call__ = forward


def forward(real_img, imag_img, params: Mapping[str, np.ndarray], cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    return Denoiser(cfg, params).forward(real_img, imag_img)
