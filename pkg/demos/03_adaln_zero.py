"""The adaLN-Zero block is the identity until its gates learn to open.

Run: python3 demos/03_adaln_zero.py
"""

import numpy as np

from cigdtn.model import Denoiser, ModelConfig, as_leaves, cigdt_block, init_params, randomized_params, sub_params
from cigdtn.numerics import Tensor

cfg = ModelConfig.toy(depth=4)
leaves = as_leaves(init_params(cfg, 0), False)
rng = np.random.default_rng(1)
x = rng.standard_normal((cfg.n_tokens, cfg.hidden_dim))
cond = Tensor(rng.standard_normal(cfg.conditioning_dim))

h = Tensor(x)
for l in range(cfg.depth):
    h = cigdt_block(h, cond, sub_params(leaves, f"real.blocks.{l}."), cfg.pattern(), cfg.diffusion, cfg.heads)
print("4 fresh blocks change the tokens by", np.abs(h.data - x).max())

# the zero-initialised decoder means a fresh model predicts silence
img = rng.standard_normal((32, 32))
r, i = Denoiser(cfg).forward(img, img)
print("fresh model output magnitude", np.abs(r.data).max(), np.abs(i.data).max())

# perturb every weight and the blocks start to act
leaves = as_leaves(randomized_params(cfg, 2), False)
h = cigdt_block(Tensor(x), cond, sub_params(leaves, "real.blocks.0."), cfg.pattern(), cfg.diffusion, cfg.heads)
print("one perturbed block moves the tokens by %.3f" % np.abs(h.data - x).max())
