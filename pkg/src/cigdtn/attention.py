"""Sparse attention with multi-hop diffusion, and a tiled exact-attention kernel.

The sparse attention matrix is stored edge-wise: one weight per allowed
(query, key) pair, grouped by query row (CSR layout). Diffusion never forms
the dense multi-hop matrix; it repeats ``Z <- (1 - a) * A @ Z + a * V``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .numerics import NonFiniteError, ShapeError, Tensor, add, primitive, scale

__all__ = [
    "SparsePattern",
    "SparseAttentionMatrix",
    "DiffusionConfig",
    "build_pattern",
    "sparse_scores",
    "attention_diffusion",
    "diffusion_oracle",
    "diffused_attention",
    "tiled_attention",
    "naive_attention",
]


@dataclass(frozen=True)
class SparsePattern:
    """Allowed (query, key) pairs as sorted per-row neighbour lists."""

    n_tokens: int
    indptr: np.ndarray  # [n_tokens + 1]
    indices: np.ndarray  # [nnz], column ids, sorted within each row
    window_radius: int = 0
    global_tokens: tuple[int, ...] = ()
    random_links: int = 0
    seed: int = 0

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    @cached_property
    def rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_tokens), np.diff(self.indptr))

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i] : self.indptr[i + 1]]

    def as_sets(self) -> dict[int, set[int]]:
        return {i: set(self.neighbors(i).tolist()) for i in range(self.n_tokens)}

    def dense_mask(self) -> np.ndarray:
        m = np.zeros((self.n_tokens, self.n_tokens), dtype=bool)
        m[self.rows, self.indices] = True
        return m

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparsePattern):
            return NotImplemented
        return (
            self.n_tokens == other.n_tokens
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    __hash__ = None


@dataclass(frozen=True)
class SparseAttentionMatrix:
    pattern: SparsePattern
    weights: Tensor  # [nnz]

    def to_scipy(self) -> sp.csr_matrix:
        return self._csr

    @cached_property
    def _csr(self) -> sp.csr_matrix:
        p = self.pattern
        return sp.csr_matrix((self.weights.data, p.indices, p.indptr), shape=(p.n_tokens, p.n_tokens))

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()


@dataclass(frozen=True)
class DiffusionConfig:
    teleport: float = 0.15
    steps: int = 8

    def __post_init__(self):
        if not 0.0 < self.teleport <= 1.0:
            raise ValueError(f"teleport must lie in (0, 1], got {self.teleport}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")


def build_pattern(
    n_tokens: int,
    window_radius: int = 4,
    global_tokens=(0,),
    random_links: int = 2,
    seed: int = 0,
) -> SparsePattern:
    """Window band + global rows/columns + symmetric random links + self-loops.

    Random links are drawn row by row without replacement from tokens not
    already linked; a row accepts partners only while both ends hold fewer
    than ``random_links`` random links, so each row ends with at most that
    many.
    """
    if n_tokens < 1:
        raise ValueError("n_tokens must be >= 1")
    if window_radius < 0 or random_links < 0:
        raise ValueError("window_radius and random_links must be >= 0")
    G = tuple(sorted(set(int(g) for g in global_tokens)))
    if any(g < 0 or g >= n_tokens for g in G):
        raise ValueError(f"global token ids out of range for {n_tokens} tokens: {G}")

    nbrs = [set(range(max(0, i - window_radius), min(n_tokens, i + window_radius + 1))) for i in range(n_tokens)]
    for g in G:
        nbrs[g].update(range(n_tokens))
        for i in range(n_tokens):
            nbrs[i].add(g)

    if random_links:
        free = min((n_tokens - len(nbrs[i]) for i in range(n_tokens) if i not in G), default=0)
        if random_links > free:
            raise ValueError(
                f"random_links={random_links} cannot be drawn without replacement; "
                f"the tightest row has only {free} unlinked tokens"
            )
        rng = np.random.default_rng(seed)
        degree = np.zeros(n_tokens, dtype=int)
        for i in range(n_tokens):
            need = random_links - degree[i]
            if need <= 0:
                continue
            cand = np.array([j for j in range(n_tokens) if j not in nbrs[i] and degree[j] < random_links], dtype=int)
            if cand.size == 0:
                continue
            for j in rng.choice(cand, size=min(need, cand.size), replace=False):
                nbrs[i].add(int(j))
                nbrs[int(j)].add(i)
                degree[i] += 1
                degree[j] += 1

    indptr = np.zeros(n_tokens + 1, dtype=np.int64)
    cols = []
    for i, s in enumerate(nbrs):
        row = sorted(s)
        cols.extend(row)
        indptr[i + 1] = indptr[i] + len(row)
    return SparsePattern(
        n_tokens, indptr, np.asarray(cols, dtype=np.int64), window_radius, G, random_links, seed
    )


# ---------------------------------------------------------------------------
# edge-wise primitives
# ---------------------------------------------------------------------------


def _edge_dots(q: Tensor, k: Tensor, rows: np.ndarray, cols: np.ndarray, c: float) -> Tensor:
    Q, K = q.data, k.data
    Qr, Kc = Q[rows], K[cols]
    s = np.einsum("ed,ed->e", Qr, Kc) * c
    n = Q.shape[0]

    def vjp(g):
        gc = (g * c)[:, None]
        # row-sum scatter via bincount per feature keeps the order deterministic
        gq = _scatter_rows(rows, gc * Kc, n)
        gk = _scatter_rows(cols, gc * Qr, n)
        return gq, gk

    return primitive("edge_dots", s, (q, k), vjp)


def _scatter_rows(index: np.ndarray, vals: np.ndarray, n: int) -> np.ndarray:
    out = np.empty((n, vals.shape[1]))
    for d in range(vals.shape[1]):
        out[:, d] = np.bincount(index, weights=vals[:, d], minlength=n)
    return out


def _segment_softmax(s: Tensor, indptr: np.ndarray) -> Tensor:
    S = s.data
    starts = indptr[:-1]
    counts = np.diff(indptr)
    m = np.maximum.reduceat(S, starts)
    e = np.exp(S - np.repeat(m, counts))
    w = e / np.repeat(np.add.reduceat(e, starts), counts)

    def vjp(g):
        dot = np.add.reduceat(g * w, starts)
        return (w * (g - np.repeat(dot, counts)),)

    return primitive("segment_softmax", w, (s,), vjp)


def _spmm(A: SparseAttentionMatrix, z: Tensor) -> Tensor:
    p = A.pattern
    M = A.to_scipy()
    Z = z.data
    rows, cols = p.rows, p.indices

    def vjp(g):
        gw = np.einsum("ed,ed->e", g[rows], Z[cols])
        return gw, M.T @ g

    return primitive("spmm", M @ Z, (A.weights, z), vjp)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def sparse_scores(Q: Tensor, K: Tensor, pattern: SparsePattern) -> SparseAttentionMatrix:
    """Row-normalised ``exp(<Q_i, K_j> / sqrt(d))`` over each row's neighbours."""
    if Q.ndim != 2 or Q.shape != K.shape:
        raise ShapeError(f"Q and K must be equal-shape matrices, got {Q.shape} and {K.shape}")
    if Q.shape[0] != pattern.n_tokens:
        raise ShapeError(f"pattern has {pattern.n_tokens} tokens, Q has {Q.shape[0]} rows")
    d = Q.shape[1]
    try:
        s = _edge_dots(Q, K, pattern.rows, pattern.indices, 1.0 / np.sqrt(d))
    except NonFiniteError as e:
        raise NonFiniteError(f"non-finite attention scores: {e}") from None
    return SparseAttentionMatrix(pattern, _segment_softmax(s, pattern.indptr))


def attention_diffusion(A: SparseAttentionMatrix, V: Tensor, cfg: DiffusionConfig) -> Tensor:
    """``cfg.steps`` rounds of ``Z <- (1 - a) A Z + a V`` starting from ``Z = V``."""
    a = cfg.teleport
    Z = V
    if cfg.steps == 0:
        return Z
    aV = scale(V, a)
    for _ in range(cfg.steps):
        Z = add(scale(_spmm(A, Z), 1.0 - a), aV)
    return Z


def diffusion_oracle(A: SparseAttentionMatrix, V, teleport: float) -> np.ndarray:
    """Fixed point of the diffusion recursion by a dense linear solve.

    Solves ``(I - (1 - a) A) Z = a V``; test oracle only.
    """
    if not 0.0 < teleport <= 1.0:
        raise ValueError(f"teleport must lie in (0, 1], got {teleport}")
    dense = A.to_dense()
    n = dense.shape[0]
    system = np.eye(n) - (1.0 - teleport) * dense
    try:
        return np.linalg.solve(system, teleport * np.asarray(V, dtype=float))
    except np.linalg.LinAlgError as e:
        raise ValueError(f"diffusion system is singular: {e}") from None


def diffused_attention(
    Q: Tensor, K: Tensor, V: Tensor, pattern: SparsePattern, cfg: DiffusionConfig
) -> Tensor:
    return attention_diffusion(sparse_scores(Q, K, pattern), V, cfg)


# ---------------------------------------------------------------------------
# dense attention
# ---------------------------------------------------------------------------


def naive_attention(Q, K, V) -> np.ndarray:
    """Two-pass dense ``softmax(Q K^T / sqrt(d)) V``."""
    Q, K, V = (np.asarray(t, dtype=float) for t in (Q, K, V))
    s = Q @ K.T / np.sqrt(Q.shape[1])
    s = s - s.max(axis=1, keepdims=True)
    p = np.exp(s)
    return (p / p.sum(axis=1, keepdims=True)) @ V


def tiled_attention(Q, K, V, tile: int = 32) -> np.ndarray:
    """Exact dense attention streamed over key/value tiles.

    Keeps a running row max ``m``, normaliser ``l`` and unnormalised output
    ``acc``; each tile rescales the running state by ``exp(m_old - m_new)``.
    Only an N x tile block of scores exists at any time.
    """
    if tile < 1:
        raise ValueError("tile must be >= 1")
    Q, K, V = (np.asarray(t, dtype=float) for t in (Q, K, V))
    n, d = Q.shape
    c = 1.0 / np.sqrt(d)
    m = np.full(n, -np.inf)
    l = np.zeros(n)
    acc = np.zeros((n, V.shape[1]))
    for start in range(0, K.shape[0], tile):
        Kt, Vt = K[start : start + tile], V[start : start + tile]
        s = (Q @ Kt.T) * c
        m_new = np.maximum(m, s.max(axis=1))
        corr = np.exp(m - m_new)
        p = np.exp(s - m_new[:, None])
        l = l * corr + p.sum(axis=1)
        acc = acc * corr[:, None] + p @ Vt
        m = m_new
    return acc / l[:, None]
