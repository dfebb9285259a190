"""Acceptance criteria, one test each, each printing a PASS/FAIL line.

The lines are also collected and repeated in the pytest terminal summary.
Criteria 6 to 8 share one run of the CLI pipeline on the frozen toy config
(train seed 0, held-out seed 1 at 5 dB).
"""

import time
from pathlib import Path

import numpy as np
import pytest

from cigdtn.attention import (
    DiffusionConfig,
    attention_diffusion,
    build_pattern,
    diffusion_oracle,
    naive_attention,
    sparse_scores,
    tiled_attention,
)
from cigdtn.cli import cli_main
from cigdtn.data import DatasetManifest, load_pairs
from cigdtn.dsp import AudioClip, ComplexSpectrogram, StftConfig, hamming, istft, snr_db, stft
from cigdtn.evaluation import sdr
from cigdtn.model import Denoiser, ModelConfig, as_leaves, cigdt_block, conditioning, init_params, randomized_params, sub_params
from cigdtn.numerics import Tensor, grad_check_params
from cigdtn.training import TRACE_FIELDS, pair_loss, prepare

from conftest import ACCEPTANCE, TOY_CFG, TOY_LENGTH, TOY_STFT, tone_pair

TOTAL_COL = 1 + TRACE_FIELDS.index("total")


def verdict(n, ok, detail, seconds, limit):
    ok = bool(ok) and seconds < limit
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail} [{seconds:.2f} s, limit {limit:g} s]"
    print(line)
    ACCEPTANCE.append(line)
    return ok


def diffusion_instance(rng, i):
    n, d = int(rng.integers(1, 33)), int(rng.integers(1, 9))
    w = int(rng.integers(0, 5))
    G = tuple(int(g) for g in rng.choice(n, size=min(n, int(rng.integers(0, 3))), replace=False))
    # random links need partners outside the band and the global tokens
    r = min(int(rng.integers(0, 3)), max(0, (n - 2 * w - 1 - len(G)) // 2))
    Q, K, V = rng.standard_normal((3, n, d))
    return sparse_scores(Tensor(Q), Tensor(K), build_pattern(n, w, G, r, seed=i)), V


def test_c1_diffusion_matches_linear_solve():
    # Each step difference is compared with (1 - a + 1e-9) times the previous
    # one plus the absolute round-off of forming the difference itself.
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_err, worst_excess, worst_ratio = 0.0, -np.inf, 0.0
    within_bound, worst_long = True, 0.0
    for i in range(20):
        a = (0.1, 0.15, 0.5)[i % 3]
        A, V = diffusion_instance(rng, i)
        exact = diffusion_oracle(A, V, a)
        Z = attention_diffusion(A, Tensor(V), DiffusionConfig(a, 40)).data
        err = np.max(np.abs(Z - exact))
        worst_err = max(worst_err, err)
        # A is row-stochastic, so the infinity-norm error shrinks by at least (1 - a) per step
        within_bound &= err <= (1 - a) ** 40 * np.max(np.abs(V - exact)) + 1e-12
        long = attention_diffusion(A, Tensor(V), DiffusionConfig(a, 400)).data
        worst_long = max(worst_long, np.max(np.abs(long - exact)))
        iterates = [attention_diffusion(A, Tensor(V), DiffusionConfig(a, k)).data for k in range(41)]
        steps = [np.max(np.abs(y - x)) for x, y in zip(iterates, iterates[1:])]
        roundoff = 64 * np.finfo(float).eps * max(np.max(np.abs(z)) for z in iterates)
        for prev, cur in zip(steps, steps[1:]):
            worst_excess = max(worst_excess, cur - ((1 - a + 1e-9) * prev + roundoff))
            if prev > 1e-6:
                worst_ratio = max(worst_ratio, cur / prev - (1 - a))
    contraction_ok = worst_excess <= 0 and worst_ratio <= 1e-9
    detail = (
        f"max |power(K=40) - solve| = {worst_err:.2e} (tol 1e-5: {'ok' if worst_err <= 1e-5 else 'no'}); "
        f"contraction {'ok' if contraction_ok else 'no'} (worst ratio - (1-a) {worst_ratio:+.2e}, slack {-worst_excess:.2e}); "
        f"all errors within (1-a)^40 bound {bool(within_bound)}; K=400 error {worst_long:.2e}"
    )
    assert verdict(1, worst_err <= 1e-5 and contraction_ok, detail, time.perf_counter() - t0, 5)


def test_c2_tiled_matches_naive():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    worst = 0.0
    for n in (1, 2, 17, 128, 257):
        Q, K, V = rng.standard_normal((3, n, 16))
        ref = naive_attention(Q, K, V)
        for tile in (1, 7, 32, n, n + 5):
            worst = max(worst, np.max(np.abs(tiled_attention(Q, K, V, tile) - ref)))
    assert verdict(2, worst <= 1e-10, f"max |tiled - naive| = {worst:.2e} (tol 1e-10)", time.perf_counter() - t0, 10)


def test_c3_blocks_are_identity_at_init():
    t0 = time.perf_counter()
    cfg = ModelConfig.toy(depth=4)
    leaves = as_leaves(init_params(cfg, 303), False)
    pattern = cfg.pattern()
    rng = np.random.default_rng(304)
    conds = [Tensor(rng.standard_normal(cfg.conditioning_dim)) for _ in range(3)]
    checked, exact = 0, True
    for _ in range(10):
        x = rng.standard_normal((cfg.n_tokens, cfg.hidden_dim)) * rng.uniform(0.1, 10)
        for c in conds:
            for stream in ("real", "imag"):
                h = Tensor(x)
                for l in range(cfg.depth):
                    out = cigdt_block(h, c, sub_params(leaves, f"{stream}.blocks.{l}."), pattern, cfg.diffusion, cfg.heads)
                    exact &= np.array_equal(out.data, h.data)
                    checked += 1
                    h = out
                exact &= np.array_equal(h.data, x)
    # the model's own conditioning vector is covered too
    h = Tensor(x)
    for l in range(cfg.depth):
        h = cigdt_block(h, conditioning(leaves), sub_params(leaves, f"real.blocks.{l}."), pattern, cfg.diffusion, cfg.heads)
    exact &= np.array_equal(h.data, x)
    assert verdict(3, exact, f"{checked} block applications over 10 inputs x 3 conditionings, all bit-identical", time.perf_counter() - t0, 5)


def test_c4_end_to_end_gradient():
    t0 = time.perf_counter()
    cfg = ModelConfig.toy()
    item = prepare(tone_pair(seed=404), TOY_STFT, cfg.image_side)
    params = randomized_params(cfg, 405)
    model = Denoiser(cfg, params)
    worst, where = grad_check_params(lambda lv: pair_loss(model, lv, item, 0.5)[0], params, 1e-5, 6)
    assert verdict(4, worst < 1e-4, f"max relative error {worst:.2e} at {where} (tol 1e-4)", time.perf_counter() - t0, 120)


def test_c5_stft_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(505)
    cfg = StftConfig()
    lengths = [8192, 65536] + [int(v) for v in rng.integers(8192, 65537, size=8)]
    worst_snr, worst_frame = np.inf, 0.0
    for n in lengths:
        x = rng.standard_normal(n)
        spec = stft(AudioClip(x), cfg)
        y = istft(spec, n).samples
        worst_snr = min(worst_snr, snr_db(x, y - x))
        frame = np.zeros(cfg.fft_size)
        frame[: cfg.window_length] = x[: cfg.window_length] * hamming(cfg.window_length)
        k = np.arange(cfg.n_bins)[:, None] * np.arange(cfg.fft_size)[None, :]
        ref = (frame[None, :] * np.exp(-2j * np.pi * k / cfg.fft_size)).sum(axis=1)
        worst_frame = max(worst_frame, np.max(np.abs(spec.as_complex()[:, 0] - ref)))
    ok = worst_snr > 60 and worst_frame <= 1e-9
    detail = f"min round-trip SNR {worst_snr:.1f} dB over lengths {min(lengths)}..{max(lengths)} (need > 60); frame-0 DFT error {worst_frame:.2e} (tol 1e-9)"
    assert verdict(5, ok, detail, time.perf_counter() - t0, 10)


# ---------------------------------------------------------------------------
# criteria 6 to 8: the scaled-down training experiment
# ---------------------------------------------------------------------------


def run_pipeline(root: Path) -> dict:
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "toy.cfg"
    cfg.write_text(TOY_CFG.format(iterations=300))
    n = str(TOY_LENGTH)
    out = {"root": root}
    t0 = time.perf_counter()
    assert cli_main(["synth-data", "--out", str(root / "train"), "--clips", "4", "--seed", "0", "--length", n]) == 0
    assert cli_main(["train", "--config", str(cfg), "--data", str(root / "train"), "--out", str(root / "toy.ckpt"), "--trace", str(root / "trace.tsv")]) == 0
    assert cli_main(["eval", "--ckpt", str(root / "toy.ckpt"), "--data", str(root / "train"), "--report", str(root / "train_report.tsv")]) == 0
    out["train_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    assert cli_main(["synth-data", "--out", str(root / "held"), "--clips", "4", "--seed", "1", "--length", n, "--snr", "5"]) == 0
    assert cli_main(["eval", "--ckpt", str(root / "toy.ckpt"), "--data", str(root / "held"), "--report", str(root / "held_report.tsv")]) == 0
    out["held_s"] = time.perf_counter() - t0
    return out


def read_report(path: Path) -> dict[str, float]:
    rows = [ln.split("\t") for ln in path.read_text().splitlines()]
    return {k: float(v) for k, v in rows}


def read_trace(path: Path) -> list[list[str]]:
    return [ln.split("\t") for ln in path.read_text().splitlines()]


def capacity_diagnostic(train_root: Path, held_root: Path, cfg: ModelConfig) -> str:
    """Best fit of the clean images by one shared (D-1)-dim affine patch subspace per channel.

    The decoder emits W(gamma * LN(h) + beta) + b per token with a conditioning
    vector that does not vary between clips, so each channel's patches lie in
    an affine subspace of dimension D - 1 (layer norm removes the mean).
    PCA gives the least-squares fit; its L1 residual estimates the floor
    on the clean-image loss terms.
    """
    P, g, k = cfg.patch_size, cfg.grid, cfg.hidden_dim - 1

    def patches(a):
        return a.reshape(g, P, g, P).transpose(0, 2, 1, 3).reshape(g * g, P * P)

    def unpatch(p):
        return p.reshape(g, g, P, P).transpose(0, 2, 1, 3).reshape(g * P, g * P)

    fit = [stft(p.clean, TOY_STFT) for p in load_pairs(train_root)[0]]
    held_pairs = load_pairs(held_root)[0]
    out = []
    for label, specs, pairs in (("train", fit, load_pairs(train_root)[0]), ("held-out", [stft(p.clean, TOY_STFT) for p in held_pairs], held_pairs)):
        proj, num, den = {}, 0.0, 0.0
        for part in ("real_part", "imag_part"):
            X = np.concatenate([patches(getattr(s, part)) for s in fit])
            mu = X.mean(axis=0)
            basis = np.linalg.svd(X - mu, full_matrices=False)[2][:k]
            proj[part] = [unpatch((patches(getattr(s, part)) - mu) @ basis.T @ basis + mu) for s in specs]
            num += sum(np.abs(getattr(s, part) - q).sum() for s, q in zip(specs, proj[part]))
            den += sum(np.abs(getattr(s, part)).sum() for s in specs)
        sdrs = [
            sdr(p.clean.samples, istft(ComplexSpectrogram(r, i, s.source_length, s.config, s.hop), len(p.clean)).samples)
            for p, s, r, i in zip(pairs, specs, proj["real_part"], proj["imag_part"])
        ]
        out.append(f"{label}: L1 residual {num / den:.3f} of target, SDR of the projected clean audio {np.mean(sdrs):.2f} dB")
    return f"capacity bound ({k}-dim affine patch fit per channel): " + "; ".join(out)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("acceptance") / "run")


def test_c6_overfit(pipeline):
    root = pipeline["root"]
    trace = read_trace(root / "trace.tsv")
    first, last = float(trace[0][TOTAL_COL]), float(trace[-1][TOTAL_COL])
    ratio = last / first
    manifest = {e.name: e.snr_db for e in DatasetManifest.read(root / "train").entries}
    report = read_report(root / "train_report.tsv")
    gains = {k: report[k] - manifest[k] for k in manifest}
    loss_ok = len(trace) == 300 and ratio < 0.10
    sdr_ok = all(v >= 3.0 for v in gains.values())
    detail = (
        f"{len(trace)} steps, total loss {first:.4f} -> {last:.4f} (ratio {ratio:.4f}, need < 0.10: {'ok' if loss_ok else 'no'}); "
        f"SDR minus input SNR per clip {', '.join(f'{v:+.2f}' for v in gains.values())} dB (need >= +3: {'ok' if sdr_ok else 'no'})"
    )
    ok = verdict(6, loss_ok and sdr_ok, detail, pipeline["train_s"], 600)
    if not ok:
        print(capacity_diagnostic(root / "train", root / "held", ModelConfig.toy()))
    assert ok


def test_c7_held_out(pipeline):
    root = pipeline["root"]
    report = read_report(root / "held_report.tsv")
    snrs = {e.snr_db for e in DatasetManifest.read(root / "held").entries}
    assert snrs == {5.0}
    mean = report["mean"]
    ok = verdict(7, mean >= 6.0, f"held-out mean SDR {mean:.3f} dB at 5 dB input (need >= 6)", pipeline["held_s"], 120)
    if not ok:
        print(capacity_diagnostic(root / "train", root / "held", ModelConfig.toy()))
    assert ok


def test_c8_determinism(pipeline, tmp_path):
    t0 = time.perf_counter()
    again = run_pipeline(tmp_path / "rerun")
    a, b = pipeline["root"], again["root"]
    # the last trace column is wall-clock time and is excluded
    same_trace = [r[:-1] for r in read_trace(a / "trace.tsv")] == [r[:-1] for r in read_trace(b / "trace.tsv")]
    same_reports = all((a / f).read_bytes() == (b / f).read_bytes() for f in ("train_report.tsv", "held_report.tsv"))
    same_ckpt = (a / "toy.ckpt").read_bytes() == (b / "toy.ckpt").read_bytes()
    detail = f"trace identical {same_trace}, reports byte-identical {same_reports}, checkpoint byte-identical {same_ckpt}"
    assert verdict(8, same_trace and same_reports and same_ckpt, detail, time.perf_counter() - t0, 720)


def test_c9_sparse_cost():
    t0 = time.perf_counter()
    n, w, G, r = 1024, 4, (0,), 2
    p = build_pattern(n, w, G, r, seed=0)
    bound = n * (2 * w + 1 + r) + 2 * n * len(G)
    rng = np.random.default_rng(909)
    A = sparse_scores(Tensor(rng.standard_normal((n, 8))), Tensor(rng.standard_normal((n, 8))), p)
    stored = A.weights.data.size
    ok = p.nnz <= bound and stored == p.nnz
    assert verdict(9, ok, f"stored weights {stored} (pattern nnz {p.nnz}) <= bound {bound}; dense would be {n * n}", time.perf_counter() - t0, 10)
