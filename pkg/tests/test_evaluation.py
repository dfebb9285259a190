import numpy as np
import pytest

from cigdtn.data import Pair
from cigdtn.dsp import AudioClip, StftConfig, snr_db
from cigdtn.evaluation import EvalReport, denoise, evaluate, sdr
from cigdtn.model import Denoiser, randomized_params

from conftest import TOY_STFT, tone_pair


def identity(r, i):
    return r, i


def zeros(r, i):
    return np.zeros_like(r), np.zeros_like(i)


class TestSdr:
    def test_exact_is_capped(self):
        x = np.random.default_rng(0).standard_normal(500)
        assert sdr(x, x) == 100.0

    def test_zero_estimate(self):
        x = np.random.default_rng(1).standard_normal(500)
        assert sdr(x, np.zeros(500)) == pytest.approx(0.0, abs=1e-12)

    def test_known_ratio(self):
        rng = np.random.default_rng(2)
        x, e = rng.standard_normal((2, 1000))
        e *= np.sqrt(np.dot(x, x) / np.dot(e, e) / 100)
        assert abs(sdr(x, x + e) - 20.0) < 1e-9

    def test_scale_invariance(self):
        rng = np.random.default_rng(3)
        x, y = rng.standard_normal((2, 800))
        base = sdr(x, y)
        for c in (1e-3, -2.0, 17.0):
            assert abs(sdr(c * x, c * y) - base) < 1e-9

    def test_decreasing_in_noise(self):
        rng = np.random.default_rng(4)
        x, e = rng.standard_normal((2, 800))
        values = [sdr(x, x + s * e) for s in (0.01, 0.05, 0.2, 0.7, 2.0)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_errors(self):
        with pytest.raises(ValueError):
            sdr(np.zeros(10), np.ones(10))
        with pytest.raises(ValueError):
            sdr(np.ones(10), np.ones(11))


class TestEvaluate:
    def test_identity_model_matches_input_snr(self):
        pairs = [tone_pair(noise=s, seed=k, name=f"p{k}") for k, s in enumerate((0.05, 0.2, 0.5))]
        report = evaluate(identity, pairs, TOY_STFT, side=32)
        for p, v in zip(pairs, report.sdr_db):
            expect = snr_db(p.clean.samples, p.noisy.samples - p.clean.samples)
            assert abs(v - expect) < 0.2

    def test_identity_model_full_lattice(self):
        # 65536 samples with a 510-point FFT give exactly 256 bins x 256 frames
        rng = np.random.default_rng(5)
        n = 65536
        clean = np.sin(2 * np.pi * 300 * np.arange(n) / 16000) + 0.3 * rng.standard_normal(n)
        noisy = clean + 0.5 * rng.standard_normal(n)
        pair = Pair("long", AudioClip(clean), AudioClip(noisy))
        report = evaluate(identity, [pair], StftConfig(window_length=500, fft_size=510), side=256)
        assert abs(report.sdr_db[0] - snr_db(clean, noisy - clean)) < 0.2

    def test_zero_model(self):
        report = evaluate(zeros, [tone_pair(name="a"), tone_pair(seed=1, name="b")], TOY_STFT, side=32)
        assert report.sdr_db == [0.0, 0.0]

    def test_report_mean(self):
        r = EvalReport(["a", "b"], [0.0, 20.0])
        assert r.mean_sdr == 10.0 and r.count == 2
        assert r.format() == "a\t0.000000\nb\t20.000000\nmean\t10.000000\n"

    def test_trained_model_deterministic_and_sorted(self, toy_cfg):
        model = Denoiser(toy_cfg, randomized_params(toy_cfg, 6, scale=0.05))
        pairs = [tone_pair(seed=k, name=n) for k, n in enumerate(("zz", "aa", "mm"))]
        a = evaluate(model, pairs, TOY_STFT)
        b = evaluate(model, pairs, TOY_STFT)
        assert a.names == ["aa", "mm", "zz"]
        assert a.format() == b.format() and a.fingerprint == b.fingerprint
        assert abs(a.mean_sdr - np.mean(a.sdr_db)) < 1e-9

    def test_unprocessable_pair_is_counted(self):
        short = Pair("short", AudioClip(np.ones(100)), AudioClip(np.ones(100)))
        report = evaluate(identity, [tone_pair(name="ok"), short], StftConfig(), side=32)
        assert report.names == ["ok"] and report.skipped == 1

    def test_denoise_keeps_duration(self, toy_cfg):
        model = Denoiser(toy_cfg, randomized_params(toy_cfg, 7, scale=0.05))
        clip = tone_pair().noisy
        out = denoise(model, clip, TOY_STFT)
        assert len(out) == len(clip) and out.sample_rate == clip.sample_rate

    def test_fingerprint_tracks_params(self, toy_cfg):
        pairs = [tone_pair()]
        a = evaluate(Denoiser(toy_cfg, randomized_params(toy_cfg, 8)), pairs, TOY_STFT)
        b = evaluate(Denoiser(toy_cfg, randomized_params(toy_cfg, 9)), pairs, TOY_STFT)
        assert a.fingerprint != b.fingerprint
