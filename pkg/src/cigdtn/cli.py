"""Command-line entry point: ``cigdtn <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, checkpoint_load, checkpoint_save
from .config import ConfigError, RunConfig, sub_seed
from .data import Pair, load_pairs, synth_dataset
from .dsp import AudioClip, StftConfig
from .evaluation import denoise, evaluate
from .model import Denoiser, randomized_params
from .numerics import NonFiniteError, grad_check_params
from .training import pair_loss, prepare, train
from .wavio import WavError, wav_read, wav_write

log = logging.getLogger("cigdtn")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cigdtn", description="Spectrogram diffusion-transformer denoiser.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model on a clean/ + noisy/ dataset")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--trace", help="loss trace path (tab-separated, appended)")

    d = sub.add_parser("denoise", help="denoise one WAV file")
    d.add_argument("--ckpt", required=True)
    d.add_argument("--in", dest="inp", required=True)
    d.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="report SDR over a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)

    s = sub.add_parser("synth-data", help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--clips", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--length", type=int, default=65536)
    s.add_argument("--snr", type=float, action="append", help="restrict SNRs (repeatable)")

    g = sub.add_parser("gradcheck", help="finite-difference check of the training loss")
    g.add_argument("--config", required=True)
    g.add_argument("--per-param", type=int, default=6)
    g.add_argument("--length", type=int, default=2048)
    return p


def _cmd_train(args) -> int:
    rc = RunConfig.from_file(args.config)
    pairs, skipped = load_pairs(args.data, rc.sample_rate)
    if not pairs:
        raise RuntimeError(f"no usable pairs under {args.data}")
    trace = args.trace or rc.get("trace")
    if trace:
        Path(trace).write_text("", encoding="utf-8")
    res = train(pairs, rc.model_config(), rc.stft_config(), rc.train_config(), trace_path=trace)
    checkpoint_save(args.out, res.model.params, res.model.cfg, rc.stft_config())
    last = res.trace[-1].loss.total if res.trace else float("nan")
    print(f"trained {len(res.trace)} steps on {len(pairs)} pairs ({skipped} skipped); final loss {last:.6g}")
    return 0


def _load_model(path) -> tuple[Denoiser, StftConfig]:
    params, cfg, stft_cfg = checkpoint_load(path)
    return Denoiser(cfg, params), stft_cfg or StftConfig()


def _cmd_denoise(args) -> int:
    model, stft_cfg = _load_model(args.ckpt)
    clip = wav_read(args.inp)
    out = denoise(model, clip, stft_cfg)
    wav_write(args.out, out)
    print(f"wrote {len(out)} samples to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model, stft_cfg = _load_model(args.ckpt)
    pairs, skipped = load_pairs(args.data)
    report = evaluate(model, pairs, stft_cfg, skipped=skipped)
    Path(args.report).write_text(report.format(), encoding="utf-8")
    print(f"mean SDR {report.mean_sdr:.3f} dB over {report.count} clips ({report.skipped} skipped)")
    return 0


def _cmd_synth(args) -> int:
    snrs = tuple(args.snr) if args.snr else (0.0, 5.0, 10.0)
    m = synth_dataset(args.out, args.clips, args.seed, length=args.length, snrs=snrs)
    print(f"wrote {len(m.entries)} pairs to {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    rc = RunConfig.from_file(args.config)
    cfg, stft_cfg, tcfg = rc.model_config(), rc.stft_config(), rc.train_config()
    rng = np.random.default_rng(sub_seed(rc.seed, "data"))
    n = args.length
    clean = AudioClip(np.sin(2 * np.pi * 440.0 * np.arange(n) / rc.sample_rate), rc.sample_rate)
    noisy = AudioClip(clean.samples + 0.3 * rng.standard_normal(n), rc.sample_rate)
    item = prepare(Pair("probe", clean, noisy), stft_cfg, cfg.image_side)
    params = randomized_params(cfg, sub_seed(rc.seed, "init"))
    model = Denoiser(cfg, params)
    worst, where = grad_check_params(
        lambda leaves: pair_loss(model, leaves, item, tcfg.loss_blend)[0], params, 1e-5, args.per_param
    )
    print(f"max relative error {worst:.3e} (worst at {where})")
    return 0 if worst < 1e-4 else 1


COMMANDS = {
    "train": _cmd_train,
    "denoise": _cmd_denoise,
    "eval": _cmd_eval,
    "synth-data": _cmd_synth,
    "gradcheck": _cmd_gradcheck,
}


def cli_main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(e, file=sys.stderr)
        return 2
    except SystemExit as e:  # --help
        return int(e.code or 0)
    try:
        return COMMANDS[args.cmd](args)
    except (ConfigError, CheckpointError, WavError, NonFiniteError, OSError, ValueError, RuntimeError) as e:
        print(f"cigdtn {args.cmd}: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main())
