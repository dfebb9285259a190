"""Train the toy model on four synthetic clips, then score it.

This is the same run the acceptance suite makes through the CLI:

    cigdtn synth-data --out /tmp/toy/train --clips 4 --seed 0 --length 1023
    cigdtn train --config demos/toy.cfg --data /tmp/toy/train --out /tmp/toy/toy.ckpt --trace /tmp/toy/trace.tsv
    cigdtn synth-data --out /tmp/toy/held --clips 4 --seed 1 --length 1023 --snr 5
    cigdtn eval --ckpt /tmp/toy/toy.ckpt --data /tmp/toy/held --report /tmp/toy/held.tsv

Run: python3 demos/04_toy_training.py   (about 20 s)
"""

import tempfile
from pathlib import Path

from cigdtn.config import RunConfig
from cigdtn.data import load_pairs, synth_dataset
from cigdtn.evaluation import evaluate
from cigdtn.training import train

rc = RunConfig.from_file(Path(__file__).with_name("toy.cfg"))
root = Path(tempfile.mkdtemp())
train_m = synth_dataset(root / "train", 4, seed=0, length=1023)
synth_dataset(root / "held", 4, seed=1, length=1023, snrs=(5.0,))
pairs, _ = load_pairs(root / "train")
held, _ = load_pairs(root / "held")

res = train(pairs, rc.model_config(), rc.stft_config(), rc.train_config())
for rec in res.trace[::50] + res.trace[-1:]:
    print("step %3d  total %.4f  recon %.4f" % (rec.step, rec.loss.total, rec.loss.recon_l1))
print("loss ratio %.3f" % (res.trace[-1].loss.total / res.trace[0].loss.total))

seen = evaluate(res.model, pairs, rc.stft_config())
for e, name, v in zip(train_m.entries, seen.names, seen.sdr_db):
    print("%s  input SNR %4.1f dB  output SDR %5.2f dB" % (name, e.snr_db, v))

# four clips are far too few to generalise; expect roughly 0 dB here
print("held-out mean SDR %.2f dB" % evaluate(res.model, held, rc.stft_config()).mean_sdr)
