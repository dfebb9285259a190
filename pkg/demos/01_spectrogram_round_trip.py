"""A clip goes to a complex spectrogram and back.

Run: python3 demos/01_spectrogram_round_trip.py
"""

import numpy as np

from cigdtn.dsp import AudioClip, StftConfig, istft, resize_from_model, resize_to_model, snr_db, stft

sr = 16000
t = np.arange(65536) / sr
x = 0.6 * np.sin(2 * np.pi * 440 * t) + 0.2 * np.sin(2 * np.pi * 1250 * t)
clip = AudioClip(x, sr)

# hop is length // 256, so 65536 samples give 256 frames
spec = stft(clip)
print("grid (bins x frames):", spec.shape, "hop", spec.hop)

# strongest bin in the middle frame sits at 440 Hz
frame = np.abs(spec.as_complex()[:, 128])
print("peak bin frequency: %.1f Hz" % (np.argmax(frame) * sr / spec.config.fft_size))

y = istft(spec, len(clip))
print("round trip SNR: %.1f dB" % snr_db(x, y.samples - x))

# the model sees a square image; with the default 512-point FFT this is a resize
img = resize_to_model(spec, 256)
back = resize_from_model(img)
z = istft(back, len(clip))
print("257 -> 256 -> 257 bins, SNR: %.1f dB" % snr_db(x, z.samples - x))

# 510-point FFT gives 256 bins natively, and the resize disappears
native = stft(clip, StftConfig(window_length=500, fft_size=510))
img = resize_to_model(native, 256)
z = istft(resize_from_model(img), len(clip))
print("native 256 x 256 grid, SNR: %.1f dB" % snr_db(x, z.samples - x))
