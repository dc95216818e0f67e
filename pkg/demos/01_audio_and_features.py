"""
From a WAV file to an MFCC matrix
=================================

Decode a clip, cut it into 3-second segments and turn one segment into
the 40 x 132 MFCC matrix the classifiers consume.
"""

import io
import tempfile
from pathlib import Path

import numpy as np

from stemgenre.audio_io import SAMPLE_RATE, AudioClip, read_wav, resample_linear, slice_segments, write_wav
from stemgenre.features import FeatureConfig, mel_filterbank, mfcc
from stemgenre.spectral import istft, stft

# a 30 s test clip at 44.1 kHz: a sine chord under a little noise
rng = np.random.default_rng(0)
t = np.arange(30 * 44100) / 44100
x = 0.3 * np.sin(2 * np.pi * 220 * t) + 0.2 * np.sin(2 * np.pi * 330 * t) + 0.01 * rng.normal(size=t.size)
clip = AudioClip(x, 44100, "chord")

# write it as 16-bit PCM and read it back
path = Path(tempfile.mkdtemp()) / "chord.wav"
write_wav(path, clip)
clip = read_wav(path)
print("decoded", len(clip), "samples at", clip.sample_rate, "Hz")

# everything downstream runs at 22050 Hz
clip = resample_linear(clip, SAMPLE_RATE)
segments = slice_segments(clip)
print(len(segments), "segments of", len(segments[0].clip), "samples")

# the STFT inverts exactly with a Hann window at hop n_fft / 4
seg = segments[0].clip.samples
S = stft(seg)
print("STFT shape", S.shape, "round-trip error", np.max(np.abs(istft(S, 512, length=seg.size) - seg)))

# the mel filterbank stops at Nyquist, 11025 Hz
cfg = FeatureConfig()
fb = mel_filterbank(cfg.n_mels, cfg.n_fft, SAMPLE_RATE, cfg.fmin, cfg.resolved_fmax(SAMPLE_RATE))
print("filterbank", fb.shape, "top edge", cfg.resolved_fmax(SAMPLE_RATE), "Hz")

# 130 natural frames are padded with silent frames up to 132
m = mfcc(segments[0].clip, cfg)
print("MFCC", m.shape, "c0 range", m.values[0].min().round(2), m.values[0].max().round(2))
print("last two frames (padding):", m.values[:3, -2:].round(2).tolist())
