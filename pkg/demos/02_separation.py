"""
Splitting a mix into accompaniment and vocal stems
==================================================

The built-in separator keeps what is smooth along time (sustained
partials) as accompaniment and what is smooth along frequency (clicks,
onsets) as the vocal stem.
"""

import numpy as np

from stemgenre.audio_io import AudioClip
from stemgenre.separation import SeparationConfig, median_filter_separate

sr = 22050
t = np.arange(3 * sr) / sr


def energy_share(stems):
    ea = np.sum(stems.accompaniment.samples ** 2)
    ev = np.sum(stems.vocal.samples ** 2)
    return ea / (ea + ev), ev / (ea + ev)


# a steady tone is harmonic
tone = AudioClip(0.5 * np.sin(2 * np.pi * 440 * t), sr)
print("440 Hz tone  -> accompaniment %.3f, vocal %.3f" % energy_share(median_filter_separate(tone)))

# 1 ms clicks ten times a second are transient
clicks = np.zeros(3 * sr)
for start in range(0, clicks.size, sr // 10):
    clicks[start:start + 22] = 0.8
print("click train  -> accompaniment %.3f, vocal %.3f" % energy_share(median_filter_separate(AudioClip(clicks, sr))))

# a mix of both; the two stems add back up to the input
mix = AudioClip(0.5 * tone.samples + 0.5 * clicks, sr)
stems = median_filter_separate(mix)
print("mix          -> accompaniment %.3f, vocal %.3f" % energy_share(stems))
print("max |a + v - x| =", np.max(np.abs(stems.accompaniment.samples + stems.vocal.samples - mix.samples)))

# wider kernels and harder masks sharpen the split
hard = median_filter_separate(mix, SeparationConfig(kernel_time=31, kernel_freq=31, mask_power=4))
print("kernels 31, p=4 -> accompaniment %.3f, vocal %.3f" % energy_share(hard))
