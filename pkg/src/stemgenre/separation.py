"""Accompaniment / vocal stems: external stem files or median-filter HPSS.

The built-in separator is Fitzgerald-style harmonic/percussive median
filtering. The harmonic (time-smooth) part stands in for the accompaniment
and the transient (frequency-smooth) part for the vocal stem.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.ndimage

from .audio_io import AudioClip, read_wav
from .errors import InsufficientAudio, InvalidConfig, StemMismatch
from .spectral import istft, stft

STEM_NAMES = ("accompaniment", "vocal")


class SeparationMethod(str, enum.Enum):
    EXTERNAL = "external"
    MEDIAN_FILTER = "median"


@dataclass(frozen=True)
class Stems:
    accompaniment: AudioClip
    vocal: AudioClip
    method: SeparationMethod

    def __post_init__(self):
        a, v = self.accompaniment, self.vocal
        if len(a) != len(v) or a.sample_rate != v.sample_rate:
            raise StemMismatch(
                f"stems differ: {len(a)} @ {a.sample_rate} Hz vs {len(v)} @ {v.sample_rate} Hz")

    def __getitem__(self, name):
        if name == "accompaniment":
            return self.accompaniment
        if name in ("vocal", "vocals"):
            return self.vocal
        raise KeyError(name)


@dataclass(frozen=True)
class SeparationConfig:
    kernel_time: int = 17
    kernel_freq: int = 17
    mask_power: float = 2.0
    n_fft: int = 2048
    hop: int = 512

    def __post_init__(self):
        for k in (self.kernel_time, self.kernel_freq):
            if k < 3 or k % 2 == 0:
                raise InvalidConfig("median kernels must be odd and >= 3")
        if not self.mask_power > 0:
            raise InvalidConfig("mask_power must be positive")


def stem_filenames(segment_id: str) -> tuple[str, str]:
    return f"{segment_id}.accompaniment.wav", f"{segment_id}.vocals.wav"


def load_stems(accomp_path, vocal_path, expected_len: int, expected_sr: int | None = None) -> Stems:
    """Load externally separated stems, checking their length (after mixdown)."""
    acc = read_wav(accomp_path)
    voc = read_wav(vocal_path)
    for name, clip in (("accompaniment", acc), ("vocal", voc)):
        if len(clip) != expected_len:
            raise StemMismatch(f"{name} stem has {len(clip)} samples, expected {expected_len}")
        if expected_sr is not None and clip.sample_rate != expected_sr:
            raise StemMismatch(f"{name} stem at {clip.sample_rate} Hz, expected {expected_sr}")
    return Stems(acc, voc, SeparationMethod.EXTERNAL)


def soft_masks(harmonic: np.ndarray, percussive: np.ndarray, power: float):
    """Wiener-style masks ``H^p / (H^p + P^p)`` and its complement.

    Cells where both magnitudes vanish get 0.5 in each mask.
    """
    hp = harmonic ** power
    pp = percussive ** power
    den = hp + pp
    with np.errstate(invalid="ignore", divide="ignore"):
        m_h = np.where(den > 0, hp / np.where(den > 0, den, 1.0), 0.5)
    return m_h, 1.0 - m_h


def median_filter_separate(segment: AudioClip, cfg: SeparationConfig = SeparationConfig()) -> Stems:
    n = len(segment)
    if n < cfg.n_fft:
        raise InsufficientAudio(f"segment has {n} samples, need at least {cfg.n_fft}")
    spec = stft(segment.samples, cfg.n_fft, cfg.hop)
    mag = np.abs(spec)
    harmonic = scipy.ndimage.median_filter(mag, size=(1, cfg.kernel_time), mode="reflect")
    percussive = scipy.ndimage.median_filter(mag, size=(cfg.kernel_freq, 1), mode="reflect")
    m_h, m_p = soft_masks(harmonic, percussive, cfg.mask_power)
    acc = istft(m_h * spec, cfg.hop, length=n)
    voc = istft(m_p * spec, cfg.hop, length=n)
    sr, sid = segment.sample_rate, segment.source_id
    return Stems(AudioClip(acc, sr, sid + ":accompaniment"),
                 AudioClip(voc, sr, sid + ":vocal"),
                 SeparationMethod.MEDIAN_FILTER)
