"""MFCC extraction producing the fixed 40 x 132 matrix per segment, and the
on-disk feature cache."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .audio_io import AudioClip
from .errors import DataError, InsufficientAudio, InvalidConfig
from .spectral import stft

MAGIC = b"MFC1"
_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True)
class FeatureConfig:
    n_fft: int = 2048
    hop: int = 512
    window: str = "hann"
    n_mels: int = 128
    n_mfcc: int = 40
    fmin: float = 20.0
    fmax: float | None = None
    target_frames: int = 132
    log_floor: float = 1e-10

    def resolved_fmax(self, sample_rate: int) -> float:
        if self.fmax is None:
            return min(20050.0, sample_rate / 2.0)
        return float(self.fmax)

    def validate(self, sample_rate: int) -> None:
        fmax = self.resolved_fmax(sample_rate)
        if not 0 < self.n_mfcc <= self.n_mels:
            raise InvalidConfig("need 0 < n_mfcc <= n_mels")
        if not 0 <= self.fmin < fmax:
            raise InvalidConfig("need 0 <= fmin < fmax")
        if fmax > sample_rate / 2.0:
            raise InvalidConfig(f"fmax {fmax} Hz exceeds Nyquist {sample_rate / 2.0} Hz")
        if self.target_frames <= 0 or self.hop <= 0 or self.n_fft <= 0 or self.n_fft % 2:
            raise InvalidConfig("target_frames, hop, n_fft must be positive; n_fft even")
        if self.log_floor <= 0:
            raise InvalidConfig("log_floor must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class MfccMatrix:
    values: np.ndarray
    segment_id: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or not np.all(np.isfinite(v)):
            raise DataError("MFCC matrix must be 2-D and finite")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=32)
def _mel_filterbank(n_mels, n_fft, sample_rate, fmin, fmax):
    freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb *= 2.0 / (hi - lo)
    fb.setflags(write=False)
    return fb


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, fmin: float = 0.0,
                   fmax: float | None = None) -> np.ndarray:
    """Triangular mel filters, shape ``(n_mels, n_fft // 2 + 1)``.

    Filter edges are equally spaced on the mel scale between ``fmin`` and
    ``fmax``; each triangle has height ``2 / (f_hi - f_lo)`` so all filters
    carry unit area in Hz.
    """
    if fmax is None:
        fmax = sample_rate / 2.0
    if fmax > sample_rate / 2.0:
        raise InvalidConfig(f"fmax {fmax} Hz exceeds Nyquist {sample_rate / 2.0} Hz")
    if not 0 <= fmin < fmax or n_mels <= 0:
        raise InvalidConfig("need n_mels > 0 and 0 <= fmin < fmax")
    return _mel_filterbank(int(n_mels), int(n_fft), int(sample_rate), float(fmin), float(fmax))


@lru_cache(maxsize=8)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``D`` so that ``D @ x`` transforms ``x``."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    d = np.cos(np.pi * k * (2 * i + 1) / (2 * n)) * np.sqrt(2.0 / n)
    d[0] /= np.sqrt(2.0)
    d.setflags(write=False)
    return d


def fit_frames(values: np.ndarray, target_frames: int) -> np.ndarray:
    """Zero-pad or truncate columns on the right to ``target_frames``."""
    n = values.shape[1]
    if n >= target_frames:
        return values[:, :target_frames]
    return np.pad(values, ((0, 0), (0, target_frames - n)))


def mfcc(segment: AudioClip, cfg: FeatureConfig = FeatureConfig(), segment_id: str = "") -> MfccMatrix:
    """MFCC matrix of one segment, shape ``(n_mfcc, target_frames)``.

    Power spectrogram (zero-padded or truncated on the right to
    ``target_frames``) -> mel filterbank -> ``log10`` with a floor ->
    orthonormal DCT-II over mel bands, first ``n_mfcc`` rows kept.
    """
    sr = segment.sample_rate
    cfg.validate(sr)
    if len(segment) < cfg.n_fft:
        raise InsufficientAudio(f"segment has {len(segment)} samples, need at least {cfg.n_fft}")
    power = np.abs(stft(segment.samples, cfg.n_fft, cfg.hop, cfg.window)) ** 2
    # padding happens on the power spectrogram, so padded frames read as silence
    power = fit_frames(power, cfg.target_frames)
    fb = mel_filterbank(cfg.n_mels, cfg.n_fft, sr, cfg.fmin, cfg.resolved_fmax(sr))
    logmel = np.log10(np.maximum(fb @ power, cfg.log_floor))
    coeffs = dct_matrix(cfg.n_mels)[:cfg.n_mfcc] @ logmel
    return MfccMatrix(coeffs, segment_id or segment.source_id)


class FeatureCache:
    """Binary store of MFCC records plus a JSON index.

    Each record is a ``MFC1`` header (magic, rows, cols as little-endian
    u32) followed by row-major float32 values. The index maps
    ``(segment_id, stem)`` to the record offset and label.
    """

    def __init__(self, path):
        self.path = os.fspath(path)
        self.index_path = self.path + ".json"
        self.meta = {}
        self.records = {}

    @classmethod
    def write(cls, path, items, meta=None):
        """``items`` yields ``(segment_id, stem, label, MfccMatrix)``."""
        cache = cls(path)
        cache.meta = dict(meta or {})
        with open(cache.path, "wb") as fh:
            for seg_id, stem, label, m in items:
                v = np.ascontiguousarray(m.values, dtype="<f4")
                key = f"{seg_id}|{stem}"
                if key in cache.records:
                    raise DataError(f"duplicate feature record {key}")
                cache.records[key] = {"segment_id": seg_id, "stem": stem,
                                      "label": int(label), "offset": fh.tell()}
                fh.write(_HEADER.pack(MAGIC, v.shape[0], v.shape[1]))
                fh.write(v.tobytes())
        with open(cache.index_path, "w") as fh:
            json.dump({"meta": cache.meta, "records": list(cache.records.values())},
                      fh, indent=1, sort_keys=True)
        return cache

    @classmethod
    def open(cls, path):
        cache = cls(path)
        with open(cache.index_path) as fh:
            idx = json.load(fh)
        cache.meta = idx["meta"]
        cache.records = {f"{r['segment_id']}|{r['stem']}": r for r in idx["records"]}
        return cache

    def _read_from(self, fh, segment_id, stem):
        rec = self.records.get(f"{segment_id}|{stem}")
        if rec is None:
            raise DataError(f"no {stem} features for segment {segment_id}")
        fh.seek(rec["offset"])
        magic, rows, cols = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != MAGIC:
            raise DataError(f"bad record magic at offset {rec['offset']}")
        v = np.frombuffer(fh.read(4 * rows * cols), dtype="<f4").reshape(rows, cols)
        return v.astype(np.float64)

    def read(self, segment_id: str, stem: str) -> MfccMatrix:
        with open(self.path, "rb") as fh:
            return MfccMatrix(self._read_from(fh, segment_id, stem), segment_id)

    def stack(self, segment_ids, stem: str) -> np.ndarray:
        """All requested matrices as one ``(n, rows, cols)`` float64 array."""
        with open(self.path, "rb") as fh:
            return np.stack([self._read_from(fh, s, stem) for s in segment_ids])
