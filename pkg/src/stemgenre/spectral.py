"""Short-time Fourier transform and its overlap-add inverse."""

from __future__ import annotations

import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidConfig, ShapeError


def hann(n_fft: int) -> np.ndarray:
    """Periodic Hann window (the DFT-even variant used for spectral analysis)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)


def get_window(window, n_fft: int) -> np.ndarray:
    if isinstance(window, str):
        if window.lower() not in ("hann", "hanning"):
            raise InvalidConfig(f"unsupported window {window!r}")
        return hann(n_fft)
    w = np.asarray(window, dtype=np.float64)
    if w.shape != (n_fft,):
        raise InvalidConfig("window length must equal n_fft")
    return w


def frame_count(n_samples: int, n_fft: int, hop: int, centered: bool = True) -> int:
    if centered:
        return 1 + n_samples // hop
    return 1 + (n_samples - n_fft) // hop


def stft(signal, n_fft: int = 2048, hop: int = 512, window="hann", centered: bool = True) -> np.ndarray:
    """Complex STFT, shape ``(n_fft // 2 + 1, n_frames)``.

    With ``centered`` the signal is reflect-padded by ``n_fft // 2`` on both
    sides so column ``t`` is centred on sample ``t * hop``.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ShapeError("signal must be a non-empty 1-D array")
    w = get_window(window, n_fft)
    if centered:
        pad = n_fft // 2
        mode = "reflect" if x.size > pad else "constant"
        x = np.pad(x, pad, mode=mode)
    if x.size < n_fft:
        raise ShapeError("signal shorter than one frame")
    frames = sliding_window_view(x, n_fft)[::hop]
    return scipy.fft.rfft(frames * w, axis=1).T


def stft_mag(signal, n_fft: int = 2048, hop: int = 512, window="hann", centered: bool = True) -> np.ndarray:
    return np.abs(stft(signal, n_fft, hop, window, centered))


def istft(spec: np.ndarray, hop: int = 512, window="hann", length: int | None = None,
          centered: bool = True) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`.

    Frames are windowed again and normalised by the summed squared window,
    which inverts the forward transform exactly wherever that sum is nonzero.
    """
    n_bins, n_frames = spec.shape
    n_fft = 2 * (n_bins - 1)
    w = get_window(window, n_fft)
    frames = scipy.fft.irfft(spec.T, n=n_fft, axis=1) * w
    total = n_fft + hop * (n_frames - 1)
    y = np.zeros(total)
    wsum = np.zeros(total)
    w2 = w * w
    for t in range(n_frames):
        s = t * hop
        y[s:s + n_fft] += frames[t]
        wsum[s:s + n_fft] += w2
    nz = wsum > 1e-10
    y[nz] /= wsum[nz]
    if centered:
        y = y[n_fft // 2:]
    if length is not None:
        y = y[:length] if y.size >= length else np.pad(y, (0, length - y.size))
    elif centered:
        y = y[:y.size - n_fft // 2]
    return y
