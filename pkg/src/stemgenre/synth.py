"""Deterministic synthetic mini-corpus in the GTZAN directory layout.

Three recipes stand in for three genres: sustained harmonic tones
(written as ``classical``), dense filtered noise with a distorted drone
(``metal``) and drum patterns over a bass line (``hiphop``). Every clip
draws its pitches, tempo and timbre from a per-clip seeded generator.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.signal

from .audio_io import SAMPLE_RATE, AudioClip, write_wav

MINI_GENRES = {"classical": "tone", "metal": "noise", "hiphop": "rhythm"}


def _midi_hz(note):
    return 440.0 * 2.0 ** ((np.asarray(note, dtype=np.float64) - 69.0) / 12.0)


def tone_clip(rng, seconds, sr=SAMPLE_RATE):
    """Slowly changing chords of harmonic partials with soft attacks."""
    n = int(seconds * sr)
    t = np.arange(n) / sr
    y = np.zeros(n)
    chord_len = rng.uniform(1.5, 3.0)
    root = rng.integers(48, 60)
    n_chords = int(np.ceil(seconds / chord_len))
    rolloff = rng.uniform(0.5, 0.8)
    for c in range(n_chords):
        start = int(c * chord_len * sr)
        stop = min(n, int((c + 1) * chord_len * sr) + sr // 4)
        seg = t[start:stop] - t[start]
        env = (1.0 - np.exp(-seg / 0.15)) * np.exp(-seg / (2.5 * chord_len))
        notes = root + rng.choice([0, 3, 4, 7, 9, 12], size=3, replace=False) + rng.integers(-2, 3)
        for f0 in _midi_hz(notes):
            vib = 1.0 + 0.003 * np.sin(2 * np.pi * 5.0 * seg)
            for k in range(1, 7):
                if k * f0 < sr / 2:
                    y[start:stop] += env * rolloff ** k * np.sin(2 * np.pi * k * f0 * seg * vib)
    return y


def noise_clip(rng, seconds, sr=SAMPLE_RATE):
    """Band-passed noise plus a clipped sawtooth drone."""
    n = int(seconds * sr)
    t = np.arange(n) / sr
    lo = rng.uniform(300.0, 900.0)
    hi = rng.uniform(3000.0, 7000.0)
    sos = scipy.signal.butter(4, [lo, hi], btype="bandpass", fs=sr, output="sos")
    noise = scipy.signal.sosfilt(sos, rng.normal(size=n))
    noise /= np.abs(noise).max() + 1e-12
    f0 = _midi_hz(rng.integers(38, 46))
    saw = 2.0 * ((t * f0) % 1.0) - 1.0
    drone = np.tanh(rng.uniform(3.0, 6.0) * saw)
    tremolo = 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(4.0, 8.0) * t)
    return 0.6 * noise * tremolo + 0.4 * drone


def rhythm_clip(rng, seconds, sr=SAMPLE_RATE):
    """Kick, snare and hi-hat on a sixteenth grid with a sparse sine bass."""
    n = int(seconds * sr)
    y = np.zeros(n)
    bpm = rng.uniform(80.0, 100.0)
    step = 60.0 / bpm / 4.0
    kick_t = np.arange(int(0.25 * sr)) / sr
    kick = np.sin(2 * np.pi * (50.0 + 80.0 * np.exp(-kick_t / 0.03)) * kick_t) * np.exp(-kick_t / 0.08)
    snare_t = np.arange(int(0.15 * sr)) / sr
    snare = rng.normal(size=snare_t.size) * np.exp(-snare_t / 0.04)
    hat_t = np.arange(int(0.04 * sr)) / sr
    hat = np.diff(rng.normal(size=hat_t.size + 1)) * np.exp(-hat_t / 0.01)
    kick_pattern = rng.permutation([1, 0, 0, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0, 0, 0])
    kick_pattern[0] = 1
    bass_note = _midi_hz(rng.integers(33, 40))
    for s in range(int(seconds / step)):
        pos = int(s * step * sr)
        beat = s % 16
        if kick_pattern[beat]:
            m = min(kick.size, n - pos)
            y[pos:pos + m] += 0.9 * kick[:m]
            bt = np.arange(min(int(step * 2 * sr), n - pos)) / sr
            y[pos:pos + bt.size] += 0.2 * np.sin(2 * np.pi * bass_note * bt) * np.exp(-bt / 0.2)
        if beat in (4, 12):
            m = min(snare.size, n - pos)
            y[pos:pos + m] += 0.5 * snare[:m]
        if beat % 2 == 0:
            m = min(hat.size, n - pos)
            y[pos:pos + m] += 0.3 * hat[:m]
    return y


RECIPES = {"tone": tone_clip, "noise": noise_clip, "rhythm": rhythm_clip}


def synth_clip(recipe: str, seed, seconds=30.0, sr=SAMPLE_RATE) -> AudioClip:
    rng = np.random.default_rng(seed)
    y = RECIPES[recipe](rng, seconds, sr)
    y *= rng.uniform(0.5, 0.9) / (np.abs(y).max() + 1e-12)
    return AudioClip(y, sr, f"synthetic:{recipe}")


def write_mini_corpus(root, clips_per_genre=20, seconds=30.0, seed=0, sr=SAMPLE_RATE) -> Path:
    """Write ``root/<genre>/<genre>.NNNNN.wav`` for the three recipes."""
    root = Path(root)
    seeds = np.random.SeedSequence(seed).spawn(len(MINI_GENRES) * clips_per_genre)
    k = 0
    for genre, recipe in MINI_GENRES.items():
        d = root / genre
        d.mkdir(parents=True, exist_ok=True)
        for i in range(clips_per_genre):
            clip = synth_clip(recipe, seeds[k], seconds, sr)
            write_wav(d / f"{genre}.{i:05d}.wav", clip)
            k += 1
    return root


def _peaked(rng, c, n_classes=10):
    p = np.zeros(n_classes)
    peak = rng.uniform(0.45, 0.8)
    others = np.delete(np.arange(n_classes), c)
    p[others] = (1.0 - peak) * rng.dirichlet(np.full(n_classes - 1, 2.0))
    p[c] = peak
    return p


def _flat_over(rng, group, n_classes=10):
    p = np.zeros(n_classes)
    rest = np.setdiff1d(np.arange(n_classes), group)
    p[group] = 0.97 * rng.dirichlet(np.full(len(group), 30.0))
    p[rest] = 0.03 * rng.dirichlet(np.ones(len(rest)))
    return p


def complementary_task(n, seed=0):
    """Base-model outputs for a task neither model solves alone.

    Classes 0-4 are visible only to the accompaniment model and 5-9 only to
    the vocal model. On its own classes a model puts a clear peak on the true
    label; on the other half it spreads its mass over its own classes, so
    its argmax is always wrong there. Labels are balanced, so each base model
    scores exactly 0.5 when every peak wins.

    Returns ``(x_a, x_v, labels)`` with ``x_a``, ``x_v`` of shape ``(n, 10)``.
    """
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % 10)
    low, high = np.arange(5), np.arange(5, 10)
    x_a = np.empty((n, 10))
    x_v = np.empty((n, 10))
    for i, c in enumerate(labels):
        if c < 5:
            x_a[i] = _peaked(rng, c)
            x_v[i] = _flat_over(rng, high)
        else:
            x_a[i] = _flat_over(rng, low)
            x_v[i] = _peaked(rng, c)
    return x_a, x_v, labels
