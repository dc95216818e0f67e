import struct

import numpy as np
import pytest

from stemgenre.audio_io import AudioClip


def wav_bytes(frames, sample_rate=22050, fmt="pcm16"):
    """RIFF bytes for ``frames`` of shape (n,) or (n, channels), built by hand."""
    frames = np.asarray(frames)
    if frames.ndim == 1:
        frames = frames[:, None]
    channels = frames.shape[1]
    if fmt == "pcm16":
        body = frames.astype("<i2").tobytes()
        tag, bits = 1, 16
    else:
        body = frames.astype("<f4").tobytes()
        tag, bits = 3, 32
    block = channels * bits // 8
    return (struct.pack("<4sI4s", b"RIFF", 36 + len(body), b"WAVE")
            + struct.pack("<4sIHHIIHH", b"fmt ", 16, tag, channels, sample_rate, sample_rate * block, block, bits)
            + struct.pack("<4sI", b"data", len(body)) + body)


def clip_of(samples, sr=22050, source_id="test"):
    return AudioClip(np.asarray(samples, dtype=np.float64), sr, source_id)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


def numeric_grad(f, x, eps=1e-5):
    """Central finite differences of scalar ``f()`` with respect to array ``x`` (modified in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report one line each; they are repeated in the summary
ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
