"""WAV ingestion, linear resampling and fixed-length slicing."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DecodeError, InsufficientAudio, UnsupportedFormat

SAMPLE_RATE = 22050
SEGMENT_SECONDS = 3
SEGMENTS_PER_CLIP = 10

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioClip:
    """Mono float64 samples in [-1, 1] plus their sample rate."""

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64)
        if x.ndim != 1 or x.size == 0:
            raise DecodeError("audio clip must be a non-empty 1-D signal")
        if not np.all(np.isfinite(x)):
            raise DecodeError("audio clip contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise DecodeError(f"sample rate must be positive, got {self.sample_rate}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class Segment:
    clip: AudioClip
    parent_id: str
    index: int
    id: str = field(default="")

    def __post_init__(self):
        if not self.id:
            object.__setattr__(self, "id", f"{self.parent_id}_{self.index}")


def decode_wav(data: bytes, source_id: str = "") -> AudioClip:
    """Decode a RIFF/WAVE byte string into a mono clip.

    Supports 16-bit integer PCM and 32-bit IEEE float, mono or stereo.
    Stereo is mixed down by averaging the two channels.
    """
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DecodeError("not a RIFF/WAVE stream")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        ck_id = data[pos:pos + 4]
        (ck_size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + ck_size]
        if ck_id == b"fmt ":
            if len(body) < 16:
                raise DecodeError("truncated fmt chunk")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == _WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise DecodeError("truncated WAVE_FORMAT_EXTENSIBLE header")
                (sub,) = struct.unpack("<H", body[24:26])
                fmt = (sub,) + fmt[1:]
        elif ck_id == b"data":
            payload = body
            break
        # chunks are word aligned
        pos += 8 + ck_size + (ck_size & 1)

    if fmt is None:
        raise DecodeError("missing fmt chunk")
    if payload is None:
        raise DecodeError("missing data chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedFormat(f"{channels} channels not supported")
    if rate <= 0:
        raise DecodeError("sample rate must be positive")
    if tag == _WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedFormat(f"format tag {tag:#x} with {bits} bits per sample")

    frame_bytes = dtype.itemsize * channels
    n_frames = len(payload) // frame_bytes
    if n_frames == 0:
        raise DecodeError("data chunk holds no complete sample frames")
    raw = np.frombuffer(payload[:n_frames * frame_bytes], dtype=dtype)
    x = raw.astype(np.float64).reshape(n_frames, channels) * scale
    if not np.all(np.isfinite(x)):
        raise DecodeError("non-finite float samples")
    x = np.clip(x.mean(axis=1), -1.0, 1.0)
    return AudioClip(x, rate, source_id)


def read_wav(path) -> AudioClip:
    with open(path, "rb") as fh:
        return decode_wav(fh.read(), source_id=os.fspath(path))


def encode_wav(clip: AudioClip) -> bytes:
    """Encode a clip as mono 16-bit little-endian PCM.

    Samples are scaled by 32768 and saturated, so that decoding a 16-bit
    file and encoding it again is lossless.
    """
    q = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    body = q.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(body), b"WAVE",
        b"fmt ", 16, _WAVE_FORMAT_PCM, 1, clip.sample_rate, clip.sample_rate * 2, 2, 16,
        b"data", len(body),
    )
    return header + body


def write_wav(path, clip: AudioClip) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_wav(clip))


def resample_linear(clip: AudioClip, target_sr: int) -> AudioClip:
    """Resample by linear interpolation between neighbouring samples.

    The output holds ``round(len * target_sr / sample_rate)`` samples; output
    positions past the last input sample repeat it.
    """
    target_sr = int(target_sr)
    if target_sr <= 0:
        raise ConfigError("target_sr must be positive")
    if target_sr == clip.sample_rate:
        return clip
    n_in = len(clip)
    n_out = max(1, int(np.floor(n_in * target_sr / clip.sample_rate + 0.5)))
    pos = np.arange(n_out) * (clip.sample_rate / target_sr)
    y = np.interp(pos, np.arange(n_in), clip.samples)
    return AudioClip(y, target_sr, clip.source_id)


def slice_segments(clip: AudioClip, seg_seconds: float = SEGMENT_SECONDS,
                   count: int = SEGMENTS_PER_CLIP, parent_id: str | None = None) -> list[Segment]:
    """Cut ``count`` contiguous segments from the start of ``clip``.

    Trailing samples beyond ``count * seg_len`` are discarded.
    """
    seg_len = int(round(seg_seconds * clip.sample_rate))
    if count <= 0 or seg_len <= 0:
        raise ConfigError("count and seg_seconds must be positive")
    if len(clip) < count * seg_len:
        raise InsufficientAudio(
            f"need {count * seg_len} samples for {count} x {seg_seconds}s, got {len(clip)}")
    parent = clip.source_id if parent_id is None else parent_id
    return [
        Segment(AudioClip(clip.samples[i * seg_len:(i + 1) * seg_len], clip.sample_rate,
                          f"{parent}#{i}"), parent, i)
        for i in range(count)
    ]
