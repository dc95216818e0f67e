"""GTZAN-layout corpus scanning, the segment manifest and leakage-safe splits."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import SEGMENT_SECONDS, SEGMENTS_PER_CLIP, read_wav
from .errors import ConfigError, DataError, InsufficientAudio, LayoutError, StemGenreError
from .splits import stratified_split

log = logging.getLogger(__name__)

GENRES = ("blues", "classical", "country", "disco", "hiphop", "jazz", "metal", "pop", "reggae", "rock")
PARTITIONS = ("train", "test", "train_a", "train_b")


def genre_id(name: str) -> int:
    key = name.lower().replace("-", "")
    try:
        return GENRES.index(key)
    except ValueError:
        raise LayoutError(f"unknown genre {name!r}") from None


def genre_name(label: int) -> str:
    if not 0 <= int(label) < len(GENRES):
        raise DataError(f"genre label {label} out of range")
    return GENRES[int(label)]


@dataclass
class SegmentEntry:
    segment_id: str
    parent_clip: str
    slice_index: int
    label: int
    audio_path: str
    stems: dict | None = None
    features: dict | None = None


@dataclass
class Manifest:
    entries: list = field(default_factory=list)
    split: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)
    root: str = ""

    def __post_init__(self):
        ids = [e.segment_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate segment ids in manifest")

    def __len__(self):
        return len(self.entries)

    def by_id(self):
        return {e.segment_id: e for e in self.entries}

    def select(self, partition: str) -> list:
        return [e for e in self.entries if self.split.get(e.segment_id) == partition]

    def labels(self, entries=None):
        return np.array([e.label for e in (self.entries if entries is None else entries)], dtype=np.int64)

    def counts(self):
        out = {g: 0 for g in GENRES}
        for e in self.entries:
            out[GENRES[e.label]] += 1
        return out

    def check_clip_coherent(self):
        """Raise if any parent clip has slices in more than one partition."""
        seen = {}
        for e in self.entries:
            part = self.split.get(e.segment_id)
            if seen.setdefault(e.parent_clip, part) != part:
                raise DataError(f"clip {e.parent_clip} spans partitions {seen[e.parent_clip]} and {part}")

    def to_dict(self):
        return {"root": self.root, "entries": [asdict(e) for e in self.entries],
                "split": dict(self.split), "skipped": list(self.skipped)}

    @classmethod
    def from_dict(cls, d):
        return cls([SegmentEntry(**e) for e in d["entries"]], dict(d.get("split", {})),
                   list(d.get("skipped", [])), d.get("root", ""))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def scan_corpus(root, seg_seconds: float = SEGMENT_SECONDS, count: int = SEGMENTS_PER_CLIP) -> Manifest:
    """One manifest entry per (clip, slice) under ``root/<genre>/<name>.wav``.

    Files that fail to decode or are too short to slice are skipped and
    listed in ``Manifest.skipped`` instead of aborting the scan.
    """
    root = Path(root)
    if not root.is_dir():
        raise LayoutError(f"corpus root {root} is not a directory")
    entries, skipped = [], []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        label = genre_id(d.name)
        files = sorted(p for p in d.iterdir() if p.suffix.lower() == ".wav")
        if not files:
            log.warning("genre directory %s holds no WAV files", d)
        for f in files:
            parent = f"{GENRES[label]}/{f.stem}"
            base = f.stem if f.stem.startswith(GENRES[label] + ".") else f"{GENRES[label]}.{f.stem}"
            try:
                clip = read_wav(f)
                seg_len = int(round(seg_seconds * clip.sample_rate))
                if len(clip) < count * seg_len:
                    raise InsufficientAudio(f"{len(clip)} samples, need {count * seg_len}")
            except (StemGenreError, OSError) as exc:
                log.warning("skipping %s: %s", f, exc)
                skipped.append({"path": os.fspath(f), "reason": f"{type(exc).__name__}: {exc}"})
                continue
            for i in range(count):
                entries.append(SegmentEntry(f"{base}.{i}", parent, i, label,
                                            os.fspath(f.relative_to(root))))
    if skipped:
        log.warning("skipped %d unreadable or short files", len(skipped))
    return Manifest(entries, {}, skipped, os.fspath(root))


def split(manifest: Manifest, test_fraction: float, seed: int, clip_coherent: bool = True) -> Manifest:
    """Assign every segment to ``train`` or ``test``, stratified by genre.

    With ``clip_coherent`` the draw is over parent clips, so all slices of a
    clip land in the same partition.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must be in (0, 1), got {test_fraction}")
    labels = manifest.labels()
    groups = np.array([e.parent_clip for e in manifest.entries]) if clip_coherent else None
    if not manifest.entries:
        return Manifest([], {}, list(manifest.skipped), manifest.root)
    train_idx, test_idx = stratified_split(labels, test_fraction, np.random.default_rng(seed), groups)
    assignment = {}
    for i in train_idx:
        assignment[manifest.entries[i].segment_id] = "train"
    for i in test_idx:
        assignment[manifest.entries[i].segment_id] = "test"
    out = Manifest(list(manifest.entries), assignment, list(manifest.skipped), manifest.root)
    if clip_coherent:
        out.check_clip_coherent()
    return out
