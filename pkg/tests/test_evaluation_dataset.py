import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import clip_of
from stemgenre.audio_io import write_wav
from stemgenre.dataset import GENRES, Manifest, SegmentEntry, genre_id, scan_corpus, split
from stemgenre.errors import ConfigError, DataError, LayoutError
from stemgenre.evaluation import (ConfusionMatrix, clip_majority, confusion, confusion_svg, metrics, micro_scores,
                                  write_report_csv, write_report_json)

labels10 = arrays(np.int64, st.integers(1, 300), elements=st.integers(0, 9))


def test_perfect_predictions_diagonal():
    y = np.repeat(np.arange(10), 3)
    cm = confusion(y, y)
    np.testing.assert_array_equal(cm.counts, np.diag(np.full(10, 3)))
    r = metrics(cm)
    assert r.accuracy == r.recall == r.precision == r.f1 == 1.0


def test_small_confusion_cells():
    cm = confusion(np.array([0, 0, 1]), np.array([0, 1, 1]))
    expected = np.zeros((10, 10), dtype=int)
    expected[0, 0] = expected[0, 1] = expected[1, 1] = 1
    np.testing.assert_array_equal(cm.counts, expected)


def test_empty_inputs_rejected():
    with pytest.raises(DataError):
        confusion(np.array([], dtype=int), np.array([], dtype=int))
    with pytest.raises(DataError):
        confusion(np.array([0, 10]), np.array([0, 1]))


def test_hand_computed_macro_f1():
    c = np.zeros((10, 10), dtype=int)
    c[:2, :2] = [[1, 1], [0, 2]]
    r = metrics(ConfusionMatrix(c))
    assert abs(r.per_class[0].recall - 0.5) <= 1e-9 and abs(r.per_class[0].precision - 1.0) <= 1e-9
    assert abs(r.per_class[1].recall - 1.0) <= 1e-9 and abs(r.per_class[1].precision - 2 / 3) <= 1e-9
    assert abs(r.f1 - (2 / 3 + 0.8) / 2) <= 1e-9
    assert abs(r.f1 - 0.7333333333) <= 1e-9
    assert abs(r.recall - 0.75) <= 1e-9 and abs(r.precision - 5 / 6) <= 1e-9
    assert abs(r.accuracy - 0.75) <= 1e-9
    assert "zero_support" in r.per_class[5].flags and "never_predicted" in r.per_class[5].flags


def test_never_predicted_class_counts_in_macro():
    # class 2 has support but is never predicted: it counts with precision 0
    r = metrics(confusion(np.array([0, 1, 2, 2]), np.array([0, 1, 1, 1])))
    assert r.per_class[2].flags == ["never_predicted"]
    assert abs(r.precision - (1 + 1 / 3 + 0) / 3) <= 1e-12
    assert abs(r.recall - (1 + 1 + 0) / 3) <= 1e-12


@settings(max_examples=100)
@given(labels10)
def test_self_confusion_is_perfect(y):
    assert metrics(confusion(y, y)).accuracy == 1.0


@settings(max_examples=100)
@given(labels10, st.integers(0, 2**32 - 1))
def test_joint_permutation_invariance_and_micro(y, seed):
    rng = np.random.default_rng(seed)
    p = rng.integers(0, 10, size=y.size)
    perm = rng.permutation(y.size)
    cm = confusion(y, p)
    np.testing.assert_array_equal(cm.counts, confusion(y[perm], p[perm]).counts)
    acc = metrics(cm).accuracy
    mr, mp = micro_scores(cm)
    assert np.isclose(acc, mr) and np.isclose(acc, mp)


def test_clip_majority():
    parents = np.array(["a", "a", "a", "b", "b"])
    probs = np.array([onehot for onehot in np.eye(10)[[1, 1, 2, 3, 3]]])
    true, pred = clip_majority(parents, probs, np.array([1, 1, 1, 4, 4]))
    np.testing.assert_array_equal(true, [1, 4])
    np.testing.assert_array_equal(pred, [1, 3])


def test_report_writers(tmp_path):
    y = np.array([0, 1, 2, 2])
    cm = confusion(y, np.array([0, 1, 1, 2]))
    r = metrics(cm)
    write_report_json(tmp_path / "r.json", "x", r, {"config_hash": "h"})
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["model"] == "x" and d["config_hash"] == "h" and d["accuracy"] == 0.75
    write_report_csv(tmp_path / "r.csv", r)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("genre,recall") and len(lines) == 13
    svg = confusion_svg(cm, "t")
    assert svg.startswith("<svg") and svg.count("<rect") == 100


# -- dataset -------------------------------------------------------------------

def write_tiny_corpus(root, genres=("blues", "jazz"), clips=3, sr=1000, seconds=0.3):
    for g in genres:
        (root / g).mkdir(parents=True, exist_ok=True)
        for i in range(clips):
            write_wav(root / g / f"{g}.{i:05d}.wav", clip_of(np.zeros(int(sr * seconds)), sr=sr))


def test_scan_corpus_entries(tmp_path):
    write_tiny_corpus(tmp_path)
    m = scan_corpus(tmp_path, seg_seconds=0.03, count=10)
    assert len(m) == 2 * 3 * 10
    e = m.entries[0]
    assert (e.segment_id, e.parent_clip, e.slice_index, e.label) == ("blues.00000.0", "blues/blues.00000", 0, 0)
    assert m.counts()["jazz"] == 30


def test_scan_corpus_unknown_genre(tmp_path):
    (tmp_path / "polka").mkdir()
    with pytest.raises(LayoutError):
        scan_corpus(tmp_path)


def test_scan_corpus_empty_genre_warns(tmp_path, caplog):
    write_tiny_corpus(tmp_path, genres=("rock",))
    (tmp_path / "pop").mkdir()
    with caplog.at_level(logging.WARNING):
        m = scan_corpus(tmp_path, seg_seconds=0.03, count=10)
    assert m.counts()["pop"] == 0 and m.counts()["rock"] == 30
    assert any("pop" in r.message for r in caplog.records)


def test_scan_corpus_skips_bad_files(tmp_path):
    write_tiny_corpus(tmp_path, genres=("metal",))
    (tmp_path / "metal" / "broken.wav").write_bytes(b"RIFF....WAVEjunk")
    write_wav(tmp_path / "metal" / "short.wav", clip_of(np.zeros(50), sr=1000))
    m = scan_corpus(tmp_path, seg_seconds=0.03, count=10)
    assert len(m) == 30
    assert sorted(s["path"].rsplit("/", 1)[1] for s in m.skipped) == ["broken.wav", "short.wav"]


def test_hiphop_directory_name():
    assert genre_id("hiphop") == genre_id("hip-hop") == GENRES.index("hiphop")


def synthetic_manifest(clips_per_genre=100, slices=10):
    entries = []
    for g, name in enumerate(GENRES):
        for c in range(clips_per_genre):
            for s in range(slices):
                entries.append(SegmentEntry(f"{name}.{c:05d}.{s}", f"{name}/{name}.{c:05d}", s, g,
                                            f"{name}/{name}.{c:05d}.wav"))
    return Manifest(entries)


def test_split_arithmetic_full_corpus():
    m = split(synthetic_manifest(), 0.2, seed=0)
    test = m.select("test")
    assert len(test) == 2000
    clips = {e.parent_clip for e in test}
    assert len(clips) == 200
    per_genre = np.bincount([GENRES.index(c.split("/")[0]) for c in clips], minlength=10)
    np.testing.assert_array_equal(per_genre, 20)
    m.check_clip_coherent()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.5))
def test_clip_coherent_partitions_disjoint(seed, frac):
    m = split(synthetic_manifest(12, 4), frac, seed)
    train = {e.parent_clip for e in m.select("train")}
    test = {e.parent_clip for e in m.select("test")}
    assert not train & test
    assert len(m.select("train")) + len(m.select("test")) == len(m)


def test_split_deterministic_and_segment_mode():
    base = synthetic_manifest(10, 10)
    a, b = split(base, 0.2, 5), split(base, 0.2, 5)
    assert a.split == b.split
    seg = split(base, 0.2, 5, clip_coherent=False)
    assert len(seg.select("test")) == 200
    with pytest.raises(DataError):
        seg.check_clip_coherent()


def test_split_bad_fraction():
    with pytest.raises(ConfigError):
        split(synthetic_manifest(2, 2), 1.0, 0)


def test_manifest_json_round_trip(tmp_path):
    m = split(synthetic_manifest(3, 2), 0.34, 1)
    m.entries[0].stems = {"accompaniment": "stems/a.wav", "vocal": "stems/v.wav"}
    m.save(tmp_path / "m.json")
    back = Manifest.load(tmp_path / "m.json")
    assert back.to_dict() == m.to_dict()


def test_manifest_duplicate_ids():
    e = SegmentEntry("x", "p", 0, 0, "p.wav")
    with pytest.raises(DataError):
        Manifest([e, e])
