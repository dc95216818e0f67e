"""File-based pipeline stages: prepare, featurize, train, fuse, evaluate, report.

Stages communicate only through files in a work directory. Every artifact
records the hash of the configuration that produced it, and each stage
refuses to consume an upstream artifact whose hash does not match the
current configuration.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import ensemble as ens
from .audio_io import SAMPLE_RATE, read_wav, resample_linear, slice_segments, write_wav
from .dataset import GENRES, Manifest, scan_corpus, split
from .errors import ConfigError, PipelineError, StaleArtifact
from .evaluation import (confusion, confusion_svg, clip_majority, metrics, write_report_csv,
                         write_report_json)
from .features import FeatureCache, FeatureConfig, mfcc
from .nn import AccompNetConfig, TrainConfig, VocalNetConfig, load_model, save_model, train
from .nn.serialize import config_hash
from .separation import SeparationConfig, load_stems, median_filter_separate, stem_filenames

log = logging.getLogger(__name__)

BASE_MODELS = ("vocal", "accomp")
BAGGING = ("mean", "soft_vote", "ignore_vocal", "ignore_accomp")
STACKING = {"stack_logreg": "logreg", "stack_dense": "dense", "stack_gbdt": "gbdt"}
ENSEMBLES = BAGGING + tuple(STACKING)
MODEL_SELECTIONS = BASE_MODELS + ENSEMBLES

# rows of the comparison table, grouped by model family
TABLE_SECTIONS = (
    ("Stacking Ensembles", (("stack_gbdt", "XGBoost-style GBDT"), ("stack_logreg", "Logistic Regression (LR)"),
                            ("stack_dense", "Dense Neural Network"))),
    ("Bagging Ensembles", (("mean", "Mean Averaging"), ("soft_vote", "Soft Voting"),
                           ("ignore_vocal", "Ignore Vocals"), ("ignore_accomp", "Ignore Accompaniments"))),
    ("Individual Models", (("accomp", "CNN on Accompaniments"), ("vocal", "LSTM on Vocals"))),
)

WORKDIR_ENV = "STEMGENRE_WORKDIR"


@dataclass
class RunConfig:
    corpus: str = ""
    workdir: str = ""
    seed: int = 0
    separator: str = "median"
    stems_dir: str | None = None
    test_fraction: float = 0.2
    paper_style_split: bool = False
    sample_rate: int = SAMPLE_RATE
    separation: dict = field(default_factory=dict)
    features: dict = field(default_factory=dict)
    vocal_net: dict = field(default_factory=dict)
    accomp_net: dict = field(default_factory=dict)
    train_vocal: dict = field(default_factory=dict)
    train_accomp: dict = field(default_factory=dict)
    stacking: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    fusion_weights: dict = field(default_factory=dict)
    ensemble: str = "stack_logreg"

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def validate(self):
        if self.separator not in ("median", "external"):
            raise ConfigError(f"separator must be 'median' or 'external', got {self.separator!r}")
        if self.separator == "external" and not self.stems_dir:
            raise ConfigError("external separation needs stems_dir")
        if self.ensemble not in ENSEMBLES:
            raise ConfigError(f"ensemble must be one of {', '.join(ENSEMBLES)}")
        unknown = set(self.meta) - set(ens.META_KINDS)
        if unknown:
            raise ConfigError(f"unknown meta-model kinds in config: {sorted(unknown)}")
        unknown = set(self.stacking) - {"split_ratio"}
        if unknown:
            raise ConfigError(f"unknown stacking keys: {sorted(unknown)}")
        # construct once so that bad keys fail at command start
        try:
            self._build_all()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad configuration: {exc}") from None

    def _build_all(self):
        self.separation_config()
        self.feature_config()
        self.net_config("vocal")
        self.net_config("accomp")
        self.train_config("vocal")
        self.train_config("accomp")
        self.weights("soft_vote")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    # -- typed views ------------------------------------------------------------

    def separation_config(self):
        return SeparationConfig(**self.separation)

    def feature_config(self):
        return FeatureConfig(**self.features)

    def net_config(self, which):
        if which == "vocal":
            return VocalNetConfig.from_dict(self.vocal_net)
        return AccompNetConfig.from_dict(self.accomp_net)

    def train_config(self, which):
        d = dict(self.train_vocal if which == "vocal" else self.train_accomp)
        d.setdefault("seed", derive_seed(self.seed, "train", which))
        return TrainConfig.from_dict(d)

    def split_ratio(self):
        return float(self.stacking.get("split_ratio", 0.8))

    def weights(self, method):
        if method == "mean":
            return ens.FusionWeights.mean()
        if method == "ignore_vocal":
            return ens.FusionWeights.ignore_vocal()
        if method == "ignore_accomp":
            return ens.FusionWeights.ignore_accompaniment()
        if self.fusion_weights:
            return ens.FusionWeights.from_table(self.fusion_weights)
        return ens.default_soft_vote_weights()

    # -- stage hashes -------------------------------------------------------------

    def prepare_hash(self):
        return _hash("prepare", self.seed, self.separator, self.test_fraction, self.paper_style_split,
                     self.sample_rate, self.separation_config().__dict__)

    def featurize_hash(self):
        return _hash("featurize", self.prepare_hash(), self.feature_config().to_dict())

    def base_hash(self, which):
        return _hash("base", which, self.featurize_hash(), self.net_config(which).to_dict(),
                     self.train_config(which).to_dict())

    def meta_hash(self, kind):
        return _hash("stack", kind, self.base_hash("vocal"), self.base_hash("accomp"),
                     self.split_ratio(), self.meta.get(kind, {}))


def _hash(*parts):
    return config_hash(list(parts))


def derive_seed(seed, *labels) -> int:
    text = json.dumps([int(seed), *labels])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


# -- work directory ---------------------------------------------------------------

class WorkDir:
    def __init__(self, root):
        if not root:
            raise ConfigError(f"no work directory: pass --workdir, set it in the config, or set {WORKDIR_ENV}")
        self.root = Path(root)

    manifest = property(lambda self: self.root / "manifest.json")
    stems = property(lambda self: self.root / "stems")
    features = property(lambda self: self.root / "features" / "mfcc.bin")
    reports = property(lambda self: self.root / "reports")

    def model(self, which):
        return self.root / "models" / which

    def stack_dir(self, kind):
        return self.root / "models" / f"stack_{kind}"

    def require(self, path, stage):
        if not Path(path).exists():
            raise PipelineError(f"missing {path}; run `{stage}` first")

    @contextmanager
    def lock(self):
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.root / ".lock"
        try:
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise PipelineError(f"work directory {self.root} is locked by another command ({path})") from None
        try:
            os.write(fd, str(os.getpid()).encode())
            os.close(fd)
            yield self
        finally:
            path.unlink(missing_ok=True)


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _load_manifest(wd: WorkDir, cfg: RunConfig):
    wd.require(wd.manifest, "prepare")
    raw = _read_json(wd.manifest)
    if raw.get("config_hash") != cfg.prepare_hash():
        raise StaleArtifact(f"{wd.manifest} was prepared with a different configuration; rerun `prepare`")
    return Manifest.from_dict(raw["manifest"])


def _open_features(wd: WorkDir, cfg: RunConfig):
    wd.require(wd.features, "featurize")
    cache = FeatureCache.open(wd.features)
    if cache.meta.get("config_hash") != cfg.featurize_hash():
        raise StaleArtifact(f"{wd.features} was computed with a different configuration; rerun `featurize`")
    return cache


# -- stages -----------------------------------------------------------------------

def cmd_prepare(cfg: RunConfig):
    """Scan the corpus, split it and put two stems per segment on disk."""
    wd = WorkDir(cfg.workdir)
    if not cfg.corpus or not Path(cfg.corpus).is_dir():
        raise PipelineError(f"corpus directory {cfg.corpus!r} does not exist")
    manifest = scan_corpus(cfg.corpus)
    manifest = split(manifest, cfg.test_fraction, derive_seed(cfg.seed, "split"),
                     clip_coherent=not cfg.paper_style_split)
    seg_len = 3 * cfg.sample_rate
    if cfg.separator == "external":
        stems_dir = Path(cfg.stems_dir)
        for e in manifest.entries:
            acc, voc = (stems_dir / n for n in stem_filenames(e.segment_id))
            load_stems(acc, voc, seg_len, cfg.sample_rate)
            e.stems = {"accompaniment": os.fspath(acc.resolve()), "vocal": os.fspath(voc.resolve())}
    else:
        sep = cfg.separation_config()
        wd.stems.mkdir(parents=True, exist_ok=True)
        by_clip = {}
        for e in manifest.entries:
            by_clip.setdefault(e.audio_path, []).append(e)
        for audio_path, entries in by_clip.items():
            clip = resample_linear(read_wav(Path(cfg.corpus) / audio_path), cfg.sample_rate)
            segments = slice_segments(clip, 3, len(entries), parent_id=entries[0].parent_clip)
            for e in entries:
                stems = median_filter_separate(segments[e.slice_index].clip, sep)
                names = stem_filenames(e.segment_id)
                write_wav(wd.stems / names[0], stems.accompaniment)
                write_wav(wd.stems / names[1], stems.vocal)
                e.stems = {"accompaniment": f"stems/{names[0]}", "vocal": f"stems/{names[1]}"}
    _write_json(wd.manifest, {"config_hash": cfg.prepare_hash(), "manifest": manifest.to_dict()})
    log.info("prepared %d segments (%d skipped files)", len(manifest), len(manifest.skipped))
    return manifest


def _stem_path(wd, p):
    p = Path(p)
    return p if p.is_absolute() else wd.root / p


def cmd_featurize(cfg: RunConfig):
    """MFCC matrices for both stems of every segment, into one feature cache."""
    wd = WorkDir(cfg.workdir)
    manifest = _load_manifest(wd, cfg)
    fcfg = cfg.feature_config()
    seg_len = 3 * cfg.sample_rate

    def records():
        for e in manifest.entries:
            stems = load_stems(_stem_path(wd, e.stems["accompaniment"]), _stem_path(wd, e.stems["vocal"]),
                               seg_len, cfg.sample_rate)
            yield e.segment_id, "accompaniment", e.label, mfcc(stems.accompaniment, fcfg, e.segment_id)
            yield e.segment_id, "vocal", e.label, mfcc(stems.vocal, fcfg, e.segment_id)

    wd.features.parent.mkdir(parents=True, exist_ok=True)
    cache = FeatureCache.write(wd.features, records(),
                               {"config_hash": cfg.featurize_hash(), "feature_config": fcfg.to_dict()})
    log.info("featurized %d records", len(cache.records))
    return cache


_STEM_OF = {"vocal": "vocal", "accomp": "accompaniment"}


def _partition(manifest, name):
    entries = manifest.select(name)
    if not entries:
        raise PipelineError(f"the {name} partition is empty")
    return entries


def _features(cache, entries):
    ids = [e.segment_id for e in entries]
    return cache.stack(ids, "accompaniment"), cache.stack(ids, "vocal")


def _train_base(cfg, which, X, y):
    net, history = train(which, (X, y), cfg.train_config(which), cfg.net_config(which))
    return net, history


def cmd_train_base(cfg: RunConfig, which="both"):
    """Train the vocal BiLSTM and/or accompaniment CNN on the training partition."""
    wd = WorkDir(cfg.workdir)
    manifest = _load_manifest(wd, cfg)
    cache = _open_features(wd, cfg)
    entries = _partition(manifest, "train")
    y = manifest.labels(entries)
    X_acc, X_voc = _features(cache, entries)
    out = {}
    for w in (BASE_MODELS if which == "both" else (which,)):
        if w not in BASE_MODELS:
            raise ConfigError(f"base model must be 'vocal', 'accomp' or 'both', got {w!r}")
        net, history = _train_base(cfg, w, X_acc if w == "accomp" else X_voc, y)
        stem = wd.model(w)
        stem.parent.mkdir(parents=True, exist_ok=True)
        save_model(stem, net, seed=cfg.train_config(w).seed, extra={"stage_hash": cfg.base_hash(w)})
        _write_json(str(stem) + ".history.json", {"config_hash": cfg.base_hash(w), "history": history})
        out[w] = (net, history)
        log.info("trained %s model: best val loss %.4f", w, min(h["val_loss"] for h in history))
    return out


def _load_base(wd, cfg, which):
    stem = wd.model(which)
    wd.require(str(stem) + ".json", f"train-base --which {which}")
    manifest = _read_json(str(stem) + ".json")
    if manifest.get("extra", {}).get("stage_hash") != cfg.base_hash(which):
        raise StaleArtifact(f"{stem}.json was trained with a different configuration; rerun `train-base`")
    return load_model(stem)


class StemView:
    """Applies a base network to its own stem of ``(X_accomp, X_vocal)`` items."""

    def __init__(self, net, which):
        self.net, self.which = net, which

    def predict_proba(self, items):
        return self.net.predict_proba(items[0] if self.which == "accomp" else items[1])


def cmd_train_meta(cfg: RunConfig, kind="logreg"):
    """Stacking: base models on split A, meta-model on their split-B outputs."""
    kind = STACKING.get(kind, kind)
    if kind not in ens.META_KINDS:
        raise ConfigError(f"unknown meta-model kind {kind!r}")
    wd = WorkDir(cfg.workdir)
    manifest = _load_manifest(wd, cfg)
    cache = _open_features(wd, cfg)
    entries = _partition(manifest, "train")
    y = manifest.labels(entries)
    items = _features(cache, entries)
    groups = None if cfg.paper_style_split else np.array([e.parent_clip for e in entries])
    ids = np.array([e.segment_id for e in entries])
    histories = {}

    def base_trainer(sub_items, sub_y):
        acc, histories["accomp"] = _train_base(cfg, "accomp", sub_items[0], sub_y)
        voc, histories["vocal"] = _train_base(cfg, "vocal", sub_items[1], sub_y)
        return StemView(acc, "accomp"), StemView(voc, "vocal")

    stacked = ens.fit_stacking(items, y, base_trainer, kind, cfg.split_ratio(),
                               derive_seed(cfg.seed, "stack"), groups=groups, ids=ids,
                               meta_params=cfg.meta.get(kind))
    d = wd.stack_dir(kind)
    d.mkdir(parents=True, exist_ok=True)
    h = cfg.meta_hash(kind)
    save_model(d / "accomp", stacked.accompaniment.net, extra={"stage_hash": h})
    save_model(d / "vocal", stacked.vocal.net, extra={"stage_hash": h})
    stacked.meta.save(d / "meta", seed=derive_seed(cfg.seed, "stack"))
    _write_json(d / "stacking.json", {
        "config_hash": h, "meta_kind": kind,
        "split_a": ids[stacked.split_a].tolist(), "split_b": ids[stacked.split_b].tolist(),
        "histories": histories,
    })
    return stacked


def _load_stacked(wd, cfg, kind):
    d = wd.stack_dir(kind)
    wd.require(d / "stacking.json", f"train-meta --ensemble stack_{kind}")
    info = _read_json(d / "stacking.json")
    if info.get("config_hash") != cfg.meta_hash(kind):
        raise StaleArtifact(f"{d} was trained with a different configuration; rerun `train-meta`")
    return ens.StackedModel(StemView(load_model(d / "accomp"), "accomp"), StemView(load_model(d / "vocal"), "vocal"),
                            ens.load_meta(d / "meta"), np.array([]), np.array([]))


def predict(cfg: RunConfig, selection: str, items, wd=None):
    """Probability-like scores ``(n, 10)`` of one model selection on ``items``."""
    wd = wd or WorkDir(cfg.workdir)
    if selection in STACKING:
        return _load_stacked(wd, cfg, STACKING[selection]).predict_proba(items)
    if selection in BASE_MODELS:
        return StemView(_load_base(wd, cfg, selection), selection).predict_proba(items)
    if selection in BAGGING:
        x_a = StemView(_load_base(wd, cfg, "accomp"), "accomp").predict_proba(items)
        x_v = StemView(_load_base(wd, cfg, "vocal"), "vocal").predict_proba(items)
        return ens.soft_vote(x_a, x_v, cfg.weights(selection))
    raise ConfigError(f"unknown model selection {selection!r}; expected one of {', '.join(MODEL_SELECTIONS)}")


def _selection_hash(cfg, selection):
    if selection in STACKING:
        return cfg.meta_hash(STACKING[selection])
    if selection in BASE_MODELS:
        return cfg.base_hash(selection)
    return _hash("bagging", selection, cfg.base_hash("vocal"), cfg.base_hash("accomp"),
                 cfg.weights(selection).to_table())


def cmd_evaluate(cfg: RunConfig, selection: str, out=None):
    """Segment-level test metrics of one model selection, as JSON, CSV and SVG."""
    wd = WorkDir(cfg.workdir)
    manifest = _load_manifest(wd, cfg)
    cache = _open_features(wd, cfg)
    entries = _partition(manifest, "test")
    y = manifest.labels(entries)
    scores = predict(cfg, selection, _features(cache, entries), wd)
    pred = ens.decide(scores)
    report = metrics(confusion(y, pred))
    # clip-level majority vote is an extra, not the headline number
    clip_true, clip_pred = clip_majority([e.parent_clip for e in entries], scores, y)
    clip_report = metrics(confusion(clip_true, clip_pred))
    out = Path(out) if out else wd.reports
    out.mkdir(parents=True, exist_ok=True)
    extra = {"config_hash": _selection_hash(cfg, selection), "level": "segment",
             "clip_level_accuracy": clip_report.accuracy, "n_clips": int(clip_true.size)}
    if selection in BAGGING:
        extra["fusion_weights"] = cfg.weights(selection).to_table()
    write_report_json(out / f"{selection}.json", selection, report, extra)
    write_report_csv(out / f"{selection}.csv", report)
    (out / f"{selection}.svg").write_text(confusion_svg(confusion(y, pred), f"{selection} (test segments)"))
    return report


def cmd_report(cfg: RunConfig, out=None):
    """Comparison table over the base models and every evaluated ensemble.

    The individual models are always evaluated; an ensemble row appears
    only when a current evaluation report for it exists.
    """
    wd = WorkDir(cfg.workdir)
    out = Path(out) if out else wd.reports
    for which in BASE_MODELS:
        cmd_evaluate(cfg, which, out)
    rows = []
    for section, members in TABLE_SECTIONS:
        for key, label in members:
            path = out / f"{key}.json"
            if not path.exists():
                continue
            r = _read_json(path)
            if r.get("config_hash") != _selection_hash(cfg, key):
                log.warning("ignoring stale report %s", path)
                continue
            rows.append({"section": section, "model": label, "key": key, "recall": r["recall"],
                         "precision": r["precision"], "accuracy": r["accuracy"], "f1": r["f1"]})
    _write_json(out / "table.json", {"rows": rows})
    lines = ["| Type | Model | Recall | Precision | Accuracy | F1 Score |", "|---|---|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r['section']} | {r['model']} | {100 * r['recall']:.1f}% | {100 * r['precision']:.1f}% "
                     f"| {100 * r['accuracy']:.1f}% | {100 * r['f1']:.1f}% |")
    (out / "table.md").write_text("\n".join(lines) + "\n")
    with open(out / "table.csv", "w") as fh:
        fh.write("section,model,recall,precision,accuracy,f1\n")
        for r in rows:
            fh.write(f"{r['section']},{r['model']},{r['recall']:.6f},{r['precision']:.6f},"
                     f"{r['accuracy']:.6f},{r['f1']:.6f}\n")
    return rows


def mini_run_config(corpus, workdir, seed=0, **overrides) -> RunConfig:
    """Configuration for the synthetic mini-corpus.

    The network topologies are unchanged (two BiLSTM layers feeding three
    dense layers; four conv + pool stages and one dense layer) but their
    widths are reduced so that the whole pipeline runs in minutes on one
    CPU core.
    """
    d = dict(
        corpus=os.fspath(corpus), workdir=os.fspath(workdir), seed=seed,
        vocal_net={"hidden_per_direction": 16, "dense_sizes": [32, 16, 16], "dropout_rate": 0.2},
        accomp_net={"conv_channels": [8, 8, 8, 8], "dense_hidden": 16, "dropout_rate": 0.2},
        train_vocal={"learning_rate": 3e-3, "epochs": 12, "batch_size": 32, "early_stop_patience": 4},
        train_accomp={"learning_rate": 3e-3, "epochs": 12, "batch_size": 32, "early_stop_patience": 4},
    )
    d.update(overrides)
    return RunConfig.from_dict(d)


def run_all(cfg: RunConfig, ensembles=ENSEMBLES):
    """Every stage in order; returns the comparison table rows."""
    cmd_prepare(cfg)
    cmd_featurize(cfg)
    cmd_train_base(cfg)
    for e in ensembles:
        if e in STACKING:
            cmd_train_meta(cfg, STACKING[e])
        cmd_evaluate(cfg, e)
    return cmd_report(cfg)


__all__ = [
    "RunConfig", "WorkDir", "cmd_prepare", "cmd_featurize", "cmd_train_base", "cmd_train_meta",
    "cmd_evaluate", "cmd_report", "mini_run_config", "run_all", "predict", "GENRES",
]
