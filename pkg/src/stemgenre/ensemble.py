"""Fusing the accompaniment and vocal probability vectors.

Two families are provided. Bagging combines the two vectors per genre with
fixed weights, ``y[i] = x_a[i] * w_a[i] + x_v[i] * w_v[i]``, and decides by
argmax. Stacking trains a meta-model on the concatenated 20-value input,
using base models fitted on a disjoint part of the training data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dataset import GENRES
from .errors import ConfigError, DataError, StratificationError
from .nn import MLPConfig, TrainConfig, softmax, train
from .nn.serialize import config_hash, load_arrays, save_arrays
from .nn.models import MLP
from .splits import stratified_split

log = logging.getLogger(__name__)

N_CLASSES = len(GENRES)
PROB_TOL = 1e-6


def check_prob_vectors(x, name="x", tol=PROB_TOL):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != N_CLASSES:
        raise DataError(f"{name} must have {N_CLASSES} entries per row, got shape {x.shape}")
    if not np.all(np.isfinite(x)) or np.any(x < 0) or np.any(x > 1):
        raise DataError(f"{name} entries must be finite probabilities in [0, 1]")
    if np.any(np.abs(x.sum(axis=-1) - 1.0) > tol):
        raise DataError(f"{name} rows must sum to 1")
    return x


# -- bagging ------------------------------------------------------------------

@dataclass(frozen=True)
class FusionWeights:
    """Per-genre weights for the accompaniment (``w_a``) and vocal (``w_v``) vectors."""

    w_a: np.ndarray = field(default_factory=lambda: np.full(N_CLASSES, 0.5))
    w_v: np.ndarray = field(default_factory=lambda: np.full(N_CLASSES, 0.5))

    def __post_init__(self):
        w_a = np.broadcast_to(np.asarray(self.w_a, dtype=np.float64), (N_CLASSES,)).copy()
        w_v = np.broadcast_to(np.asarray(self.w_v, dtype=np.float64), (N_CLASSES,)).copy()
        if not (np.all(np.isfinite(w_a)) and np.all(np.isfinite(w_v))):
            raise ConfigError("fusion weights must be finite")
        if np.any(w_a < 0) or np.any(w_v < 0):
            raise ConfigError("fusion weights must be non-negative")
        if np.any(w_a + w_v <= 0):
            bad = [GENRES[i] for i in np.flatnonzero(w_a + w_v <= 0)]
            raise ConfigError(f"both weights are zero for {', '.join(bad)}")
        object.__setattr__(self, "w_a", w_a)
        object.__setattr__(self, "w_v", w_v)

    @classmethod
    def mean(cls):
        return cls(np.full(N_CLASSES, 0.5), np.full(N_CLASSES, 0.5))

    @classmethod
    def ignore_vocal(cls):
        return cls(np.ones(N_CLASSES), np.zeros(N_CLASSES))

    @classmethod
    def ignore_accompaniment(cls):
        return cls(np.zeros(N_CLASSES), np.ones(N_CLASSES))

    @classmethod
    def from_table(cls, table: dict, base: "FusionWeights | None" = None):
        """Build from ``{genre: {"w_a": .., "w_v": ..}}``; unlisted genres keep ``base``."""
        base = base or cls.mean()
        w_a, w_v = base.w_a.copy(), base.w_v.copy()
        for genre, w in table.items():
            key = genre.replace("-", "").lower()
            if key not in GENRES:
                raise ConfigError(f"unknown genre {genre!r} in fusion weights")
            unknown = set(w) - {"w_a", "w_v"}
            if unknown:
                raise ConfigError(f"unknown fusion weight keys {sorted(unknown)} for {genre}")
            i = GENRES.index(key)
            w_a[i] = w.get("w_a", w_a[i])
            w_v[i] = w.get("w_v", w_v[i])
        return cls(w_a, w_v)

    def to_table(self):
        return {g: {"w_a": float(self.w_a[i]), "w_v": float(self.w_v[i])} for i, g in enumerate(GENRES)}


# the vocal vote is dropped for classical, which is instrumental
SOFT_VOTE_OVERRIDES = {"classical": {"w_a": 1.0, "w_v": 0.0}}


def default_soft_vote_weights():
    return FusionWeights.from_table(SOFT_VOTE_OVERRIDES)


def soft_vote(x_a, x_v, w: FusionWeights) -> np.ndarray:
    """Per-genre weighted sum of the two vectors; not renormalised."""
    if not isinstance(w, FusionWeights):
        raise ConfigError("soft_vote needs FusionWeights")
    x_a = check_prob_vectors(x_a, "x_a")
    x_v = check_prob_vectors(x_v, "x_v")
    return x_a * w.w_a + x_v * w.w_v


def mean_average(x_a, x_v) -> np.ndarray:
    return soft_vote(x_a, x_v, FusionWeights.mean())


def decide(y) -> np.ndarray | int:
    """Index of the highest score; ties go to the lowest index."""
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise DataError("scores must be finite")
    d = np.argmax(y, axis=-1)
    return int(d) if d.ndim == 0 else d


def stack_features(x_a, x_v) -> np.ndarray:
    """Concatenate accompaniment then vocal probabilities into 20 values."""
    x_a = check_prob_vectors(x_a, "x_a")
    x_v = check_prob_vectors(x_v, "x_v")
    if x_a.shape != x_v.shape:
        raise DataError("x_a and x_v differ in shape")
    return np.concatenate([x_a, x_v], axis=-1)


def split_stack(z):
    z = np.asarray(z)
    return z[..., :N_CLASSES], z[..., N_CLASSES:]


# -- meta-models ----------------------------------------------------------------

def _check_meta_input(X, y=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != 2 * N_CLASSES:
        raise DataError(f"meta-model input must be (n, {2 * N_CLASSES}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("meta-model input contains non-finite values")
    if y is None:
        return X
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (X.shape[0],) or y.min() < 0 or y.max() >= N_CLASSES:
        raise DataError("labels must be one integer in [0, 10) per input row")
    if np.unique(y).size < 2:
        raise DataError("meta-model training needs at least two classes")
    return X, y


class MetaModel:
    kind = ""

    def predict_proba(self, X):
        raise NotImplementedError

    def predict(self, X):
        return decide(self.predict_proba(X))

    def config(self) -> dict:
        return {}

    def arrays(self) -> dict:
        raise NotImplementedError

    def save(self, stem, seed=None):
        cfg = self.config()
        header = {"format": "stemgenre-meta/1", "kind": self.kind, "config": cfg, "seed": seed,
                  "config_hash": config_hash({"kind": self.kind, "config": cfg})}
        return save_arrays(stem, self.arrays(), header)


class LogRegMeta(MetaModel):
    """Multinomial logistic regression, full-batch accelerated gradient descent."""

    kind = "logreg"

    def __init__(self, l2=1e-3, max_iter=20000, tol=1e-6):
        self.l2, self.max_iter, self.tol = l2, max_iter, tol
        self.W = np.zeros((2 * N_CLASSES, N_CLASSES))
        self.b = np.zeros(N_CLASSES)
        self.n_iter_ = 0
        self.grad_norm_ = np.inf

    def config(self):
        return {"l2": self.l2, "max_iter": self.max_iter, "tol": self.tol}

    def _grad(self, W, b, X, Y):
        P = softmax(X @ W + b)
        R = (P - Y) / X.shape[0]
        return X.T @ R + 2.0 * self.l2 * W, R.sum(axis=0)

    def fit(self, X, y):
        X, y = _check_meta_input(X, y)
        n = X.shape[0]
        Y = np.eye(N_CLASSES)[y]
        Xb = np.hstack([X, np.ones((n, 1))])
        # Lipschitz bound of the averaged softmax cross-entropy gradient
        lip = 0.5 * np.linalg.norm(Xb, 2) ** 2 / n + 2.0 * self.l2
        step = 1.0 / lip
        W, b = self.W.copy(), self.b.copy()
        W_prev, b_prev = W.copy(), b.copy()
        t = 1.0
        for it in range(1, self.max_iter + 1):
            # Nesterov extrapolation with gradient-based restart
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            mom = (t - 1.0) / t_next
            Wy, by = W + mom * (W - W_prev), b + mom * (b - b_prev)
            gW, gb = self._grad(Wy, by, X, Y)
            W_prev, b_prev = W, b
            W, b = Wy - step * gW, by - step * gb
            if np.sum(gW * (W - W_prev)) + np.sum(gb * (b - b_prev)) > 0:
                t_next = 1.0
            t = t_next
            if it % 10 == 0 or it == self.max_iter:
                gW, gb = self._grad(W, b, X, Y)
                gnorm = np.sqrt(np.sum(gW * gW) + np.sum(gb * gb))
                if gnorm < self.tol:
                    break
        self.W, self.b = W, b
        gW, gb = self._grad(W, b, X, Y)
        self.grad_norm_ = float(np.sqrt(np.sum(gW * gW) + np.sum(gb * gb)))
        self.n_iter_ = it
        return self

    def predict_proba(self, X):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X = _check_meta_input(X[None] if single else X)
        p = softmax(X @ self.W + self.b)
        return p[0] if single else p

    def arrays(self):
        return {"W": self.W, "b": self.b}

    @classmethod
    def from_arrays(cls, config, arrays):
        m = cls(**config)
        m.W, m.b = arrays["W"], arrays["b"]
        return m


class DenseMeta(MetaModel):
    """One hidden ReLU layer and a softmax output, trained like the base networks."""

    kind = "dense"

    def __init__(self, hidden=32, train_config=None):
        self.hidden = int(hidden)
        self.train_config = train_config or TrainConfig(
            learning_rate=1e-2, epochs=300, batch_size=32, l2=1e-4, early_stop_patience=30)
        self.net = MLP(MLPConfig(inputs=2 * N_CLASSES, hidden=(self.hidden,)), rng=0)
        self.history_ = []

    def config(self):
        return {"hidden": self.hidden, "train_config": self.train_config.to_dict()}

    def fit(self, X, y, model=None):
        X, y = _check_meta_input(X, y)
        self.net, self.history_ = train("mlp", (X, y), self.train_config, self.net.config, model=model)
        return self

    def predict_proba(self, X):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        p = self.net.predict_proba(_check_meta_input(X[None] if single else X))
        return p[0] if single else p

    def arrays(self):
        return dict(self.net.params)

    @classmethod
    def from_arrays(cls, config, arrays):
        m = cls(config["hidden"], TrainConfig.from_dict(config["train_config"]))
        for k in m.net.params:
            m.net.params[k] = arrays[k]
        return m


class GBDTMeta(MetaModel):
    """Softmax gradient boosting with depth-limited regression trees.

    Each round fits one tree per class to the gradient of the multinomial
    log-loss, with second-order (gradient / hessian) leaf values, and adds
    it to the class score scaled by ``learning_rate``. Trees are stored as
    complete binary arrays: node ``i`` has children ``2i+1`` and ``2i+2``;
    a feature index of -1 marks a leaf.
    """

    kind = "gbdt"

    def __init__(self, rounds=100, learning_rate=0.1, max_depth=3, reg_lambda=1.0, min_child_weight=1e-3):
        if not 1 <= max_depth <= 3:
            raise ConfigError("max_depth must be between 1 and 3")
        self.rounds, self.learning_rate, self.max_depth = int(rounds), float(learning_rate), int(max_depth)
        self.reg_lambda, self.min_child_weight = float(reg_lambda), float(min_child_weight)
        n_nodes = 2 ** (self.max_depth + 1) - 1
        self.feature = np.full((0, N_CLASSES, n_nodes), -1, dtype=np.int64)
        self.threshold = np.zeros((0, N_CLASSES, n_nodes))
        self.value = np.zeros((0, N_CLASSES, n_nodes))
        self.loss_trace_ = []

    def config(self):
        return {"rounds": self.rounds, "learning_rate": self.learning_rate, "max_depth": self.max_depth,
                "reg_lambda": self.reg_lambda, "min_child_weight": self.min_child_weight}

    def _fit_tree(self, X, order, g, h, feature, threshold, value):
        lam = self.reg_lambda
        n = X.shape[0]
        nodes = {0: np.ones(n, dtype=bool)}
        for node in range(feature.shape[0]):
            mask = nodes.get(node)
            if mask is None:
                continue
            G, H = g[mask].sum(), h[mask].sum()
            value[node] = G / (H + lam)
            depth = int(np.floor(np.log2(node + 1)))
            if depth >= self.max_depth or mask.sum() < 2:
                continue
            best = (1e-12, None, None)
            parent = G * G / (H + lam)
            for f in range(X.shape[1]):
                idx = order[f][mask[order[f]]]
                xs = X[idx, f]
                cg, ch = np.cumsum(g[idx])[:-1], np.cumsum(h[idx])[:-1]
                valid = (xs[1:] > xs[:-1]) & (ch >= self.min_child_weight) & (H - ch >= self.min_child_weight)
                if not valid.any():
                    continue
                gain = cg * cg / (ch + lam) + (G - cg) ** 2 / (H - ch + lam) - parent
                gain = np.where(valid, gain, -np.inf)
                k = int(np.argmax(gain))
                if gain[k] > best[0]:
                    best = (gain[k], f, 0.5 * (xs[k] + xs[k + 1]))
            if best[1] is None:
                continue
            _, f, thr = best
            feature[node], threshold[node] = f, thr
            left = mask & (X[:, f] <= thr)
            nodes[2 * node + 1] = left
            nodes[2 * node + 2] = mask & ~left

    @staticmethod
    def _apply(X, feature, threshold, value):
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(int(np.log2(feature.shape[0] + 1))):
            f = feature[node]
            internal = f >= 0
            go_left = X[rows, np.where(internal, f, 0)] <= threshold[node]
            node = np.where(internal, np.where(go_left, 2 * node + 1, 2 * node + 2), node)
        return value[node]

    def _scores(self, X, rounds=None):
        R = self.feature.shape[0] if rounds is None else min(rounds, self.feature.shape[0])
        F = np.zeros((X.shape[0], N_CLASSES))
        for r in range(R):
            for k in range(N_CLASSES):
                F[:, k] += self.learning_rate * self._apply(X, self.feature[r, k], self.threshold[r, k], self.value[r, k])
        return F

    def fit(self, X, y):
        X, y = _check_meta_input(X, y)
        n = X.shape[0]
        Y = np.eye(N_CLASSES)[y]
        order = [np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]
        n_nodes = self.feature.shape[2]
        feature = np.full((self.rounds, N_CLASSES, n_nodes), -1, dtype=np.int64)
        threshold = np.zeros((self.rounds, N_CLASSES, n_nodes))
        value = np.zeros((self.rounds, N_CLASSES, n_nodes))
        F = np.zeros((n, N_CLASSES))
        self.loss_trace_ = [_log_loss(softmax(F), y)]
        for r in range(self.rounds):
            P = softmax(F)
            for k in range(N_CLASSES):
                g = Y[:, k] - P[:, k]
                h = P[:, k] * (1.0 - P[:, k])
                self._fit_tree(X, order, g, h, feature[r, k], threshold[r, k], value[r, k])
            for k in range(N_CLASSES):
                F[:, k] += self.learning_rate * self._apply(X, feature[r, k], threshold[r, k], value[r, k])
            self.loss_trace_.append(_log_loss(softmax(F), y))
        self.feature, self.threshold, self.value = feature, threshold, value
        return self

    def predict_proba(self, X, rounds=None):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        p = softmax(self._scores(_check_meta_input(X[None] if single else X), rounds))
        return p[0] if single else p

    def arrays(self):
        return {"feature": self.feature.astype(np.float64), "threshold": self.threshold, "value": self.value}

    @classmethod
    def from_arrays(cls, config, arrays):
        m = cls(**config)
        m.feature = arrays["feature"].astype(np.int64)
        m.threshold, m.value = arrays["threshold"], arrays["value"]
        return m


def _log_loss(P, y):
    return float(-np.log(np.clip(P[np.arange(len(y)), y], 1e-300, None)).mean())


META_KINDS = {cls.kind: cls for cls in (LogRegMeta, DenseMeta, GBDTMeta)}


def make_meta(kind: str, **params) -> MetaModel:
    try:
        return META_KINDS[kind](**params)
    except KeyError:
        raise ConfigError(f"unknown meta-model kind {kind!r}; expected one of {sorted(META_KINDS)}") from None


def meta_logreg_train(inputs, labels, **params) -> LogRegMeta:
    return LogRegMeta(**params).fit(inputs, labels)


def meta_logreg_predict(m: LogRegMeta, x):
    return m.predict_proba(x)


def meta_dense_train(inputs, labels, **params) -> DenseMeta:
    return DenseMeta(**params).fit(inputs, labels)


def meta_dense_predict(m: DenseMeta, x):
    return m.predict_proba(x)


def meta_gbdt_train(inputs, labels, **params) -> GBDTMeta:
    return GBDTMeta(**params).fit(inputs, labels)


def meta_gbdt_predict(m: GBDTMeta, x, rounds=None):
    return m.predict_proba(x, rounds)


def load_meta(stem, expected_hash=None) -> MetaModel:
    manifest, arrays = load_arrays(stem, expected_hash)
    cls = META_KINDS.get(manifest.get("kind"))
    if cls is None:
        raise DataError(f"{stem}: unknown meta-model kind {manifest.get('kind')!r}")
    cfg = manifest["config"]
    if config_hash({"kind": cls.kind, "config": cfg}) != manifest["config_hash"]:
        raise DataError(f"{stem}: config does not match its recorded hash")
    return cls.from_arrays(cfg, arrays)


# -- stacking protocol ------------------------------------------------------------

def _take(items, idx):
    if isinstance(items, tuple):
        return tuple(_take(i, idx) for i in items)
    if isinstance(items, np.ndarray):
        return items[idx]
    return [items[i] for i in idx]


def _predict(model, items):
    fn = getattr(model, "predict_proba", model)
    return np.asarray(fn(items), dtype=np.float64)


@dataclass
class StackedModel:
    """Frozen base models plus the meta-model trained on their outputs."""

    accompaniment: object
    vocal: object
    meta: MetaModel
    split_a: np.ndarray
    split_b: np.ndarray

    def base_probabilities(self, items):
        return _predict(self.accompaniment, items), _predict(self.vocal, items)

    def predict_proba(self, items):
        x_a, x_v = self.base_probabilities(items)
        return self.meta.predict_proba(stack_features(x_a, x_v))

    def predict(self, items):
        return decide(self.predict_proba(items))


def stacking_split(labels, split_ratio, seed, groups=None, ids=None):
    """Stratified disjoint ``(A, B)`` index split with ``split_ratio`` going to A."""
    if not 0.0 < split_ratio < 1.0:
        raise ConfigError(f"split_ratio must be in (0, 1), got {split_ratio}")
    labels = np.asarray(labels)
    a, b = stratified_split(labels, 1.0 - split_ratio, np.random.default_rng(seed), groups)
    present = np.unique(labels)
    for name, part in (("A", a), ("B", b)):
        missing = np.setdiff1d(present, labels[part])
        if missing.size:
            raise StratificationError(f"classes {missing.tolist()} absent from stacking split {name}")
    if ids is not None:
        ids = np.asarray(ids)
        shared = set(ids[a].tolist()) & set(ids[b].tolist())
        if shared:
            raise StratificationError(f"{len(shared)} segment ids appear in both stacking splits")
    return a, b


def fit_stacking(train_items, labels, base_trainer, meta_kind="logreg", split_ratio=0.8, seed=0,
                 groups=None, ids=None, meta_params=None) -> StackedModel:
    """Stacking in four steps.

    1. Split the training data into disjoint, stratified parts A and B.
    2. Train both base models on A with ``base_trainer(items_A, labels_A)``,
       which returns ``(accompaniment_model, vocal_model)``.
    3. Predict B with the frozen base models.
    4. Train the meta-model on the stacked B predictions and B labels.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise DataError("no training segments for stacking")
    a, b = stacking_split(labels, split_ratio, seed, groups, ids)
    acc, voc = base_trainer(_take(train_items, a), labels[a])
    items_b = _take(train_items, b)
    z = stack_features(_predict(acc, items_b), _predict(voc, items_b))
    meta = make_meta(meta_kind, **(meta_params or {})).fit(z, labels[b])
    log.info("stacking: %d segments in A, %d in B, meta=%s", a.size, b.size, meta_kind)
    return StackedModel(acc, voc, meta, a, b)
