"""Minibatch Adam training with L1/L2 penalties, dropout and early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError, DataError, DivergenceError
from ..splits import stratified_split
from .layers import softmax_cross_entropy
from .models import Network, build_model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    l1: float = 0.0
    l2: float = 1e-4
    early_stop_patience: int | None = 5
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if not self.learning_rate > 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise ConfigError("learning_rate, epochs and batch_size must be positive")
        if self.l1 < 0 or self.l2 < 0:
            raise ConfigError("regularisation weights must be non-negative")
        if self.early_stop_patience is not None and self.early_stop_patience <= 0:
            raise ConfigError("early_stop_patience must be positive or None")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def penalty(model: Network, l1: float, l2: float) -> float:
    total = 0.0
    for k in model.weight_names():
        w = model.params[k]
        if l1:
            total += l1 * np.abs(w).sum()
        if l2:
            total += l2 * (w * w).sum()
    return float(total)


def loss_and_grads(model: Network, X, y, l1=0.0, l2=0.0, rng=None, train=True):
    """Regularised batch loss and its gradient for every parameter."""
    logits, cache = model.forward(X, train=train, rng=rng)
    data_loss, dlogits = softmax_cross_entropy(logits, y)
    grads = model.backward(dlogits, cache)
    for k in model.weight_names():
        w = model.params[k]
        if l1:
            grads[k] = grads[k] + l1 * np.sign(w)
        if l2:
            grads[k] = grads[k] + 2.0 * l2 * w
    return data_loss + penalty(model, l1, l2), grads


def evaluate_loss(model: Network, X, y, batch_size=64):
    """Mean cross-entropy and accuracy without dropout."""
    probs = model.predict_proba(X, batch_size=batch_size)
    p = np.clip(probs[np.arange(len(y)), y], 1e-300, None)
    return float(-np.log(p).mean()), float((probs.argmax(axis=1) == y).mean())


def train(model_kind, dataset, cfg: TrainConfig = TrainConfig(), net_config=None, validation=None,
          model: Network | None = None):
    """Train a fresh network of ``model_kind`` on ``dataset = (X, y)``.

    Without an explicit ``validation = (X_val, y_val)``, a stratified
    ``cfg.val_fraction`` of the data is held out for early stopping. When
    nothing can be held out, the training loss is monitored instead.

    A prepared ``model`` (for instance with custom initial weights) is
    trained in place instead of a freshly initialised one.

    Returns ``(model, history)`` where the model carries the parameters of
    the epoch with the lowest validation loss.
    """
    X, y = dataset
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0 or X.shape[0] != y.shape[0]:
        raise DataError("training set is empty or labels do not match inputs")
    if not np.all(np.isfinite(X)):
        raise DataError("training inputs contain non-finite values")

    init_ss, split_ss, shuffle_ss, drop_ss = np.random.SeedSequence(cfg.seed).spawn(4)
    if validation is None and cfg.val_fraction > 0:
        tr, va = stratified_split(y, cfg.val_fraction, np.random.default_rng(split_ss))
        if va.size and tr.size:
            validation = (X[va], y[va])
            X, y = X[tr], y[tr]
    if validation is not None:
        Xv, yv = np.asarray(validation[0], dtype=np.float64), np.asarray(validation[1], dtype=np.int64)
    else:
        Xv, yv = X, y

    if model is None:
        model = build_model(model_kind, net_config, np.random.default_rng(init_ss))
    elif model.kind != model_kind:
        raise ConfigError(f"model is a {model.kind!r} network, not {model_kind!r}")
    model.fit_input_stats(X)
    opt = Adam(model.params, cfg.learning_rate)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    drop_rng = np.random.default_rng(drop_ss)

    best_loss, best_params, best_epoch = math.inf, model.copy_params(), 0
    wait = 0
    history = []
    n = X.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        losses = []
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, grads = loss_and_grads(model, X[idx], y[idx], cfg.l1, cfg.l2, drop_rng)
            if not math.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}; try a lower learning rate than {cfg.learning_rate}")
            opt.step(model.params, grads)
            losses.append(loss * len(idx))
        val_loss, val_acc = evaluate_loss(model, Xv, yv)
        if not math.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": float(sum(losses) / n),
                        "val_loss": val_loss, "val_accuracy": val_acc})
        log.debug("epoch %d train %.4f val %.4f acc %.3f", epoch, history[-1]["train_loss"], val_loss, val_acc)
        if val_loss < best_loss:
            best_loss, best_params, best_epoch = val_loss, model.copy_params(), epoch
            wait = 0
        else:
            wait += 1
            if cfg.early_stop_patience is not None and wait >= cfg.early_stop_patience:
                break
    model.params = best_params
    for h in history:
        h["best"] = h["epoch"] == best_epoch
    return model, history
