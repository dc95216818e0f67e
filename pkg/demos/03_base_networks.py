"""
The two base classifiers
========================

A BiLSTM reads the vocal MFCC frame by frame; a small CNN looks at the
accompaniment MFCC as an image. Both end in a 10-way softmax.
"""

import numpy as np

from stemgenre.nn import AccompNetConfig, TrainConfig, VocalNetConfig, build_model, train

# full-size networks, as used on the real corpus
vocal = build_model("vocal", rng=0)
accomp = build_model("accomp", rng=0)
print("vocal BiLSTM parameters:", vocal.param_count())
print("accompaniment CNN parameters:", accomp.param_count())

# one random MFCC matrix through both
x = np.random.default_rng(1).normal(size=(40, 132))
print("vocal probabilities sum to", vocal.predict_proba(x).sum())
print("accompaniment probabilities sum to", accomp.predict_proba(x).sum())

# a toy task: the class shifts the first ten coefficient rows down, not at all, or up
rng = np.random.default_rng(2)
X = rng.normal(size=(120, 40, 132))
y = np.repeat([0, 1, 2], 40)
X[:, :10, :] += (y[:, None, None] - 1) * 1.5

small = AccompNetConfig(conv_channels=(4, 4, 4, 4), dense_hidden=16)
net, history = train("accomp", (X, y), TrainConfig(epochs=8, learning_rate=3e-3, seed=0), small)
for h in history:
    print("epoch %d  train %.3f  val %.3f  val acc %.2f%s"
          % (h["epoch"], h["train_loss"], h["val_loss"], h["val_accuracy"], "  *" if h["best"] else ""))

small_vocal = VocalNetConfig(hidden_per_direction=8, dense_sizes=(16, 16, 8))
net, history = train("vocal", (X, y), TrainConfig(epochs=8, learning_rate=3e-3, seed=0), small_vocal)
print("vocal net best val accuracy", max(h["val_accuracy"] for h in history))
