"""
Fusing the two probability vectors
==================================

Bagging mixes the vectors with fixed per-genre weights. Stacking learns
the mix: base models trained on split A score split B, and a meta-model
learns from those scores.
"""

import numpy as np

from stemgenre import ensemble as ens
from stemgenre.synth import complementary_task

# a task where each base model only knows half of the genres
x_a, x_v, y = complementary_task(500, seed=0)
t_a, t_v, ty = complementary_task(200, seed=1)


def accuracy(pred):
    return (pred == ty).mean()


print("accompaniment alone", accuracy(ens.decide(t_a)))
print("vocal alone        ", accuracy(ens.decide(t_v)))

# bagging variants
for name, w in [("mean", ens.FusionWeights.mean()), ("soft vote", ens.default_soft_vote_weights()),
                ("ignore vocal", ens.FusionWeights.ignore_vocal()),
                ("ignore accompaniment", ens.FusionWeights.ignore_accompaniment())]:
    print("%-20s %.3f" % (name, accuracy(ens.decide(ens.soft_vote(t_a, t_v, w)))))
print("default soft-vote weights for classical:", ens.default_soft_vote_weights().to_table()["classical"])


# stacking; here the "trained" base models simply hand back their stored outputs
class Stored:
    def __init__(self, column):
        self.column = column

    def predict_proba(self, items):
        return items[self.column]


for kind in ("logreg", "dense", "gbdt"):
    stacked = ens.fit_stacking((x_a, x_v), y, lambda items, labels: (Stored(0), Stored(1)), kind, 0.8, seed=0)
    print("stacked %-7s %.3f  (A=%d, B=%d)" % (kind, accuracy(stacked.predict((t_a, t_v))),
                                               len(stacked.split_a), len(stacked.split_b)))
