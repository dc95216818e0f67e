"""Seeded stratified splitting, optionally keeping groups together."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError


def n_holdout(n: int, fraction: float) -> int:
    return int(np.floor(n * fraction + 0.5))


def stratified_split(labels, fraction, rng, groups=None):
    """Split indices into ``(kept, held_out)``, both sorted.

    Within every class, ``round(n_class * fraction)`` units go to the
    held-out side. A unit is one sample, or one group when ``groups`` is
    given; all samples of a group share its fate.
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"split fraction must be in (0, 1), got {fraction}")
    labels = np.asarray(labels)
    n = labels.shape[0]
    if groups is None:
        groups = np.arange(n)
    groups = np.asarray(groups)
    if groups.shape != labels.shape:
        raise DataError("groups and labels differ in length")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    # first-occurrence order keeps the result independent of hash seeds
    uniq, first, inverse = np.unique(groups, return_index=True, return_inverse=True)
    group_label = labels[first]
    for g in range(len(uniq)):
        if np.any(labels[inverse == g] != group_label[g]):
            raise DataError(f"group {uniq[g]!r} mixes labels")
    held = np.zeros(len(uniq), dtype=bool)
    for c in np.unique(group_label):
        members = np.flatnonzero(group_label == c)
        k = n_holdout(members.size, fraction)
        if k:
            held[rng.permutation(members)[:k]] = True
    mask = held[inverse]
    return np.flatnonzero(~mask), np.flatnonzero(mask)
