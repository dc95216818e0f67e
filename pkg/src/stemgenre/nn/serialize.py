"""Parameter files: a JSON manifest plus a raw little-endian float64 blob.

``<stem>.json`` lists every array (name, shape, offset in values) in
declaration order together with the model kind, its config, the seed and
a config hash; ``<stem>.bin`` holds the concatenated values.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from ..errors import DataError, StaleArtifact
from .models import Network, build_model


def config_hash(obj) -> str:
    """SHA-256 of the canonical JSON form of ``obj``."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(text.encode()).hexdigest()


def _jsonable(o):
    if hasattr(o, "to_dict"):
        return o.to_dict()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    raise TypeError(f"{type(o).__name__} is not JSON serialisable")


def save_arrays(stem, arrays: dict, header: dict) -> dict:
    """Write ``arrays`` (name -> ndarray) under ``stem``; returns the manifest."""
    stem = os.fspath(stem)
    specs, offset = [], 0
    with open(stem + ".bin", "wb") as fh:
        for name, a in arrays.items():
            a = np.ascontiguousarray(a, dtype="<f8")
            specs.append({"name": name, "shape": list(a.shape), "offset": offset})
            fh.write(a.tobytes())
            offset += a.size
    manifest = dict(header)
    manifest["arrays"] = specs
    manifest["n_values"] = offset
    with open(stem + ".json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True, default=_jsonable)
    return manifest


def load_arrays(stem, expected_hash: str | None = None):
    stem = os.fspath(stem)
    with open(stem + ".json") as fh:
        manifest = json.load(fh)
    if expected_hash is not None and manifest.get("config_hash") != expected_hash:
        raise StaleArtifact(
            f"{stem}.json was written with config hash {manifest.get('config_hash')}, expected {expected_hash}")
    blob = np.fromfile(stem + ".bin", dtype="<f8")
    if blob.size != manifest["n_values"]:
        raise DataError(f"{stem}.bin holds {blob.size} values, manifest declares {manifest['n_values']}")
    arrays = {}
    for s in manifest["arrays"]:
        size = int(np.prod(s["shape"], dtype=np.int64))
        arrays[s["name"]] = blob[s["offset"]:s["offset"] + size].reshape(s["shape"]).astype(np.float64)
    return manifest, arrays


def model_header(model: Network, seed=None, extra=None) -> dict:
    cfg = model.config.to_dict()
    header = {"format": "stemgenre-params/1", "kind": model.kind, "config": cfg, "seed": seed,
              "config_hash": config_hash({"kind": model.kind, "config": cfg, **(extra or {})})}
    if extra:
        header["extra"] = extra
    return header


def save_model(stem, model: Network, seed=None, extra=None) -> dict:
    arrays = dict(model.params)
    arrays.update({"buffer:" + k: v for k, v in model.buffers.items()})
    return save_arrays(stem, arrays, model_header(model, seed, extra))


def load_model(stem, expected_hash: str | None = None) -> Network:
    manifest, arrays = load_arrays(stem, expected_hash)
    recomputed = config_hash({"kind": manifest["kind"], "config": manifest["config"],
                              **(manifest.get("extra") or {})})
    if recomputed != manifest.get("config_hash"):
        raise DataError(f"{os.fspath(stem)}.json config does not match its recorded hash")
    model = build_model(manifest["kind"], manifest["config"], rng=0)
    for name, a in arrays.items():
        if name.startswith("buffer:"):
            target = model.buffers
            name = name[len("buffer:"):]
        else:
            target = model.params
        if name not in target or target[name].shape != a.shape:
            raise DataError(f"array {name} with shape {a.shape} does not fit a {manifest['kind']} model")
        target[name] = a
    return model
