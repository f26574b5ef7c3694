"""Checkpoint directories: a JSON manifest plus one raw float file per array.

Each named array (parameter or running buffer) is stored little-endian in
its own file; the manifest records name -> shape/dtype/file together with
free-form metadata (model configuration, provenance). Round-trips are
bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"
_DTYPES = {"float32": "<f4"}


class CheckpointError(IOError):
    pass


def save_state(directory, arrays: dict[str, np.ndarray], meta: dict | None = None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in arrays.items():
        arr32 = np.ascontiguousarray(arr, dtype=np.float32)
        fname = name + ".f32"
        arr32.astype("<f4").tofile(directory / fname)
        entries[name] = {"shape": list(arr.shape), "dtype": "float32", "file": fname}
    manifest = {"format": "siamgrid-checkpoint-v1", "meta": meta or {}, "arrays": entries}
    with open(directory / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise CheckpointError(f"no checkpoint manifest at {path}")
    with open(path) as fh:
        return json.load(fh)


def load_state(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest = read_manifest(directory)
    arrays = {}
    for name, entry in manifest["arrays"].items():
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise CheckpointError(f"unsupported dtype {entry['dtype']!r} for {name}")
        raw = np.fromfile(directory / entry["file"], dtype=dtype)
        expected = int(np.prod(entry["shape"])) if entry["shape"] else 1
        if raw.size != expected:
            raise CheckpointError(
                f"array {name}: file holds {raw.size} values, manifest says {expected}"
            )
        arrays[name] = raw.astype(np.float32).reshape(entry["shape"])
    return arrays, manifest.get("meta", {})


def load_into(module, directory, prefix: str = "", strict: bool = True) -> dict:
    """Load a checkpoint into a module's parameters and buffers, in place.

    ``prefix`` selects a sub-tree of the stored names (e.g. "encoder.").
    """
    arrays, meta = load_state(directory)
    if prefix:
        arrays = {
            name[len(prefix):]: arr for name, arr in arrays.items() if name.startswith(prefix)
        }
    target = module.state_arrays()
    missing = sorted(set(target) - set(arrays))
    if missing and strict:
        raise CheckpointError(f"checkpoint missing arrays: {missing[:5]}")
    for name, dest in target.items():
        if name not in arrays:
            continue
        src = arrays[name]
        if src.shape != dest.shape:
            raise CheckpointError(
                f"array {name}: checkpoint shape {src.shape} != model shape {dest.shape}"
            )
        dest[...] = src
    return meta
