"""On-disk dataset cache: one binary file per split plus a JSON manifest.

Split file layout (little endian)::

    b"LMXDS01\\n"                      8-byte magic
    uint32 n_pairs
    n_pairs x [noisy array, clean array]
        array := uint32 ndim, ndim x uint32 dim, prod(dim) x float64 (row-major)
"""
import json
import os
import struct

import numpy as np

from lossmix.config import config_hash
from lossmix.samples import SamplePair
from lossmix.signal import DataConfig, Dataset

MAGIC = b"LMXDS01\n"
MANIFEST_FORMAT = "lossmix-dataset/1"


def _write_array(fh, a):
    a = np.ascontiguousarray(a, dtype="<f8")
    fh.write(struct.pack("<I", a.ndim))
    fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
    fh.write(a.tobytes())


def _read_array(fh):
    (ndim,) = struct.unpack("<I", fh.read(4))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
    count = int(np.prod(shape))
    data = np.frombuffer(fh.read(8 * count), dtype="<f8")
    if data.size != count:
        raise ValueError("truncated array in dataset cache")
    return data.astype(np.float64).reshape(shape)


def write_split(path, pairs):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(pairs)))
        for p in pairs:
            _write_array(fh, p.noisy)
            _write_array(fh, p.clean)


def read_split(path, meta=None):
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a lossmix dataset split")
        (n,) = struct.unpack("<I", fh.read(4))
        pairs = []
        for i in range(n):
            noisy, clean = _read_array(fh), _read_array(fh)
            extra = {}
            if meta:
                extra = {"snr_db": meta["snr_db"][i], "noise_kind": meta["noise_kind"][i],
                         "seed": meta["seeds"][i]}
            pairs.append(SamplePair(noisy, clean, **extra))
    return pairs


def manifest_for(dataset):
    cfg = dataset.config.to_dict()
    return {
        "format": MANIFEST_FORMAT,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "splits": {name: {"file": f"{name}.bin", "n": len(pairs),
                          "snr_db": [p.snr_db for p in pairs],
                          "noise_kind": [p.noise_kind for p in pairs],
                          "seeds": [p.seed for p in pairs]}
                   for name, pairs in dataset.splits().items()},
    }


def read_manifest(directory):
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        return None
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_dataset(directory, dataset):
    os.makedirs(directory, exist_ok=True)
    manifest = manifest_for(dataset)
    for name, pairs in dataset.splits().items():
        write_split(os.path.join(directory, f"{name}.bin"), pairs)
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_dataset(directory):
    manifest = read_manifest(directory)
    if manifest is None:
        raise FileNotFoundError(f"no manifest.json in {directory}")
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"{directory}: unsupported dataset format {manifest.get('format')!r}")
    splits = {name: read_split(os.path.join(directory, meta["file"]), meta)
              for name, meta in manifest["splits"].items()}
    return Dataset(splits["train"], splits["val"], splits["test"], DataConfig(**manifest["config"]))
