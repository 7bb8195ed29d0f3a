"""Weights on disk: ``manifest.json`` plus a little-endian float32 blob."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..core import FormatError, atomic_write_bytes
from .network import ConvLayerSpec, FusionNet

FORMAT = "glandseg-fusionnet"
VERSION = 1


def save_model(net: FusionNet, directory, extra: dict | None = None) -> Path:
    directory = Path(directory)
    params = net.params()
    tensors = [{"name": n, "shape": list(p.shape)} for n, p in zip(net.param_names(), params)]
    blob = b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in params)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "dtype": "float32-le",
        "seed": net.seed,
        "layers": net.spec_dict(),
        "tensors": tensors,
        "blob": "weights.bin",
        "blob_bytes": len(blob),
    }
    if extra:
        manifest["extra"] = extra
    atomic_write_bytes(directory / "weights.bin", blob)
    atomic_write_bytes(directory / "manifest.json", (json.dumps(manifest, indent=2) + "\n").encode())
    return directory


def load_model(directory, dtype=np.float32) -> FusionNet:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise FormatError(f"{directory}/manifest.json is not valid JSON") from exc
    if manifest.get("format") != FORMAT:
        raise FormatError(f"{directory}: not a {FORMAT} model")
    layers = [ConvLayerSpec(**spec) for spec in manifest["layers"]]
    raw = (directory / manifest.get("blob", "weights.bin")).read_bytes()
    flat = np.frombuffer(raw, dtype="<f4")
    sizes = [int(np.prod(t["shape"])) for t in manifest["tensors"]]
    if sum(sizes) != flat.size:
        raise FormatError(f"{directory}: blob holds {flat.size} floats, manifest expects {sum(sizes)}")
    arrays, off = [], 0
    for t, n in zip(manifest["tensors"], sizes):
        arrays.append(flat[off : off + n].reshape(t["shape"]).copy())
        off += n
    return FusionNet(layers, arrays[0::2], arrays[1::2], seed=manifest.get("seed", 0), dtype=dtype)
