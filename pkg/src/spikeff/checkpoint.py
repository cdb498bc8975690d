"""Versioned binary checkpoint for a whole network.

Layout (little-endian):

    bytes 0..3   magic "SFFC"
    bytes 4..7   u32 format version (currently 1)
    bytes 8..11  u32 header length H
    bytes 12..   H bytes of UTF-8 JSON: architecture, neuron configs,
                 per-timestep stat bookkeeping, and a tensor manifest of
                 (name, shape) pairs in file order
    then         the tensors as contiguous float64 arrays, manifest order

Optimizer moments are not stored; loading yields fresh Adam states.
"""

import json
import struct

import numpy as np

from .errors import CheckpointVersionError, FormatError, TruncatedFileError
from .layer import SpikingLayer
from .network import FFNetwork
from .neuron import NeuronConfig
from .numerics import AdamState

MAGIC = b"SFFC"
VERSION = 1


def _layer_tensors(index: int, layer: SpikingLayer):
    named = [
        (f"layer{index}/weights", layer.weights),
        (f"layer{index}/gamma", layer.gamma),
        (f"layer{index}/shift", layer.shift),
        (f"layer{index}/running_mean", layer.running_mean),
        (f"layer{index}/running_var", layer.running_var),
    ]
    if layer.decay_raw is not None:
        named.append((f"layer{index}/decay_raw", layer.decay_raw))
    if layer.recurrent is not None:
        named.append((f"layer{index}/recurrent", layer.recurrent))
    return named


def save_checkpoint(path, net: FFNetwork, meta: dict = None) -> None:
    tensors = []
    layer_meta = []
    for i, layer in enumerate(net.layers):
        tensors.extend(_layer_tensors(i, layer))
        cfg = layer.neuron
        layer_meta.append(
            {
                "n_in": layer.n_in,
                "n_out": layer.n_out,
                "neuron": {
                    "threshold": cfg.threshold,
                    "decay": cfg.decay,
                    "decay_learnable": cfg.decay_learnable,
                    "reset_mode": cfg.reset_mode,
                    "surrogate_slope": cfg.surrogate_slope,
                },
                "recurrent": layer.recurrent is not None,
                "batches_tracked": layer.batches_tracked,
                "momentum": layer.momentum,
                "eps": layer.eps,
            }
        )
    header = {
        "format_version": VERSION,
        "class_count": net.class_count,
        "input_dim": net.input_dim,
        "timesteps": net.timesteps,
        "layers": layer_meta,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        for _, tensor in tensors:
            f.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (network, meta dict)."""
    path = str(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise FormatError(f"{path}: not a checkpoint (magic {magic!r})")
        version, header_len = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise CheckpointVersionError(
                f"{path}: format version {version} is incompatible with "
                f"this build (expected {VERSION})"
            )
        header = json.loads(f.read(header_len).decode("utf-8"))
        arrays = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(8 * count)
            if len(raw) != 8 * count:
                raise TruncatedFileError(path, f.tell(), 8 * count - len(raw))
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    layers = []
    for i, lm in enumerate(header["layers"]):
        cfg = NeuronConfig(**lm["neuron"])
        layer = SpikingLayer(
            weights=arrays[f"layer{i}/weights"],
            gamma=arrays[f"layer{i}/gamma"],
            shift=arrays[f"layer{i}/shift"],
            running_mean=arrays[f"layer{i}/running_mean"],
            running_var=arrays[f"layer{i}/running_var"],
            neuron=cfg,
            decay_raw=arrays.get(f"layer{i}/decay_raw"),
            recurrent=arrays.get(f"layer{i}/recurrent"),
            batches_tracked=lm["batches_tracked"],
            momentum=lm["momentum"],
            eps=lm["eps"],
        )
        layer.adam = {
            name: AdamState.for_param(tensor)
            for name, tensor in layer.trainable_tensors().items()
        }
        layers.append(layer)
    net = FFNetwork(
        layers, header["class_count"], header["input_dim"], header["timesteps"]
    )
    return net, header.get("meta", {})
