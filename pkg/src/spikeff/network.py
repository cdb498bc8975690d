"""A stack of spiking layers with no output layer.

The forward interface between layers is the per-timestep spike train only;
spikes carry no gradient across the boundary, so every layer learns from its
own local objective. Inference and hard-label sampling score a batch by
summing per-layer goodness over all candidate label overlays.
"""

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .dataio import SampleBatch, embed_label
from .errors import ShapeError
from .layer import SpikingLayer, goodness, init_layer, layer_forward
from .neuron import NeuronConfig
from .numerics import RngStream


@dataclass
class FFNetwork:
    layers: List[SpikingLayer]
    class_count: int
    input_dim: int
    timesteps: int
    eval_rows: int = field(default=0, compare=False)  # instrumentation counter

    @property
    def stats_populated(self) -> bool:
        return all(layer.stats_populated for layer in self.layers)

    def set_lr(self, lr: float) -> None:
        for layer in self.layers:
            layer.set_lr(lr)


def build_network(
    hidden_sizes: Sequence[int],
    input_dim: int,
    class_count: int,
    timesteps: int,
    config: NeuronConfig,
    rng: RngStream,
    recurrent: bool = False,
    lr: float = 1e-3,
) -> FFNetwork:
    if not hidden_sizes or any(h < 1 for h in hidden_sizes):
        raise ValueError(f"hidden sizes must be nonempty and >= 1: {hidden_sizes}")
    layers = []
    n_in = input_dim
    for i, n_out in enumerate(hidden_sizes):
        layers.append(
            init_layer(
                n_in, n_out, timesteps, config, rng.substream(i), recurrent, lr
            )
        )
        n_in = n_out
    return FFNetwork(layers, class_count, input_dim, timesteps)


def forward_train(net: FFNetwork, frames: Sequence[np.ndarray]):
    """Train-mode pass through every layer; returns one trace per layer.

    Layer k+1 consumes layer k's spike train produced by the pre-update
    weights of the same pass (one forward, then local updates).
    """
    traces = []
    x = frames
    for layer in net.layers:
        trace = layer_forward(layer, x, "train")
        traces.append(trace)
        x = trace.spikes
    return traces


def forward_eval(net: FFNetwork, frames: Sequence[np.ndarray], record: bool = False):
    """Eval-mode pass (running statistics, no state mutation)."""
    if frames[0].shape[1] != net.input_dim:
        raise ShapeError(
            f"input frames have {frames[0].shape[1]} channels, "
            f"network expects {net.input_dim}"
        )
    net.eval_rows += frames[0].shape[0]
    traces = []
    x = frames
    for layer in net.layers:
        trace = layer_forward(layer, x, "eval", record=record)
        traces.append(trace)
        x = trace.spikes
    return traces


def label_goodness(net: FFNetwork, batch: SampleBatch) -> np.ndarray:
    """Total goodness per candidate class: (B, class_count).

    All class_count overlays of the batch are scored inside one batched
    eval-mode forward of c*B rows; eval normalization uses running
    statistics only, so this is numerically identical to per-variant
    forwards.
    """
    c = net.class_count
    variants = [
        embed_label(batch, np.full(batch.size, y, dtype=np.int64), c)
        for y in range(c)
    ]
    stacked = np.vstack([v.inputs for v in variants])
    frames = SampleBatch(
        stacked,
        np.tile(batch.labels, c),
        batch.input_dim,
        batch.timesteps,
    ).frames(net.timesteps)
    per_layer = forward_eval(net, frames)
    total = np.zeros(stacked.shape[0])
    for trace in per_layer:
        total += goodness(trace)
    return total.reshape(c, batch.size).T
