"""Leaky integrate-and-fire population dynamics and the arctan surrogate.

Membrane recursion (reset by subtraction is the default):

    U[t+1] = beta (.) U[t] + drive[t+1] - thr * S[t]        (subtract)
    U[t+1] = beta (.) U[t] (.) (1 - S[t]) + drive[t+1]      (zero)

Spikes are emitted where U >= thr (inclusive). The decay can be a learnable
per-neuron parameter stored as an unconstrained raw value and mapped through
a sigmoid so it always stays in (0, 1).
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NumericError, ShapeError

RESET_MODES = ("subtract", "zero")


@dataclass(frozen=True)
class NeuronConfig:
    """Static parameters for a LIF population.

    `decay` may be 1.0 (no leak) for diagnostics; learnable decay is always
    constrained to (0, 1) by the sigmoid parameterization.
    """

    threshold: float = 1.0
    decay: float = 0.99
    decay_learnable: bool = False
    reset_mode: str = "subtract"
    surrogate_slope: float = 2.0

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError(f"threshold must be > 0, got {self.threshold}")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")
        if self.reset_mode not in RESET_MODES:
            raise ValueError(f"reset_mode must be one of {RESET_MODES}")
        if not self.surrogate_slope > 0:
            raise ValueError("surrogate_slope must be > 0")


@dataclass
class NeuronState:
    """Per-batch membrane and last spikes; optionally the raw decay vector."""

    membrane: np.ndarray  # (B, N)
    spikes: np.ndarray  # (B, N), binary
    decay_raw: Optional[np.ndarray] = None  # (N,), unconstrained


def initial_state(batch_size: int, size: int, decay_raw=None) -> NeuronState:
    """Fresh state: membrane at 0, no prior spikes (start of a presentation)."""
    return NeuronState(
        np.zeros((batch_size, size)), np.zeros((batch_size, size)), decay_raw
    )


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def raw_decay_for(decay: float) -> float:
    """Inverse sigmoid; initial raw value for a learnable decay."""
    return math.log(decay / (1.0 - decay))


def effective_decay(state: NeuronState, config: NeuronConfig):
    """Decay factor(s): sigmoid of the raw vector when learnable, else fixed."""
    if config.decay_learnable and state.decay_raw is not None:
        return sigmoid(state.decay_raw)
    return config.decay


def membrane_update(
    state: NeuronState, drive: np.ndarray, config: NeuronConfig
) -> np.ndarray:
    """Advance the membrane one step; reset is driven by the prior spikes."""
    beta = effective_decay(state, config)
    if config.reset_mode == "subtract":
        return beta * state.membrane + drive - config.threshold * state.spikes
    return beta * state.membrane * (1.0 - state.spikes) + drive


def lif_step(
    state: NeuronState, drive: np.ndarray, config: NeuronConfig, timestep=None
) -> NeuronState:
    """One LIF step: decay + integrate + reset-from-prior-spike, then threshold."""
    if drive.shape != state.membrane.shape:
        raise ShapeError(
            f"lif_step: drive {drive.shape} vs membrane {state.membrane.shape}"
        )
    if not np.all(np.isfinite(drive)):
        where = "" if timestep is None else f" at timestep {timestep}"
        raise NumericError(f"non-finite drive{where}")
    membrane = membrane_update(state, drive, config)
    spikes = (membrane >= config.threshold).astype(np.float64)
    return NeuronState(membrane, spikes, state.decay_raw)


def recurrent_lif_step(
    state: NeuronState,
    drive: np.ndarray,
    rec: np.ndarray,
    config: NeuronConfig,
    timestep=None,
) -> NeuronState:
    """LIF step with additive recurrent drive from the previous spikes.

    rec[i, j] is the weight from neuron i to neuron j; the extra drive is
    S_prev @ rec. With rec = 0 this is exactly `lif_step`.
    """
    n = state.membrane.shape[1]
    if rec.shape != (n, n):
        raise ShapeError(f"recurrent weights must be ({n}, {n}), got {rec.shape}")
    return lif_step(state, drive + state.spikes @ rec, config, timestep)


def surrogate_grad(membrane: np.ndarray, config: NeuronConfig) -> np.ndarray:
    """Pseudo-derivative of the spike function, centred at the threshold.

    (1/pi) / (1 + (pi * slope/2 * (U - thr))^2): maximal (1/pi) at threshold,
    even in (U - thr), strictly positive everywhere.
    """
    k = math.pi * config.surrogate_slope / 2.0
    shifted = membrane - config.threshold
    return (1.0 / math.pi) / (1.0 + np.square(k * shifted))


def smoothed_spike(membrane: np.ndarray, config: NeuronConfig) -> np.ndarray:
    """Smooth primitive of `surrogate_grad`, 1/2 at threshold.

    Replaces the hard step in gradient-check harnesses so that finite
    differences of the forward agree with the surrogate-based backward.
    """
    k = math.pi * config.surrogate_slope / 2.0
    shifted = membrane - config.threshold
    return 0.5 + np.arctan(k * shifted) / (math.pi * k)
