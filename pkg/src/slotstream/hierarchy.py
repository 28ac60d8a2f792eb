"""Stacks of slot encoders: layer 1 streams, later layers reprocess the slots.

Only the first layer ever sees the raw (possibly unbounded) set; its
finalized K x m output is a small fixed-size matrix, which each subsequent
layer encodes in a single pass.  Batch consistency of the stack therefore
reduces to batch consistency of layer 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .encoder import (
    AggMode,
    SlotEncoderParams,
    encode_batch,
    encode_full,
    finalize,
    init_state,
    merge,
    sample_slots,
)
from .errors import ConfigError, EmptySetError
from .tensor import as_matrix

__all__ = ["EncoderStack", "validate_stack", "encode_stream", "encode_set"]


@dataclass(frozen=True)
class EncoderStack:
    """Ordered (params, mode) layers; layer t consumes layer t-1's slot matrix."""

    layers: tuple[tuple[SlotEncoderParams, AggMode], ...]

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("an encoder stack needs at least one layer")
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].input_dim


def validate_stack(stack: EncoderStack) -> tuple[int, int]:
    """Check dimension chaining; returns the output shape (slots, features).

    Layer t receives a K_{t-1} x attn_dim_{t-1} matrix, so its input_dim must
    equal the previous layer's attn_dim.
    """
    for t in range(1, stack.depth):
        prev, _ = stack.layers[t - 1]
        cur, _ = stack.layers[t]
        if cur.input_dim != prev.attn_dim:
            raise ConfigError(
                f"layer {t} expects input dim {cur.input_dim} but layer {t - 1} "
                f"produces {prev.attn_dim}"
            )
    last, _ = stack.layers[-1]
    return last.slot_config.num_slots, last.attn_dim


def encode_stream(
    stack: EncoderStack, batches: Iterable[np.ndarray], seed: int
) -> np.ndarray:
    """Encode a stream of batches through the whole stack.

    Layer 1 folds the batches into one aggregate state; layers >= 2 run a
    single full pass on the previous layer's finalized slots.  Layer t
    samples its slots with seed + t (0-based), so a one-layer stack matches
    encode_full with the caller's seed.
    """
    validate_stack(stack)
    params, mode = stack.layers[0]
    sample = sample_slots(params.slot_config, seed)
    state = init_state(mode, sample.slots.shape[0], params.attn_dim)
    saw_batch = False
    for batch in batches:
        batch = as_matrix(batch, "batch")
        state = merge(state, encode_batch(batch, sample, params, mode))
        saw_batch = True
    if not saw_batch:
        raise EmptySetError("the stream contained no batches")
    out = finalize(state)
    for t in range(1, stack.depth):
        params, mode = stack.layers[t]
        out = encode_full(out, params, mode, seed + t)
    return out


def encode_set(stack: EncoderStack, x: np.ndarray, seed: int) -> np.ndarray:
    """Single-pass evaluation of the stack on an in-memory set."""
    return encode_stream(stack, [x], seed)
