"""Constructors for randomly initialized encoders."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .baselines import DeepSetsParams, SoftmaxPoolParams
from .encoder import AggMode, SlotConfig, SlotEncoderParams, SlotMode
from .errors import ParameterError
from .hierarchy import EncoderStack, validate_stack
from .tensor import LayerNormParams, LinearMap, Rng

__all__ = [
    "LayerSpec",
    "make_slot_encoder",
    "make_stack",
    "make_deepsets",
    "make_softmax_pool",
]


def _init_weight(rng: Rng, dim_in: int, dim_out: int) -> np.ndarray:
    return rng.standard_normal(dim_in, dim_out) * (1.0 / np.sqrt(dim_in))


def _linear(rng: Rng, dim_in: int, dim_out: int, bias: bool) -> LinearMap:
    w = _init_weight(rng, dim_in, dim_out)
    return LinearMap(w, np.zeros(dim_out) if bias else None)


class LayerSpec:
    """Shape of one slot-encoder layer inside a stack."""

    def __init__(
        self,
        num_slots: int,
        slot_dim: int,
        attn_dim: int,
        mode: AggMode = AggMode.SUM,
        slot_mode: SlotMode = SlotMode.RANDOM,
    ):
        self.num_slots = num_slots
        self.slot_dim = slot_dim
        self.attn_dim = attn_dim
        self.mode = mode
        self.slot_mode = slot_mode


def make_slot_encoder(
    input_dim: int,
    num_slots: int,
    slot_dim: int,
    attn_dim: int,
    rng: Rng,
    slot_mode: SlotMode = SlotMode.RANDOM,
    bias: bool = False,
) -> SlotEncoderParams:
    """One slot-encoder layer with N(0, 1/fan_in) projections.

    Projections are biasless by default; a bias never interferes with batch
    merging (it is row-local) but plain linear maps are the usual choice.
    """
    if slot_mode is SlotMode.DETERMINISTIC:
        config = SlotConfig(
            SlotMode.DETERMINISTIC,
            num_slots,
            slot_dim,
            deterministic_slots=rng.standard_normal(num_slots, slot_dim),
        )
    else:
        config = SlotConfig(
            SlotMode.RANDOM,
            num_slots,
            slot_dim,
            mu=rng.standard_normal(1, slot_dim)[0],
            log_sigma=np.zeros(slot_dim),
        )
    return SlotEncoderParams(
        slot_config=config,
        slot_norm=LayerNormParams.identity(slot_dim),
        proj_query=_linear(rng, slot_dim, attn_dim, bias),
        proj_key=_linear(rng, input_dim, attn_dim, bias),
        proj_value=_linear(rng, input_dim, attn_dim, bias),
        input_dim=input_dim,
        attn_dim=attn_dim,
    )


def make_stack(input_dim: int, specs: Sequence[LayerSpec], rng: Rng) -> EncoderStack:
    """Chain layer specs into a stack; layer t's input is layer t-1's attn_dim."""
    if not specs:
        raise ParameterError("a stack needs at least one layer spec")
    layers = []
    d = input_dim
    for spec in specs:
        params = make_slot_encoder(
            d, spec.num_slots, spec.slot_dim, spec.attn_dim, rng, spec.slot_mode
        )
        layers.append((params, spec.mode))
        d = spec.attn_dim
    stack = EncoderStack(tuple(layers))
    validate_stack(stack)
    return stack


def make_deepsets(
    input_dim: int,
    phi_dims: Sequence[int],
    rho_dims: Sequence[int],
    pool: AggMode,
    rng: Rng,
    bias: bool = True,
) -> DeepSetsParams:
    """Row-wise MLP -> pool -> head, ReLU between consecutive layers."""
    phi = []
    d = input_dim
    for out in phi_dims:
        phi.append(_linear(rng, d, out, bias))
        d = out
    rho = []
    for out in rho_dims:
        rho.append(_linear(rng, d, out, bias))
        d = out
    return DeepSetsParams(tuple(phi), pool, tuple(rho))


def make_softmax_pool(
    input_dim: int, num_queries: int, attn_dim: int, rng: Rng, bias: bool = False
) -> SoftmaxPoolParams:
    return SoftmaxPoolParams(
        query=rng.standard_normal(num_queries, attn_dim),
        proj_key=_linear(rng, input_dim, attn_dim, bias),
        proj_value=_linear(rng, input_dim, attn_dim, bias),
    )
