"""Slot set encoder: sigmoid attention against fixed slots plus a mergeable state.

The encoder maps a set of n elements (rows of an n x d matrix) to a K x m
encoding by attending each element to K slots.  Attention scores are passed
through a sigmoid (never a softmax over elements) and normalized across the
slot axis only, so every element's contribution is computed in isolation.
That is the whole trick: partial encodings of disjoint batches can then be
merged with sum/mean/max/min and reproduce the single-pass encoding of the
full set.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import EmptySetError, NumericError, ParameterError, ShapeError
from .tensor import (
    LayerNormParams,
    LinearMap,
    affine_rows,
    apply_linear,
    as_matrix,
    as_vector,
    layer_norm,
    standard_normal_matrix,
)

__all__ = [
    "AggMode",
    "SlotMode",
    "SlotConfig",
    "SlotSample",
    "SlotEncoderParams",
    "PartialEncoding",
    "AggregateState",
    "sample_slots",
    "attention_logits",
    "attention_weights",
    "slot_normalize",
    "encode_batch",
    "encode_batch_prenormalized",
    "init_state",
    "merge",
    "merge_states",
    "finalize",
    "encode_full",
]

STABILIZER = 1e-8  # added to sigmoid scores so slot-axis row sums stay positive


class AggMode(enum.Enum):
    """Commutative, associative merge applied across per-element contributions."""

    SUM = "sum"
    MEAN = "mean"
    MAX = "max"
    MIN = "min"

    @classmethod
    def parse(cls, text: str) -> "AggMode":
        try:
            return cls(text.lower())
        except ValueError:
            raise ParameterError(f"unknown aggregation mode: {text!r}") from None


class SlotMode(enum.Enum):
    DETERMINISTIC = "deterministic"
    RANDOM = "random"


@dataclass(frozen=True)
class SlotConfig:
    """How the K x h slot matrix is obtained for an encoding session.

    Deterministic mode stores the slots directly.  Random mode stores a
    shared per-feature mean and log standard deviation; slots are drawn
    i.i.d. per row, and the slot count may be changed at sampling time.
    """

    mode: SlotMode
    num_slots: int
    slot_dim: int
    deterministic_slots: np.ndarray | None = None
    mu: np.ndarray | None = None
    log_sigma: np.ndarray | None = None

    def __post_init__(self):
        if self.num_slots < 1 or self.slot_dim < 1:
            raise ParameterError("num_slots and slot_dim must be at least 1")
        if self.mode is SlotMode.DETERMINISTIC:
            if self.deterministic_slots is None:
                raise ParameterError("deterministic mode requires a slot matrix")
            slots = as_matrix(self.deterministic_slots, "deterministic_slots")
            if slots.shape != (self.num_slots, self.slot_dim):
                raise ShapeError(
                    f"slot matrix shape {slots.shape} != "
                    f"({self.num_slots}, {self.slot_dim})"
                )
            object.__setattr__(self, "deterministic_slots", slots)
        else:
            if self.mu is None or self.log_sigma is None:
                raise ParameterError("random mode requires mu and log_sigma")
            mu = as_vector(self.mu, "mu")
            log_sigma = as_vector(self.log_sigma, "log_sigma")
            if mu.shape[0] != self.slot_dim or log_sigma.shape[0] != self.slot_dim:
                raise ShapeError("mu and log_sigma must have length slot_dim")
            object.__setattr__(self, "mu", mu)
            object.__setattr__(self, "log_sigma", log_sigma)


@dataclass(frozen=True)
class SlotSample:
    """One fixed draw of slots; every batch of a session sees the same sample."""

    slots: np.ndarray
    seed_used: int | None  # None marks deterministic slots

    def __post_init__(self):
        object.__setattr__(self, "slots", as_matrix(self.slots, "slots"))


@dataclass(frozen=True)
class SlotEncoderParams:
    """One slot-encoder layer: slot source, slot LayerNorm, and q/k/v projections.

    proj_query maps slots (slot_dim -> attn_dim); proj_key and proj_value map
    set elements (input_dim -> attn_dim).
    """

    slot_config: SlotConfig
    slot_norm: LayerNormParams
    proj_query: LinearMap
    proj_key: LinearMap
    proj_value: LinearMap
    input_dim: int
    attn_dim: int

    def __post_init__(self):
        sc = self.slot_config
        if self.slot_norm.gain.shape[0] != sc.slot_dim:
            raise ShapeError("slot_norm width must equal slot_dim")
        checks = [
            (self.proj_query, sc.slot_dim, "proj_query"),
            (self.proj_key, self.input_dim, "proj_key"),
            (self.proj_value, self.input_dim, "proj_value"),
        ]
        for lin, want_in, name in checks:
            if lin.dim_in != want_in:
                raise ShapeError(f"{name} input dim {lin.dim_in} != {want_in}")
            if lin.dim_out != self.attn_dim:
                raise ShapeError(f"{name} output dim {lin.dim_out} != {self.attn_dim}")


@dataclass(frozen=True)
class PartialEncoding:
    """Contribution of one batch: a K x m matrix plus the element count."""

    values: np.ndarray
    count: int

    def __post_init__(self):
        object.__setattr__(self, "values", as_matrix(self.values, "values"))
        if self.count < 1:
            raise ParameterError("a partial encoding must cover at least one element")


@dataclass(frozen=True)
class AggregateState:
    """Running merge of partial encodings; a pure value, never mutated.

    The identity state holds the mode's neutral element (zeros for sum/mean,
    -inf for max, +inf for min) and count 0.  finalize refuses count 0, so
    the infinities never leave the state.
    """

    mode: AggMode
    partial: np.ndarray
    count: int
    initialized: bool

    def __post_init__(self):
        object.__setattr__(
            self, "partial", as_matrix(self.partial, "partial", allow_non_finite=True)
        )
        if self.initialized and not np.isfinite(self.partial).all():
            raise NumericError("initialized state contains non-finite entries")


def sample_slots(config: SlotConfig, seed: int, num_slots: int | None = None) -> SlotSample:
    """Fix the slots for one encoding session.

    Deterministic configs return the stored matrix unchanged.  Random configs
    draw `num_slots` rows (default: the configured count) from
    N(mu, diag(exp(log_sigma)^2)); the draw for row r is keyed by (seed, r),
    so growing the slot count extends a sample rather than reshuffling it.
    """
    if config.mode is SlotMode.DETERMINISTIC:
        if num_slots is not None and num_slots != config.num_slots:
            raise ParameterError(
                "deterministic slots cannot change count at sampling time"
            )
        return SlotSample(config.deterministic_slots, None)
    k = config.num_slots if num_slots is None else num_slots
    if k < 1:
        raise ParameterError("num_slots must be at least 1")
    eps = standard_normal_matrix(seed, k, config.slot_dim)
    slots = affine_rows(config.mu, np.exp(config.log_sigma), eps)
    return SlotSample(slots, int(seed))


def frozen_slots(config: SlotConfig, num_slots: int | None = None) -> SlotSample:
    """Evaluation-mode sample pinned to mu (random configs only)."""
    if config.mode is SlotMode.DETERMINISTIC:
        return SlotSample(config.deterministic_slots, None)
    k = config.num_slots if num_slots is None else num_slots
    return SlotSample(np.repeat(config.mu[None, :], k, axis=0), None)


def normalized_slots(params: SlotEncoderParams, sample: SlotSample) -> np.ndarray:
    """Slot LayerNorm, applied once per session to the fixed sample."""
    return layer_norm(params.slot_norm, sample.slots)


def attention_logits(
    x: np.ndarray, slots_normed: np.ndarray, params: SlotEncoderParams
) -> np.ndarray:
    """Scaled dot products between projected elements and projected slots.

    Row i depends on element i and the slots only, never on other elements.
    """
    x = as_matrix(x, "x")
    slots_normed = as_matrix(slots_normed, "slots_normed")
    if x.shape[1] != params.input_dim:
        raise ShapeError(f"element width {x.shape[1]} != input_dim {params.input_dim}")
    if slots_normed.shape[1] != params.slot_config.slot_dim:
        raise ShapeError("normalized slots have the wrong width")
    keys = apply_linear(params.proj_key, x)
    queries = apply_linear(params.proj_query, slots_normed)
    logits = _kernels.matmul(keys, np.ascontiguousarray(queries.T))
    return logits * (1.0 / math.sqrt(params.attn_dim))


def attention_weights(logits: np.ndarray) -> np.ndarray:
    """sigmoid(logits) + 1e-8: strictly positive scores in (1e-8, 1 + 1e-8)."""
    logits = as_matrix(logits, "logits")
    return _kernels.sigmoid(logits) + STABILIZER


def slot_normalize(attn: np.ndarray) -> np.ndarray:
    """Normalize each element's scores across the slot axis so rows sum to 1.

    The denominator is an exactly-rounded sum, so reordering the slots
    permutes the output columns without changing a single bit.
    """
    attn = as_matrix(attn, "attn")
    if not (attn > 0.0).all():
        raise NumericError("slot_normalize requires strictly positive scores")
    return _kernels.divide_rows(attn, _kernels.exact_row_sums(attn))


def encode_batch_prenormalized(
    x: np.ndarray,
    slots_normed: np.ndarray,
    params: SlotEncoderParams,
    mode: AggMode,
) -> PartialEncoding:
    """encode_batch for slots whose LayerNorm was already applied.

    Sessions persist the normalized slots so the normalization genuinely
    happens once, not once per ingested batch.
    """
    x = as_matrix(x, "batch")
    if x.shape[0] < 1:
        raise ParameterError("cannot encode an empty batch")
    logits = attention_logits(x, slots_normed, params)
    weights = slot_normalize(attention_weights(logits))
    values = apply_linear(params.proj_value, x)
    if mode in (AggMode.SUM, AggMode.MEAN):
        pooled = _kernels.weighted_sum_pool(weights, values)
    else:
        pooled, _ = _kernels.weighted_extreme_pool(weights, values, mode is AggMode.MAX)
    return PartialEncoding(pooled, x.shape[0])


def encode_batch(
    x: np.ndarray,
    slot_sample: SlotSample,
    params: SlotEncoderParams,
    mode: AggMode,
) -> PartialEncoding:
    """Encode one batch of elements against the session's fixed slots.

    The batch contributes, per element i, the rank-one matrix
    weights[i, :]^T (x) values[i, :]; sum/mean accumulate these
    contributions (mean divides by the total count at finalize time),
    max/min keep the elementwise extreme.
    """
    slots_normed = normalized_slots(params, slot_sample)
    return encode_batch_prenormalized(x, slots_normed, params, mode)


def init_state(mode: AggMode, num_slots: int, out_dim: int) -> AggregateState:
    """Identity element of the merge for the given mode."""
    if num_slots < 1 or out_dim < 1:
        raise ParameterError("num_slots and out_dim must be at least 1")
    if mode in (AggMode.SUM, AggMode.MEAN):
        partial = np.zeros((num_slots, out_dim))
    elif mode is AggMode.MAX:
        partial = np.full((num_slots, out_dim), -np.inf)
    else:
        partial = np.full((num_slots, out_dim), np.inf)
    return AggregateState(mode, partial, 0, False)


def _combine(mode: AggMode, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if mode in (AggMode.SUM, AggMode.MEAN):
        return a + b
    if mode is AggMode.MAX:
        return np.maximum(a, b)
    return np.minimum(a, b)


def merge(state: AggregateState, partial: PartialEncoding) -> AggregateState:
    """Fold one batch's contribution into the state; returns a new state."""
    if state.partial.shape != partial.values.shape:
        raise ShapeError(
            f"partial shape {partial.values.shape} != state shape {state.partial.shape}"
        )
    if not state.initialized:
        # Adopt the partial directly: avoids 0 + (-0.0) sign flips and makes
        # merging into a fresh state exactly the identity law.
        return AggregateState(state.mode, partial.values, partial.count, True)
    combined = _combine(state.mode, state.partial, partial.values)
    return AggregateState(state.mode, combined, state.count + partial.count, True)


def merge_states(a: AggregateState, b: AggregateState) -> AggregateState:
    """Merge two aggregation states; associative and commutative."""
    if a.mode is not b.mode:
        raise ParameterError(f"cannot merge {a.mode.value} state with {b.mode.value}")
    if a.partial.shape != b.partial.shape:
        raise ShapeError("aggregate states have different shapes")
    if not b.initialized:
        return a
    if not a.initialized:
        return b
    combined = _combine(a.mode, a.partial, b.partial)
    return AggregateState(a.mode, combined, a.count + b.count, True)


def finalize(state: AggregateState) -> np.ndarray:
    """Extract the encoding; mean divides by the total element count."""
    if state.count < 1:
        raise EmptySetError("cannot finalize an encoding of zero elements")
    if state.mode is AggMode.MEAN:
        return state.partial / float(state.count)
    return state.partial


def encode_full(
    x: np.ndarray, params: SlotEncoderParams, mode: AggMode, seed: int
) -> np.ndarray:
    """Single-pass reference encoding: one batch containing the whole set.

    Every partitioned evaluation is expected to reproduce this value exactly
    (max/min) or up to summation reassociation (sum/mean).
    """
    x = as_matrix(x, "x")
    if x.shape[0] < 1:
        raise EmptySetError("cannot encode an empty set")
    sample = sample_slots(params.slot_config, seed)
    state = init_state(mode, sample.slots.shape[0], params.attn_dim)
    state = merge(state, encode_batch(x, sample, params, mode))
    return finalize(state)
