"""Reference set encoders: a batch-consistent DeepSets and a softmax pooler.

The DeepSets variant (row-wise feature extractor, commutative pool, head)
satisfies the same merge contract as the slot encoder.  The softmax pooler
normalizes attention over the element axis, which couples every element to
the rest of its batch; it is included as a measurable counterexample, not
as a usable streaming encoder.  Sort-based poolers (FSPool-style) break the
merge contract for the same reason, via the sort rank instead of the
softmax normalizer, and are not implemented here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .encoder import AggMode, AggregateState, PartialEncoding, finalize, init_state, merge
from .errors import EmptySetError, ParameterError, ShapeError
from .tensor import LinearMap, apply_linear, as_matrix, relu

__all__ = [
    "DeepSetsParams",
    "SoftmaxPoolParams",
    "deepsets_features",
    "deepsets_pool_batch",
    "deepsets_head",
    "deepsets_encode",
    "softmax_pool_full",
    "softmax_pool_minibatch",
]


@dataclass(frozen=True)
class DeepSetsParams:
    """phi (row-wise MLP) -> pool -> rho (MLP head).

    ReLU sits between consecutive layers of phi and of rho, never after the
    last layer of either.  phi must stay strictly row-local: no batch
    statistics, or the pooled encoding would depend on how the set was
    batched.
    """

    phi: tuple[LinearMap, ...]
    pool: AggMode
    rho: tuple[LinearMap, ...]

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(self.phi))
        object.__setattr__(self, "rho", tuple(self.rho))
        dims = [m.dim_in for m in self.phi] + [m.dim_in for m in self.rho]
        outs = [m.dim_out for m in self.phi] + [m.dim_out for m in self.rho]
        for want, got in zip(outs, dims[1:]):
            if want != got:
                raise ShapeError(f"layer chain mismatch: {want} feeds {got}")

    @property
    def feature_dim(self) -> int:
        return self.phi[-1].dim_out if self.phi else -1


def _mlp(layers: Sequence[LinearMap], x: np.ndarray) -> np.ndarray:
    for i, lin in enumerate(layers):
        x = apply_linear(lin, x)
        if i + 1 < len(layers):
            x = relu(x)
    return x


def deepsets_features(params: DeepSetsParams, x: np.ndarray) -> np.ndarray:
    """Row-wise feature extractor; empty phi means identity."""
    x = as_matrix(x, "x")
    return _mlp(params.phi, x)


def deepsets_pool_batch(params: DeepSetsParams, x: np.ndarray) -> PartialEncoding:
    """Pool one batch of features into a mergeable 1 x p partial."""
    x = as_matrix(x, "batch")
    if x.shape[0] < 1:
        raise ParameterError("cannot pool an empty batch")
    feats = deepsets_features(params, x)
    if params.pool in (AggMode.SUM, AggMode.MEAN):
        pooled = _kernels.column_sums(feats)
    else:
        pooled, _ = _kernels.column_extreme(feats, params.pool is AggMode.MAX)
    return PartialEncoding(pooled, x.shape[0])


def deepsets_head(params: DeepSetsParams, pooled: np.ndarray) -> np.ndarray:
    """Post-pool head; empty rho means identity."""
    return _mlp(params.rho, as_matrix(pooled, "pooled"))


def deepsets_encode(
    x_or_batches: np.ndarray | Iterable[np.ndarray], params: DeepSetsParams
) -> np.ndarray:
    """Encode a set (or a stream of batches) to a single 1 x out row vector."""
    if isinstance(x_or_batches, np.ndarray):
        batches: Iterable[np.ndarray] = [x_or_batches]
    else:
        batches = x_or_batches
    state: AggregateState | None = None
    for batch in batches:
        partial = deepsets_pool_batch(params, batch)
        if state is None:
            state = init_state(params.pool, 1, partial.values.shape[1])
        state = merge(state, partial)
    if state is None or state.count < 1:
        raise EmptySetError("cannot encode an empty set")
    return deepsets_head(params, finalize(state))


@dataclass(frozen=True)
class SoftmaxPoolParams:
    """Learnable query rows attending to set elements with softmax over elements."""

    query: np.ndarray
    proj_key: LinearMap
    proj_value: LinearMap

    def __post_init__(self):
        q = as_matrix(self.query, "query")
        object.__setattr__(self, "query", q)
        if self.proj_key.dim_out != q.shape[1]:
            raise ShapeError("proj_key output dim must match query width")
        if self.proj_value.dim_in != self.proj_key.dim_in:
            raise ShapeError("proj_key and proj_value must share an input dim")

    @property
    def attn_dim(self) -> int:
        return self.query.shape[1]


def softmax_pool_full(x: np.ndarray, params: SoftmaxPoolParams) -> np.ndarray:
    """Attention-pool the whole set in one pass.

    Each query row's weights are a softmax over all n elements, so the
    result is only defined relative to the batch it was computed from.
    """
    x = as_matrix(x, "x")
    if x.shape[0] < 1:
        raise EmptySetError("cannot pool an empty set")
    keys = apply_linear(params.proj_key, x)
    logits = _kernels.matmul(params.query, np.ascontiguousarray(keys.T))
    logits = logits * (1.0 / math.sqrt(params.attn_dim))
    attention = _kernels.softmax_rows(logits)
    values = apply_linear(params.proj_value, x)
    return _kernels.matmul(attention, values)


def softmax_pool_minibatch(
    partitions: Sequence[np.ndarray],
    params: SoftmaxPoolParams,
    combine: AggMode = AggMode.MEAN,
) -> np.ndarray:
    """Pool each partition independently, then combine the partition outputs.

    This is what naive streaming of a softmax pooler computes.  It matches
    softmax_pool_full only for the trivial partition; in general the per-
    partition normalizers differ and the combined value drifts.
    """
    outputs = [softmax_pool_full(p, params) for p in partitions]
    if not outputs:
        raise EmptySetError("no partitions to pool")
    acc = outputs[0]
    for out in outputs[1:]:
        if combine in (AggMode.SUM, AggMode.MEAN):
            acc = acc + out
        elif combine is AggMode.MAX:
            acc = np.maximum(acc, out)
        else:
            acc = np.minimum(acc, out)
    if combine is AggMode.MEAN:
        acc = acc / float(len(outputs))
    return acc
