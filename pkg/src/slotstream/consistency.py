"""Batch-consistency verification: encode a set whole and in random pieces.

A consistent encoder reproduces its single-pass encoding under every
partition of the input (up to float reassociation for sum/mean).  The
report quantifies the worst relative discrepancy over a partition census
that always contains the trivial partition and the all-singletons one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .baselines import DeepSetsParams, deepsets_encode, softmax_pool_minibatch
from .encoder import AggMode
from .hierarchy import EncoderStack, encode_stream
from .tensor import Rng, as_matrix
from .training import Encoder

__all__ = [
    "relative_discrepancy",
    "random_partition",
    "encode_any",
    "MbcReport",
    "verify_mbc",
]


def relative_discrepancy(candidate: np.ndarray, reference: np.ndarray) -> float:
    """max over entries of |candidate - reference| / (1 + |reference|)."""
    return float(np.max(np.abs(candidate - reference) / (1.0 + np.abs(reference))))


def random_partition(x: np.ndarray, rng: Rng, num_parts: int | None = None) -> list[np.ndarray]:
    """Shuffle the rows and split them into `num_parts` nonempty batches."""
    x = as_matrix(x, "x")
    n = x.shape[0]
    if num_parts is None:
        num_parts = 1 + rng.next_below(n)
    if not (1 <= num_parts <= n):
        raise ValueError(f"cannot split {n} rows into {num_parts} nonempty parts")
    perm = rng.permutation(n)
    shuffled = np.ascontiguousarray(x[perm])
    if num_parts == 1:
        return [shuffled]
    cuts = np.sort(rng.permutation(n - 1)[: num_parts - 1]) + 1
    bounds = [0, *cuts.tolist(), n]
    return [shuffled[a:b] for a, b in zip(bounds, bounds[1:])]


def encode_any(encoder: Encoder, batches: Sequence[np.ndarray], seed: int) -> np.ndarray:
    """Uniform batched-evaluation entry point for every encoder kind.

    The softmax baseline has no consistent streaming form; its batched
    evaluation is the naive mean of per-batch poolings.
    """
    if isinstance(encoder, EncoderStack):
        return encode_stream(encoder, batches, seed)
    if isinstance(encoder, DeepSetsParams):
        return deepsets_encode(batches, encoder)
    return softmax_pool_minibatch(list(batches), encoder, AggMode.MEAN)


@dataclass(frozen=True)
class MbcReport:
    discrepancies: tuple[float, ...]
    partition_counts: tuple[int, ...]
    tolerance: float

    @property
    def max_discrepancy(self) -> float:
        return max(self.discrepancies)

    @property
    def passed(self) -> bool:
        return self.max_discrepancy <= self.tolerance


def verify_mbc(
    encoder: Encoder,
    x: np.ndarray,
    num_partitions: int,
    seed: int,
    tolerance: float = 1e-9,
) -> MbcReport:
    """Compare `num_partitions` random partitions against the single pass.

    The census always includes the one-batch partition and the one-element-
    per-batch partition.
    """
    x = as_matrix(x, "x")
    n = x.shape[0]
    reference = encode_any(encoder, [x], seed)
    rng = Rng(seed).derive(0x9A7)
    plans: list[int | None] = [1, n]
    plans += [None] * max(0, num_partitions - len(plans))
    discrepancies = []
    counts = []
    for plan in plans[:max(num_partitions, 2)]:
        batches = random_partition(x, rng, plan)
        encoded = encode_any(encoder, batches, seed)
        discrepancies.append(relative_discrepancy(encoded, reference))
        counts.append(len(batches))
    return MbcReport(tuple(discrepancies), tuple(counts), tolerance)
