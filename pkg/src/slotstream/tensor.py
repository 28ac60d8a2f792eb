"""Dense float64 substrate: matrices, row-wise maps, LayerNorm, and a seeded RNG.

A "matrix" throughout the package is a C-contiguous 2-D float64 ndarray.
All reductions accumulate in a pinned order (see _kernels), which is what
lets higher layers make exact-equality claims about batched evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import NumericError, ParameterError, ShapeError

__all__ = [
    "Rng",
    "LinearMap",
    "LayerNormParams",
    "as_matrix",
    "as_vector",
    "matmul",
    "apply_linear",
    "layer_norm",
    "sigmoid",
    "relu",
    "column_sums",
    "sample_gaussian",
    "standard_normal_matrix",
    "affine_rows",
]

_MASK64 = (1 << 64) - 1


def as_matrix(x, name: str = "matrix", allow_non_finite: bool = False) -> np.ndarray:
    """Coerce to a C-contiguous 2-D float64 array, rejecting NaN/Inf by default."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not allow_non_finite and not np.isfinite(arr).all():
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def as_vector(x, name: str = "vector") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NumericError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class LinearMap:
    """Row-wise affine map x -> x @ weight (+ bias).

    Output row i depends only on input row i, so applying the map commutes
    with any row permutation and with splitting the rows into batches.
    """

    weight: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "weight", as_matrix(self.weight, "weight"))
        if self.bias is not None:
            b = as_vector(self.bias, "bias")
            if b.shape[0] != self.weight.shape[1]:
                raise ShapeError(
                    f"bias length {b.shape[0]} != output dim {self.weight.shape[1]}"
                )
            object.__setattr__(self, "bias", b)

    @property
    def dim_in(self) -> int:
        return self.weight.shape[0]

    @property
    def dim_out(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class LayerNormParams:
    """Per-feature gain/bias for row-wise LayerNorm with population variance."""

    gain: np.ndarray
    bias: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "gain", as_vector(self.gain, "gain"))
        object.__setattr__(self, "bias", as_vector(self.bias, "bias"))
        if self.gain.shape != self.bias.shape:
            raise ShapeError("gain and bias must have the same length")
        if not self.epsilon > 0.0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")

    @staticmethod
    def identity(dim: int, epsilon: float = 1e-5) -> "LayerNormParams":
        return LayerNormParams(np.ones(dim), np.zeros(dim), epsilon)


@dataclass
class Rng:
    """Counter-based deterministic RNG (splitmix64 + Box-Muller).

    The draw at any counter position is a pure function of (seed, position),
    so identical seeds replay identical sequences on every platform.
    """

    seed: int
    counter: int = field(default=0)

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK64

    def derive(self, tag: int) -> "Rng":
        """Independent child stream; used for per-layer and per-step seeds."""
        return Rng(int(_kernels.mix64(np.uint64(self.seed), np.uint64(tag & _MASK64))))

    def next_uint64(self) -> int:
        v = int(_kernels.mix64(np.uint64(self.seed), np.uint64(self.counter)))
        self.counter += 1
        return v

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection (no modulo bias)."""
        if n <= 0:
            raise ParameterError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_uint64()
            if v < limit:
                return v % n

    def permutation(self, n: int) -> np.ndarray:
        """Random permutation of range(n) by sorting one u64 key per index."""
        keys = _kernels.uint64_block(np.uint64(self.seed), n, self.counter)
        self.counter += n
        return np.argsort(keys, kind="stable")

    def standard_normal(self, rows: int, cols: int) -> np.ndarray:
        out = _kernels.gaussian_block(np.uint64(self.seed), rows, cols, self.counter)
        self.counter += 2 * rows * cols
        return out


def standard_normal_matrix(seed: int, rows: int, cols: int) -> np.ndarray:
    """Pure keyed draw: entry (r, c) depends only on (seed, r * cols + c)."""
    return _kernels.gaussian_block(np.uint64(int(seed) & _MASK64), rows, cols, 0)


def sample_gaussian(rng: Rng, rows: int, cols: int, mu, sigma) -> np.ndarray:
    """Rows drawn i.i.d. from N(mu, diag(sigma^2)); advances the rng counter."""
    mu = as_vector(mu, "mu")
    sigma = as_vector(sigma, "sigma")
    if mu.shape[0] != cols or sigma.shape[0] != cols:
        raise ShapeError("mu and sigma must have length equal to cols")
    if not (sigma > 0.0).all():
        raise ParameterError("sigma entries must be positive")
    eps = rng.standard_normal(rows, cols)
    return affine_rows(mu, sigma, eps)


def affine_rows(mu: np.ndarray, sigma: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """mu + sigma * eps with row-broadcast mu/sigma; shared by all sampling paths."""
    return mu[None, :] + sigma[None, :] * eps


def matmul(a, b) -> np.ndarray:
    """Matrix product accumulated in ascending inner-index order."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    out = _kernels.matmul(a, b)
    if not np.isfinite(out).all():
        raise NumericError("matmul overflowed to non-finite values")
    return out


def apply_linear(m: LinearMap, x) -> np.ndarray:
    """x @ weight (+ bias per row). Row i of the output depends only on row i of x."""
    x = as_matrix(x, "x")
    if x.shape[1] != m.dim_in:
        raise ShapeError(f"input width {x.shape[1]} != map input dim {m.dim_in}")
    out = _kernels.matmul(x, m.weight)
    if m.bias is not None:
        out = out + m.bias[None, :]
    if not np.isfinite(out).all():
        raise NumericError("apply_linear produced non-finite values")
    return out


def layer_norm(p: LayerNormParams, x) -> np.ndarray:
    """Standardize each row (population variance + epsilon), then gain/bias."""
    x = as_matrix(x, "x")
    if x.shape[1] != p.gain.shape[0]:
        raise ShapeError(f"input width {x.shape[1]} != gain length {p.gain.shape[0]}")
    return _kernels.layer_norm_rows(x, p.gain, p.bias, p.epsilon)


def sigmoid(x) -> np.ndarray:
    """Elementwise logistic function; stable for arbitrarily large |x|."""
    return _kernels.sigmoid(as_matrix(x, "x"))


def relu(x) -> np.ndarray:
    return np.maximum(as_matrix(x, "x"), 0.0)


def column_sums(x) -> np.ndarray:
    """1 x m matrix of per-column sums in ascending row order."""
    return _kernels.column_sums(as_matrix(x, "x"))
