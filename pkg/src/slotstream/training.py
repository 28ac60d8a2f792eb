"""Losses, exact gradients, gradient checking, Adam, and mini-batch training.

The training loss is the mean squared Euclidean distance between each
support set's encoding and that set's query targets.  Gradients come from
the tape in autodiff; the eager evaluation path goes through the ordinary
library calls (encode_stream, deepsets_encode, softmax_pool_minibatch)
and must agree with the taped forward bit-for-bit.

The optimizer is Adam with a fixed learning rate and decoupled weight
decay; learning-rate schedules are out of scope at this problem size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .baselines import (
    DeepSetsParams,
    SoftmaxPoolParams,
    deepsets_encode,
    softmax_pool_minibatch,
)
from .encoder import STABILIZER, AggMode, SlotEncoderParams, SlotMode
from .errors import ParameterError, ShapeError, TrainingError
from .hierarchy import EncoderStack, encode_stream
from .tensor import LinearMap, Rng, as_matrix, standard_normal_matrix

__all__ = [
    "Encoder",
    "param_arrays",
    "flatten_params",
    "with_params",
    "forward_loss",
    "evaluate_loss",
    "backward",
    "grad_check",
    "GradCheckReport",
    "TrainState",
    "adam_step",
    "CentroidTask",
    "TaskInstance",
    "sample_task",
    "TrainConfig",
    "TrainRecord",
    "TrainResult",
    "train_minibatch",
    "evaluate_on_instances",
]

Encoder = EncoderStack | DeepSetsParams | SoftmaxPoolParams

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

backward = ad.backward


# ---------------------------------------------------------------------------
# Parameter flattening
# ---------------------------------------------------------------------------


def param_arrays(encoder: Encoder) -> list[tuple[str, np.ndarray]]:
    """Trainable arrays in canonical order (the flat-vector layout)."""
    out: list[tuple[str, np.ndarray]] = []
    if isinstance(encoder, EncoderStack):
        for t, (params, _) in enumerate(encoder.layers):
            p = f"layer{t}."
            cfg = params.slot_config
            if cfg.mode is SlotMode.DETERMINISTIC:
                out.append((p + "slots", cfg.deterministic_slots))
            else:
                out.append((p + "mu", cfg.mu))
                out.append((p + "log_sigma", cfg.log_sigma))
            out.append((p + "ln_gain", params.slot_norm.gain))
            out.append((p + "ln_bias", params.slot_norm.bias))
            for tag, lin in (
                ("query", params.proj_query),
                ("key", params.proj_key),
                ("value", params.proj_value),
            ):
                out.append((p + tag + "_weight", lin.weight))
                if lin.bias is not None:
                    out.append((p + tag + "_bias", lin.bias))
    elif isinstance(encoder, DeepSetsParams):
        for group, layers in (("phi", encoder.phi), ("rho", encoder.rho)):
            for i, lin in enumerate(layers):
                out.append((f"{group}{i}_weight", lin.weight))
                if lin.bias is not None:
                    out.append((f"{group}{i}_bias", lin.bias))
    elif isinstance(encoder, SoftmaxPoolParams):
        out.append(("query", encoder.query))
        for tag, lin in (("key", encoder.proj_key), ("value", encoder.proj_value)):
            out.append((tag + "_weight", lin.weight))
            if lin.bias is not None:
                out.append((tag + "_bias", lin.bias))
    else:
        raise ParameterError(f"unknown encoder type: {type(encoder).__name__}")
    return out


def flatten_params(encoder: Encoder) -> np.ndarray:
    arrays = [a for _, a in param_arrays(encoder)]
    return np.concatenate([np.ravel(a) for a in arrays]) if arrays else np.zeros(0)


def _take(flat: np.ndarray, offset: int, like: np.ndarray) -> tuple[np.ndarray, int]:
    n = like.size
    return flat[offset : offset + n].reshape(like.shape).copy(), offset + n


def with_params(encoder: Encoder, flat: np.ndarray) -> Encoder:
    """Rebuild the encoder with parameters taken from a flat vector."""
    flat = np.asarray(flat, dtype=np.float64)
    expected = sum(a.size for _, a in param_arrays(encoder))
    if flat.shape != (expected,):
        raise ShapeError(f"expected {expected} parameters, got {flat.shape}")
    off = 0

    def pull(like):
        nonlocal off
        arr, off = _take(flat, off, like)
        return arr

    def rebuild_linear(lin: LinearMap) -> LinearMap:
        w = pull(lin.weight)
        b = pull(lin.bias) if lin.bias is not None else None
        return LinearMap(w, b)

    if isinstance(encoder, EncoderStack):
        layers = []
        for params, mode in encoder.layers:
            cfg = params.slot_config
            if cfg.mode is SlotMode.DETERMINISTIC:
                cfg = replace(cfg, deterministic_slots=pull(cfg.deterministic_slots))
            else:
                cfg = replace(cfg, mu=pull(cfg.mu), log_sigma=pull(cfg.log_sigma))
            norm = replace(
                params.slot_norm, gain=pull(params.slot_norm.gain),
                bias=pull(params.slot_norm.bias),
            )
            layers.append(
                (
                    replace(
                        params,
                        slot_config=cfg,
                        slot_norm=norm,
                        proj_query=rebuild_linear(params.proj_query),
                        proj_key=rebuild_linear(params.proj_key),
                        proj_value=rebuild_linear(params.proj_value),
                    ),
                    mode,
                )
            )
        return EncoderStack(tuple(layers))
    if isinstance(encoder, DeepSetsParams):
        phi = tuple(rebuild_linear(lin) for lin in encoder.phi)
        rho = tuple(rebuild_linear(lin) for lin in encoder.rho)
        return DeepSetsParams(phi, encoder.pool, rho)
    if isinstance(encoder, SoftmaxPoolParams):
        return SoftmaxPoolParams(
            pull(encoder.query),
            rebuild_linear(encoder.proj_key),
            rebuild_linear(encoder.proj_value),
        )
    raise ParameterError(f"unknown encoder type: {type(encoder).__name__}")


# ---------------------------------------------------------------------------
# Taped forward graphs
# ---------------------------------------------------------------------------


def _as_batches(support) -> list[np.ndarray]:
    if isinstance(support, np.ndarray):
        return [as_matrix(support, "support")]
    return [as_matrix(b, "support batch") for b in support]


def _register_params(tape: Tape, encoder: Encoder) -> dict[str, Var]:
    """Create parameter Vars in canonical order; vectors become 1 x m rows."""
    out = {}
    for name, arr in param_arrays(encoder):
        value = arr if arr.ndim == 2 else arr.reshape(1, -1)
        out[name] = tape.parameter(value)
    return out


def _taped_linear(tape: Tape, x: Var, weight: Var, bias: Var | None) -> Var:
    y = ad.matmul(tape, x, weight)
    if bias is not None:
        y = ad.add_rowvec(tape, y, bias)
    return y


def _taped_slots(
    tape: Tape, pvars: dict[str, Var], prefix: str, params: SlotEncoderParams, seed: int
) -> Var:
    cfg = params.slot_config
    if cfg.mode is SlotMode.DETERMINISTIC:
        return pvars[prefix + "slots"]
    eps = tape.constant(standard_normal_matrix(seed, cfg.num_slots, cfg.slot_dim))
    sigma = ad.exp(tape, pvars[prefix + "log_sigma"])
    scaled = ad.mul(tape, ad.broadcast_rows(tape, sigma, cfg.num_slots), eps)
    return ad.add(tape, ad.broadcast_rows(tape, pvars[prefix + "mu"], cfg.num_slots), scaled)


def _taped_layer(
    tape: Tape,
    pvars: dict[str, Var],
    prefix: str,
    params: SlotEncoderParams,
    mode: AggMode,
    batches: list[Var],
    seed: int,
) -> Var:
    """One slot-encoder layer over a list of batches, merged and finalized."""
    slots = _taped_slots(tape, pvars, prefix, params, seed)
    slots_n = ad.layer_norm(
        tape, slots, pvars[prefix + "ln_gain"], pvars[prefix + "ln_bias"],
        params.slot_norm.epsilon,
    )
    queries = _taped_linear(
        tape, slots_n, pvars[prefix + "query_weight"], pvars.get(prefix + "query_bias")
    )
    queries_t = ad.transpose(tape, queries)
    inv_scale = 1.0 / math.sqrt(params.attn_dim)
    acc: Var | None = None
    total = 0
    for xb in batches:
        keys = _taped_linear(tape, xb, pvars[prefix + "key_weight"], pvars.get(prefix + "key_bias"))
        values = _taped_linear(
            tape, xb, pvars[prefix + "value_weight"], pvars.get(prefix + "value_bias")
        )
        logits = ad.scale(tape, ad.matmul(tape, keys, queries_t), inv_scale)
        attn = ad.add_const(tape, ad.sigmoid(tape, logits), STABILIZER)
        weights = ad.slot_normalize(tape, attn)
        if mode in (AggMode.SUM, AggMode.MEAN):
            pooled = ad.weighted_sum_pool(tape, weights, values)
            acc = pooled if acc is None else ad.add(tape, acc, pooled)
        else:
            pooled = ad.weighted_extreme_pool(tape, weights, values, mode is AggMode.MAX)
            acc = pooled if acc is None else ad.pairwise_extreme(tape, acc, pooled, mode is AggMode.MAX)
        total += xb.value.shape[0]
    if mode is AggMode.MEAN:
        acc = ad.div_const(tape, acc, float(total))
    return acc


def _taped_stack_predict(
    tape: Tape, pvars: dict[str, Var], stack: EncoderStack, support, seed: int
) -> Var:
    batches = [tape.constant(b) for b in _as_batches(support)]
    params, mode = stack.layers[0]
    out = _taped_layer(tape, pvars, "layer0.", params, mode, batches, seed)
    for t in range(1, stack.depth):
        params, mode = stack.layers[t]
        out = _taped_layer(tape, pvars, f"layer{t}.", params, mode, [out], seed + t)
    return ad.reshape_row(tape, out)


def _taped_deepsets_predict(
    tape: Tape, pvars: dict[str, Var], params: DeepSetsParams, support
) -> Var:
    def mlp(x: Var, group: str, layers) -> Var:
        for i in range(len(layers)):
            x = _taped_linear(
                tape, x, pvars[f"{group}{i}_weight"], pvars.get(f"{group}{i}_bias")
            )
            if i + 1 < len(layers):
                x = ad.relu(tape, x)
        return x

    acc: Var | None = None
    total = 0
    for b in _as_batches(support):
        feats = mlp(tape.constant(b), "phi", params.phi)
        if params.pool in (AggMode.SUM, AggMode.MEAN):
            pooled = ad.column_sums(tape, feats)
            acc = pooled if acc is None else ad.add(tape, acc, pooled)
        else:
            pooled = ad.column_extreme(tape, feats, params.pool is AggMode.MAX)
            acc = pooled if acc is None else ad.pairwise_extreme(
                tape, acc, pooled, params.pool is AggMode.MAX
            )
        total += b.shape[0]
    if params.pool is AggMode.MEAN:
        acc = ad.div_const(tape, acc, float(total))
    return mlp(acc, "rho", params.rho)


def _taped_softmax_predict(
    tape: Tape, pvars: dict[str, Var], params: SoftmaxPoolParams, support
) -> Var:
    inv_scale = 1.0 / math.sqrt(params.attn_dim)
    outputs = []
    for b in _as_batches(support):
        xb = tape.constant(b)
        keys = _taped_linear(tape, xb, pvars["key_weight"], pvars.get("key_bias"))
        values = _taped_linear(tape, xb, pvars["value_weight"], pvars.get("value_bias"))
        logits = ad.scale(
            tape, ad.matmul(tape, pvars["query"], ad.transpose(tape, keys)), inv_scale
        )
        outputs.append(ad.matmul(tape, ad.softmax_rows(tape, logits), values))
    acc = outputs[0]
    for out in outputs[1:]:
        acc = ad.add(tape, acc, out)
    acc = ad.div_const(tape, acc, float(len(outputs)))
    return ad.reshape_row(tape, acc)


def _taped_predict(tape, pvars, encoder, support, slot_seed) -> Var:
    if isinstance(encoder, EncoderStack):
        return _taped_stack_predict(tape, pvars, encoder, support, slot_seed)
    if isinstance(encoder, DeepSetsParams):
        return _taped_deepsets_predict(tape, pvars, encoder, support)
    return _taped_softmax_predict(tape, pvars, encoder, support)


def forward_loss(
    encoder: Encoder,
    supports: Sequence,
    targets: Sequence[np.ndarray],
    slot_seed: int = 0,
) -> tuple[float, Tape]:
    """Mean squared distance from each support encoding to its query targets.

    Each support may be one matrix or a list of batches (encoded and merged
    on the tape).  Returns the scalar loss and the tape for backward().
    """
    if len(supports) != len(targets):
        raise ShapeError("supports and targets must pair up")
    if not supports:
        raise ParameterError("need at least one support set")
    tape = Tape()
    pvars = _register_params(tape, encoder)
    total_pairs = 0
    loss_acc: Var | None = None
    for support, target in zip(supports, targets):
        target = as_matrix(target, "target")
        pred = _taped_predict(tape, pvars, encoder, support, slot_seed)
        if pred.value.shape[1] != target.shape[1]:
            raise ShapeError(
                f"prediction width {pred.value.shape[1]} != target width {target.shape[1]}"
            )
        term = ad.sum_sq_diff(tape, pred, target)
        loss_acc = term if loss_acc is None else ad.add(tape, loss_acc, term)
        total_pairs += target.shape[0]
    loss = ad.div_const(tape, loss_acc, float(total_pairs))
    tape.loss = loss
    return float(loss.value[0, 0]), tape


def _predict_eager(encoder: Encoder, support, slot_seed: int) -> np.ndarray:
    batches = _as_batches(support)
    if isinstance(encoder, EncoderStack):
        return encode_stream(encoder, batches, slot_seed).reshape(1, -1)
    if isinstance(encoder, DeepSetsParams):
        return deepsets_encode(batches, encoder)
    return softmax_pool_minibatch(batches, encoder, AggMode.MEAN).reshape(1, -1)


def _sq_dist_total(pred: np.ndarray, targets: np.ndarray) -> float:
    resid = pred - targets
    return float((resid * resid).sum())


def evaluate_loss(
    encoder: Encoder,
    supports: Sequence,
    targets: Sequence[np.ndarray],
    slot_seed: int = 0,
) -> float:
    """Tape-free loss through the ordinary library evaluation paths."""
    total = 0.0
    pairs = 0
    first = True
    for support, target in zip(supports, targets):
        target = as_matrix(target, "target")
        pred = _predict_eager(encoder, support, slot_seed)
        term = _sq_dist_total(pred, target)
        total = term if first else total + term
        first = False
        pairs += target.shape[0]
    if first:
        raise ParameterError("need at least one support set")
    return total / float(pairs)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    """Per-coordinate comparison of analytic and central-difference gradients."""

    analytic: np.ndarray
    numeric: np.ndarray
    rel_err: np.ndarray
    excluded: np.ndarray  # kink coordinates (max/min argument switches under the probe)
    names: list[tuple[str, int, int]]  # (param name, offset, size)
    step: float
    tolerance: float

    @property
    def max_rel_err(self) -> float:
        live = self.rel_err[~self.excluded]
        return float(live.max()) if live.size else 0.0

    @property
    def excluded_count(self) -> int:
        return int(self.excluded.sum())

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance

    def coordinate_name(self, i: int) -> str:
        for name, offset, size in self.names:
            if offset <= i < offset + size:
                return f"{name}[{i - offset}]"
        return f"param[{i}]"

    def worst(self, top: int = 5) -> list[tuple[str, float, float, float]]:
        order = np.argsort(np.where(self.excluded, -1.0, self.rel_err))[::-1]
        out = []
        for i in order[:top]:
            out.append(
                (
                    self.coordinate_name(int(i)),
                    float(self.analytic[i]),
                    float(self.numeric[i]),
                    float(self.rel_err[i]),
                )
            )
        return out


def grad_check(
    encoder: Encoder,
    supports: Sequence,
    targets: Sequence[np.ndarray],
    slot_seed: int = 0,
    step: float = 1e-5,
    tolerance: float = 1e-6,
) -> GradCheckReport:
    """Central finite differences against the tape, coordinate by coordinate.

    Relative error uses |a - n| / max(1, |a|, |n|): near-zero gradients are
    held to the same absolute precision as everything else, which is the
    practical floor for a step of 1e-5 in double precision.  A coordinate is
    excluded as non-differentiable when the probe's second difference blows
    up, i.e. an extreme-mode argmax flipped inside the probe interval.
    """
    if step <= 0.0:
        raise ParameterError("step must be positive")
    loss0, tape = forward_loss(encoder, supports, targets, slot_seed)
    analytic = backward(tape)
    flat = flatten_params(encoder)
    numeric = np.zeros_like(flat)
    excluded = np.zeros(flat.size, dtype=bool)
    for i in range(flat.size):
        probe = flat.copy()
        probe[i] = flat[i] + step
        f_plus = evaluate_loss(with_params(encoder, probe), supports, targets, slot_seed)
        probe[i] = flat[i] - step
        f_minus = evaluate_loss(with_params(encoder, probe), supports, targets, slot_seed)
        numeric[i] = (f_plus - f_minus) / (2.0 * step)
        second = abs(f_plus - 2.0 * loss0 + f_minus) / step
        if second > 1e-3 * max(1.0, abs(loss0)):
            excluded[i] = True
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    rel = np.abs(analytic - numeric) / denom
    names = []
    offset = 0
    for name, arr in param_arrays(encoder):
        names.append((name, offset, arr.size))
        offset += arr.size
    return GradCheckReport(analytic, numeric, rel, excluded, names, step, tolerance)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class TrainState:
    """Flat parameters plus Adam moments and the run's RNG."""

    params: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    step: int
    lr: float
    weight_decay: float
    rng: Rng

    @staticmethod
    def fresh(encoder: Encoder, lr: float, weight_decay: float, seed: int) -> "TrainState":
        flat = flatten_params(encoder)
        return TrainState(
            flat, np.zeros_like(flat), np.zeros_like(flat), 0, lr, weight_decay, Rng(seed)
        )


def adam_step(state: TrainState, grad: np.ndarray) -> TrainState:
    """One Adam update with decoupled weight decay (decay applied to params directly)."""
    if grad.shape != state.params.shape:
        raise ShapeError("gradient and parameter vectors differ in length")
    t = state.step + 1
    m = ADAM_BETA1 * state.adam_m + (1.0 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * state.adam_v + (1.0 - ADAM_BETA2) * grad * grad
    m_hat = m / (1.0 - ADAM_BETA1**t)
    v_hat = v / (1.0 - ADAM_BETA2**t)
    update = state.lr * (m_hat / (np.sqrt(v_hat) + ADAM_EPS))
    params = state.params - update - state.lr * state.weight_decay * state.params
    return TrainState(params, m, v, t, state.lr, state.weight_decay, state.rng)


# ---------------------------------------------------------------------------
# Synthetic centroid task
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CentroidTask:
    """Gaussian clusters; predict a point near each cluster's center from samples.

    Every class contributes a support set (`shot` rows around the center at
    `spread`) and `queries` target rows at `query_spread`.  The loss drives
    the support encoding toward the query cloud, whose mean is the true
    center; queries are noisier than supports so the achievable loss has a
    floor that dominates the centroid-estimation error.
    """

    way: int = 4
    shot: int = 256
    dim: int = 8
    spread: float = 0.25
    query_spread: float = 0.5
    separation: float = 2.0
    queries: int = 4

    def __post_init__(self):
        if self.way < 2:
            raise ParameterError("way must be at least 2")
        if self.shot < 1:
            raise ParameterError("shot must be at least 1")


@dataclass(frozen=True)
class TaskInstance:
    supports: tuple[np.ndarray, ...]
    targets: tuple[np.ndarray, ...]
    means: tuple[np.ndarray, ...]


def sample_task(task: CentroidTask, rng: Rng) -> TaskInstance:
    supports, targets, means = [], [], []
    for _ in range(task.way):
        center = rng.standard_normal(1, task.dim) * task.separation
        supports.append(center + rng.standard_normal(task.shot, task.dim) * task.spread)
        targets.append(center + rng.standard_normal(task.queries, task.dim) * task.query_spread)
        means.append(center)
    return TaskInstance(tuple(supports), tuple(targets), tuple(means))


def _subsample(rng: Rng, x: np.ndarray, size: int) -> np.ndarray:
    idx = rng.permutation(x.shape[0])[:size]
    return np.ascontiguousarray(x[idx])


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 1000
    tasks_per_step: int = 4
    subset_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 5e-4
    seed: int = 0
    eval_every: int = 0
    eval_instances: tuple[TaskInstance, ...] = ()
    eval_partition_size: int = 0
    target_mode: str = "queries"  # or "subset-mean" for the self-supervised teacher


@dataclass(frozen=True)
class TrainRecord:
    step: int
    train_loss: float
    eval_loss_full: float | None = None
    eval_loss_partitioned: float | None = None


@dataclass
class TrainResult:
    encoder: Encoder
    state: TrainState
    history: list[TrainRecord] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1].train_loss if self.history else math.nan


def train_minibatch(
    encoder: Encoder, task: CentroidTask, config: TrainConfig
) -> TrainResult:
    """Adam training on fresh subset-of-support tasks sampled every step.

    Each step draws `tasks_per_step` task instances, keeps a random
    `subset_size`-element subset of every support set, and takes one
    gradient step on the pooled loss.  Random-slot encoders resample their
    slots each step from the recorded seed stream, so runs with equal seeds
    produce identical histories.
    """
    if not (0 < config.subset_size < task.shot):
        raise ParameterError("training subsets must be smaller than the full set")
    if config.target_mode not in ("queries", "subset-mean"):
        raise ParameterError(f"unknown target mode {config.target_mode!r}")
    state = TrainState.fresh(encoder, config.lr, config.weight_decay, config.seed)
    current = encoder
    history: list[TrainRecord] = []
    for step_index in range(config.steps):
        slot_seed = state.rng.next_uint64()
        supports, targets = [], []
        for _ in range(config.tasks_per_step):
            inst = sample_task(task, state.rng)
            for c in range(task.way):
                sub = _subsample(state.rng, inst.supports[c], config.subset_size)
                supports.append(sub)
                if config.target_mode == "queries":
                    targets.append(inst.targets[c])
                else:
                    targets.append(sub.mean(axis=0, keepdims=True))
        loss, tape = forward_loss(current, supports, targets, slot_seed)
        if not math.isfinite(loss):
            raise TrainingError(f"loss diverged to {loss} at step {step_index}")
        grad = backward(tape)
        state = adam_step(state, grad)
        current = with_params(current, state.params)
        record = TrainRecord(step_index, loss)
        if config.eval_every and (step_index + 1) % config.eval_every == 0 and config.eval_instances:
            full = evaluate_on_instances(current, config.eval_instances, slot_seed=0)
            part = evaluate_on_instances(
                current,
                config.eval_instances,
                slot_seed=0,
                partition_size=config.eval_partition_size or config.subset_size,
            )
            record = TrainRecord(step_index, loss, full, part)
        history.append(record)
    return TrainResult(current, state, history)


def evaluate_on_instances(
    encoder: Encoder,
    instances: Sequence[TaskInstance],
    slot_seed: int = 0,
    set_size: int | None = None,
    partition_size: int | None = None,
) -> float:
    """Mean loss over fixed instances; optional prefix truncation or batching.

    `set_size` keeps only the first rows of each support (nested prefixes let
    set-size sweeps share randomness); `partition_size` feeds the support
    through the streaming path in chunks instead of one pass.
    """
    supports, targets = [], []
    for inst in instances:
        for c in range(len(inst.supports)):
            sup = inst.supports[c]
            if set_size is not None:
                sup = sup[:set_size]
            if partition_size:
                chunks = [
                    sup[i : i + partition_size] for i in range(0, sup.shape[0], partition_size)
                ]
                supports.append(chunks)
            else:
                supports.append(sup)
            targets.append(inst.targets[c])
    return evaluate_loss(encoder, supports, targets, slot_seed)
