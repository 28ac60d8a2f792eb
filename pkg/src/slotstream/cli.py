"""Command-line surface: durable streaming sessions, verification, training.

Data outputs (encodings, CSV reports) go to --out or stdout; every human
diagnostic goes to stderr.  Exit codes: 0 success / property holds,
1 property violated (verify-mbc, gradcheck), 2 usage or data error.
"""

from __future__ import annotations

import argparse
import statistics
import sys

import numpy as np

from . import consistency, modelio, models, training
from .baselines import DeepSetsParams, deepsets_head, deepsets_pool_batch, softmax_pool_full
from .encoder import (
    AggMode,
    PartialEncoding,
    SlotMode,
    encode_batch_prenormalized,
    encode_full,
    finalize,
    init_state,
    merge,
    normalized_slots,
    sample_slots,
)
from .errors import ConfigError, DataError, SessionError, SlotStreamError
from .hierarchy import EncoderStack
from .tensor import Rng
from .modelio import ModelBundle, SessionState

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_out(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        modelio.atomic_write_text(out, text)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _csv(rows: list[list], header: list[str]) -> str:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if v is None:
                cells.append("")
            elif isinstance(v, float):
                cells.append(_fmt(v))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _load_batch_checked(path: str, bundle: ModelBundle) -> np.ndarray:
    batch = modelio.load_batch(path)
    if batch.shape[1] != bundle.input_dim:
        raise DataError(
            f"{path}: rows have {batch.shape[1]} fields but the model expects "
            f"{bundle.input_dim}"
        )
    return batch


# ---------------------------------------------------------------------------
# Model construction
# ---------------------------------------------------------------------------


def _parse_layer_spec(text: str) -> models.LayerSpec:
    parts = text.split(":")
    if len(parts) < 3:
        raise ConfigError(
            f"layer spec {text!r} must be slots:slot_dim:attn_dim[:mode[:slot_mode]]"
        )
    mode = AggMode.parse(parts[3]) if len(parts) > 3 else AggMode.SUM
    slot_mode = SlotMode(parts[4]) if len(parts) > 4 else SlotMode.RANDOM
    return models.LayerSpec(int(parts[0]), int(parts[1]), int(parts[2]), mode, slot_mode)


def cmd_new_model(args) -> int:
    rng = Rng(args.seed)
    train = {}
    for item in args.train or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--train expects key=value, got {item!r}")
        train[key] = float(value)
    if args.kind == "sse":
        specs = [_parse_layer_spec(s) for s in args.layer or []]
        if not specs:
            raise ConfigError("sse models need at least one --layer spec")
        encoder = models.make_stack(args.input_dim, specs, rng)
        bundle = ModelBundle("sse", encoder, args.input_dim, train or None)
    elif args.kind == "deepsets":
        phi = [int(v) for v in args.phi.split(",")] if args.phi else []
        rho = [int(v) for v in args.rho.split(",")] if args.rho else []
        encoder = models.make_deepsets(
            args.input_dim, phi, rho, AggMode.parse(args.mode), rng
        )
        bundle = ModelBundle("deepsets", encoder, args.input_dim, train or None)
    else:
        encoder = models.make_softmax_pool(
            args.input_dim, args.num_queries, args.attn_dim, rng
        )
        bundle = ModelBundle("softmax_pool", encoder, args.input_dim, train or None)
    modelio.save_model(bundle, args.out)
    _err(f"wrote {args.kind} model to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Streaming session commands
# ---------------------------------------------------------------------------


def _state_shape(bundle: ModelBundle) -> tuple[int, int]:
    enc = bundle.encoder
    if isinstance(enc, EncoderStack):
        params, _ = enc.layers[0]
        return params.slot_config.num_slots, params.attn_dim
    if isinstance(enc, DeepSetsParams):
        width = enc.phi[-1].dim_out if enc.phi else bundle.input_dim
        return 1, width
    return enc.query.shape[0], enc.attn_dim


def _resolve_session_mode(bundle: ModelBundle, flag: str | None) -> AggMode:
    """The session must aggregate the way the model was built to aggregate.

    sse models stream with their first layer's mode, deepsets with their pool
    mode; an explicit conflicting --mode is a configuration error.  The
    softmax baseline has no intrinsic merge, so --mode picks the naive
    combine (default mean).
    """
    enc = bundle.encoder
    if isinstance(enc, EncoderStack):
        model_mode = enc.layers[0][1]
    elif isinstance(enc, DeepSetsParams):
        model_mode = enc.pool
    else:
        return AggMode.parse(flag) if flag else AggMode.MEAN
    if flag is not None and AggMode.parse(flag) is not model_mode:
        raise ConfigError(
            f"--mode {flag} conflicts with the model's {model_mode.value} aggregation"
        )
    return model_mode


def cmd_init(args) -> int:
    bundle = modelio.load_model(args.model)
    mode = _resolve_session_mode(bundle, args.mode)
    rows, cols = _state_shape(bundle)
    slots = None
    if isinstance(bundle.encoder, EncoderStack):
        params, _ = bundle.encoder.layers[0]
        sample = sample_slots(params.slot_config, args.seed)
        slots = normalized_slots(params, sample)
    state = init_state(mode, rows, cols)
    session = SessionState(
        fingerprint=modelio.model_fingerprint(bundle),
        kind=bundle.kind,
        mode=mode,
        slot_seed=args.seed,
        slots=slots,
        partial=state.partial,
        count=0,
    )
    modelio.save_session(session, args.session)
    _err(f"initialized {mode.value} session at {args.session}")
    return EXIT_OK


def _session_partial(bundle: ModelBundle, session: SessionState, batch: np.ndarray) -> PartialEncoding:
    enc = bundle.encoder
    if isinstance(enc, EncoderStack):
        params, _ = enc.layers[0]
        return encode_batch_prenormalized(batch, session.slots, params, session.mode)
    if isinstance(enc, DeepSetsParams):
        return deepsets_pool_batch(enc, batch)
    return PartialEncoding(softmax_pool_full(batch, enc), 1)


def _check_session(bundle: ModelBundle, session: SessionState) -> None:
    fp = modelio.model_fingerprint(bundle)
    if fp != session.fingerprint:
        raise SessionError(
            "session was initialized for a different model "
            f"(session {session.fingerprint[:12]}.., model {fp[:12]}..)"
        )


def cmd_ingest(args) -> int:
    bundle = modelio.load_model(args.model)
    with modelio.session_lock(args.session):
        session = modelio.load_session(args.session)
        _check_session(bundle, session)
        batch = _load_batch_checked(args.batch, bundle)
        partial = _session_partial(bundle, session, batch)
        merged = merge(session.aggregate(), partial)
        updated = SessionState(
            session.fingerprint,
            session.kind,
            session.mode,
            session.slot_seed,
            session.slots,
            merged.partial,
            merged.count,
        )
        modelio.save_session(updated, args.session)
    _err(f"ingested {batch.shape[0]} elements (total {updated.count})")
    return EXIT_OK


def cmd_finalize(args) -> int:
    bundle = modelio.load_model(args.model)
    session = modelio.load_session(args.session)
    _check_session(bundle, session)
    out = finalize(session.aggregate())
    enc = bundle.encoder
    if isinstance(enc, EncoderStack):
        for t in range(1, enc.depth):
            params, mode = enc.layers[t]
            out = encode_full(out, params, mode, session.slot_seed + t)
    elif isinstance(enc, DeepSetsParams):
        out = deepsets_head(enc, out)
    _write_out(",".join(_fmt(v) for v in out.ravel()) + "\n", args.out)
    _err(f"finalized encoding of {session.count} units, shape {out.shape}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Verification commands
# ---------------------------------------------------------------------------


def cmd_verify_mbc(args) -> int:
    bundle = modelio.load_model(args.model)
    data = _load_batch_checked(args.data, bundle)
    report = consistency.verify_mbc(
        bundle.encoder, data, args.partitions, args.seed, args.tolerance
    )
    rows = [
        [i, parts, disc]
        for i, (parts, disc) in enumerate(zip(report.partition_counts, report.discrepancies))
    ]
    if args.out:
        _write_out(_csv(rows, ["partition", "num_batches", "discrepancy"]), args.out)
    verdict = "PASS" if report.passed else "FAIL"
    _err(
        f"verify-mbc {verdict}: max discrepancy {report.max_discrepancy:.3e} over "
        f"{len(rows)} partitions (tolerance {args.tolerance:.1e})"
    )
    return EXIT_OK if report.passed else EXIT_VIOLATION


def cmd_demo_inconsistency(args) -> int:
    rng = Rng(args.seed)
    discrepancies = []
    rows = []
    for i in range(args.instances):
        params = models.make_softmax_pool(args.input_dim, 2, args.attn_dim, rng)
        n = 8 + rng.next_below(57)
        x = rng.standard_normal(n, args.input_dim)
        cut = max(1, n // 3)
        full = softmax_pool_full(x, params)
        combined = consistency.encode_any(params, [x[:cut], x[cut:]], 0)
        disc = consistency.relative_discrepancy(combined, full)
        discrepancies.append(disc)
        rows.append([i, n, disc])
    median = statistics.median(discrepancies)
    frac = sum(d >= 1e-3 for d in discrepancies) / len(discrepancies)
    _write_out(_csv(rows, ["instance", "set_size", "discrepancy"]), args.out)
    _err(
        f"softmax pooling two-batch discrepancy: median {median:.3e}, "
        f"{100 * frac:.1f}% of {args.instances} instances above 1e-3"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# Training commands
# ---------------------------------------------------------------------------


def _prediction_width(encoder: training.Encoder) -> int:
    if isinstance(encoder, EncoderStack):
        params, _ = encoder.layers[-1]
        return params.slot_config.num_slots * params.attn_dim
    if isinstance(encoder, DeepSetsParams):
        if encoder.rho:
            return encoder.rho[-1].dim_out
        if encoder.phi:
            return encoder.phi[-1].dim_out
        raise ConfigError("cannot infer deepsets output width")
    return encoder.query.shape[0] * encoder.attn_dim


def _task_from(bundle: ModelBundle, args) -> training.CentroidTask:
    block = dict(bundle.train or {})

    def pick(name: str, fallback):
        flag = getattr(args, name, None)
        if flag is not None:
            return flag
        if name in block:
            value = block[name]
            return int(value) if isinstance(fallback, int) else value
        return fallback

    task = training.CentroidTask(
        way=pick("way", 4),
        shot=pick("shot", 256),
        dim=bundle.input_dim,
        spread=pick("spread", 0.25),
        query_spread=pick("query_spread", 0.5),
        separation=pick("separation", 2.0),
        queries=pick("queries", 4),
    )
    width = _prediction_width(bundle.encoder)
    if width != task.dim:
        raise ConfigError(
            f"model predicts {width}-dim vectors but the task targets are {task.dim}-dim"
        )
    return task


def _train_config(bundle: ModelBundle, args, task: training.CentroidTask) -> training.TrainConfig:
    block = dict(bundle.train or {})

    def pick(name: str, fallback):
        flag = getattr(args, name, None)
        if flag is not None:
            return flag
        if name in block:
            value = block[name]
            return int(value) if isinstance(fallback, int) else value
        return fallback

    eval_instances: tuple[training.TaskInstance, ...] = ()
    eval_every = pick("eval_every", 0)
    if eval_every:
        eval_rng = Rng(args.seed).derive(0xE7A1)
        eval_instances = tuple(
            training.sample_task(task, eval_rng) for _ in range(pick("eval_tasks", 16))
        )
    return training.TrainConfig(
        steps=pick("steps", 500),
        tasks_per_step=pick("tasks_per_step", 4),
        subset_size=pick("subset_size", 16),
        lr=pick("lr", 1e-3),
        weight_decay=pick("weight_decay", 5e-4),
        seed=args.seed,
        eval_every=eval_every,
        eval_instances=eval_instances,
        eval_partition_size=pick("subset_size", 16),
    )


def cmd_train(args) -> int:
    bundle = modelio.load_model(args.model)
    task = _task_from(bundle, args)
    config = _train_config(bundle, args, task)
    result = training.train_minibatch(bundle.encoder, task, config)
    trained = ModelBundle(bundle.kind, result.encoder, bundle.input_dim, bundle.train)
    modelio.save_model(trained, args.out)
    rows = [
        [r.step, r.train_loss, r.eval_loss_full, r.eval_loss_partitioned]
        for r in result.history
    ]
    if args.history:
        _write_out(
            _csv(rows, ["step", "train_loss", "eval_loss_full", "eval_loss_partitioned"]),
            args.history,
        )
    _err(
        f"trained {config.steps} steps; final train loss {result.final_loss:.6f}; "
        f"model written to {args.out}"
    )
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    bundle = modelio.load_model(args.model)
    rng = Rng(args.seed)
    width = _prediction_width(bundle.encoder)
    supports = [rng.standard_normal(5, bundle.input_dim) for _ in range(2)]
    targets = [rng.standard_normal(2, width) for _ in range(2)]
    report = training.grad_check(
        bundle.encoder, supports, targets,
        slot_seed=args.seed, step=args.step, tolerance=args.tolerance,
    )
    for name, analytic, numeric, rel in report.worst(3):
        _err(f"  {name}: analytic {analytic:+.6e} numeric {numeric:+.6e} rel {rel:.2e}")
    verdict = "PASS" if report.passed else "FAIL"
    _err(
        f"gradcheck {verdict}: max relative error {report.max_rel_err:.3e} over "
        f"{report.analytic.size} coordinates ({report.excluded_count} excluded as ties)"
    )
    return EXIT_OK if report.passed else EXIT_VIOLATION


def cmd_eval(args) -> int:
    bundle = modelio.load_model(args.model)
    task = _task_from(bundle, args)
    rng = Rng(args.seed).derive(0xE7A1)
    instances = tuple(training.sample_task(task, rng) for _ in range(args.tasks))
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = []
    for size in sizes:
        if size > task.shot:
            raise ConfigError(f"eval size {size} exceeds task shot {task.shot}")
        full = training.evaluate_on_instances(bundle.encoder, instances, set_size=size)
        part = training.evaluate_on_instances(
            bundle.encoder, instances, set_size=size,
            partition_size=args.partition_size,
        )
        rows.append([size, full, part])
    _write_out(_csv(rows, ["set_size", "loss_full", "loss_partitioned"]), args.out)
    _err(f"evaluated {args.tasks} tasks at sizes {sizes}")
    return EXIT_OK


def _sweep_variants(bundle: ModelBundle, args) -> list[tuple[str, training.Encoder]]:
    enc = bundle.encoder
    axis = args.axis
    if axis == "mode":
        out = []
        for mode in AggMode:
            if isinstance(enc, EncoderStack):
                layers = tuple((p, mode) for p, _ in enc.layers)
                out.append((mode.value, EncoderStack(layers)))
            elif isinstance(enc, DeepSetsParams):
                out.append((mode.value, DeepSetsParams(enc.phi, mode, enc.rho)))
            else:
                raise ConfigError("mode sweep needs an sse or deepsets model")
        return out
    if not isinstance(enc, EncoderStack):
        raise ConfigError(f"{axis} sweep requires an sse model")
    values = [int(v) for v in (args.values or "").split(",") if v]
    if not values:
        raise ConfigError(f"--values is required for the {axis} sweep")
    base, base_mode = enc.layers[0]
    out = []
    for v in values:
        rng = Rng(args.seed).derive(v)
        if axis == "slots":
            spec = [models.LayerSpec(v, base.slot_config.slot_dim, base.attn_dim, base_mode, base.slot_config.mode)]
            variant = models.make_stack(base.input_dim, spec, rng)
        elif axis == "slot-dim":
            spec = [models.LayerSpec(base.slot_config.num_slots, v, base.attn_dim, base_mode, base.slot_config.mode)]
            variant = models.make_stack(base.input_dim, spec, rng)
        elif axis == "depth":
            specs = []
            dim = base.slot_config.slot_dim
            for t in range(v):
                slots = base.slot_config.num_slots if t + 1 < v else 1
                attn = dim * 2 if t + 1 < v else base.attn_dim
                specs.append(models.LayerSpec(slots, dim, attn, base_mode, base.slot_config.mode))
                dim *= 2
            variant = models.make_stack(base.input_dim, specs, rng)
        else:
            raise ConfigError(f"unknown sweep axis {axis!r}")
        out.append((str(v), variant))
    return out


def cmd_sweep(args) -> int:
    bundle = modelio.load_model(args.model)
    task = _task_from(bundle, args)
    config = _train_config(bundle, args, task)
    variants = _sweep_variants(bundle, args)
    histories = {}
    for label, encoder in variants:
        result = training.train_minibatch(encoder, task, config)
        histories[label] = [r.train_loss for r in result.history]
        _err(f"variant {label}: final loss {result.final_loss:.6f}")
    labels = [label for label, _ in variants]
    rows = [
        [step, *[histories[label][step] for label in labels]]
        for step in range(config.steps)
    ]
    _write_out(_csv(rows, ["step", *[f"loss_{v}" for v in labels]]), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slotstream",
        description="Streaming set encoding with a batch-consistent merge contract.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("new-model", help="create and save a fresh encoder")
    p.add_argument("--kind", choices=["sse", "deepsets", "softmax_pool"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input-dim", type=int, required=True)
    p.add_argument("--layer", action="append",
                   help="sse layer spec slots:slot_dim:attn_dim[:mode[:slot_mode]]")
    p.add_argument("--phi", help="deepsets phi widths, comma separated")
    p.add_argument("--rho", help="deepsets rho widths, comma separated")
    p.add_argument("--mode", default="sum", help="deepsets pool mode")
    p.add_argument("--num-queries", type=int, default=1)
    p.add_argument("--attn-dim", type=int, default=16)
    p.add_argument("--train", action="append", help="training block entry key=value")
    p.set_defaults(func=cmd_new_model)

    p = sub.add_parser("init", help="start a streaming session")
    p.add_argument("--model", required=True)
    p.add_argument("--session", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["sum", "mean", "max", "min"],
                   help="defaults to the model's own aggregation mode")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("ingest", help="fold one batch file into a session")
    p.add_argument("batch")
    p.add_argument("--model", required=True)
    p.add_argument("--session", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("finalize", help="emit the session's encoding as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--session", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_finalize)

    p = sub.add_parser("verify-mbc", help="compare partitioned vs single-pass encoding")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--partitions", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_mbc)

    p = sub.add_parser("demo-inconsistency",
                       help="measure how far softmax pooling drifts under batching")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--input-dim", type=int, default=4)
    p.add_argument("--attn-dim", type=int, default=8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_demo_inconsistency)

    def add_task_flags(p):
        p.add_argument("--way", type=int)
        p.add_argument("--shot", type=int)
        p.add_argument("--spread", type=float)
        p.add_argument("--query-spread", dest="query_spread", type=float)
        p.add_argument("--separation", type=float)
        p.add_argument("--queries", type=int)

    def add_train_flags(p):
        p.add_argument("--steps", type=int)
        p.add_argument("--tasks-per-step", dest="tasks_per_step", type=int)
        p.add_argument("--subset-size", dest="subset_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--weight-decay", dest="weight_decay", type=float)
        p.add_argument("--eval-every", dest="eval_every", type=int)
        p.add_argument("--eval-tasks", dest="eval_tasks", type=int)

    p = sub.add_parser("train", help="mini-batch training on the synthetic centroid task")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.add_argument("--seed", type=int, default=0)
    add_task_flags(p)
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="finite differences vs the tape")
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("eval", help="loss vs evaluated set size, full and batched")
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tasks", type=int, default=64)
    p.add_argument("--sizes", default="16,32,64,128,256")
    p.add_argument("--partition-size", dest="partition_size", type=int, default=16)
    p.add_argument("--out")
    add_task_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train model variants along one config axis")
    p.add_argument("--model", required=True)
    p.add_argument("--axis", default="mode", choices=["mode", "slots", "slot-dim", "depth"])
    p.add_argument("--values")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    add_task_flags(p)
    add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        _err(f"error: no such file: {e.filename}")
        return EXIT_USAGE
    except SlotStreamError as e:
        _err(f"error: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
