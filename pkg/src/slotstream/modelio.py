"""Text serialization for models, sessions, and batches.

Files are line-oriented: `key value` lines plus `mat`/`vec` blocks whose
floats are written with 17 significant digits, which round-trips float64
exactly.  Saving what you loaded reproduces the bytes, so a model's content
hash is stable and sessions can be diffed by eye.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
import numpy as np

from .baselines import DeepSetsParams, SoftmaxPoolParams
from .encoder import AggMode, AggregateState, SlotConfig, SlotEncoderParams, SlotMode
from .errors import ParseError, SessionError
from .hierarchy import EncoderStack
from .tensor import LayerNormParams, LinearMap
from .training import Encoder

__all__ = [
    "ModelBundle",
    "SessionState",
    "save_model",
    "load_model",
    "serialize_model",
    "model_fingerprint",
    "save_session",
    "load_session",
    "serialize_session",
    "load_batch",
    "atomic_write_text",
    "session_lock",
]

FORMAT_VERSION = 1


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_row(row: np.ndarray) -> str:
    return " ".join(_fmt(v) for v in row)


def _parse_float(token: str, where: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"{where}: bad float {token!r}") from None


class _Reader:
    """Cursor over non-empty lines with location-aware errors."""

    def __init__(self, text: str, label: str):
        self.label = label
        self.lines = text.splitlines()
        self.pos = 0

    def _where(self) -> str:
        return f"{self.label}:{self.pos}"

    def peek(self) -> list[str] | None:
        while self.pos < len(self.lines) and not self.lines[self.pos].strip():
            self.pos += 1
        if self.pos >= len(self.lines):
            return None
        return self.lines[self.pos].split()

    def next(self) -> list[str]:
        tokens = self.peek()
        if tokens is None:
            raise ParseError(f"{self.label}: unexpected end of file")
        self.pos += 1
        return tokens

    def expect(self, key: str) -> list[str]:
        tokens = self.next()
        if tokens[0] != key:
            raise ParseError(f"{self._where()}: expected {key!r}, found {tokens[0]!r}")
        return tokens

    def scalar(self, key: str) -> str:
        tokens = self.expect(key)
        if len(tokens) != 2:
            raise ParseError(f"{self._where()}: {key} takes exactly one value")
        return tokens[1]

    def int_value(self, key: str) -> int:
        try:
            return int(self.scalar(key))
        except ValueError:
            raise ParseError(f"{self._where()}: {key} must be an integer") from None

    def float_value(self, key: str) -> float:
        return _parse_float(self.scalar(key), self._where())

    def matrix(self, key: str) -> tuple[str, np.ndarray]:
        tokens = self.expect("mat")
        if len(tokens) != 4 or tokens[1] != key:
            raise ParseError(f"{self._where()}: expected 'mat {key} rows cols'")
        rows, cols = int(tokens[2]), int(tokens[3])
        data = np.empty((rows, cols))
        for r in range(rows):
            row = self.next()
            if len(row) != cols:
                raise ParseError(f"{self._where()}: row has {len(row)} fields, want {cols}")
            for c, tok in enumerate(row):
                data[r, c] = _parse_float(tok, self._where())
        return key, data

    def vector(self, key: str) -> np.ndarray:
        tokens = self.expect("vec")
        if len(tokens) != 3 or tokens[1] != key:
            raise ParseError(f"{self._where()}: expected 'vec {key} length'")
        length = int(tokens[2])
        row = self.next()
        if len(row) != length:
            raise ParseError(f"{self._where()}: vector has {len(row)} fields, want {length}")
        return np.array([_parse_float(t, self._where()) for t in row])

    def maybe_vector(self, key: str) -> np.ndarray | None:
        tokens = self.peek()
        if tokens and tokens[0] == "vec" and len(tokens) == 3 and tokens[1] == key:
            return self.vector(key)
        return None


def _emit_matrix(lines: list[str], name: str, m: np.ndarray) -> None:
    lines.append(f"mat {name} {m.shape[0]} {m.shape[1]}")
    for row in m:
        lines.append(_fmt_row(row))


def _emit_vector(lines: list[str], name: str, v: np.ndarray) -> None:
    lines.append(f"vec {name} {len(v)}")
    lines.append(_fmt_row(v))


def _emit_linear(lines: list[str], tag: str, lin: LinearMap) -> None:
    _emit_matrix(lines, tag + "_weight", lin.weight)
    if lin.bias is not None:
        _emit_vector(lines, tag + "_bias", lin.bias)


def _read_linear(r: _Reader, tag: str) -> LinearMap:
    _, w = r.matrix(tag + "_weight")
    b = r.maybe_vector(tag + "_bias")
    return LinearMap(w, b)


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelBundle:
    """An encoder plus the metadata the CLI needs around it."""

    kind: str  # sse | deepsets | softmax_pool
    encoder: Encoder
    input_dim: int
    train: dict[str, float] | None = None


def serialize_model(bundle: ModelBundle) -> str:
    lines = [f"format_version {FORMAT_VERSION}", f"encoder_kind {bundle.kind}"]
    enc = bundle.encoder
    if bundle.kind == "sse":
        assert isinstance(enc, EncoderStack)
        lines.append(f"layers {enc.depth}")
        for t, (params, mode) in enumerate(enc.layers):
            cfg = params.slot_config
            lines.append(f"layer {t}")
            lines.append(f"agg_mode {mode.value}")
            lines.append(f"slot_mode {cfg.mode.value}")
            lines.append(f"num_slots {cfg.num_slots}")
            lines.append(f"slot_dim {cfg.slot_dim}")
            lines.append(f"input_dim {params.input_dim}")
            lines.append(f"attn_dim {params.attn_dim}")
            lines.append(f"ln_epsilon {_fmt(params.slot_norm.epsilon)}")
            if cfg.mode is SlotMode.DETERMINISTIC:
                _emit_matrix(lines, "slots", cfg.deterministic_slots)
            else:
                _emit_vector(lines, "mu", cfg.mu)
                _emit_vector(lines, "log_sigma", cfg.log_sigma)
            _emit_vector(lines, "ln_gain", params.slot_norm.gain)
            _emit_vector(lines, "ln_bias", params.slot_norm.bias)
            _emit_linear(lines, "query", params.proj_query)
            _emit_linear(lines, "key", params.proj_key)
            _emit_linear(lines, "value", params.proj_value)
    elif bundle.kind == "deepsets":
        assert isinstance(enc, DeepSetsParams)
        lines.append(f"pool_mode {enc.pool.value}")
        lines.append(f"input_dim {bundle.input_dim}")
        lines.append(f"phi_layers {len(enc.phi)}")
        for i, lin in enumerate(enc.phi):
            _emit_linear(lines, f"phi{i}", lin)
        lines.append(f"rho_layers {len(enc.rho)}")
        for i, lin in enumerate(enc.rho):
            _emit_linear(lines, f"rho{i}", lin)
    elif bundle.kind == "softmax_pool":
        assert isinstance(enc, SoftmaxPoolParams)
        lines.append(f"input_dim {bundle.input_dim}")
        lines.append(f"attn_dim {enc.attn_dim}")
        _emit_matrix(lines, "query", enc.query)
        _emit_linear(lines, "key", enc.proj_key)
        _emit_linear(lines, "value", enc.proj_value)
    else:
        raise ParseError(f"unknown encoder kind {bundle.kind!r}")
    if bundle.train:
        for key in sorted(bundle.train):
            lines.append(f"train {key} {_fmt(bundle.train[key])}")
    lines.append("end model")
    return "\n".join(lines) + "\n"


def _parse_model(r: _Reader) -> ModelBundle:
    version = r.int_value("format_version")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported model format_version {version}")
    kind = r.scalar("encoder_kind")
    if kind == "sse":
        depth = r.int_value("layers")
        layers = []
        for t in range(depth):
            if r.int_value("layer") != t:
                raise ParseError(f"model layers out of order at layer {t}")
            mode = AggMode.parse(r.scalar("agg_mode"))
            slot_mode = r.scalar("slot_mode")
            num_slots = r.int_value("num_slots")
            slot_dim = r.int_value("slot_dim")
            input_dim = r.int_value("input_dim")
            attn_dim = r.int_value("attn_dim")
            eps = r.float_value("ln_epsilon")
            if slot_mode == "deterministic":
                _, slots = r.matrix("slots")
                cfg = SlotConfig(SlotMode.DETERMINISTIC, num_slots, slot_dim, deterministic_slots=slots)
            elif slot_mode == "random":
                mu = r.vector("mu")
                log_sigma = r.vector("log_sigma")
                cfg = SlotConfig(SlotMode.RANDOM, num_slots, slot_dim, mu=mu, log_sigma=log_sigma)
            else:
                raise ParseError(f"unknown slot_mode {slot_mode!r}")
            norm = LayerNormParams(r.vector("ln_gain"), r.vector("ln_bias"), eps)
            params = SlotEncoderParams(
                slot_config=cfg,
                slot_norm=norm,
                proj_query=_read_linear(r, "query"),
                proj_key=_read_linear(r, "key"),
                proj_value=_read_linear(r, "value"),
                input_dim=input_dim,
                attn_dim=attn_dim,
            )
            layers.append((params, mode))
        encoder: Encoder = EncoderStack(tuple(layers))
        input_dim = encoder.input_dim
    elif kind == "deepsets":
        pool = AggMode.parse(r.scalar("pool_mode"))
        input_dim = r.int_value("input_dim")
        phi = tuple(_read_linear(r, f"phi{i}") for i in range(r.int_value("phi_layers")))
        rho = tuple(_read_linear(r, f"rho{i}") for i in range(r.int_value("rho_layers")))
        encoder = DeepSetsParams(phi, pool, rho)
    elif kind == "softmax_pool":
        input_dim = r.int_value("input_dim")
        r.int_value("attn_dim")
        _, query = r.matrix("query")
        encoder = SoftmaxPoolParams(query, _read_linear(r, "key"), _read_linear(r, "value"))
    else:
        raise ParseError(f"unknown encoder kind {kind!r}")
    train: dict[str, float] = {}
    while True:
        tokens = r.peek()
        if tokens is None:
            raise ParseError(f"{r.label}: missing 'end model'")
        if tokens[0] == "end":
            r.next()
            break
        if tokens[0] != "train" or len(tokens) != 3:
            raise ParseError(f"{r.label}:{r.pos}: expected 'train key value' or 'end model'")
        r.next()
        train[tokens[1]] = _parse_float(tokens[2], f"{r.label}:{r.pos}")
    return ModelBundle(kind, encoder, input_dim, train or None)


def load_model(path: str) -> ModelBundle:
    with open(path, "r", encoding="ascii") as fh:
        text = fh.read()
    return _parse_model(_Reader(text, os.path.basename(path)))


def save_model(bundle: ModelBundle, path: str) -> None:
    atomic_write_text(path, serialize_model(bundle))


def model_fingerprint(bundle: ModelBundle) -> str:
    return hashlib.sha256(serialize_model(bundle).encode("ascii")).hexdigest()


# ---------------------------------------------------------------------------
# Session files
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SessionState:
    """Durable streaming state: what survives between CLI invocations.

    Only the running partial and counts are kept, never the ingested
    elements.  `count` is the element count for sse/deepsets and the batch
    count for the softmax_pool baseline (whose naive stream combines one
    output per batch).
    """

    fingerprint: str
    kind: str
    mode: AggMode
    slot_seed: int
    slots: np.ndarray | None  # layer-1 slots, sse only
    partial: np.ndarray
    count: int

    def aggregate(self) -> AggregateState:
        return AggregateState(self.mode, self.partial, self.count, self.count > 0)


def serialize_session(session: SessionState) -> str:
    lines = [
        f"format_version {FORMAT_VERSION}",
        f"model_fingerprint {session.fingerprint}",
        f"encoder_kind {session.kind}",
        f"agg_mode {session.mode.value}",
        f"slot_seed {session.slot_seed}",
        f"count {session.count}",
    ]
    if session.slots is not None:
        _emit_matrix(lines, "slots", session.slots)
    _emit_matrix(lines, "partial", session.partial)
    lines.append("end session")
    return "\n".join(lines) + "\n"


def _parse_session(r: _Reader) -> SessionState:
    version = r.int_value("format_version")
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported session format_version {version}")
    fingerprint = r.scalar("model_fingerprint")
    kind = r.scalar("encoder_kind")
    mode = AggMode.parse(r.scalar("agg_mode"))
    slot_seed = r.int_value("slot_seed")
    count = r.int_value("count")
    slots = None
    tokens = r.peek()
    if tokens and tokens[0] == "mat" and tokens[1] == "slots":
        _, slots = r.matrix("slots")
    _, partial = r.matrix("partial")
    r.expect("end")
    return SessionState(fingerprint, kind, mode, slot_seed, slots, partial, count)


def load_session(path: str) -> SessionState:
    with open(path, "r", encoding="ascii") as fh:
        text = fh.read()
    return _parse_session(_Reader(text, os.path.basename(path)))


def save_session(session: SessionState, path: str) -> None:
    atomic_write_text(path, serialize_session(session))


# ---------------------------------------------------------------------------
# Batch files
# ---------------------------------------------------------------------------


def load_batch(path: str) -> np.ndarray:
    """CSV set elements, one per line, no header; blank lines are skipped."""
    rows: list[list[float]] = []
    width = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise ParseError(
                    f"{path}:{lineno}: expected {width} fields, found {len(fields)}"
                )
            values = []
            for col, tok in enumerate(fields, start=1):
                try:
                    v = float(tok)
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: field {col} is not a number: {tok!r}") from None
                if not np.isfinite(v):
                    raise ParseError(f"{path}:{lineno}: field {col} is not finite")
                values.append(v)
            rows.append(values)
    if not rows:
        raise ParseError(f"{path}: batch file contains no elements")
    return np.array(rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# Atomic writes and the single-writer lock
# ---------------------------------------------------------------------------


def atomic_write_text(path: str, text: str) -> None:
    """Write-temp-then-rename: a crash mid-write never corrupts `path`."""
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class session_lock:
    """Advisory single-writer lock next to the session file.

    A leftover lock from a dead process (checked by pid) is broken; a lock
    held by a live process raises SessionError.
    """

    def __init__(self, session_path: str):
        self.path = session_path + ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            if self._holder_alive():
                raise SessionError(
                    f"session is locked by another process ({self.path})"
                ) from None
            os.unlink(self.path)
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def _holder_alive(self) -> bool:
        try:
            with open(self.path, "r") as fh:
                pid = int(fh.read().strip() or "0")
        except (OSError, ValueError):
            return False
        if pid <= 0:
            return False
        try:
            os.kill(pid, 0)
        except OSError:
            return False
        return True

    def __exit__(self, *exc):
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass
        return False
