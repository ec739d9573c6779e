"""Per-sample weight probing.

A probe produces, for one sample, the output-layer weight matrix before
and after a single plain gradient-descent step on that sample alone. The
step is always taken from the same frozen base weights, so probing is
stateless: sample order never changes a result.

The bundled reference model (TinyLM) is a byte-level language model small
enough to differentiate by hand: token embeddings are averaged over a
short context window, passed through one tanh layer, and projected to
logits by the output layer. Its output-layer gradient is analytic, which
keeps probing at one forward pass plus one rank-limited backward step per
sample.

Externally computed weight snapshots can be fed in through the DNLW file
format (see read_snapshot / write_snapshot) instead of using TinyLM.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .dataset import SampleRecord
from .errors import (
    EmptyTarget,
    FormatError,
    IoError,
    ShapeMismatch,
    TokenizationFailure,
    UsageError,
)
from .ioutil import atomic_write_bytes
from .linalg import Matrix, scaled_axpy

LOSS_SCOPES = ("response_only", "full_sequence")

BOS, SEP, EOS = 0, 1, 2
N_SPECIALS = 3
BYTE_VOCAB_SIZE = N_SPECIALS + 256  # exact byte-level vocabulary


@dataclass(frozen=True)
class ProbeConfig:
    """Settings for one probing run."""

    learning_rate: float = 2e-5
    max_seq_len: int = 256
    loss_scope: str = "response_only"
    seed: int = 0

    def __post_init__(self):
        if not (self.learning_rate > 0 and np.isfinite(self.learning_rate)):
            raise UsageError(f"learning_rate must be positive and finite, got {self.learning_rate!r}")
        if int(self.max_seq_len) != self.max_seq_len or self.max_seq_len < 2:
            raise UsageError(f"max_seq_len must be an integer >= 2, got {self.max_seq_len!r}")
        if self.loss_scope not in LOSS_SCOPES:
            raise UsageError(f"loss_scope must be one of {LOSS_SCOPES}, got {self.loss_scope!r}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise UsageError(f"seed must be a non-negative integer, got {self.seed!r}")


@dataclass(frozen=True)
class Encoded:
    """Token ids plus the supervision mask over next-token positions.

    target_mask[i] says whether predicting tokens[i+1] contributes to the
    loss, so it has length len(tokens) - 1.
    """

    tokens: np.ndarray
    target_mask: np.ndarray

    @property
    def n_targets(self) -> int:
        return int(self.target_mask.sum())


@runtime_checkable
class ProbeModel(Protocol):
    """Behavioral contract every probe backend provides."""

    def encode(self, sample: SampleRecord, cfg: ProbeConfig) -> Encoded: ...

    def prediction_logits(
        self, sample: SampleRecord, cfg: ProbeConfig
    ) -> tuple[np.ndarray, np.ndarray]: ...

    def base_output_layer(self) -> Matrix: ...

    def output_layer_gradient(self, sample: SampleRecord, cfg: ProbeConfig) -> Matrix: ...


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _encode_text(text: str, vocab_size: int) -> np.ndarray:
    try:
        raw = text.encode("utf-8")
    except UnicodeEncodeError as e:
        raise TokenizationFailure(f"text is not encodable as UTF-8: {e}") from e
    data = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    # Vocabularies smaller than the full byte range fold bytes onto the
    # available slots so every sample stays encodable.
    return N_SPECIALS + data % (vocab_size - N_SPECIALS)


class TinyLM:
    """Reference probe model with an analytic output-layer gradient.

    Parameters are drawn from uniform(-0.08, 0.08) under the given seed;
    identical (seed, sizes) give bit-identical parameters. The model is
    never mutated by probing.
    """

    def __init__(self, vocab_size: int = BYTE_VOCAB_SIZE, hidden_dim: int = 32,
                 context_window: int = 4, seed: int = 0):
        if vocab_size < N_SPECIALS + 1:
            raise UsageError(f"vocab_size must be >= {N_SPECIALS + 1}, got {vocab_size}")
        if hidden_dim < 1:
            raise UsageError(f"hidden_dim must be >= 1, got {hidden_dim}")
        if context_window < 1:
            raise UsageError(f"context_window must be >= 1, got {context_window}")
        self.vocab_size = int(vocab_size)
        self.hidden_dim = int(hidden_dim)
        self.context_window = int(context_window)
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        self.embed = rng.uniform(-0.08, 0.08, (vocab_size, hidden_dim))
        self.mix_w = rng.uniform(-0.08, 0.08, (hidden_dim, hidden_dim))
        self.mix_b = rng.uniform(-0.08, 0.08, hidden_dim)
        self.w_out = rng.uniform(-0.08, 0.08, (vocab_size, hidden_dim))
        self.b_out = rng.uniform(-0.08, 0.08, vocab_size)
        self.gradient_calls = 0

    @property
    def tag(self) -> str:
        return (f"tinylm-v{self.vocab_size}-h{self.hidden_dim}"
                f"-k{self.context_window}-seed{self.seed}")

    def clone(self) -> "TinyLM":
        other = TinyLM.__new__(TinyLM)
        other.vocab_size = self.vocab_size
        other.hidden_dim = self.hidden_dim
        other.context_window = self.context_window
        other.seed = self.seed
        other.embed = self.embed.copy()
        other.mix_w = self.mix_w.copy()
        other.mix_b = self.mix_b.copy()
        other.w_out = self.w_out.copy()
        other.b_out = self.b_out.copy()
        other.gradient_calls = 0
        return other

    def weight_matrices(self) -> list[tuple[str, Matrix]]:
        """Named weight matrices, in network order (biases excluded)."""
        return [
            ("embedding", Matrix(self.embed)),
            ("context_mixer", Matrix(self.mix_w)),
            ("output", Matrix(self.w_out)),
        ]

    # -- encoding -------------------------------------------------------

    def encode(self, sample: SampleRecord, cfg: ProbeConfig) -> Encoded:
        prompt = list(_encode_text(sample.instruction, self.vocab_size))
        if sample.input:
            prompt.append(SEP)
            prompt.extend(_encode_text(sample.input, self.vocab_size))
        tail = list(_encode_text(sample.response, self.vocab_size))
        tail.append(EOS)

        # Over-length sequences lose instruction tokens from the left first;
        # the response is only cut (from the right) when it alone overflows.
        overflow = 2 + len(prompt) + len(tail) - cfg.max_seq_len
        if overflow > 0:
            cut = min(overflow, len(prompt))
            prompt = prompt[cut:]
            overflow -= cut
        if overflow > 0:
            tail = tail[: len(tail) - overflow]

        tokens = np.array([BOS] + prompt + [SEP] + tail, dtype=np.int64)
        first_target = 2 + len(prompt)
        if cfg.loss_scope == "full_sequence":
            mask = np.ones(len(tokens) - 1, dtype=bool)
        else:
            mask = np.arange(1, len(tokens)) >= first_target
        if not mask.any():
            raise EmptyTarget(
                f"sample {sample.sample_id!r} has no supervised tokens after truncation"
            )
        return Encoded(tokens=tokens, target_mask=mask)

    # -- forward / backward ---------------------------------------------

    def hidden_states(self, tokens: np.ndarray) -> np.ndarray:
        """Hidden state used to predict tokens[i+1], for i = 0..T-2."""
        emb = self.embed[tokens]
        prefix = np.vstack([np.zeros((1, self.hidden_dim)), np.cumsum(emb, axis=0)])
        ends = np.arange(1, len(tokens))
        starts = np.maximum(0, ends - self.context_window)
        means = (prefix[ends] - prefix[starts]) / (ends - starts)[:, None]
        return np.tanh(means @ self.mix_w.T + self.mix_b)

    def prediction_logits(self, sample: SampleRecord, cfg: ProbeConfig):
        """Logits at supervised positions and their target token ids."""
        enc = self.encode(sample, cfg)
        h = self.hidden_states(enc.tokens)[enc.target_mask]
        targets = enc.tokens[1:][enc.target_mask]
        return h @ self.w_out.T + self.b_out, targets

    def base_output_layer(self) -> Matrix:
        return Matrix(self.w_out)

    def output_head_gradients(self, sample: SampleRecord, cfg: ProbeConfig):
        """(dL/dW, dL/db) for the mean NLL over supervised positions."""
        enc = self.encode(sample, cfg)
        h = self.hidden_states(enc.tokens)[enc.target_mask]
        targets = enc.tokens[1:][enc.target_mask]
        delta = softmax(h @ self.w_out.T + self.b_out)
        delta[np.arange(len(targets)), targets] -= 1.0
        delta /= len(targets)
        self.gradient_calls += 1
        return delta.T @ h, delta.sum(axis=0)

    def output_layer_gradient(self, sample: SampleRecord, cfg: ProbeConfig) -> Matrix:
        grad_w, _ = self.output_head_gradients(sample, cfg)
        return Matrix(grad_w)

    def full_gradients(self, sample: SampleRecord, cfg: ProbeConfig) -> dict:
        """Gradients of every parameter, for the harness fine-tuning loop.

        Probing never uses these; they exist so experiment models can be
        trained end to end while the probe stays restricted to the output
        layer.
        """
        enc = self.encode(sample, cfg)
        tokens = enc.tokens
        emb = self.embed[tokens]
        prefix = np.vstack([np.zeros((1, self.hidden_dim)), np.cumsum(emb, axis=0)])
        ends = np.arange(1, len(tokens))
        starts = np.maximum(0, ends - self.context_window)
        widths = (ends - starts).astype(np.float64)
        means = (prefix[ends] - prefix[starts]) / widths[:, None]
        h = np.tanh(means @ self.mix_w.T + self.mix_b)

        targets = tokens[1:]
        masked = np.nonzero(enc.target_mask)[0]
        n = len(masked)
        delta = np.zeros((len(ends), self.vocab_size))
        p = softmax(h[masked] @ self.w_out.T + self.b_out)
        p[np.arange(n), targets[masked]] -= 1.0
        delta[masked] = p / n

        grad_w = delta.T @ h
        grad_b = delta.sum(axis=0)
        d_h = delta @ self.w_out
        d_z = d_h * (1.0 - h * h)
        grad_mix_w = d_z.T @ means
        grad_mix_b = d_z.sum(axis=0)
        d_mean = (d_z @ self.mix_w) / widths[:, None]
        grad_embed = np.zeros_like(self.embed)
        # position i predicts tokens[i+1] from tokens[i-o] for offsets o
        # inside the context window
        for o in range(self.context_window):
            rows = np.nonzero(ends - o - 1 >= starts)[0]
            np.add.at(grad_embed, tokens[rows - o], d_mean[rows])
        self.gradient_calls += 1
        return {
            "embed": grad_embed,
            "mix_w": grad_mix_w,
            "mix_b": grad_mix_b,
            "w_out": grad_w,
            "b_out": grad_b,
        }


def cross_entropy_loss(model: ProbeModel, sample: SampleRecord, cfg: ProbeConfig) -> float:
    """Mean token-level negative log-likelihood over supervised positions."""
    logits, targets = model.prediction_logits(sample, cfg)
    logp = log_softmax(logits)
    return float(-logp[np.arange(len(targets)), targets].mean())


def probe_step(model: ProbeModel, cfg: ProbeConfig, sample: SampleRecord):
    """Output-layer weights before and after one gradient step on `sample`.

    The base model is left untouched; every sample is probed from the same
    starting point.
    """
    w_before = model.base_output_layer()
    grad = model.output_layer_gradient(sample, cfg)
    if grad.shape != w_before.shape:
        raise ShapeMismatch(
            f"gradient shape {grad.shape} does not match output layer {w_before.shape}"
        )
    w_after = scaled_axpy(w_before, -cfg.learning_rate, grad)
    return w_before, w_after


# -- DNLW weight-snapshot format ----------------------------------------
#
# magic "DNLW" | u16 version=1 | u16 dtype (1=f32, 2=f64) | u32 rows |
# u32 cols | rows*cols values, little-endian, row-major.

_DNLW_MAGIC = b"DNLW"
_DNLW_VERSION = 1
_DNLW_HEADER = struct.Struct("<4sHHII")
_DNLW_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_DNLW_CODES = {"f32": 1, "f64": 2}


def write_snapshot(path, matrix: Matrix, dtype: str = "f64") -> None:
    if dtype not in _DNLW_CODES:
        raise UsageError(f"snapshot dtype must be one of {sorted(_DNLW_CODES)}, got {dtype!r}")
    code = _DNLW_CODES[dtype]
    header = _DNLW_HEADER.pack(_DNLW_MAGIC, _DNLW_VERSION, code, matrix.rows, matrix.cols)
    payload = np.ascontiguousarray(matrix.data, dtype=_DNLW_DTYPES[code]).tobytes()
    atomic_write_bytes(path, header + payload)


def read_snapshot(path) -> Matrix:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise IoError(f"cannot read snapshot {path!r}: {e}") from e
    if len(blob) < _DNLW_HEADER.size:
        raise FormatError(
            f"{path}: truncated header, expected {_DNLW_HEADER.size} bytes, got {len(blob)}"
        )
    magic, version, code, rows, cols = _DNLW_HEADER.unpack_from(blob)
    if magic != _DNLW_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {_DNLW_MAGIC!r}")
    if version != _DNLW_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code not in _DNLW_DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    if rows < 1 or cols < 1:
        raise FormatError(f"{path}: dimensions must be positive, got {rows}x{cols}")
    expected = rows * cols * _DNLW_DTYPES[code].itemsize
    payload = blob[_DNLW_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(f"{path}: expected {expected} data bytes, got {len(payload)}")
    values = np.frombuffer(payload, dtype=_DNLW_DTYPES[code]).astype(np.float64)
    try:
        return Matrix.from_flat(rows, cols, values)
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e


def load_snapshot_pair(path_before, path_after) -> tuple[Matrix, Matrix]:
    before = read_snapshot(path_before)
    after = read_snapshot(path_after)
    if before.shape != after.shape:
        raise ShapeMismatch(
            f"snapshot shapes differ: {path_before} is {before.shape}, "
            f"{path_after} is {after.shape}"
        )
    return before, after
