"""BERT-style encoder built on the autograd tape: embeddings, sinusoidal or
learned positions, stacked multi-head self-attention blocks (post-layer-norm),
an MLM projection head, and per-task classification heads.

Assumptions where the architecture is under-specified: the feed-forward inner
dimension defaults to 4x hidden, and positions default to the sinusoidal
formulation (a learned table is available via ``positional_mode="learned"``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import AllMasked, ShapeMismatch
from .tokenizer import TokenSequence

MASK_BIAS = -1e9


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 10
    num_heads: int = 12
    hidden: int = 768
    ffn_dim: int | None = None
    vocab_size: int = 50_000
    max_len: int = 32
    dropout: float = 0.1
    positional_mode: str = "sinusoidal"  # or "learned"

    def __post_init__(self):
        if self.hidden % self.num_heads != 0:
            raise ValueError(f"hidden {self.hidden} not divisible by heads {self.num_heads}")
        if self.max_len < 2:
            raise ValueError("max_len must be at least 2")
        if self.positional_mode not in ("sinusoidal", "learned"):
            raise ValueError(f"unknown positional_mode {self.positional_mode!r}")
        if self.ffn_dim is None:
            object.__setattr__(self, "ffn_dim", 4 * self.hidden)

    @property
    def d_k(self) -> int:
        return self.hidden // self.num_heads

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "hidden": self.hidden,
            "ffn_dim": self.ffn_dim,
            "vocab_size": self.vocab_size,
            "max_len": self.max_len,
            "dropout": self.dropout,
            "positional_mode": self.positional_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def tiny_config(vocab_size: int = 512, max_len: int = 32) -> ModelConfig:
    """Desk-scale preset: 2 layers, 32 hidden, 2 heads, no dropout."""
    return ModelConfig(
        num_layers=2, num_heads=2, hidden=32, vocab_size=vocab_size,
        max_len=max_len, dropout=0.0,
    )


def paper_config(vocab_size: int = 50_000) -> ModelConfig:
    """Full-scale preset: 10 layers, 768 hidden, 12 heads, 32-token sequences."""
    return ModelConfig(vocab_size=vocab_size)


def positional_encoding(p: int, i: int, d: int) -> float:
    """Sinusoidal position value for position ``p`` and embedding dimension ``i``."""
    if i % 2 == 0:
        return math.sin(p / 10000.0 ** (i / d))
    return math.cos(p / 10000.0 ** ((i - 1) / d))


def sinusoidal_table(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    idx = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (idx - (idx % 2)) / d)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) samples redrawn until within two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


@dataclass
class LayerParams:
    w_q: list[Tensor]
    w_k: list[Tensor]
    w_v: list[Tensor]
    w_o: Tensor
    ffn_w1: Tensor
    ffn_w2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor


@dataclass
class ModelParams:
    """All learnable arrays; heads are keyed by task id."""

    token_embedding: Tensor
    positional: Tensor | None
    layers: list[LayerParams]
    mlm_w: Tensor
    mlm_b: Tensor
    heads: dict[str, tuple[Tensor, Tensor]] = field(default_factory=dict)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        """(name, tensor) pairs in a fixed, documented order."""
        out = [("token_embedding", self.token_embedding)]
        if self.positional is not None:
            out.append(("positional", self.positional))
        for li, layer in enumerate(self.layers):
            for hi, (q, k, v) in enumerate(zip(layer.w_q, layer.w_k, layer.w_v)):
                out.append((f"layers.{li}.heads.{hi}.w_q", q))
                out.append((f"layers.{li}.heads.{hi}.w_k", k))
                out.append((f"layers.{li}.heads.{hi}.w_v", v))
            out.append((f"layers.{li}.w_o", layer.w_o))
            out.append((f"layers.{li}.ffn_w1", layer.ffn_w1))
            out.append((f"layers.{li}.ffn_w2", layer.ffn_w2))
            out.append((f"layers.{li}.ln1_gain", layer.ln1_gain))
            out.append((f"layers.{li}.ln1_bias", layer.ln1_bias))
            out.append((f"layers.{li}.ln2_gain", layer.ln2_gain))
            out.append((f"layers.{li}.ln2_bias", layer.ln2_bias))
        out.append(("mlm_w", self.mlm_w))
        out.append(("mlm_b", self.mlm_b))
        for task in sorted(self.heads):
            w, b = self.heads[task]
            out.append((f"heads.{task}.w", w))
            out.append((f"heads.{task}.b", b))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def encoder_parameters(self) -> list[Tensor]:
        """Everything except the classification heads."""
        return [t for name, t in self.named_parameters() if not name.startswith("heads.")]


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Truncated-normal(0.02) weights, zero biases, unit layer-norm gains."""
    d, dk = config.hidden, config.d_k

    def w(shape):
        return Tensor(truncated_normal(rng, shape), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    def ones(shape):
        return Tensor(np.ones(shape), requires_grad=True)

    layers = []
    token_embedding = w((config.vocab_size, d))
    positional = w((config.max_len, d)) if config.positional_mode == "learned" else None
    for _ in range(config.num_layers):
        layers.append(
            LayerParams(
                w_q=[w((d, dk)) for _ in range(config.num_heads)],
                w_k=[w((d, dk)) for _ in range(config.num_heads)],
                w_v=[w((d, dk)) for _ in range(config.num_heads)],
                w_o=w((d, d)),
                ffn_w1=w((d, config.ffn_dim)),
                ffn_w2=w((config.ffn_dim, d)),
                ln1_gain=ones((d,)),
                ln1_bias=zeros((d,)),
                ln2_gain=ones((d,)),
                ln2_bias=zeros((d,)),
            )
        )
    return ModelParams(
        token_embedding=token_embedding,
        positional=positional,
        layers=layers,
        mlm_w=w((d, config.vocab_size)),
        mlm_b=zeros((config.vocab_size,)),
    )


def init_head(config: ModelConfig, num_labels: int, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    return (
        Tensor(truncated_normal(rng, (config.hidden, num_labels)), requires_grad=True),
        Tensor(np.zeros((num_labels,)), requires_grad=True),
    )


def scaled_dot_attention(
    q: Tensor, k: Tensor, v: Tensor, mask, return_weights: bool = False
):
    """softmax(QK^T / sqrt(d_k) + mask_bias) V with -1e9 bias at masked keys."""
    if q.shape[1] != k.shape[1]:
        raise ShapeMismatch(f"query dim {q.shape} vs key dim {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeMismatch(f"key count {k.shape} vs value count {v.shape}")
    mask = np.asarray(mask)
    if mask.shape != (k.shape[0],):
        raise ShapeMismatch(f"mask shape {mask.shape} vs key count {k.shape[0]}")
    if not mask.any():
        raise AllMasked("every key is masked; at least one must be attendable")
    scores = ag.scale(ag.matmul(q, ag.transpose(k)), 1.0 / math.sqrt(q.shape[1]))
    bias = Tensor(np.where(mask == 0, MASK_BIAS, 0.0))
    weights = ag.softmax_rows(ag.add(scores, bias))
    out = ag.matmul(weights, v)
    if return_weights:
        return out, weights
    return out


def multi_head_attention(x: Tensor, layer: LayerParams, mask) -> Tensor:
    """Per-head projected attention, concatenated and projected by W_O."""
    heads = []
    for w_q, w_k, w_v in zip(layer.w_q, layer.w_k, layer.w_v):
        heads.append(
            scaled_dot_attention(ag.matmul(x, w_q), ag.matmul(x, w_k), ag.matmul(x, w_v), mask)
        )
    return ag.matmul(ag.concat(heads, axis=1), layer.w_o)


def encoder_forward(
    seq: TokenSequence,
    config: ModelConfig,
    params: ModelParams,
    train: bool = False,
    dropout_rng: np.random.Generator | None = None,
    dropout_rate: float | None = None,
) -> Tensor:
    """Hidden states (max_len x hidden) for one token sequence.

    Deterministic when ``train`` is false (dropout becomes identity).
    """
    rate = config.dropout if dropout_rate is None else dropout_rate
    ids = np.asarray(seq.ids, dtype=np.int64)
    x = ag.embedding_lookup(params.token_embedding, ids)
    if config.positional_mode == "learned":
        x = ag.add(x, take_positions(params.positional, len(ids)))
    else:
        x = ag.add(x, Tensor(sinusoidal_table(len(ids), config.hidden)))
    mask = np.asarray(seq.attention_mask)
    for layer in params.layers:
        attn = multi_head_attention(x, layer, mask)
        attn = ag.dropout(attn, rate, train, dropout_rng)
        x = ag.layer_norm(ag.add(x, attn), layer.ln1_gain, layer.ln1_bias)
        ffn = ag.matmul(ag.gelu(ag.matmul(x, layer.ffn_w1)), layer.ffn_w2)
        ffn = ag.dropout(ffn, rate, train, dropout_rng)
        x = ag.layer_norm(ag.add(x, ffn), layer.ln2_gain, layer.ln2_bias)
    return x


def take_positions(positional: Tensor, n: int) -> Tensor:
    return ag.take_rows(positional, np.arange(n))


def mlm_logits(hidden: Tensor, params: ModelParams) -> Tensor:
    """Vocabulary logits at every position."""
    return ag.add(ag.matmul(hidden, params.mlm_w), params.mlm_b)


def classify(hidden: Tensor, head_w: Tensor, head_b: Tensor) -> Tensor:
    """Class logits (1 x num_labels) from the [CLS] position (row 0)."""
    cls_row = ag.take_rows(hidden, [0])
    return ag.add(ag.matmul(cls_row, head_w), head_b)


def predicted_label(logits: Tensor) -> int:
    """Argmax class id; ties resolve to the lowest index."""
    return int(np.argmax(logits.data.reshape(-1)))
