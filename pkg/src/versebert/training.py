"""MLM pretraining, task fine-tuning, the masking policy, and checkpointing.

Randomness comes from one master seed split into named streams (stream order:
init, masking, dropout, data), so runs are bit-reproducible in a single
execution context. Checkpoints are a small self-describing binary: magic +
version, a JSON header (config, vocab digest, array manifest with shapes and
offsets), then raw little-endian float64 array payloads.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autograd as ag
from . import model as mdl
from .autograd import AdamW, Tensor
from .corpus import LabelTaxonomy
from .errors import (
    CorruptFile,
    DigestMismatch,
    EmptyReduction,
    NonFiniteLoss,
    VersionMismatch,
)
from .tokenizer import MASK_ID, TokenSequence, Vocab, encode

log = logging.getLogger(__name__)

IGNORE_INDEX = ag.IGNORE_INDEX
N_RESERVED = 7  # ids 0-6 are special and never masked or drawn as replacements

CHECKPOINT_MAGIC = b"VBC1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    lr: float = 5e-5
    weight_decay: float = 0.0
    dropout: float = 0.1
    mask_ratio: float = 0.15
    mask_prob: float = 0.8
    random_prob: float = 0.1
    keep_prob: float = 0.1
    max_steps: int = 800_000
    seed: int = 0
    eval_every: int = 1000
    checkpoint_path: Optional[str] = None
    lr_schedule: str = "constant"  # hook; only "constant" is implemented

    def __post_init__(self):
        if abs(self.mask_prob + self.random_prob + self.keep_prob - 1.0) > 1e-12:
            raise ValueError("mask/random/keep probabilities must sum to 1")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise ValueError("mask_ratio must be in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.lr_schedule != "constant":
            raise ValueError(f"unsupported lr_schedule {self.lr_schedule!r}")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "dropout": self.dropout,
            "mask_ratio": self.mask_ratio,
            "mask_prob": self.mask_prob,
            "random_prob": self.random_prob,
            "keep_prob": self.keep_prob,
            "max_steps": self.max_steps,
            "seed": self.seed,
            "eval_every": self.eval_every,
            "lr_schedule": self.lr_schedule,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def tiny_train_config(**overrides) -> TrainConfig:
    """Desk-scale defaults: small batches, hotter learning rate, no dropout."""
    base = dict(batch_size=32, lr=5e-3, dropout=0.0, max_steps=500, eval_every=50)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass(frozen=True)
class RunRngs:
    """Named random streams split from one seed (spawn order: init, masking, dropout, data)."""

    init: np.random.Generator
    masking: np.random.Generator
    dropout: np.random.Generator
    data: np.random.Generator


def make_rngs(seed: int) -> RunRngs:
    children = np.random.SeedSequence(seed).spawn(4)
    return RunRngs(*(np.random.default_rng(c) for c in children))


def apply_mlm_masking(
    seq: TokenSequence,
    cfg: TrainConfig,
    rng: np.random.Generator,
    vocab_size: int,
) -> tuple[TokenSequence, np.ndarray]:
    """Independently select unpadded non-special positions with probability
    ``mask_ratio``; each selected position becomes [MASK] / a random
    non-special id / its original id per the configured split. Targets hold the
    original id at selected positions and IGNORE_INDEX elsewhere.
    """
    ids = np.array(seq.ids, dtype=np.int64)
    mask = np.array(seq.attention_mask, dtype=bool)
    candidates = np.flatnonzero(mask & (ids >= N_RESERVED))
    targets = np.full(len(ids), IGNORE_INDEX, dtype=np.int64)
    if candidates.size == 0 or cfg.mask_ratio == 0.0:
        return seq, targets

    selected = candidates[rng.random(candidates.size) < cfg.mask_ratio]
    if selected.size == 0:
        return seq, targets
    targets[selected] = ids[selected]

    fate = rng.random(selected.size)
    to_mask = selected[fate < cfg.mask_prob]
    to_random = selected[(fate >= cfg.mask_prob) & (fate < cfg.mask_prob + cfg.random_prob)]
    ids[to_mask] = MASK_ID
    if to_random.size:
        ids[to_random] = rng.integers(N_RESERVED, vocab_size, size=to_random.size)
    masked = TokenSequence(tuple(int(i) for i in ids), seq.attention_mask, seq.max_len)
    return masked, targets


@dataclass
class Checkpoint:
    format_version: int
    model_config: mdl.ModelConfig
    arrays: dict[str, np.ndarray]
    vocab_digest: str
    global_step: int
    optimizer: Optional[dict] = None  # {"step": int, "arrays": {name: array}}

    def to_params(self) -> mdl.ModelParams:
        """Rebuild ModelParams (including any task heads) from the named arrays."""
        cfg = self.model_config

        def t(name):
            return Tensor(self.arrays[name].copy(), requires_grad=True)

        layers = []
        for li in range(cfg.num_layers):
            layers.append(
                mdl.LayerParams(
                    w_q=[t(f"layers.{li}.heads.{hi}.w_q") for hi in range(cfg.num_heads)],
                    w_k=[t(f"layers.{li}.heads.{hi}.w_k") for hi in range(cfg.num_heads)],
                    w_v=[t(f"layers.{li}.heads.{hi}.w_v") for hi in range(cfg.num_heads)],
                    w_o=t(f"layers.{li}.w_o"),
                    ffn_w1=t(f"layers.{li}.ffn_w1"),
                    ffn_w2=t(f"layers.{li}.ffn_w2"),
                    ln1_gain=t(f"layers.{li}.ln1_gain"),
                    ln1_bias=t(f"layers.{li}.ln1_bias"),
                    ln2_gain=t(f"layers.{li}.ln2_gain"),
                    ln2_bias=t(f"layers.{li}.ln2_bias"),
                )
            )
        params = mdl.ModelParams(
            token_embedding=t("token_embedding"),
            positional=t("positional") if "positional" in self.arrays else None,
            layers=layers,
            mlm_w=t("mlm_w"),
            mlm_b=t("mlm_b"),
        )
        for name in self.arrays:
            if name.startswith("heads."):
                task = name[len("heads."):].rsplit(".", 1)[0]
                if task not in params.heads:
                    params.heads[task] = (t(f"heads.{task}.w"), t(f"heads.{task}.b"))
        return params

    def head_tasks(self) -> list[str]:
        return sorted({n[len("heads."):].rsplit(".", 1)[0] for n in self.arrays if n.startswith("heads.")})


def checkpoint_from_params(
    params: mdl.ModelParams,
    config: mdl.ModelConfig,
    vocab_digest: str,
    global_step: int,
    optimizer: Optional[AdamW] = None,
) -> Checkpoint:
    arrays = {name: t.data.copy() for name, t in params.named_parameters()}
    opt_state = None
    if optimizer is not None:
        opt_state = {
            "step": optimizer.step_count,
            "arrays": {k: v.copy() for k, v in optimizer.state_arrays().items()},
        }
    return Checkpoint(CHECKPOINT_VERSION, config, arrays, vocab_digest, global_step, opt_state)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Serialize with a JSON manifest header followed by raw float64 payloads."""
    entries = []
    payload = bytearray()
    def put(name, arr):
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload.extend(arr.tobytes())

    for name in sorted(ckpt.arrays):
        put(f"param:{name}", ckpt.arrays[name])
    opt_meta = None
    if ckpt.optimizer is not None:
        opt_meta = {"step": ckpt.optimizer["step"]}
        for name in sorted(ckpt.optimizer["arrays"]):
            put(f"opt:{name}", ckpt.optimizer["arrays"][name])

    header = {
        "model_config": ckpt.model_config.to_dict(),
        "vocab_digest": ckpt.vocab_digest,
        "global_step": ckpt.global_step,
        "optimizer": opt_meta,
        "arrays": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", ckpt.format_version))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(payload))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != CHECKPOINT_MAGIC:
        raise CorruptFile(f"{path}: bad magic")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, reader supports {CHECKPOINT_VERSION}")
    header_len = struct.unpack("<Q", blob[8:16])[0]
    if len(blob) < 16 + header_len:
        raise CorruptFile(f"{path}: truncated header")
    try:
        header = json.loads(blob[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{path}: unreadable header ({exc})") from None
    data = blob[16 + header_len :]

    arrays: dict[str, np.ndarray] = {}
    opt_arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 8 * count
        if end > len(data):
            raise CorruptFile(f"{path}: truncated payload for {entry['name']}")
        arr = np.frombuffer(data[start:end], dtype="<f8").reshape(shape).astype(np.float64)
        kind, name = entry["name"].split(":", 1)
        (arrays if kind == "param" else opt_arrays)[name] = arr

    optimizer = None
    if header.get("optimizer") is not None:
        optimizer = {"step": header["optimizer"]["step"], "arrays": opt_arrays}
    return Checkpoint(
        format_version=version,
        model_config=mdl.ModelConfig.from_dict(header["model_config"]),
        arrays=arrays,
        vocab_digest=header["vocab_digest"],
        global_step=header["global_step"],
        optimizer=optimizer,
    )


def _batched_mlm_loss(
    sequences: list[TokenSequence],
    targets: list[np.ndarray],
    config: mdl.ModelConfig,
    params: mdl.ModelParams,
    cfg: TrainConfig,
    rngs: RunRngs,
    train: bool = True,
) -> Tensor:
    logits = []
    for seq in sequences:
        hidden = mdl.encoder_forward(
            seq, config, params, train=train,
            dropout_rng=rngs.dropout, dropout_rate=cfg.dropout,
        )
        logits.append(mdl.mlm_logits(hidden, params))
    return ag.cross_entropy(ag.concat(logits, axis=0), np.concatenate(targets))


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Yield batches of indices forever; each epoch is one seeded shuffle pass."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            chunk = order[start : start + batch_size]
            if chunk.size:
                yield [int(i) for i in chunk]


def pretrain(
    lines: list[str],
    vocab: Vocab,
    config: mdl.ModelConfig,
    cfg: TrainConfig,
    on_step: Optional[Callable[[int, float], None]] = None,
) -> Checkpoint:
    """Run the masked-language-model objective for ``cfg.max_steps`` steps.

    Deterministic for a fixed seed. Aborts with ``NonFiniteLoss`` if the loss
    leaves the finite range; steps whose batch has no masked position are
    skipped (no update) but still counted.
    """
    rngs = make_rngs(cfg.seed)
    params = mdl.init_params(config, rngs.init)
    sequences = [encode(line, vocab, config.max_len) for line in lines]
    if not sequences:
        raise ValueError("no input lines to pretrain on")
    opt = AdamW(params.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    batches = _epoch_batches(len(sequences), cfg.batch_size, rngs.data)

    for step in range(1, cfg.max_steps + 1):
        batch = [sequences[i] for i in next(batches)]
        masked, targets = zip(*(apply_mlm_masking(s, cfg, rngs.masking, len(vocab)) for s in batch))
        opt.zero_grad()
        try:
            loss = _batched_mlm_loss(list(masked), list(targets), config, params, cfg, rngs)
        except EmptyReduction:
            ag.reset_tape()
            continue
        value = float(loss.data)
        if not math.isfinite(value):
            ag.reset_tape()
            raise NonFiniteLoss(f"step {step}: loss={value}")
        ag.backward(loss)
        opt.step()
        if on_step is not None:
            on_step(step, value)
        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            log.info("pretrain step %d/%d loss %.4f", step, cfg.max_steps, value)

    ckpt = checkpoint_from_params(params, config, vocab.digest(), cfg.max_steps)
    if cfg.checkpoint_path:
        save_checkpoint(ckpt, cfg.checkpoint_path)
    return ckpt


def finetune(
    ckpt: Checkpoint,
    pairs: list[tuple[str, str]],
    taxonomy: LabelTaxonomy,
    vocab: Vocab,
    cfg: TrainConfig,
    head_only: bool = False,
    on_step: Optional[Callable[[int, float], None]] = None,
) -> Checkpoint:
    """Attach a fresh classification head and train on (line, label) pairs.

    ``pairs`` hold preprocessed verse lines. With ``head_only`` the encoder is
    frozen and only the head receives updates.
    """
    if ckpt.vocab_digest != vocab.digest():
        raise DigestMismatch(
            f"checkpoint was built with vocab {ckpt.vocab_digest[:12]}..., "
            f"got {vocab.digest()[:12]}..."
        )
    config = ckpt.model_config
    rngs = make_rngs(cfg.seed)
    params = ckpt.to_params()
    head_w, head_b = mdl.init_head(config, taxonomy.num_labels, rngs.init)
    params.heads[taxonomy.task_id] = (head_w, head_b)

    sequences = [encode(line, vocab, config.max_len) for line, _ in pairs]
    labels = np.array([taxonomy.index(label) for _, label in pairs], dtype=np.int64)
    if not sequences:
        raise ValueError("no labeled pairs to finetune on")

    trainable = [head_w, head_b] if head_only else params.parameters()
    opt = AdamW(trainable, lr=cfg.lr, weight_decay=cfg.weight_decay)
    batches = _epoch_batches(len(sequences), cfg.batch_size, rngs.data)

    for step in range(1, cfg.max_steps + 1):
        idx = next(batches)
        opt.zero_grad()
        logits = []
        for i in idx:
            hidden = mdl.encoder_forward(
                sequences[i], config, params, train=True,
                dropout_rng=rngs.dropout, dropout_rate=cfg.dropout,
            )
            logits.append(mdl.classify(hidden, head_w, head_b))
        loss = ag.cross_entropy(ag.concat(logits, axis=0), labels[idx])
        value = float(loss.data)
        if not math.isfinite(value):
            ag.reset_tape()
            raise NonFiniteLoss(f"step {step}: loss={value}")
        ag.backward(loss)
        opt.step()
        if on_step is not None:
            on_step(step, value)
        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            log.info("finetune[%s] step %d/%d loss %.4f", taxonomy.task_id, step, cfg.max_steps, value)

    out = checkpoint_from_params(params, config, ckpt.vocab_digest, ckpt.global_step + cfg.max_steps)
    if cfg.checkpoint_path:
        save_checkpoint(out, cfg.checkpoint_path)
    return out
