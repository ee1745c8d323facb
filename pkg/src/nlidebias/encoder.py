"""Small transformer encoder with per-block outputs and the heads that the
auxiliary objectives supervise.

The encoder exposes every block's token representations. On top of them sit:
an adaptive token-level attention (ATA) pooling head producing per-token
weights, a 3-way relation classifier, a 3-way per-token keyword/bias
classifier, and a [CLS]-anchored attention distribution per block derived
from the block outputs (softmax of the scaled dot products with the first
position, temperature sqrt(sequence length)).

Blocks are pre-norm residual: x + attn(LN(x)), then x + ffn(LN(x)). With
zero-initialized block weights a block is exactly the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class EncoderConfig:
    vocab_size: int
    d_model: int = 64
    num_blocks: int = 4
    num_heads: int = 4
    d_ff: int = 128
    d_attn: int = 64
    max_len: int = 64

    def __post_init__(self):
        if self.d_model % self.num_heads != 0:
            raise ValueError("d_model must be divisible by num_heads")
        for name in ("vocab_size", "d_model", "num_blocks", "num_heads", "d_ff", "d_attn", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class BlockOutputs:
    """Per-block token representations for one sequence (each l x d)."""

    block_reps: list

    @property
    def final(self) -> Tensor:
        return self.block_reps[-1]

    @property
    def length(self) -> int:
        return self.block_reps[0].shape[0]

    def __len__(self) -> int:
        return len(self.block_reps)


class Encoder:
    """Transformer encoder plus classification and attention heads.

    Parameters live in ``self.params`` (name -> Tensor) so the trainer,
    checkpoints and gradient checks can address them uniformly.
    """

    def __init__(self, config: EncoderConfig, seed: int = 0, params: dict | None = None):
        self.config = config
        self.params: dict[str, Tensor] = params if params is not None else self._init_params(seed)

    def _init_params(self, seed: int) -> dict[str, Tensor]:
        cfg = self.config
        rng = np.random.default_rng(seed)
        scale = 0.02

        def w(*shape):
            return T.parameter(rng.normal(0.0, scale, size=shape))

        def zeros(*shape):
            return T.parameter(np.zeros(shape))

        def ones(*shape):
            return T.parameter(np.ones(shape))

        p = {
            "embed.tok": w(cfg.vocab_size, cfg.d_model),
            "embed.pos": w(cfg.max_len, cfg.d_model),
            "ata.w1": w(cfg.d_model, cfg.d_attn),
            "ata.b1": zeros(cfg.d_attn),
            "ata.w2": w(cfg.d_attn, 1),
            "ata.b2": zeros(1),
            "head.rel.w": w(cfg.d_model, 3),
            "head.rel.b": zeros(3),
            "head.tok.w": w(cfg.d_model, 3),
            "head.tok.b": zeros(3),
        }
        for b in range(cfg.num_blocks):
            pre = f"block{b}"
            p[f"{pre}.ln1.g"] = ones(cfg.d_model)
            p[f"{pre}.ln1.b"] = zeros(cfg.d_model)
            p[f"{pre}.attn.wq"] = w(cfg.d_model, cfg.d_model)
            p[f"{pre}.attn.bq"] = zeros(cfg.d_model)
            p[f"{pre}.attn.wk"] = w(cfg.d_model, cfg.d_model)
            p[f"{pre}.attn.bk"] = zeros(cfg.d_model)
            p[f"{pre}.attn.wv"] = w(cfg.d_model, cfg.d_model)
            p[f"{pre}.attn.bv"] = zeros(cfg.d_model)
            p[f"{pre}.attn.wo"] = w(cfg.d_model, cfg.d_model)
            p[f"{pre}.attn.bo"] = zeros(cfg.d_model)
            p[f"{pre}.ln2.g"] = ones(cfg.d_model)
            p[f"{pre}.ln2.b"] = zeros(cfg.d_model)
            p[f"{pre}.ff.w1"] = w(cfg.d_model, cfg.d_ff)
            p[f"{pre}.ff.b1"] = zeros(cfg.d_ff)
            p[f"{pre}.ff.w2"] = w(cfg.d_ff, cfg.d_model)
            p[f"{pre}.ff.b2"] = zeros(cfg.d_model)
        return p

    # -- forward -----------------------------------------------------------

    def encode(self, token_ids) -> BlockOutputs:
        """Run the encoder on one sequence, returning every block's
        representations (each l x d)."""
        ids = list(token_ids)
        self._check_ids(ids)
        x = T.embedding(self.params["embed.tok"], ids) \
            + T.embedding(self.params["embed.pos"], range(len(ids)))
        return self._blocks(x, batch=None, l=len(ids))

    def encode_batch(self, token_rows) -> BlockOutputs:
        """Batched forward over equal-length sequences; block representations
        have shape (batch, l, d). Mathematically identical to per-sequence
        encoding, used by the trainer for throughput."""
        rows = [list(r) for r in token_rows]
        if not rows:
            raise ValueError("encode_batch needs at least one sequence")
        l = len(rows[0])
        if any(len(r) != l for r in rows):
            raise ValueError("encode_batch requires equal-length sequences")
        for r in rows:
            self._check_ids(r)
        ids = np.asarray(rows, dtype=np.intp)
        x = T.embedding(self.params["embed.tok"], ids) \
            + T.embedding(self.params["embed.pos"], range(l))
        return self._blocks(x, batch=len(rows), l=l)

    def _check_ids(self, ids) -> None:
        cfg = self.config
        if not 1 <= len(ids) <= cfg.max_len:
            raise ValueError(f"sequence length {len(ids)} outside [1, {cfg.max_len}]")
        if min(ids) < 0 or max(ids) >= cfg.vocab_size:
            raise ValueError("token id outside vocabulary range")

    def _blocks(self, x: Tensor, batch: int | None, l: int) -> BlockOutputs:
        p = self.params
        reps = []
        for b in range(self.config.num_blocks):
            pre = f"block{b}"
            h = T.layer_norm(x, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
            x = x + self._attention(h, pre, batch, l)
            h = T.layer_norm(x, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
            ff = T.gelu(h @ p[f"{pre}.ff.w1"] + p[f"{pre}.ff.b1"]) @ p[f"{pre}.ff.w2"] + p[f"{pre}.ff.b2"]
            x = x + ff
            reps.append(x)
        return BlockOutputs(reps)

    def _attention(self, h: Tensor, pre: str, batch: int | None, l: int) -> Tensor:
        cfg = self.config
        p = self.params
        nh, dk = cfg.num_heads, cfg.d_model // cfg.num_heads
        if batch is None:
            head_shape, to_heads, from_heads = (l, nh, dk), (1, 0, 2), (1, 0, 2)
            merged = (l, cfg.d_model)
        else:
            head_shape, to_heads, from_heads = (batch, l, nh, dk), (0, 2, 1, 3), (0, 2, 1, 3)
            merged = (batch, l, cfg.d_model)

        def split(name_w, name_b):
            proj = h @ p[name_w] + p[name_b]
            return proj.reshape(head_shape).transpose(to_heads)

        q = split(f"{pre}.attn.wq", f"{pre}.attn.bq")
        k = split(f"{pre}.attn.wk", f"{pre}.attn.bk")
        v = split(f"{pre}.attn.wv", f"{pre}.attn.bv")
        swap = (0, 2, 1) if batch is None else (0, 1, 3, 2)
        scores = q @ k.transpose(swap)
        weights = T.softmax(scores, temperature=math.sqrt(dk), axis=-1)
        ctx = (weights @ v).transpose(from_heads).reshape(merged)
        return ctx @ p[f"{pre}.attn.wo"] + p[f"{pre}.attn.bo"]

    # -- heads --------------------------------------------------------------

    def ata_weights(self, reps: Tensor) -> tuple[Tensor, Tensor]:
        """Per-token pooling weights: raw sigmoid scores and their
        normalization over positions. Accepts (l, d) or batched (B, l, d)."""
        p = self.params
        hidden = T.tanh(reps @ p["ata.w1"] + p["ata.b1"])
        lam = T.sigmoid(hidden @ p["ata.w2"] + p["ata.b2"]).reshape(reps.shape[:-1])
        lam_norm = lam / lam.sum(axis=-1, keepdims=True)
        return lam, lam_norm

    def classify_main(self, reps: Tensor, lam_norm: Tensor) -> Tensor:
        """Relation distribution from the weighted token average (scaled 1/l).

        Returns (3,) for a single sequence, (B, 3) for a batch.
        """
        l = reps.shape[-2]
        pooled = (lam_norm.reshape(reps.shape[:-1] + (1,)) * reps).sum(axis=-2) * (1.0 / l)
        single = pooled.ndim == 1
        if single:
            pooled = pooled.reshape((1, reps.shape[-1]))
        logits = pooled @ self.params["head.rel.w"] + self.params["head.rel.b"]
        probs = T.softmax(logits, axis=-1)
        return probs.reshape((3,)) if single else probs

    def classify_tokens(self, reps: Tensor) -> Tensor:
        """Per-position keyword/bias distribution, one row per token."""
        logits = reps @ self.params["head.tok.w"] + self.params["head.tok.b"]
        return T.softmax(logits, axis=-1)

    def cls_attention(self, reps: Tensor) -> Tensor:
        """Distribution over positions of the scaled dot products with the
        first position; temperature is sqrt(sequence length). Accepts
        (l, d) or batched (B, l, d)."""
        l = reps.shape[-2]
        anchor = T.take_row(reps, 0)
        swap = (1, 0) if reps.ndim == 2 else (0, 2, 1)
        scores = (reps @ anchor.transpose(swap)).reshape(reps.shape[:-1])
        return T.softmax(scores, temperature=math.sqrt(l), axis=-1)

    def block_distribution(self, outs: BlockOutputs, block: int) -> Tensor:
        """Relation distribution computed from block ``block`` (1-based),
        sharing the ATA head and relation classifier."""
        reps = outs.block_reps[self._block_index(block)]
        _, lam_norm = self.ata_weights(reps)
        return self.classify_main(reps, lam_norm)

    def main_distribution(self, outs: BlockOutputs) -> Tensor:
        """Evaluation-path distribution: the final block's relation head."""
        return self.block_distribution(outs, len(outs))

    def sub_distribution(self, block: int, masked_ids) -> Tensor:
        """Relation distribution of a masked variant at one block: a separate
        forward pass over the masked sequence, same parameters throughout."""
        self._block_index(block)
        outs = self.encode(masked_ids)
        return self.block_distribution(outs, block)

    def _block_index(self, block: int) -> int:
        if not 1 <= block <= self.config.num_blocks:
            raise ValueError(f"block {block} outside configured range 1..{self.config.num_blocks}")
        return block - 1
