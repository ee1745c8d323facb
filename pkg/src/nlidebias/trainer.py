"""Gradient-based training loop for the weighted multi-objective total.

One optimizer step runs, per example, a forward pass over the assembled
pair plus (when sub-inference alignment is active) forward passes over the
keyword-kept and bias-kept variants, backpropagates the batch-mean total,
clips the global gradient norm and applies Adam. Everything is seeded and
single-threaded, so two runs with the same config produce bit-identical
loss logs and checkpoints.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import objectives, tensor as T
from .corpus import Vocabulary
from .encoder import Encoder, EncoderConfig
from .objectives import LossBundle
from .tensor import Tensor

logger = logging.getLogger(__name__)

BLOCK_STRATEGIES = ("all", "top-1", "top-3", "top-6", "bottom-3", "bottom-6", "alternating-6")

CHECKPOINT_MAGIC = b"NLIDBCKPT1\n"


class ConfigError(ValueError):
    """Bad training configuration (unknown key, invalid value)."""


class TrainingAborted(RuntimeError):
    """Raised when the loss goes non-finite; carries the last good checkpoint."""

    def __init__(self, message: str, last_checkpoint: str | None = None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


def resolve_blocks(strategy: str, num_blocks: int) -> tuple[int, ...]:
    """Supervised block indices (1-based, ascending) for a strategy name.

    Strategies asking for more blocks than exist are clipped with a warning.
    """
    if num_blocks < 1:
        raise ConfigError("num_blocks must be >= 1")
    if strategy == "all":
        return tuple(range(1, num_blocks + 1))
    if strategy == "alternating-6":
        picked = tuple(sorted(range(num_blocks, 0, -2)[:6]))
        if len(picked) < 6:
            logger.warning("alternating-6 clipped to %d blocks", len(picked))
        return picked
    try:
        kind, count_s = strategy.split("-")
        count = int(count_s)
    except ValueError:
        raise ConfigError(f"unknown block strategy {strategy!r}") from None
    if kind not in ("top", "bottom") or strategy not in BLOCK_STRATEGIES:
        raise ConfigError(f"unknown block strategy {strategy!r}")
    if count > num_blocks:
        logger.warning("strategy %s clipped to %d available blocks", strategy, num_blocks)
        count = num_blocks
    if kind == "top":
        return tuple(range(num_blocks - count + 1, num_blocks + 1))
    return tuple(range(1, count + 1))


@dataclass
class TrainConfig:
    """Everything a run needs: loss weights, switches, optimizer and model
    hyperparameters, data paths and seeding."""

    alpha: float = 0.4
    beta: float = 0.8
    block_strategy: str = "top-3"
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 1
    steps: int | None = None
    seed: int = 0
    use_er: bool = True
    use_sa: bool = True
    use_si: bool = True
    grad_clip: float = 1.0
    sa_squared: bool = False
    checkpoint_interval: int = 0
    checkpoint_path: str = "model.ckpt"
    train_path: str | None = None
    dev_path: str | None = None
    ood_path: str | None = None
    vocab_path: str | None = None
    stopwords: list[str] = field(default_factory=list)
    strict_data: bool = True
    d_model: int = 64
    num_blocks: int = 4
    num_heads: int = 4
    d_ff: int = 128
    d_attn: int = 64
    max_len: int = 64

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if self.block_strategy not in BLOCK_STRATEGIES:
            raise ConfigError(f"block_strategy must be one of {BLOCK_STRATEGIES}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        # resolves now so a bad strategy/beta combination fails before training
        if self.beta > 0 and not self.supervised_blocks():
            raise ConfigError("beta > 0 requires a non-empty supervised block set")

    def supervised_blocks(self) -> tuple[int, ...]:
        return resolve_blocks(self.block_strategy, self.num_blocks)

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(
            vocab_size=vocab_size,
            d_model=self.d_model,
            num_blocks=self.num_blocks,
            num_heads=self.num_heads,
            d_ff=self.d_ff,
            d_attn=self.d_attn,
            max_len=self.max_len,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(obj)

    def with_overrides(self, pairs) -> "TrainConfig":
        """Apply ``key=value`` string overrides with field-typed coercion."""
        obj = self.to_dict()
        types = {f.name: f.type for f in dataclasses.fields(self)}
        for key, value in pairs:
            if key not in obj:
                raise ConfigError(f"unknown config key {key!r}")
            obj[key] = _coerce(value, types[key], key)
        return TrainConfig.from_dict(obj)


def _coerce(value: str, ftype: str, key: str):
    ftype = str(ftype)
    if "bool" in ftype:
        low = value.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if "list" in ftype:
        return [v for v in value.split(",") if v]
    if ftype.startswith("int") or "int | None" in ftype:
        if value.lower() in ("none", "null"):
            return None
        return int(value)
    if "float" in ftype:
        return float(value)
    if value.lower() in ("none", "null"):
        return None
    return value


class Adam:
    """First-order adaptive-moment optimizer over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad if p.grad is not None else 0.0
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        for k in self.m:
            self.m[k] = np.asarray(state["m"][k], dtype=np.float64)
            self.v[k] = np.asarray(state["v"][k], dtype=np.float64)


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint 2-norm is at most ``max_norm``."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


def example_losses(
    encoder: Encoder,
    seq,
    supervised,
    use_er: bool = True,
    use_sa: bool = True,
    use_si: bool = True,
    sa_squared: bool = False,
):
    """Loss tensors for one labeled sequence.

    Returns (l_main, l_er | None, {block: l_sa}, {block: l_si}). The masked
    keyword/bias forward passes run only when the alignment term is active.
    """
    outs = encoder.encode(seq.tokens)
    l_main = objectives.loss_main(encoder.main_distribution(outs), seq.gold)
    l_er = None
    if use_er:
        l_er = objectives.loss_er(encoder.classify_tokens(outs.final), seq.labels)
    l_sa: dict[int, Tensor] = {}
    l_si: dict[int, Tensor] = {}
    if use_si and supervised:
        psi_outs = encoder.encode(seq.psi_tokens)
        sigma_outs = encoder.encode(seq.sigma_tokens)
    for h in supervised:
        reps = outs.block_reps[h - 1]
        if use_sa:
            attn = encoder.cls_attention(reps)
            l_sa[h] = objectives.loss_sa(attn, seq.targets, squared=sa_squared)
        if use_si:
            p_main_h = encoder.block_distribution(outs, h)
            p_psi = encoder.block_distribution(psi_outs, h)
            p_sigma = encoder.block_distribution(sigma_outs, h)
            l_si[h] = objectives.loss_si(p_main_h, p_psi, p_sigma)
    return l_main, l_er, l_sa, l_si


class Trainer:
    """Owns the encoder parameters and runs the configured schedule."""

    def __init__(self, config: TrainConfig, sequences, vocab: Vocabulary,
                 encoder: Encoder | None = None):
        if not sequences:
            raise ConfigError("training dataset is empty")
        self.config = config
        self.sequences = list(sequences)
        self.vocab = vocab
        self.encoder = encoder or Encoder(config.encoder_config(len(vocab)), seed=config.seed)
        self.optimizer = Adam(self.encoder.params, lr=config.lr)
        self.step_count = 0
        self.last_checkpoint: str | None = None
        self.supervised = config.supervised_blocks()

    # -- single step ---------------------------------------------------------

    def batch_losses(self, batch) -> tuple[Tensor, LossBundle]:
        """Batch-mean total loss tensor plus its float component bundle.

        Examples are grouped by sequence length, and each group runs the
        main / keyword-kept / bias-kept passes as batched forwards; the
        result is the same per-example objective averaged over the batch.
        """
        cfg = self.config
        active_aux = cfg.beta > 0
        use_er = cfg.use_er and cfg.alpha > 0
        use_sa = cfg.use_sa and active_aux
        use_si = cfg.use_si and active_aux
        n = len(batch)
        groups: dict[int, list] = {}
        for seq in batch:
            groups.setdefault(len(seq), []).append(seq)
        total_t = None
        main_acc = 0.0
        er_acc = 0.0
        sa_acc = {h: 0.0 for h in self.supervised}
        si_acc = {h: 0.0 for h in self.supervised}
        for length in sorted(groups):
            seqs = groups[length]
            outs = self.encoder.encode_batch([s.tokens for s in seqs])
            g_main = objectives.loss_main_sum(
                self.encoder.main_distribution(outs), [s.gold for s in seqs]
            )
            g_total = g_main
            main_acc += g_main.item()
            if use_er:
                g_er = objectives.loss_er_sum(
                    self.encoder.classify_tokens(outs.final), [s.labels for s in seqs]
                )
                g_total = g_total + g_er * cfg.alpha
                er_acc += g_er.item()
            if use_si:
                psi_outs = self.encoder.encode_batch([s.psi_tokens for s in seqs])
                sigma_outs = self.encoder.encode_batch([s.sigma_tokens for s in seqs])
            if use_sa or use_si:
                aux = None
                for h in self.supervised:
                    if use_sa:
                        attn = self.encoder.cls_attention(outs.block_reps[h - 1])
                        g_sa = objectives.loss_sa_sum(
                            attn, [s.targets for s in seqs], squared=cfg.sa_squared
                        )
                        aux = g_sa if aux is None else aux + g_sa
                        sa_acc[h] += g_sa.item()
                    if use_si:
                        p_main_h = self.encoder.block_distribution(outs, h)
                        p_psi = self.encoder.block_distribution(psi_outs, h)
                        p_sigma = self.encoder.block_distribution(sigma_outs, h)
                        g_si = objectives.js_sum(
                            p_main_h, objectives.joint_distribution_batch(p_psi, p_sigma)
                        )
                        aux = g_si if aux is None else aux + g_si
                        si_acc[h] += g_si.item()
                if aux is not None:
                    g_total = g_total + aux * (cfg.beta / len(self.supervised))
            total_t = g_total if total_t is None else total_t + g_total
        total_t = total_t * (1.0 / n)
        bundle = LossBundle(
            l_main=main_acc / n,
            l_er=er_acc / n,
            l_sa={h: v / n for h, v in sa_acc.items()} if use_sa else {},
            l_si={h: v / n for h, v in si_acc.items()} if use_si else {},
            total=total_t.item(),
            alpha=cfg.alpha if use_er else 0.0,
            beta=cfg.beta if (use_sa or use_si) else 0.0,
            num_supervised=len(self.supervised),
        )
        return total_t, bundle

    def train_step(self, batch) -> LossBundle:
        """One optimizer update on a batch; aborts on a non-finite loss."""
        if not batch:
            raise ConfigError("batch must be non-empty")
        T.zero_grads(self.encoder.params)
        total_t, bundle = self.batch_losses(batch)
        if not math.isfinite(bundle.total):
            raise TrainingAborted(
                f"non-finite loss at step {self.step_count}"
                + (f"; last good checkpoint: {self.last_checkpoint}" if self.last_checkpoint else ""),
                self.last_checkpoint,
            )
        total_t.backward()
        clip_global_norm(self.encoder.params, self.config.grad_clip)
        self.optimizer.step()
        self.step_count += 1
        return bundle

    # -- full schedule ---------------------------------------------------------

    def batches_per_epoch(self) -> int:
        return math.ceil(len(self.sequences) / self.config.batch_size)

    def epoch_order(self, epoch: int) -> np.ndarray:
        """Deterministic shuffle for one epoch, derived from (seed, epoch)."""
        rng = np.random.default_rng([self.config.seed, epoch])
        return rng.permutation(len(self.sequences))

    def total_steps(self) -> int:
        if self.config.steps is not None:
            return self.config.steps
        return self.config.epochs * self.batches_per_epoch()

    def train(self, metrics_path=None) -> str:
        """Run the configured schedule; returns the final checkpoint path.

        Metrics go to ``metrics_path`` as newline-delimited JSON with fields
        step, l_main, l_er, l_sa_sum, l_si_sum, total (one line per step).
        """
        cfg = self.config
        per_epoch = self.batches_per_epoch()
        target = self.total_steps()
        metrics_fh = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
        try:
            while self.step_count < target:
                epoch = self.step_count // per_epoch
                order = self.epoch_order(epoch)
                start = self.step_count % per_epoch
                for b in range(start, per_epoch):
                    if self.step_count >= target:
                        break
                    idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                    bundle = self.train_step([self.sequences[i] for i in idx])
                    if metrics_fh:
                        metrics_fh.write(json.dumps({
                            "step": self.step_count,
                            "l_main": bundle.l_main,
                            "l_er": bundle.l_er,
                            "l_sa_sum": bundle.l_sa_sum,
                            "l_si_sum": bundle.l_si_sum,
                            "total": bundle.total,
                        }) + "\n")
                    if cfg.checkpoint_interval and self.step_count % cfg.checkpoint_interval == 0:
                        self.save(cfg.checkpoint_path)
        finally:
            if metrics_fh:
                metrics_fh.close()
        self.save(cfg.checkpoint_path)
        return cfg.checkpoint_path

    def save(self, path) -> str:
        save_checkpoint(
            path,
            self.encoder,
            self.vocab,
            step=self.step_count,
            seed=self.config.seed,
            train_config=self.config.to_dict(),
            opt_state=self.optimizer.state(),
        )
        self.last_checkpoint = str(path)
        return self.last_checkpoint

    @classmethod
    def resume(cls, config: TrainConfig, sequences, vocab: Vocabulary, path) -> "Trainer":
        """Rebuild a trainer mid-run; continuing reproduces the uninterrupted
        run step for step."""
        ckpt = load_checkpoint(path)
        trainer = cls(config, sequences, vocab, encoder=ckpt.encoder)
        if ckpt.opt_state is None:
            raise ConfigError(f"{path} has no optimizer state to resume from")
        trainer.optimizer.load_state(ckpt.opt_state)
        trainer.step_count = ckpt.step
        trainer.last_checkpoint = str(path)
        return trainer


# -- checkpoint container -------------------------------------------------------
#
# Layout: magic line, one JSON header line (sorted keys, no timestamps), then
# the raw little-endian float64 buffers of every array in header order. The
# same state always serializes to identical bytes.

@dataclass
class Checkpoint:
    encoder: Encoder
    vocab: Vocabulary
    step: int
    seed: int
    train_config: dict | None
    opt_state: dict | None


def save_checkpoint(path, encoder: Encoder, vocab: Vocabulary, step: int = 0,
                    seed: int = 0, train_config: dict | None = None,
                    opt_state: dict | None = None) -> None:
    names = sorted(encoder.params)
    arrays = [(n, encoder.params[n].data) for n in names]
    opt_header = None
    if opt_state is not None:
        opt_header = {"t": int(opt_state["t"])}
        for kind in ("m", "v"):
            for n in names:
                arrays.append((f"opt.{kind}.{n}", opt_state[kind][n]))
    cfg = encoder.config
    header = {
        "format_version": 1,
        "arch": {
            "vocab_size": cfg.vocab_size,
            "d_model": cfg.d_model,
            "num_blocks": cfg.num_blocks,
            "num_heads": cfg.num_heads,
            "d_ff": cfg.d_ff,
            "d_attn": cfg.d_attn,
            "max_len": cfg.max_len,
        },
        "vocab": vocab.words,
        "step": int(step),
        "seed": int(seed),
        "train_config": train_config,
        "optimizer": opt_header,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path} is not a checkpoint file")
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format_version") != 1:
            raise ConfigError(f"unsupported checkpoint version {header.get('format_version')}")
        blobs = {}
        for meta in header["arrays"]:
            shape = tuple(meta["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ConfigError(f"{path}: truncated checkpoint")
            blobs[meta["name"]] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    arch = header["arch"]
    enc_cfg = EncoderConfig(**arch)
    params = {n: T.parameter(blobs[n]) for n in blobs if not n.startswith("opt.")}
    encoder = Encoder(enc_cfg, params=params)
    vocab = Vocabulary(header["vocab"])
    opt_state = None
    if header.get("optimizer") is not None:
        opt_state = {
            "t": header["optimizer"]["t"],
            "m": {n[len("opt.m."):]: blobs[n] for n in blobs if n.startswith("opt.m.")},
            "v": {n[len("opt.v."):]: blobs[n] for n in blobs if n.startswith("opt.v.")},
        }
    return Checkpoint(
        encoder=encoder,
        vocab=vocab,
        step=int(header["step"]),
        seed=int(header["seed"]),
        train_config=header.get("train_config"),
        opt_state=opt_state,
    )
