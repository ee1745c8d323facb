"""Small NLI transformers trained with explanation-derived token supervision
to keep their attention on task-relevant keywords instead of dataset biases."""

__version__ = "0.1.0"

from .corpus import (  # noqa: F401
    LABELS,
    LabeledSequence,
    Record,
    Vocabulary,
    build_sequence,
    label_tokens,
    load_jsonl,
    mask_sequences,
    normalize_labels,
    tokenize,
)
from .encoder import BlockOutputs, Encoder, EncoderConfig  # noqa: F401
from .objectives import (  # noqa: F401
    LossBundle,
    combine_losses,
    joint_distribution,
    js_divergence,
    loss_er,
    loss_main,
    loss_sa,
    loss_si,
)
from .tensor import Tensor, finite_diff_check, no_grad  # noqa: F401
from .trainer import Adam, TrainConfig, Trainer, load_checkpoint, resolve_blocks, save_checkpoint  # noqa: F401
