"""Finite-difference verification of every loss term through a small encoder.

Builds a fixed two-block, eight-dimensional encoder over two handcrafted
labeled records and checks the analytic gradient of each loss term (and of
the weighted total, through both the per-example and the batched route)
against central differences over every parameter coordinate. This is the
oracle the training engine is accepted against.
"""

from __future__ import annotations

from . import objectives
from .corpus import Record, Vocabulary, build_sequence
from .encoder import Encoder, EncoderConfig
from .tensor import Tensor, finite_diff_check
from .trainer import TrainConfig, Trainer, example_losses

# two records of equal assembled length so the batched route runs as one group
_RAW_RECORDS = (
    {
        "premise": "a girl is humming near the park",
        "hypothesis": "a girl is singing near the park",
        "label": "entailed",
        "explanation": "a girl humming implies singing",
    },
    {
        "premise": "the boy is reading at the library",
        "hypothesis": "the boy is shouting at the library",
        "label": "contradicted",
        "explanation": "reading excludes shouting",
    },
)

SUPERVISED = (1, 2)
ALPHA = 0.4
BETA = 0.8


def tiny_fixture(seed: int = 0):
    """A 2-block d=8 encoder plus a batch of two labeled sequences."""
    records = [Record.from_obj(obj) for obj in _RAW_RECORDS]
    vocab = Vocabulary.build(records)
    sequences = [build_sequence(r, vocab) for r in records]
    cfg = EncoderConfig(
        vocab_size=len(vocab), d_model=8, num_blocks=2, num_heads=2,
        d_ff=16, d_attn=8, max_len=20,
    )
    return Encoder(cfg, seed=seed), sequences, vocab


def loss_terms(encoder: Encoder, sequences, vocab: Vocabulary) -> dict:
    """Zero-argument closures, one per loss term, each a fresh batch-mean graph."""
    n = len(sequences)

    def batch(select) -> Tensor:
        acc = None
        for seq in sequences:
            term = select(seq)
            acc = term if acc is None else acc + term
        return acc * (1.0 / n)

    def main_term(seq):
        l_main, _, _, _ = example_losses(encoder, seq, (), use_er=False, use_sa=False, use_si=False)
        return l_main

    def er_term(seq):
        _, l_er, _, _ = example_losses(encoder, seq, (), use_er=True, use_sa=False, use_si=False)
        return l_er

    def sa_term(seq):
        _, _, l_sa, _ = example_losses(encoder, seq, SUPERVISED, use_er=False, use_sa=True, use_si=False)
        total = None
        for h in SUPERVISED:
            total = l_sa[h] if total is None else total + l_sa[h]
        return total

    def si_term(seq):
        _, _, _, l_si = example_losses(encoder, seq, SUPERVISED, use_er=False, use_sa=False, use_si=True)
        total = None
        for h in SUPERVISED:
            total = l_si[h] if total is None else total + l_si[h]
        return total

    def total_term(seq):
        l_main, l_er, l_sa, l_si = example_losses(encoder, seq, SUPERVISED)
        return objectives.combine_losses(l_main, l_er, l_sa, l_si, ALPHA, BETA, SUPERVISED)

    train_cfg = TrainConfig(
        alpha=ALPHA, beta=BETA, block_strategy="all", batch_size=n,
        d_model=8, num_blocks=2, num_heads=2, d_ff=16, d_attn=8, max_len=20,
    )
    trainer = Trainer(train_cfg, sequences, vocab, encoder=encoder)

    return {
        "l_main": lambda: batch(main_term),
        "l_er": lambda: batch(er_term),
        "l_sa": lambda: batch(sa_term),
        "l_si": lambda: batch(si_term),
        "total": lambda: batch(total_term),
        "total_batched": lambda: trainer.batch_losses(sequences)[0],
    }


def run_gradient_suite(seed: int = 0, step: float = 1e-5) -> dict[str, float]:
    """Max relative finite-difference error per loss term."""
    encoder, sequences, vocab = tiny_fixture(seed)
    params = list(encoder.params.values())
    results = {}
    for name, f in loss_terms(encoder, sequences, vocab).items():
        results[name] = finite_diff_check(f, params, step=step)
    return results
