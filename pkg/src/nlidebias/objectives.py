"""Training objectives: main relation loss, token-label loss, attention
supervision, priority-ordered joint distribution of the two sub-inferences,
and their Jensen-Shannon alignment, combined into the weighted total.

Label priority is entailed > neutral > contradicted. The joint label of two
independent sub-inferences is the lower-priority outcome, so contradicted
mass absorbs every pair containing a contradiction while entailed requires
both parts entailed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

LABELS = ("entailed", "neutral", "contradicted")
#: inference priority per label index (entailed=0 highest, contradicted=2 lowest)
PRIORITY = (2, 1, 0)

LN2 = math.log(2.0)


def min_priority_label(a: int, b: int) -> int:
    """Joint label of two sub-inference labels: the lower-priority one."""
    return a if PRIORITY[a] <= PRIORITY[b] else b


def _joint_matrix() -> np.ndarray:
    """(3, 9) selector mapping the flattened outcome grid onto joint labels."""
    m = np.zeros((3, 9))
    for a in range(3):
        for b in range(3):
            m[min_priority_label(a, b), a * 3 + b] = 1.0
    return m


_JOINT_SELECT = _joint_matrix()
_ONEHOT = np.eye(3)


def loss_main(pred: Tensor, gold: int) -> Tensor:
    """-log p[gold] with the 1e-12 floor inside the log."""
    picked = (T.log_floored(pred) * T.constant(_ONEHOT[gold])).sum()
    return -picked


def loss_er(token_preds: Tensor, labels) -> Tensor:
    """Mean over all positions of -log probability at the gold token label."""
    l = token_preds.shape[0]
    if l != len(labels):
        raise ValueError("token predictions and labels must align")
    onehot = _ONEHOT[np.asarray(labels, dtype=np.intp)]
    picked = (T.log_floored(token_preds) * T.constant(onehot)).sum()
    return picked * (-1.0 / l)


def loss_sa(attn: Tensor, targets, squared: bool = False) -> Tensor:
    """Sum over positions of |target - attention| (the per-scalar 2-norm).

    ``squared`` switches to the squared-difference variant for sensitivity
    studies.
    """
    diff = attn - T.constant(np.asarray(targets, dtype=np.float64))
    if squared:
        return T.square(diff).sum()
    return T.tabs(diff).sum()


def joint_distribution(p_psi: Tensor, p_sigma: Tensor) -> Tensor:
    """Priority-ordered joint of two independent 3-way distributions.

    Forms the 3x3 outcome grid p_psi(a) * p_sigma(b) and routes each cell to
    the lower-priority label of the pair.
    """
    outer = p_psi.reshape((3, 1)) * p_sigma.reshape((1, 3))
    return (T.constant(_JOINT_SELECT) @ outer.reshape((9, 1))).reshape((3,))


def js_divergence(p: Tensor, q: Tensor) -> Tensor:
    """Jensen-Shannon divergence, natural log, division-free.

    Zero-probability terms contribute exactly 0 (multiplication by zero);
    the 1e-12 floor inside the logs keeps everything finite. Symmetric,
    bounded by ln 2.
    """
    m = p + q
    log_m = T.log_floored(m)
    t1 = (p * (T.log_floored(p * 2.0) - log_m)).sum()
    t2 = (q * (T.log_floored(q * 2.0) - log_m)).sum()
    return (t1 + t2) * 0.5


def loss_si(p_main: Tensor, p_psi: Tensor, p_sigma: Tensor) -> Tensor:
    """Alignment of the block's main distribution with the joint of its
    keyword-only and bias-only sub-inferences."""
    return js_divergence(p_main, joint_distribution(p_psi, p_sigma))


# -- batched variants (sum over the batch; the caller normalizes) --------------

def loss_main_sum(preds: Tensor, golds) -> Tensor:
    """Sum over a (B, 3) batch of -log p[gold]."""
    onehot = _ONEHOT[np.asarray(golds, dtype=np.intp)]
    return -(T.log_floored(preds) * T.constant(onehot)).sum()


def loss_er_sum(token_preds: Tensor, labels) -> Tensor:
    """Sum over a (B, l, 3) batch of per-example position means."""
    l = token_preds.shape[-2]
    onehot = _ONEHOT[np.asarray(labels, dtype=np.intp)]
    return (T.log_floored(token_preds) * T.constant(onehot)).sum() * (-1.0 / l)


def loss_sa_sum(attn: Tensor, targets, squared: bool = False) -> Tensor:
    """Sum over a (B, l) batch of per-example attention alignment losses."""
    diff = attn - T.constant(np.asarray(targets, dtype=np.float64))
    if squared:
        return T.square(diff).sum()
    return T.tabs(diff).sum()


def joint_distribution_batch(p_psi: Tensor, p_sigma: Tensor) -> Tensor:
    """Row-wise priority joint of two (B, 3) distributions."""
    b = p_psi.shape[0]
    outer = p_psi.reshape((b, 3, 1)) * p_sigma.reshape((b, 1, 3))
    return outer.reshape((b, 9)) @ T.constant(_JOINT_SELECT.T)


def js_sum(p: Tensor, q: Tensor) -> Tensor:
    """Sum of row-wise Jensen-Shannon divergences of two (B, 3) batches."""
    m = p + q
    log_m = T.log_floored(m)
    t1 = (p * (T.log_floored(p * 2.0) - log_m)).sum()
    t2 = (q * (T.log_floored(q * 2.0) - log_m)).sum()
    return (t1 + t2) * 0.5


@dataclass
class LossBundle:
    """Scalar loss components of one step (batch means), plus the total."""

    l_main: float
    l_er: float
    l_sa: dict[int, float] = field(default_factory=dict)
    l_si: dict[int, float] = field(default_factory=dict)
    total: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    num_supervised: int = 0

    @property
    def l_sa_sum(self) -> float:
        return sum(self.l_sa.values())

    @property
    def l_si_sum(self) -> float:
        return sum(self.l_si.values())

    def recombined(self) -> float:
        """The weighted combination recomputed from the stored components."""
        aux = 0.0
        if self.num_supervised:
            aux = (self.beta / self.num_supervised) * (self.l_sa_sum + self.l_si_sum)
        return self.l_main + self.alpha * self.l_er + aux


def combine_losses(
    l_main: Tensor,
    l_er: Tensor | None,
    l_sa: dict[int, Tensor],
    l_si: dict[int, Tensor],
    alpha: float,
    beta: float,
    supervised,
) -> Tensor:
    """Weighted total: main + alpha*token + (beta/H) * sum of per-block terms.

    ``supervised`` is the block set the strategy resolved to; H is its size.
    Rejected when beta > 0 but the set is empty.
    """
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    supervised = tuple(supervised)
    if beta > 0 and not supervised:
        raise ValueError("beta > 0 requires a non-empty supervised block set")
    total = l_main
    if l_er is not None and alpha > 0:
        total = total + l_er * alpha
    if beta > 0:
        aux = None
        for h in supervised:
            for term in (l_sa.get(h), l_si.get(h)):
                if term is not None:
                    aux = term if aux is None else aux + term
        if aux is not None:
            total = total + aux * (beta / len(supervised))
    return total
