"""Distillation losses against a frozen teacher, with gradient separation.

The soft cross-entropy gradient feeds both optimization and importance
scoring (CE channel); the hidden-state matching gradient feeds optimization
only (AUX channel). The optimizer consumes grad_ce + grad_aux, the scorer
reads grad_ce alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GradChannel, Parameter, Tensor, backward, tensor
from .errors import ContractError, ParameterError
from .model import HiddenStates


@dataclass
class DistillConfig:
    tau: float = 8.0
    hidden_weight: float = 1.0
    layer_map: str = "full"
    separate_gradients: bool = True

    def validate(self):
        if self.tau <= 0:
            raise ParameterError(f"temperature must be positive, got {self.tau}")
        if self.hidden_weight < 0:
            raise ParameterError(f"hidden weight must be >= 0, got {self.hidden_weight}")


@dataclass
class LayerMap:
    """Pairs of (student layer, teacher layer) with trainable d x d maps."""

    pairs: list
    mappings: list

    def parameters(self):
        return list(self.mappings)

    def zero_grads(self):
        for p in self.mappings:
            p.zero_grads()


def build_layer_map(l_student: int, l_teacher: int, strategy: str, d: int,
                    dtype=np.float32) -> LayerMap:
    """"full": identity pairs (i, i) for i = 0..L including the embedding
    output, each with an identity-initialized mapping. "logits-only": none.
    """
    if l_student != l_teacher:
        raise ContractError(
            f"student and teacher depth differ: {l_student} vs {l_teacher}"
        )
    if strategy == "full":
        pairs = [(i, i) for i in range(l_student + 1)]
        mappings = [Parameter(np.eye(d, dtype=dtype)) for _ in pairs]
        return LayerMap(pairs=pairs, mappings=mappings)
    if strategy == "logits-only":
        return LayerMap(pairs=[], mappings=[])
    raise ParameterError(f"unknown layer map strategy: {strategy!r}")


def distill_losses(student: HiddenStates, teacher: HiddenStates,
                   cfg: DistillConfig, layer_map: LayerMap):
    """(soft cross-entropy, weighted hidden-matching loss).

    Teacher states must come from a no-grad forward; they enter the graph
    as constants so no gradient ever reaches the teacher.
    """
    if student.logits.shape != teacher.logits.shape:
        raise ContractError(
            f"logit shapes differ: {student.logits.shape} vs {teacher.logits.shape}"
        )
    loss_ce = ad.soft_cross_entropy(student.logits, teacher.logits, cfg.tau)

    if cfg.hidden_weight == 0.0 or not layer_map.pairs:
        return loss_ce, tensor(np.zeros((), dtype=student.logits.data.dtype))

    loss_hidden = None
    for (i, j), mapping in zip(layer_map.pairs, layer_map.mappings):
        h_s = student.states[i]
        h_t = teacher.states[j]
        if h_s.shape != h_t.shape:
            raise ContractError(
                f"hidden state shapes differ at pair ({i}, {j}): {h_s.shape} vs {h_t.shape}"
            )
        term = ad.mse(ad.matmul(h_s, mapping.tensor()), h_t)
        loss_hidden = term if loss_hidden is None else ad.add(loss_hidden, term)
    if cfg.hidden_weight != 1.0:
        loss_hidden = ad.scale(loss_hidden, cfg.hidden_weight)
    return loss_ce, loss_hidden


def backprop_with_separation(loss_ce: Tensor, loss_hidden: Tensor,
                             separate: bool = True):
    """Route the CE gradient to the CE channel and the hidden-matching
    gradient to AUX. With separate=False (ablation) both land in CE, so the
    optimizer sees the same total but the scorer no longer gets a clean
    CE-only gradient.
    """
    backward(loss_ce, GradChannel.CE)
    if loss_hidden.needs_grad:
        backward(loss_hidden, GradChannel.AUX if separate else GradChannel.CE)
