"""Teacher fine-tuning and the three-stage pruning run.

Stage 1 (t < p_s): warm-up, distillation only. Stage 2 (p_s <= t <= p_e):
every step scores units from the CE-channel gradient, smooths, and prunes
to the scheduled density before the optimizer step. Stage 3 (t > p_e): the
structure is frozen and distillation continues to recover performance.
One forward/backward serves both optimization and scoring.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import GradChannel, backward, no_grad, tensor
from .config import RunConfig
from .data import Dataset, batch_iter
from .distill import backprop_with_separation, build_layer_map, distill_losses
from .embedding import svd_truncate
from .errors import ContractError, ParameterError, RunError
from .model import (
    EncoderModel,
    HiddenStates,
    count_prunable_params,
    encoder_forward,
    model_density,
)
from .pruning import (
    HeadPool,
    ImportanceTable,
    ScheduleParams,
    apply_struct_reg,
    density_schedule,
    ffn_only_registry,
    heads_importance,
    prune_heads_to_density,
    prune_to_density,
    random_scores,
    raw_ffn_importance,
    raw_importance,
    register_units,
    smooth_update,
)


class AdamW:
    """Adam with decoupled weight decay; consumes grad_ce + grad_aux."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
        self.params = [p for p in params if p.trainable]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self, lr: float):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad_ce + p.grad_aux
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                p.value -= lr * self.weight_decay * p.value
            p.value -= lr * update


def lr_schedule(t: float, peak: float) -> float:
    """Linear warm-up to `peak` over the first 10% of training, then
    linear decay to zero."""
    if t <= 0.1:
        return peak * (t / 0.1)
    return peak * (1.0 - t) / 0.9


@dataclass
class RunTrace:
    """Per-step log of the run: densities, losses, learning rate, and the
    live structure counts."""

    columns = ("step", "t", "target_density", "actual_density", "loss_ce",
               "loss_hidden", "lr", "live_heads", "live_query", "live_value",
               "live_ffn")
    rows: list = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def append(self, **kw):
        self.rows.append(tuple(kw.get(c) for c in self.columns))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow(["" if x is None else repr(x) if isinstance(x, float) else x
                             for x in row])
        return buf.getvalue()

    def save(self, path: str):
        from .checkpoint import write_text_atomic

        write_text_atomic(path, self.to_csv())


class _TeacherCache:
    """Per-example hidden states of the frozen teacher.

    The teacher never changes during a run, so its states for each example
    are computed once (first epoch) and reassembled in later epochs in
    whatever batch order the shuffle produces.
    """

    def __init__(self, n_examples: int):
        self.rows = [None] * n_examples

    def states_for(self, teacher: EncoderModel, indices, ids) -> HiddenStates:
        if any(self.rows[i] is None for i in indices):
            with no_grad():
                hs = encoder_forward(teacher, ids)
            for row, example in enumerate(indices):
                if self.rows[example] is None:
                    self.rows[example] = (
                        [s.data[row] for s in hs.states], hs.logits.data[row]
                    )
            return hs
        first = self.rows[indices[0]]
        states = [
            tensor(np.stack([self.rows[i][0][layer] for i in indices]))
            for layer in range(len(first[0]))
        ]
        logits = tensor(np.stack([self.rows[i][1] for i in indices]))
        return HiddenStates(states=states, logits=logits)


def _structure_counts(model: EncoderModel):
    heads = query = value = 0
    ffn = 0
    for block in model.blocks:
        for head in block.heads:
            query += head.live_query
            value += head.live_value
            heads += head.live_value > 0
        ffn += block.live_ffn
    return heads, query, value, ffn


def _check_finite(step, *losses):
    for loss in losses:
        if not np.isfinite(loss.data):
            raise RunError(f"loss diverged (non-finite) at step {step}")


def evaluate(model: EncoderModel, examples, batch_size: int = 256):
    """(accuracy, mean hard-label cross-entropy) over one split."""
    if not examples:
        raise ParameterError("cannot evaluate an empty split")
    correct = 0
    loss_sum = 0.0
    seq_len = model.config.seq_len
    with no_grad():
        for ids, labels in batch_iter(examples, batch_size, seq_len, seed=0, epoch=0):
            out = encoder_forward(model, ids)
            preds = out.logits.data.argmax(axis=-1)
            correct += int((preds == labels).sum())
            loss = ad.cross_entropy_logits(out.logits, labels)
            loss_sum += loss.item() * len(labels)
    return correct / len(examples), loss_sum / len(examples)


def train_teacher(config: RunConfig, dataset: Dataset, out_path: str = None):
    """Supervised fine-tuning of an unpruned model with hard labels.

    Returns (model, dev_accuracy). With `out_path` set, also writes the
    checkpoint.
    """
    from .model import init_model

    cfg = config.model
    model = init_model(cfg, seed=config.seed)
    steps_per_epoch = math.ceil(len(dataset.train) / config.batch_size)
    total = config.teacher_epochs * steps_per_epoch
    optimizer = AdamW(model.parameters(), weight_decay=config.weight_decay)
    rng = np.random.default_rng([config.seed, 0xD0])
    step = 0
    for epoch in range(config.teacher_epochs):
        for ids, labels in batch_iter(dataset.train, config.batch_size,
                                      cfg.seq_len, config.seed, epoch):
            step += 1
            t = step / total
            model.zero_grads()
            out = encoder_forward(model, ids, train=True, rng=rng)
            loss = ad.cross_entropy_logits(out.logits, labels)
            _check_finite(step, loss)
            backward(loss, GradChannel.CE)
            optimizer.step(lr_schedule(t, config.lr))
    accuracy = evaluate(model, dataset.dev)[0] if dataset.dev else float("nan")
    if out_path is not None:
        from .checkpoint import write_checkpoint

        write_checkpoint(out_path, model)
    return model, accuracy


def run_grain(config: RunConfig, teacher: EncoderModel, dataset: Dataset):
    """Prune a copy of the teacher to the target density in a single run.

    Returns (student model, RunTrace). The teacher is frozen throughout;
    the student starts as an exact copy, optionally with its embedding
    factorized.
    """
    config.validate()
    cfg = config.model
    if teacher.config != cfg:
        raise ContractError(
            f"teacher config {teacher.config} does not match run config {cfg}"
        )
    teacher.set_trainable(False)

    student = teacher.copy()
    student.set_trainable(True)
    if config.mode != "grain-no-ef":
        if student.factorized:
            raise ContractError("teacher embedding is already factorized")
        student.embedding = svd_truncate(student.embedding.value, config.embed_rank)

    heads_mode = config.mode == "heads-ffn"
    if heads_mode:
        registry = ffn_only_registry(student)
        pool = HeadPool(student)
        ffn_schedule = ScheduleParams(config.schedule.p_s, config.schedule.p_e,
                                      config.ffn_density)
        heads_schedule = ScheduleParams(config.schedule.p_s, config.schedule.p_e,
                                        config.heads_density)
        pool_table = None
    else:
        registry = register_units(student)
    table = None

    layer_map = build_layer_map(cfg.n_layers, cfg.n_layers,
                                config.distill.layer_map, cfg.d)
    optimizer = AdamW(student.parameters() + layer_map.parameters(),
                      weight_decay=config.weight_decay)

    steps_per_epoch = math.ceil(len(dataset.train) / config.batch_size)
    total = config.epochs * steps_per_epoch
    if total == 0:
        raise ParameterError("run needs at least one training step")
    first_prune = math.ceil(config.schedule.p_s * total)
    last_prune = math.floor(config.schedule.p_e * total)
    prunable_total = cfg.prunable_total()
    dropout_rng = np.random.default_rng([config.seed, 0xD1])

    trace = RunTrace()
    heads, query, value, ffn = _structure_counts(student)
    trace.append(step=0, t=0.0, target_density=1.0, actual_density=1.0,
                 loss_ce=None, loss_hidden=None, lr=0.0, live_heads=heads,
                 live_query=query, live_value=value, live_ffn=ffn)

    teacher_cache = _TeacherCache(len(dataset.train))
    step = 0
    for epoch in range(config.epochs):
        for indices, ids, labels in batch_iter(dataset.train, config.batch_size,
                                               cfg.seq_len, config.seed, epoch,
                                               yield_indices=True):
            step += 1
            t = step / total
            student.zero_grads()
            layer_map.zero_grads()

            teacher_states = teacher_cache.states_for(teacher, indices, ids)
            student_states = encoder_forward(student, ids, train=True, rng=dropout_rng)
            loss_ce, loss_hidden = distill_losses(student_states, teacher_states,
                                                  config.distill, layer_map)
            _check_finite(step, loss_ce, loss_hidden)
            backprop_with_separation(loss_ce, loss_hidden,
                                     separate=config.distill.separate_gradients)

            if first_prune <= step <= last_prune:
                target = density_schedule(t, config.schedule)
                if heads_mode:
                    ffn_scores = raw_ffn_importance(student, registry)
                    table = smooth_update(table, ffn_scores, config.beta)
                    prune_to_density(student, registry, table,
                                     density_schedule(t, ffn_schedule))
                    head_scores = heads_importance(student, pool)
                    pool_table = smooth_update(pool_table, head_scores, config.beta)
                    prune_heads_to_density(student, pool, pool_table,
                                           density_schedule(t, heads_schedule))
                else:
                    if config.mode == "random-score":
                        scores = random_scores(registry, [config.seed, step])
                    else:
                        scores = raw_importance(student, registry)
                    scores = apply_struct_reg(scores, registry, config.alpha)
                    table = smooth_update(table, scores, config.beta)
                    prune_to_density(student, registry, table, target)
            else:
                target = density_schedule(t, config.schedule)

            student.mask_gradients()
            lr = lr_schedule(t, config.lr)
            optimizer.step(lr)
            student.enforce_masks()

            heads, query, value, ffn = _structure_counts(student)
            trace.append(step=step, t=t, target_density=target,
                         actual_density=count_prunable_params(student) / prunable_total,
                         loss_ce=loss_ce.item(), loss_hidden=loss_hidden.item(),
                         lr=lr, live_heads=heads, live_query=query,
                         live_value=value, live_ffn=ffn)

    if dataset.dev:
        accuracy, dev_loss = evaluate(student, dataset.dev)
        trace.final = {"accuracy": accuracy, "dev_loss": dev_loss}
    trace.final["density"] = model_density(student)
    trace.final["live_heads"] = _structure_counts(student)[0]
    # expose scoring internals for score dumps and tests
    trace.registry = registry
    trace.score_table = table if table is not None else ImportanceTable(
        np.zeros(len(registry)))
    return student, trace
