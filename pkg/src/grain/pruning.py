"""Pruning-unit registry, gradient-based importance scores, structure
regularization, the cubic density schedule, and score-ranked hard pruning.

All intra-attention units (query, value, ffn) carry exactly 2d weights, so
a single global ranking across kinds is valid. The attention-heads baseline
uses a separate pool because whole heads are larger than FFN units.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import ContractError, ParameterError
from .model import EncoderModel

# Canonical unit order within a layer; ties in score resolve by this order.
class UnitKind(IntEnum):
    QUERY = 0
    VALUE = 1
    FFN = 2


@dataclass
class PruningUnit:
    """One removable structure and its live/pruned state.

    Query and value units name a row inside one head; FFN units name a
    column of w1 paired with the same row of w2. Every unit owns exactly
    2d weights. Once pruned a unit never revives.
    """

    kind: UnitKind
    layer: int
    head: int | None
    row: int
    live: bool = True


@dataclass
class ScheduleParams:
    """Cubic density schedule: hold 1 until p_s, decay to s_f at p_e."""

    p_s: float = 0.2
    p_e: float = 0.4
    s_f: float = 0.05
    n_steps: int = 0

    def validate(self):
        if not (0.0 < self.p_s < self.p_e < 1.0):
            raise ParameterError(f"need 0 < p_s < p_e < 1, got ({self.p_s}, {self.p_e})")
        if not 0.0 < self.s_f <= 1.0:
            raise ParameterError(f"target density must be in (0, 1], got {self.s_f}")


class ImportanceTable:
    """Exponentially smoothed importance scores, one entry per unit."""

    def __init__(self, smoothed: np.ndarray):
        self.smoothed = smoothed
        self.step = 0

    def copy(self) -> "ImportanceTable":
        out = ImportanceTable(self.smoothed.copy())
        out.step = self.step
        return out


class PruningRegistry:
    """Registered units of one model, in canonical order: layer ascending,
    kind QUERY < VALUE < FFN, head ascending, row ascending."""

    def __init__(self, model: EncoderModel, ffn_only: bool = False):
        cfg = model.config
        self.model = model
        self.unit_params = 2 * cfg.d
        self.units: list[PruningUnit] = []
        self._query_base = {}   # (layer, head) -> index of that head's row 0
        self._value_base = {}
        for layer in range(cfg.n_layers):
            block = model.blocks[layer]
            if not ffn_only:
                for head in range(len(block.heads)):
                    self._query_base[(layer, head)] = len(self.units)
                    for row in range(len(block.heads[head].query_mask)):
                        self.units.append(PruningUnit(UnitKind.QUERY, layer, head, row))
                for head in range(len(block.heads)):
                    self._value_base[(layer, head)] = len(self.units)
                    for row in range(len(block.heads[head].value_mask)):
                        self.units.append(PruningUnit(UnitKind.VALUE, layer, head, row))
            for row in range(len(block.ffn_mask)):
                self.units.append(PruningUnit(UnitKind.FFN, layer, None, row))
        self.total_params = self.unit_params * len(self.units)
        self.live_count = len(self.units)
        # dead-computation units (query rows of emptied heads) jump the queue
        self.priority = np.zeros(len(self.units), dtype=bool)

    def __len__(self):
        return len(self.units)

    @property
    def live_params(self) -> int:
        return self.unit_params * self.live_count

    def density(self) -> float:
        return self.live_params / self.total_params

    def live_by_kind(self) -> dict:
        counts = {kind: 0 for kind in UnitKind}
        for block in self.model.blocks:
            for head in block.heads:
                counts[UnitKind.QUERY] += head.live_query
                counts[UnitKind.VALUE] += head.live_value
            counts[UnitKind.FFN] += block.live_ffn
        return counts

    def live_heads(self) -> int:
        return sum(1 for b in self.model.blocks for h in b.heads if h.live_value > 0)

    def _apply_prune(self, idx: int):
        unit = self.units[idx]
        block = self.model.blocks[unit.layer]
        if unit.kind is UnitKind.QUERY:
            head = block.heads[unit.head]
            head.query_mask[unit.row] = 0
            head.wq.value[unit.row] = 0.0
            head.wk.value[unit.row] = 0.0
        elif unit.kind is UnitKind.VALUE:
            head = block.heads[unit.head]
            head.value_mask[unit.row] = 0
            head.wv.value[unit.row] = 0.0
            head.wo.value[unit.row] = 0.0
        else:
            block.ffn_mask[unit.row] = 0
            block.w1.value[:, unit.row] = 0.0
            block.w2.value[unit.row] = 0.0
        unit.live = False
        self.live_count -= 1

    def live_query_indices(self, layer: int, head: int):
        base = self._query_base[(layer, head)]
        d_h = len(self.model.blocks[layer].heads[head].query_mask)
        return [base + r for r in range(d_h) if self.units[base + r].live]


def register_units(model: EncoderModel) -> PruningRegistry:
    """Build the unit registry for an unpruned model."""
    for block in model.blocks:
        if block.ffn_mask.min() == 0 or any(
            h.query_mask.min() == 0 or h.value_mask.min() == 0 for h in block.heads
        ):
            raise ContractError("register_units expects an unpruned model")
    return PruningRegistry(model)


def raw_importance(model: EncoderModel, registry: PruningRegistry) -> np.ndarray:
    """First-order scores |sum over unit weights of grad_ce * weight|.

    A query unit's weights are row j of wq and wk of its head; a value
    unit's are row j of wv and wo; an FFN unit's are column j of w1 and
    row j of w2. Pruned units score exactly zero because their weights are.
    """
    if not any(p.ce_seen for p in model.parameters() if p.trainable):
        raise ContractError("raw_importance called before backward on the CE channel")
    scores = np.zeros(len(registry), dtype=np.float64)
    pos = 0
    for block in model.blocks:
        for head in block.heads:
            s = (head.wq.grad_ce * head.wq.value).sum(axis=1)
            s += (head.wk.grad_ce * head.wk.value).sum(axis=1)
            n = len(s)
            scores[pos:pos + n] = np.abs(s)
            pos += n
        for head in block.heads:
            s = (head.wv.grad_ce * head.wv.value).sum(axis=1)
            s += (head.wo.grad_ce * head.wo.value).sum(axis=1)
            n = len(s)
            scores[pos:pos + n] = np.abs(s)
            pos += n
        s = (block.w1.grad_ce * block.w1.value).sum(axis=0)
        s += (block.w2.grad_ce * block.w2.value).sum(axis=1)
        n = len(s)
        scores[pos:pos + n] = np.abs(s)
        pos += n
    return scores


def apply_struct_reg(scores: np.ndarray, registry: PruningRegistry,
                     alpha: float) -> np.ndarray:
    """Multiply each value unit's score by tanh(D/alpha), where D is its
    head's live value-unit density. Query and FFN scores pass through.
    alpha = 0 disables the regularizer entirely.
    """
    if alpha < 0:
        raise ParameterError(f"regularization strength must be >= 0, got {alpha}")
    out = np.array(scores, dtype=np.float64, copy=True)
    if alpha == 0.0:
        return out
    for (layer, head_idx), base in registry._value_base.items():
        head = registry.model.blocks[layer].heads[head_idx]
        d_h = len(head.value_mask)
        density = head.live_value / d_h
        out[base:base + d_h] *= math.tanh(density / alpha)
    return out


def smooth_update(table: ImportanceTable | None, scores: np.ndarray,
                  beta: float) -> ImportanceTable:
    """smoothed <- beta * smoothed + (1 - beta) * scores.

    The first call seeds the table with the raw scores directly, avoiding
    a zero-biased cold start.
    """
    if not 0.0 <= beta <= 1.0:
        raise ParameterError(f"smoothing factor must be in [0, 1], got {beta}")
    if table is None:
        table = ImportanceTable(np.array(scores, dtype=np.float64, copy=True))
    else:
        if table.smoothed.shape != np.shape(scores):
            raise ParameterError(
                f"score length {np.shape(scores)} does not match table {table.smoothed.shape}"
            )
        table.smoothed = beta * table.smoothed + (1.0 - beta) * np.asarray(scores)
    table.step += 1
    return table


def density_schedule(t: float, sp: ScheduleParams) -> float:
    """Piecewise cubic density: 1 before p_s, s_f after p_e."""
    if not 0.0 <= t <= 1.0:
        raise ParameterError(f"training fraction must be in [0, 1], got {t}")
    if t < sp.p_s:
        return 1.0
    if t > sp.p_e:
        return sp.s_f
    frac = (t - sp.p_s) / (sp.p_e - sp.p_s)
    return sp.s_f + (1.0 - sp.s_f) * (1.0 - frac) ** 3


def prune_to_density(model: EncoderModel, registry: PruningRegistry,
                     table: ImportanceTable, target: float) -> list[PruningUnit]:
    """Prune lowest-scored live units until live params <= target fraction.

    Ties break by canonical order (layer, kind QUERY<VALUE<FFN, head, row).
    Pruning zeroes the unit's weights permanently. When a head loses its
    last value unit, its remaining query rows become dead computation:
    their smoothed scores drop to zero and they are consumed ahead of any
    real unit, one per removal, so density never overshoots the target by
    more than a single unit.
    """
    if not 0.0 <= target <= 1.0:
        raise ParameterError(f"target density must be in [0, 1], got {target}")
    pruned = []
    if registry.live_params <= target * registry.total_params:
        return pruned
    order = np.where(
        [u.live for u in registry.units],
        np.where(registry.priority, -1.0, table.smoothed),
        np.inf,
    )
    while registry.live_params > target * registry.total_params:
        idx = int(np.argmin(order))
        unit = registry.units[idx]
        registry._apply_prune(idx)
        order[idx] = np.inf
        pruned.append(unit)
        if unit.kind is UnitKind.VALUE:
            head = model.blocks[unit.layer].heads[unit.head]
            if head.live_value == 0:
                for qi in registry.live_query_indices(unit.layer, unit.head):
                    registry.priority[qi] = True
                    table.smoothed[qi] = 0.0
                    order[qi] = -1.0
    return pruned


def random_scores(registry: PruningRegistry, seed) -> np.ndarray:
    """Uniform(0,1) stand-in scores, deterministic per seed."""
    return np.random.default_rng(seed).uniform(size=len(registry))


# ---------------------------------------------------------------------------
# attention-heads baseline: heads and FFN units ranked in separate pools


class HeadPool:
    """Whole attention heads as pruning units, scored by their wo matrix."""

    def __init__(self, model: EncoderModel):
        cfg = model.config
        self.model = model
        self.keys = [(layer, head) for layer in range(cfg.n_layers)
                     for head in range(len(model.blocks[layer].heads))]
        self.head_params = 4 * cfg.d_h * cfg.d
        self.total_params = self.head_params * len(self.keys)
        self.live = np.ones(len(self.keys), dtype=bool)

    @property
    def live_params(self) -> int:
        return self.head_params * int(self.live.sum())

    def live_head_count(self) -> int:
        return int(self.live.sum())


def heads_importance(model: EncoderModel, pool: HeadPool) -> np.ndarray:
    """|sum of grad_ce * weight over all of wo| per head."""
    if not any(p.ce_seen for p in model.parameters() if p.trainable):
        raise ContractError("heads_importance called before backward on the CE channel")
    scores = np.zeros(len(pool.keys), dtype=np.float64)
    for i, (layer, head_idx) in enumerate(pool.keys):
        head = model.blocks[layer].heads[head_idx]
        scores[i] = abs(float((head.wo.grad_ce * head.wo.value).sum()))
    return scores


def prune_heads_to_density(model: EncoderModel, pool: HeadPool,
                           table: ImportanceTable, target: float) -> list:
    """Prune whole lowest-scored heads until the heads pool meets target."""
    if not 0.0 <= target <= 1.0:
        raise ParameterError(f"target density must be in [0, 1], got {target}")
    pruned = []
    order = np.where(pool.live, table.smoothed, np.inf)
    while pool.live_params > target * pool.total_params:
        idx = int(np.argmin(order))
        layer, head_idx = pool.keys[idx]
        head = model.blocks[layer].heads[head_idx]
        head.query_mask[:] = 0
        head.value_mask[:] = 0
        for p in (head.wq, head.wk, head.wv, head.wo):
            p.value[:] = 0.0
        pool.live[idx] = False
        order[idx] = np.inf
        pruned.append((layer, head_idx))
    return pruned


def validate_pool_densities(ffn_density: float, heads_density: float,
                            overall: float, config, tol: float = 1e-6):
    """The two pool targets must combine to the overall model density."""
    p_ffn = config.n_layers * 2 * config.d * config.d_f
    p_heads = config.n_layers * 4 * config.d * config.d
    combined = (ffn_density * p_ffn + heads_density * p_heads) / (p_ffn + p_heads)
    if abs(combined - overall) > tol:
        raise ParameterError(
            f"pool densities (ffn={ffn_density}, heads={heads_density}) give overall "
            f"{combined:.6f}, expected {overall}"
        )


def ffn_only_registry(model: EncoderModel) -> PruningRegistry:
    """Registry restricted to FFN units, for the heads+FFN baseline."""
    return PruningRegistry(model, ffn_only=True)


def raw_ffn_importance(model: EncoderModel, registry: PruningRegistry) -> np.ndarray:
    """FFN-unit scores for an FFN-only registry."""
    if not any(p.ce_seen for p in model.parameters() if p.trainable):
        raise ContractError("importance scores need a CE-channel backward first")
    chunks = []
    for block in model.blocks:
        s = (block.w1.grad_ce * block.w1.value).sum(axis=0)
        s += (block.w2.grad_ce * block.w2.value).sum(axis=1)
        chunks.append(np.abs(s))
    return np.concatenate(chunks)


# ---------------------------------------------------------------------------
# score dump


def dump_scores(path: str, registry: PruningRegistry, table: ImportanceTable):
    """CSV with columns (kind, layer, head, row, smoothed_score, live)."""
    from .checkpoint import write_text_atomic

    rows = [["kind", "layer", "head", "row", "smoothed_score", "live"]]
    for unit, score in zip(registry.units, table.smoothed):
        rows.append([
            unit.kind.name.lower(), unit.layer,
            "" if unit.head is None else unit.head,
            unit.row, repr(float(score)), int(unit.live),
        ])
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    write_text_atomic(path, buf.getvalue())
