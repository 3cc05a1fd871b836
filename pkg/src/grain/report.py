"""Structure reports: per-block head/unit counts and model totals."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .model import EncoderModel, count_prunable_params, model_density, total_param_count


@dataclass
class BlockReport:
    layer: int
    heads: list            # (live_query, live_value) for each live head
    live_ffn: int


@dataclass
class StructureReport:
    blocks: list
    mha_layers: int        # blocks with at least one live head
    total_heads: int
    mean_query_per_head: float
    mean_value_per_head: float
    mean_ffn: float
    density: float
    prunable_live: int
    prunable_total: int
    total_params: int


def build_report(model: EncoderModel) -> StructureReport:
    """Collect live structure counts; a head is live iff it has live value
    units (value-empty heads compute nothing and are treated as removed)."""
    blocks = []
    for layer, block in enumerate(model.blocks):
        heads = [(h.live_query, h.live_value) for h in block.heads if h.live_value > 0]
        blocks.append(BlockReport(layer=layer, heads=heads, live_ffn=block.live_ffn))
    total_heads = sum(len(b.heads) for b in blocks)
    total_query = sum(q for b in blocks for q, _ in b.heads)
    total_value = sum(v for b in blocks for _, v in b.heads)
    n_blocks = max(len(blocks), 1)
    return StructureReport(
        blocks=blocks,
        mha_layers=sum(1 for b in blocks if b.heads),
        total_heads=total_heads,
        mean_query_per_head=total_query / total_heads if total_heads else 0.0,
        mean_value_per_head=total_value / total_heads if total_heads else 0.0,
        mean_ffn=sum(b.live_ffn for b in blocks) / n_blocks,
        density=model_density(model),
        prunable_live=count_prunable_params(model),
        prunable_total=model.config.prunable_total(),
        total_params=total_param_count(model),
    )


def format_text(report: StructureReport) -> str:
    lines = ["layer  heads  ffn   per-head (query/value)"]
    for b in report.blocks:
        detail = "  ".join(f"{q}q/{v}v" for q, v in b.heads) or "-"
        lines.append(f"{b.layer:<6d} {len(b.heads):<6d} {b.live_ffn:<5d} {detail}")
    lines.append("")
    lines.append(f"mha layers: {report.mha_layers}")
    lines.append(f"total heads: {report.total_heads}")
    lines.append(f"mean query units/head: {report.mean_query_per_head:.2f}")
    lines.append(f"mean value units/head: {report.mean_value_per_head:.2f}")
    lines.append(f"mean ffn size: {report.mean_ffn:.2f}")
    lines.append(f"model density: {report.density:.6f}")
    lines.append(f"prunable params: {report.prunable_live}/{report.prunable_total}")
    lines.append(f"total params (with embeddings): {report.total_params}")
    return "\n".join(lines) + "\n"


CSV_COLUMNS = ("record", "layer", "head", "live_query", "live_value", "live_ffn",
               "mha_layers", "total_heads", "mean_query_per_head",
               "mean_value_per_head", "mean_ffn", "density", "prunable_live",
               "prunable_total", "total_params")


def format_csv(report: StructureReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for b in report.blocks:
        for head_idx, (q, v) in enumerate(b.heads):
            writer.writerow(["head", b.layer, head_idx, q, v] + [""] * 10)
        writer.writerow(["block", b.layer, "", "", "", b.live_ffn] + [""] * 9)
    writer.writerow([
        "totals", "", "", "", "", "",
        report.mha_layers, report.total_heads,
        repr(report.mean_query_per_head), repr(report.mean_value_per_head),
        repr(report.mean_ffn), repr(report.density),
        report.prunable_live, report.prunable_total, report.total_params,
    ])
    return buf.getvalue()
