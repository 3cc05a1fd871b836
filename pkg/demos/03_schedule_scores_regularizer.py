#!/usr/bin/env python3
"""Plot the cubic density schedule as ASCII art and show how structure
regularization reshapes importance scores."""

import math

import numpy as np

from grain.model import ModelConfig, init_model
from grain.pruning import (
    ScheduleParams,
    apply_struct_reg,
    density_schedule,
    prune_to_density,
    register_units,
    smooth_update,
)


def ascii_curve(fn, n=60, height=12):
    values = [fn(i / (n - 1)) for i in range(n)]
    rows = []
    for level in range(height, -1, -1):
        threshold = level / height
        rows.append("".join("#" if v >= threshold else " " for v in values))
    return "\n".join(rows)


def main():
    sp = ScheduleParams(p_s=0.2, p_e=0.4, s_f=0.05)
    print("cubic density schedule (x: training fraction, y: density)")
    print(ascii_curve(lambda t: density_schedule(t, sp)))
    for t in (0.1, 0.2, 0.3, 0.4, 0.9):
        print(f"  s({t}) = {density_schedule(t, sp):.5f}")

    print("\nstructure regularization: score multiplier tanh(D / alpha)")
    for alpha in (0.1, 0.3, 0.5):
        factors = [math.tanh((live / 16) / alpha) for live in (16, 8, 4, 2, 1)]
        print(f"  alpha={alpha}: D=1 -> {factors[0]:.3f}, D=0.5 -> {factors[1]:.3f}, "
              f"D=0.25 -> {factors[2]:.3f}, D=1/8 -> {factors[3]:.3f}, "
              f"D=1/16 -> {factors[4]:.3f}")

    print("\nsmoothed scores drive ranked pruning:")
    cfg = ModelConfig(d=8, d_h=4, n_heads=2, d_f=16, n_layers=1, vocab=16, seq_len=8)
    model = init_model(cfg, seed=0)
    registry = register_units(model)
    rng = np.random.default_rng(2)
    table = None
    for step in range(5):
        raw = rng.uniform(size=len(registry))
        regularized = apply_struct_reg(raw, registry, alpha=0.3)
        table = smooth_update(table, regularized, beta=0.9)
    pruned = prune_to_density(model, registry, table, target=0.75)
    print(f"  pruned {len(pruned)} units to reach density {registry.density():.3f}:")
    for unit in pruned[:8]:
        where = f"head {unit.head}" if unit.head is not None else "ffn"
        print(f"    layer {unit.layer} {where} row {unit.row} ({unit.kind.name})")


if __name__ == "__main__":
    main()
