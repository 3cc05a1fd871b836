"""Canonical finite-difference cases covering every differentiable op."""

import numpy as np

from grain import autodiff as ad

OP_CASES = [
    ("matmul_2d", lambda a, b: ad.matmul(a, b), [(4, 4), (4, 4)]),
    ("matmul_batched", lambda a, b: ad.matmul(a, b), [(2, 3, 4), (4, 5)]),
    ("matmul_3d_3d", lambda a, b: ad.matmul(a, b), [(2, 3, 4), (2, 4, 3)]),
    ("transpose", lambda a: ad.transpose(a), [(3, 5)]),
    ("add", lambda a, b: ad.add(a, b), [(4, 4), (4, 4)]),
    ("add_broadcast_row", lambda a, b: ad.add(a, b), [(2, 4, 3), (3,)]),
    ("add_broadcast_mid", lambda a, b: ad.add(a, b), [(2, 4, 4), (2, 1, 4)]),
    ("sub", lambda a, b: ad.sub(a, b), [(3, 3), (3, 3)]),
    ("mul", lambda a, b: ad.mul(a, b), [(4, 4), (4, 4)]),
    ("scale", lambda a: ad.scale(a, -1.7), [(4, 4)]),
    ("sum_all", lambda a: ad.sum_all(a), [(5, 3)]),
    ("softmax_rows", lambda a: ad.softmax_rows(a), [(3, 5)]),
    ("gelu", lambda a: ad.gelu(a), [(4, 4)]),
    ("layer_norm", lambda a, g, b: ad.layer_norm(a, g, b), [(4, 6), (6,), (6,)]),
    ("soft_ce", lambda s, t: ad.soft_cross_entropy(s, t, 2.5), [(4, 5), (4, 5)]),
    ("mse", lambda a, b: ad.mse(a, b), [(4, 4), (4, 4)]),
    ("take_first", lambda a: ad.take_first(a), [(2, 4, 3)]),
    ("take_rows", lambda a: ad.take_rows(a, 3), [(5, 4)]),
]


def extra_cases(seed):
    """Cases needing integer side inputs, regenerated per seed."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, size=6)
    ids = rng.integers(0, 5, size=(2, 4))
    return [
        ("cross_entropy_logits",
         lambda z: ad.cross_entropy_logits(z, labels), [(6, 3)]),
        ("embedding_lookup",
         lambda w: ad.embedding_lookup(w, ids), [(5, 3)]),
        ("dropout_fixed_mask",
         lambda a: ad.dropout(a, 0.4, np.random.default_rng(7)), [(4, 4)]),
    ]
