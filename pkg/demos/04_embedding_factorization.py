#!/usr/bin/env python3
"""Truncated-SVD embedding factorization: reconstruction error and parameter
savings as the retained rank varies."""

import numpy as np

from grain.embedding import factorized_lookup, svd_truncate


def main():
    rng = np.random.default_rng(0)
    vocab, d = 64, 32
    # embeddings with decaying spectrum, like a trained table
    base = rng.standard_normal((vocab, d))
    u, s, vh = np.linalg.svd(base, full_matrices=False)
    embedding = (u * (s * np.exp(-0.15 * np.arange(len(s))))) @ vh

    print(f"embedding {vocab} x {d} = {vocab * d} parameters")
    print(f"{'rank':>4}  {'params':>6}  {'saved':>6}  {'rel frobenius error':>19}")
    norm = np.linalg.norm(embedding)
    for rank in (1, 2, 4, 8, 16, 32):
        fe = svd_truncate(embedding, rank)
        err = np.linalg.norm(embedding - fe.reconstruct()) / norm
        saved = 1.0 - fe.param_count() / (vocab * d)
        print(f"{rank:>4}  {fe.param_count():>6}  {saved:>5.0%}  {err:>19.3e}")

    fe = svd_truncate(embedding, 8)
    tokens = np.array([[3, 17, 42]])
    out = factorized_lookup(tokens, fe)
    direct = embedding[tokens]
    print(f"\nrank-8 lookup vs dense rows, max difference: "
          f"{np.abs(out.data - direct).max():.3e}")


if __name__ == "__main__":
    main()
