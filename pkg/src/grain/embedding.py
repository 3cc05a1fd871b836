"""Low-rank factorization of the word-embedding matrix via truncated SVD."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ParameterError


@dataclass
class FactorizedEmbedding:
    """Rank-r replacement for a (vocab, d) embedding matrix.

    lookup(t) = row_t(w_r) @ v_r, so w_r is (vocab, r) and v_r is (r, d).
    Both factors are trainable after the one-time factorization.
    """

    w_r: Parameter
    v_r: Parameter
    rank: int
    singular_values: np.ndarray = field(default=None, repr=False)

    @property
    def vocab(self) -> int:
        return self.w_r.shape[0]

    @property
    def dim(self) -> int:
        return self.v_r.shape[1]

    def param_count(self) -> int:
        return (self.vocab + self.dim) * self.rank

    def reconstruct(self) -> np.ndarray:
        return self.w_r.value @ self.v_r.value


def svd_truncate(embedding: np.ndarray, rank: int) -> FactorizedEmbedding:
    """Factor E as (U_r S_r) @ V_r keeping the top `rank` singular values.

    By Eckart-Young this is the rank-r factorization with minimal Frobenius
    reconstruction error.
    """
    e = np.asarray(embedding)
    max_rank = min(e.shape)
    if not 1 <= rank <= max_rank:
        raise ParameterError(f"rank must be in [1, {max_rank}], got {rank}")
    u, s, vh = np.linalg.svd(e, full_matrices=False)
    w_r = (u[:, :rank] * s[:rank]).astype(e.dtype)
    v_r = vh[:rank].astype(e.dtype)
    return FactorizedEmbedding(
        w_r=Parameter(w_r), v_r=Parameter(v_r), rank=rank, singular_values=s.copy()
    )


def factorized_lookup(tokens: np.ndarray, fe: FactorizedEmbedding) -> Tensor:
    """Gather rows of w_r by token id and project up through v_r."""
    return ad.matmul(ad.embedding_lookup(fe.w_r.tensor(), tokens), fe.v_r.tensor())
