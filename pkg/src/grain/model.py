"""A small BERT-style encoder whose attention and FFN weights are maskable
at intra-attention granularity.

Each attention head owns four (rows, d) matrices. Query units are paired
rows of wq/wk, value units are paired rows of wv/wo, FFN units are a column
of w1 paired with a row of w2. Masks are 0/1 vectors; masked rows hold
exactly-zero weights and are re-zeroed after every optimizer step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor, tensor
from .embedding import FactorizedEmbedding, factorized_lookup
from .errors import ConfigError, InputError

PAD_ID = 0
ATTN_MASK_BIAS = -1e9


@dataclass
class ModelConfig:
    d: int = 64            # hidden size
    d_h: int = 16          # head size
    n_heads: int = 4       # heads per layer, d == n_heads * d_h
    d_f: int = 256         # FFN intermediate size
    n_layers: int = 4
    vocab: int = 64
    seq_len: int = 32      # maximum sequence length
    n_classes: int = 2
    dropout: float = 0.0

    def validate(self):
        if min(self.d, self.d_h, self.n_heads, self.d_f, self.n_layers,
               self.vocab, self.seq_len, self.n_classes) < 1:
            raise ConfigError("all model sizes must be >= 1")
        if self.d != self.n_heads * self.d_h:
            raise ConfigError(
                f"d must equal n_heads * d_h: {self.d} != {self.n_heads} * {self.d_h}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    def prunable_total(self) -> int:
        """Weights eligible for pruning: attention and FFN matrices only."""
        return self.n_layers * (4 * self.d * self.d + 2 * self.d * self.d_f)


class AttentionHead:
    """One attention head: wq/wk paired by query units, wv/wo by value units."""

    def __init__(self, wq, wk, wv, wo):
        self.wq = wq if isinstance(wq, Parameter) else Parameter(wq)
        self.wk = wk if isinstance(wk, Parameter) else Parameter(wk)
        self.wv = wv if isinstance(wv, Parameter) else Parameter(wv)
        self.wo = wo if isinstance(wo, Parameter) else Parameter(wo)
        self.query_mask = np.ones(self.wq.shape[0], dtype=np.uint8)
        self.value_mask = np.ones(self.wv.shape[0], dtype=np.uint8)

    @property
    def live_query(self) -> int:
        return int(self.query_mask.sum())

    @property
    def live_value(self) -> int:
        return int(self.value_mask.sum())

    def live_weights(self) -> int:
        d = self.wq.shape[1]
        return 2 * d * (self.live_query + self.live_value)


class EncoderBlock:
    """Post-norm transformer block: MHA + residual + LN, FFN + residual + LN."""

    def __init__(self, heads, w1, w2, ln_attn_gain, ln_attn_bias, ln_ffn_gain, ln_ffn_bias):
        self.heads = list(heads)
        self.w1 = w1
        self.w2 = w2
        self.ffn_mask = np.ones(self.w1.shape[1], dtype=np.uint8)
        self.ln_attn_gain = ln_attn_gain
        self.ln_attn_bias = ln_attn_bias
        self.ln_ffn_gain = ln_ffn_gain
        self.ln_ffn_bias = ln_ffn_bias

    @property
    def live_ffn(self) -> int:
        return int(self.ffn_mask.sum())

    def live_weights(self) -> int:
        d = self.w1.shape[0]
        return sum(h.live_weights() for h in self.heads) + 2 * d * self.live_ffn


@dataclass
class HiddenStates:
    """All intermediate states of one forward pass, kept for distillation."""

    states: list          # H_0 .. H_L, each (batch, seq, d)
    logits: Tensor        # (batch, n_classes)


class EncoderModel:
    def __init__(self, config: ModelConfig, embedding, pos, blocks, cls_w, cls_b):
        self.config = config
        self.embedding = embedding  # Parameter or FactorizedEmbedding
        self.pos = pos
        self.blocks = list(blocks)
        self.cls_w = cls_w
        self.cls_b = cls_b

    @property
    def factorized(self) -> bool:
        return isinstance(self.embedding, FactorizedEmbedding)

    def named_parameters(self):
        """(name, Parameter) pairs in fixed traversal order."""
        out = []
        if self.factorized:
            out.append(("embedding.w_r", self.embedding.w_r))
            out.append(("embedding.v_r", self.embedding.v_r))
        else:
            out.append(("embedding.weight", self.embedding))
        out.append(("pos", self.pos))
        for i, block in enumerate(self.blocks):
            for j, head in enumerate(block.heads):
                base = f"blocks.{i}.heads.{j}"
                out.extend([
                    (f"{base}.wq", head.wq), (f"{base}.wk", head.wk),
                    (f"{base}.wv", head.wv), (f"{base}.wo", head.wo),
                ])
            out.extend([
                (f"blocks.{i}.w1", block.w1), (f"blocks.{i}.w2", block.w2),
                (f"blocks.{i}.ln_attn_gain", block.ln_attn_gain),
                (f"blocks.{i}.ln_attn_bias", block.ln_attn_bias),
                (f"blocks.{i}.ln_ffn_gain", block.ln_ffn_gain),
                (f"blocks.{i}.ln_ffn_bias", block.ln_ffn_bias),
            ])
        out.append(("cls_w", self.cls_w))
        out.append(("cls_b", self.cls_b))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def set_trainable(self, flag: bool):
        for p in self.parameters():
            p.trainable = flag

    def zero_grads(self):
        for p in self.parameters():
            p.zero_grads()

    def mask_gradients(self):
        """Zero both gradient channels on every masked row/column."""
        for block in self.blocks:
            for head in block.heads:
                qdead = head.query_mask == 0
                vdead = head.value_mask == 0
                for p in (head.wq, head.wk):
                    p.grad_ce[qdead] = 0.0
                    p.grad_aux[qdead] = 0.0
                for p in (head.wv, head.wo):
                    p.grad_ce[vdead] = 0.0
                    p.grad_aux[vdead] = 0.0
            fdead = block.ffn_mask == 0
            block.w1.grad_ce[:, fdead] = 0.0
            block.w1.grad_aux[:, fdead] = 0.0
            block.w2.grad_ce[fdead] = 0.0
            block.w2.grad_aux[fdead] = 0.0

    def enforce_masks(self):
        """Re-zero masked weights; call after every optimizer step."""
        for block in self.blocks:
            for head in block.heads:
                qdead = head.query_mask == 0
                vdead = head.value_mask == 0
                head.wq.value[qdead] = 0.0
                head.wk.value[qdead] = 0.0
                head.wv.value[vdead] = 0.0
                head.wo.value[vdead] = 0.0
            fdead = block.ffn_mask == 0
            block.w1.value[:, fdead] = 0.0
            block.w2.value[fdead] = 0.0

    def copy(self) -> "EncoderModel":
        """Deep structural copy with fresh Parameters and masks."""
        if self.factorized:
            emb = FactorizedEmbedding(
                w_r=Parameter(self.embedding.w_r.value.copy()),
                v_r=Parameter(self.embedding.v_r.value.copy()),
                rank=self.embedding.rank,
                singular_values=None if self.embedding.singular_values is None
                else self.embedding.singular_values.copy(),
            )
        else:
            emb = Parameter(self.embedding.value.copy())
        blocks = []
        for block in self.blocks:
            heads = []
            for h in block.heads:
                nh = AttentionHead(h.wq.value.copy(), h.wk.value.copy(),
                                   h.wv.value.copy(), h.wo.value.copy())
                nh.query_mask = h.query_mask.copy()
                nh.value_mask = h.value_mask.copy()
                heads.append(nh)
            nb = EncoderBlock(
                heads,
                Parameter(block.w1.value.copy()), Parameter(block.w2.value.copy()),
                Parameter(block.ln_attn_gain.value.copy()),
                Parameter(block.ln_attn_bias.value.copy()),
                Parameter(block.ln_ffn_gain.value.copy()),
                Parameter(block.ln_ffn_bias.value.copy()),
            )
            nb.ffn_mask = block.ffn_mask.copy()
            blocks.append(nb)
        return EncoderModel(
            self.config, emb, Parameter(self.pos.value.copy()), blocks,
            Parameter(self.cls_w.value.copy()), Parameter(self.cls_b.value.copy()),
        )


def init_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> EncoderModel:
    """Random-normal initialization (std 0.02), gains one, biases zero."""
    config.validate()
    rng = np.random.default_rng(seed)

    def init(*shape):
        return Parameter((rng.standard_normal(shape) * 0.02).astype(dtype))

    embedding = init(config.vocab, config.d)
    pos = init(config.seq_len, config.d)
    blocks = []
    for _ in range(config.n_layers):
        heads = [
            AttentionHead(init(config.d_h, config.d), init(config.d_h, config.d),
                          init(config.d_h, config.d), init(config.d_h, config.d))
            for _ in range(config.n_heads)
        ]
        blocks.append(EncoderBlock(
            heads, init(config.d, config.d_f), init(config.d_f, config.d),
            Parameter(np.ones(config.d, dtype=dtype)),
            Parameter(np.zeros(config.d, dtype=dtype)),
            Parameter(np.ones(config.d, dtype=dtype)),
            Parameter(np.zeros(config.d, dtype=dtype)),
        ))
    return EncoderModel(config, embedding, pos, blocks,
                        init(config.d, config.n_classes),
                        Parameter(np.zeros(config.n_classes, dtype=dtype)))


# ---------------------------------------------------------------------------
# forward passes


def attention_head_forward(x: Tensor, head: AttentionHead, attn_bias: Tensor = None) -> Tensor:
    """softmax(Q K^T / sqrt(max(live query units, 1))) V W_O.

    Scaling uses the head's live query count, not the model hidden size.
    A head whose value units are all masked contributes the zero matrix.
    """
    q = ad.matmul(x, ad.transpose(head.wq.tensor()))
    k = ad.matmul(x, ad.transpose(head.wk.tensor()))
    v = ad.matmul(x, ad.transpose(head.wv.tensor()))
    scores = ad.scale(ad.matmul(q, ad.transpose(k)),
                      1.0 / math.sqrt(max(head.live_query, 1)))
    if attn_bias is not None:
        scores = ad.add(scores, attn_bias)
    return ad.matmul(ad.matmul(ad.softmax_rows(scores), v), head.wo.tensor())


def mha_forward(x: Tensor, block: EncoderBlock, attn_bias: Tensor = None,
                train: bool = False, rng=None, rate: float = 0.0) -> Tensor:
    """Sum of live heads, residual add, post-layer-norm.

    Heads with zero live value units are skipped: their output is exactly
    zero, so the sum is unchanged.
    """
    acc = None
    for head in block.heads:
        if head.live_value == 0:
            continue
        out = attention_head_forward(x, head, attn_bias)
        acc = out if acc is None else ad.add(acc, out)
    if acc is None:
        acc = tensor(np.zeros(x.shape, dtype=x.dtype))
    elif train and rate > 0.0 and rng is not None:
        acc = ad.dropout(acc, rate, rng)
    return ad.layer_norm(ad.add(x, acc), block.ln_attn_gain.tensor(),
                         block.ln_attn_bias.tensor())


def ffn_forward(x: Tensor, block: EncoderBlock, train: bool = False, rng=None,
                rate: float = 0.0) -> Tensor:
    """GeLU(X W1) W2 over live FFN dimensions, residual add, layer norm."""
    inner = ad.gelu(ad.matmul(x, block.w1.tensor()))
    out = ad.matmul(inner, block.w2.tensor())
    if train and rate > 0.0 and rng is not None:
        out = ad.dropout(out, rate, rng)
    return ad.layer_norm(ad.add(x, out), block.ln_ffn_gain.tensor(),
                         block.ln_ffn_bias.tensor())


def attention_bias_for(tokens: np.ndarray, dtype) -> Tensor:
    """Additive pre-softmax bias masking pad positions out of attention."""
    bias = np.where(tokens == PAD_ID, ATTN_MASK_BIAS, 0.0).astype(dtype)
    return tensor(bias[:, None, :])


def encoder_forward(model: EncoderModel, tokens: np.ndarray, train: bool = False,
                    rng=None) -> HiddenStates:
    """Embed, run all blocks, classify from the first-position state.

    `tokens` is (batch, m) integer ids with m <= seq_len; pad id 0 is
    masked out of attention. Returns every intermediate H_i.
    """
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise InputError(f"tokens must be (batch, seq), got shape {tokens.shape}")
    cfg = model.config
    if tokens.shape[1] > cfg.seq_len:
        raise InputError(f"sequence length {tokens.shape[1]} exceeds limit {cfg.seq_len}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab):
        raise InputError(
            f"token id out of range [0, {cfg.vocab}): min={tokens.min()}, max={tokens.max()}"
        )
    m = tokens.shape[1]
    dtype = model.pos.dtype

    if model.factorized:
        emb = factorized_lookup(tokens, model.embedding)
    else:
        emb = ad.embedding_lookup(model.embedding.tensor(), tokens)
    pos = model.pos.tensor()
    if m < cfg.seq_len:
        pos = ad.take_rows(pos, m)
    h = ad.add(emb, pos)
    if train and cfg.dropout > 0.0 and rng is not None:
        h = ad.dropout(h, cfg.dropout, rng)

    attn_bias = attention_bias_for(tokens, dtype)
    states = [h]
    for block in model.blocks:
        a = mha_forward(h, block, attn_bias, train=train, rng=rng, rate=cfg.dropout)
        h = ffn_forward(a, block, train=train, rng=rng, rate=cfg.dropout)
        states.append(h)

    first = ad.take_first(h)
    logits = ad.add(ad.matmul(first, model.cls_w.tensor()), model.cls_b.tensor())
    return HiddenStates(states=states, logits=logits)


# ---------------------------------------------------------------------------
# size accounting and compaction


def count_prunable_params(model: EncoderModel) -> int:
    """Live weights in the attention and FFN matrices; everything else
    (biases, layer norms, embeddings, classifier) is excluded."""
    return sum(block.live_weights() for block in model.blocks)


def model_density(model: EncoderModel) -> float:
    return count_prunable_params(model) / model.config.prunable_total()


def total_param_count(model: EncoderModel) -> int:
    """All live parameters including embeddings, norms, and classifier."""
    cfg = model.config
    if model.factorized:
        emb = model.embedding.param_count()
    else:
        emb = cfg.vocab * cfg.d
    extras = (cfg.seq_len * cfg.d + cfg.n_layers * 4 * cfg.d
              + cfg.d * cfg.n_classes + cfg.n_classes)
    return count_prunable_params(model) + emb + extras


def compact(model: EncoderModel) -> EncoderModel:
    """Physically delete masked rows/columns and drop empty heads.

    Heads with zero live value units are removed outright (their output is
    identically zero); blocks may end up with no attention sub-module at
    all. Forward outputs match the masked model within float tolerance.
    """
    blocks = []
    for block in model.blocks:
        heads = []
        for h in block.heads:
            if h.live_value == 0:
                continue
            qkeep = h.query_mask == 1
            vkeep = h.value_mask == 1
            heads.append(AttentionHead(
                h.wq.value[qkeep].copy(), h.wk.value[qkeep].copy(),
                h.wv.value[vkeep].copy(), h.wo.value[vkeep].copy(),
            ))
        fkeep = block.ffn_mask == 1
        nb = EncoderBlock(
            heads,
            Parameter(block.w1.value[:, fkeep].copy()),
            Parameter(block.w2.value[fkeep].copy()),
            Parameter(block.ln_attn_gain.value.copy()),
            Parameter(block.ln_attn_bias.value.copy()),
            Parameter(block.ln_ffn_gain.value.copy()),
            Parameter(block.ln_ffn_bias.value.copy()),
        )
        blocks.append(nb)
    if model.factorized:
        emb = FactorizedEmbedding(
            w_r=Parameter(model.embedding.w_r.value.copy()),
            v_r=Parameter(model.embedding.v_r.value.copy()),
            rank=model.embedding.rank,
        )
    else:
        emb = Parameter(model.embedding.value.copy())
    return EncoderModel(
        model.config, emb, Parameter(model.pos.value.copy()), blocks,
        Parameter(model.cls_w.value.copy()), Parameter(model.cls_b.value.copy()),
    )
