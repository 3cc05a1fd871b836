"""Binary checkpoint format "GRN1".

Layout, all integers little-endian:
  magic "GRN1"
  u32 header entry count, then per entry {u16 key len, key, u16 value len, value}
  u32 tensor count, then per tensor
    {u16 name len, name, u8 dtype code, u8 rank, u32 dims..., raw row-major data}
Dtype codes: 1 = float32, 2 = float64, 3 = uint8. Masks are stored as 0/1
byte vectors under reserved *_mask names.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .autodiff import Parameter
from .embedding import FactorizedEmbedding
from .errors import CheckpointError
from .model import AttentionHead, EncoderBlock, EncoderModel, ModelConfig

MAGIC = b"GRN1"
_DTYPE_TO_CODE = {np.dtype(np.float32): 1, np.dtype(np.float64): 2, np.dtype(np.uint8): 3}
_CODE_TO_DTYPE = {v: k for k, v in _DTYPE_TO_CODE.items()}

_CONFIG_KEYS = ("d", "d_h", "n_heads", "d_f", "n_layers", "vocab", "seq_len", "n_classes")


def write_bytes_atomic(path: str, payload: bytes):
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-grn-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path: str, text: str):
    write_bytes_atomic(path, text.encode("utf-8"))


def _encode_header(header: dict) -> bytes:
    parts = [struct.pack("<I", len(header))]
    for key, value in header.items():
        kb = str(key).encode("utf-8")
        vb = str(value).encode("utf-8")
        parts.append(struct.pack("<H", len(kb)) + kb + struct.pack("<H", len(vb)) + vb)
    return b"".join(parts)


def _encode_tensor(name: str, arr: np.ndarray) -> bytes:
    code = _DTYPE_TO_CODE.get(arr.dtype)
    if code is None:
        raise CheckpointError(f"unsupported tensor dtype {arr.dtype} for {name}")
    nb = name.encode("utf-8")
    out = [struct.pack("<H", len(nb)), nb, struct.pack("<BB", code, arr.ndim)]
    for dim in arr.shape:
        out.append(struct.pack("<I", dim))
    data = np.ascontiguousarray(arr)
    if data.dtype.byteorder == ">":
        data = data.astype(data.dtype.newbyteorder("<"))
    out.append(data.tobytes())
    return b"".join(out)


def _collect_tensors(model: EncoderModel, fused: bool):
    tensors = []
    for name, param in model.named_parameters():
        if fused and ".heads." in name:
            continue
        tensors.append((name, param.value))
    if fused:
        for i, block in enumerate(model.blocks):
            sizes = {len(h.query_mask) for h in block.heads} | {len(h.value_mask) for h in block.heads}
            if sizes != {model.config.d_h} or len(block.heads) != model.config.n_heads:
                raise CheckpointError(
                    "fused export requires the original uniform head layout"
                )
            for mat in ("wq", "wk", "wv", "wo"):
                stacked = np.concatenate([getattr(h, mat).value for h in block.heads], axis=0)
                tensors.append((f"blocks.{i}.{mat}_fused", stacked))
            tensors.append((f"blocks.{i}.query_mask",
                            np.concatenate([h.query_mask for h in block.heads])))
            tensors.append((f"blocks.{i}.value_mask",
                            np.concatenate([h.value_mask for h in block.heads])))
    else:
        for i, block in enumerate(model.blocks):
            for j, head in enumerate(block.heads):
                tensors.append((f"blocks.{i}.heads.{j}.query_mask", head.query_mask))
                tensors.append((f"blocks.{i}.heads.{j}.value_mask", head.value_mask))
    for i, block in enumerate(model.blocks):
        tensors.append((f"blocks.{i}.ffn_mask", block.ffn_mask))
    return tensors


def checkpoint_bytes(model: EncoderModel, fused: bool = False) -> bytes:
    cfg = model.config
    header = {key: getattr(cfg, key) for key in _CONFIG_KEYS}
    header["dropout"] = repr(cfg.dropout)
    header["layout"] = "fused" if fused else "per_head"
    header["heads_per_block"] = ",".join(str(len(b.heads)) for b in model.blocks)
    if model.factorized:
        header["embedding"] = "factorized"
        header["embed_rank"] = model.embedding.rank
    else:
        header["embedding"] = "full"
    tensors = _collect_tensors(model, fused)
    body = [struct.pack("<I", len(tensors))]
    for name, arr in tensors:
        body.append(_encode_tensor(name, arr))
    return MAGIC + _encode_header(header) + b"".join(body)


def write_checkpoint(path: str, model: EncoderModel, fused: bool = False):
    write_bytes_atomic(path, checkpoint_bytes(model, fused=fused))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def fail(self, what: str):
        raise CheckpointError(f"corrupt checkpoint: {what} at offset {self.pos}")

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            self.fail(f"truncated, needed {n} bytes")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self, length_bits=16) -> str:
        n = self.u16() if length_bits == 16 else self.u32()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError:
            self.fail("invalid utf-8 string")


def _parse(blob: bytes):
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        r.pos = 0
        r.fail("bad magic bytes")
    header = {}
    for _ in range(r.u32()):
        key = r.string()
        header[key] = r.string()
    tensors = {}
    for _ in range(r.u32()):
        name = r.string()
        code = r.u8()
        dtype = _CODE_TO_DTYPE.get(code)
        if dtype is None:
            r.fail(f"unknown dtype code {code}")
        rank = r.u8()
        shape = tuple(r.u32() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        raw = r.take(count * dtype.itemsize)
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
    if r.pos != len(blob):
        r.fail(f"{len(blob) - r.pos} trailing bytes")
    return header, tensors


def read_checkpoint(path: str) -> EncoderModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    header, tensors = _parse(blob)

    def need(name):
        if name not in tensors:
            raise CheckpointError(f"corrupt checkpoint: missing tensor {name} at offset {len(blob)}")
        return tensors[name]

    try:
        cfg = ModelConfig(**{k: int(header[k]) for k in _CONFIG_KEYS},
                          dropout=float(header.get("dropout", "0.0")))
        heads_per_block = [int(x) for x in header["heads_per_block"].split(",")] \
            if header.get("heads_per_block") else [cfg.n_heads] * cfg.n_layers
        layout = header.get("layout", "per_head")
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint: bad header ({exc}) at offset 4") from None

    if header.get("embedding") == "factorized":
        emb = FactorizedEmbedding(w_r=Parameter(need("embedding.w_r")),
                                  v_r=Parameter(need("embedding.v_r")),
                                  rank=int(header["embed_rank"]))
    else:
        emb = Parameter(need("embedding.weight"))

    blocks = []
    for i in range(cfg.n_layers):
        heads = []
        if layout == "fused":
            mats = {m: need(f"blocks.{i}.{m}_fused") for m in ("wq", "wk", "wv", "wo")}
            qmask = need(f"blocks.{i}.query_mask")
            vmask = need(f"blocks.{i}.value_mask")
            for j in range(heads_per_block[i]):
                rows = slice(j * cfg.d_h, (j + 1) * cfg.d_h)
                head = AttentionHead(mats["wq"][rows].copy(), mats["wk"][rows].copy(),
                                     mats["wv"][rows].copy(), mats["wo"][rows].copy())
                head.query_mask = qmask[rows].copy()
                head.value_mask = vmask[rows].copy()
                heads.append(head)
        else:
            for j in range(heads_per_block[i]):
                base = f"blocks.{i}.heads.{j}"
                head = AttentionHead(need(f"{base}.wq"), need(f"{base}.wk"),
                                     need(f"{base}.wv"), need(f"{base}.wo"))
                head.query_mask = need(f"{base}.query_mask")
                head.value_mask = need(f"{base}.value_mask")
                heads.append(head)
        block = EncoderBlock(
            heads, Parameter(need(f"blocks.{i}.w1")), Parameter(need(f"blocks.{i}.w2")),
            Parameter(need(f"blocks.{i}.ln_attn_gain")),
            Parameter(need(f"blocks.{i}.ln_attn_bias")),
            Parameter(need(f"blocks.{i}.ln_ffn_gain")),
            Parameter(need(f"blocks.{i}.ln_ffn_bias")),
        )
        block.ffn_mask = need(f"blocks.{i}.ffn_mask")
        blocks.append(block)

    return EncoderModel(cfg, emb, Parameter(need("pos")), blocks,
                        Parameter(need("cls_w")), Parameter(need("cls_b")))
