"""Synthetic classification task and dataset file handling.

The ordered-pair task: label 1 iff marker token A (id 7) occurs before
marker token B (id 11), with both present exactly once. Presence alone is
uninformative, so solving the task requires attending to token order.
Sequences are padded to the model length with the reserved pad id 0, which
is masked out of attention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError
from .model import PAD_ID

MARKER_A = 7
MARKER_B = 11


@dataclass
class Dataset:
    train: list                 # (ids ndarray, label) pairs
    dev: list
    vocab: int
    n_classes: int = 2


def gen_synthetic(vocab: int, seq_len: int, count: int, seed: int,
                  dev_fraction: float = 0.2) -> Dataset:
    """Generate `count` ordered-pair examples, split train/dev.

    Labels alternate 0, 1, 0, 1, ... so any even-length slice is exactly
    class-balanced. Lengths vary uniformly in [seq_len // 2, seq_len];
    filler tokens are uniform over ids that are neither pad nor markers.
    """
    if vocab < 16:
        raise ParameterError(f"vocab must be >= 16, got {vocab}")
    if seq_len < 8:
        raise ParameterError(f"seq_len must be >= 8, got {seq_len}")
    rng = np.random.default_rng(seed)
    fillers = np.array([t for t in range(1, vocab) if t not in (MARKER_A, MARKER_B)])
    examples = []
    for i in range(count):
        label = i % 2
        length = int(rng.integers(seq_len // 2, seq_len + 1))
        ids = fillers[rng.integers(0, len(fillers), size=length)]
        first, second = sorted(rng.choice(length, size=2, replace=False))
        if label == 1:
            ids[first], ids[second] = MARKER_A, MARKER_B
        else:
            ids[first], ids[second] = MARKER_B, MARKER_A
        examples.append((ids, label))
    n_dev = int(count * dev_fraction)
    n_dev -= n_dev % 2  # keep the dev slice class-balanced
    split = count - n_dev
    return Dataset(train=examples[:split], dev=examples[split:], vocab=vocab)


def ordered_pair_label(ids) -> int:
    """Ground-truth rule for one sequence."""
    ids = list(ids)
    return int(ids.index(MARKER_A) < ids.index(MARKER_B))


def save_split(examples, path: str):
    """Write one split as "label<TAB>id id id ..." lines, UTF-8, LF."""
    from .checkpoint import write_text_atomic

    lines = [f"{label}\t{' '.join(str(t) for t in ids)}" for ids, label in examples]
    write_text_atomic(path, "\n".join(lines) + ("\n" if lines else ""))


def load_split(path: str, vocab: int, n_classes: int = 2) -> list:
    """Parse one split file, validating label and id ranges per line."""
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'label<TAB>ids', got {line!r}")
            try:
                label = int(parts[0])
                ids = np.array([int(t) for t in parts[1].split()], dtype=np.int64)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer field") from None
            if not 0 <= label < n_classes:
                raise DataError(
                    f"{path}:{lineno}: label {label} outside [0, {n_classes})"
                )
            if ids.size == 0:
                raise DataError(f"{path}:{lineno}: empty token sequence")
            if ids.min() < 0 or ids.max() >= vocab:
                raise DataError(
                    f"{path}:{lineno}: token id outside [0, {vocab})"
                )
            examples.append((ids, label))
    return examples


def load_dataset(train_path: str, dev_path: str | None, vocab: int,
                 n_classes: int = 2) -> Dataset:
    train = load_split(train_path, vocab, n_classes)
    dev = load_split(dev_path, vocab, n_classes) if dev_path else []
    return Dataset(train=train, dev=dev, vocab=vocab, n_classes=n_classes)


def batch_iter(examples, batch_size: int, seq_len: int, seed: int, epoch: int,
               yield_indices: bool = False):
    """Yield (ids, labels) batches in a seeded per-epoch shuffle order.

    Sequences are padded to seq_len with pad id 0; the encoder masks pad
    positions out of attention. The final batch may be short. With
    `yield_indices` the original example indices are prepended.
    """
    if batch_size < 1:
        raise ParameterError(f"batch size must be >= 1, got {batch_size}")
    order = np.random.default_rng([seed, epoch]).permutation(len(examples))
    for start in range(0, len(examples), batch_size):
        picked = order[start:start + batch_size]
        chunk = [examples[i] for i in picked]
        ids = np.full((len(chunk), seq_len), PAD_ID, dtype=np.int64)
        labels = np.empty(len(chunk), dtype=np.int64)
        for row, (seq, label) in enumerate(chunk):
            ids[row, :len(seq)] = seq
            labels[row] = label
        if yield_indices:
            yield picked, ids, labels
        else:
            yield ids, labels
