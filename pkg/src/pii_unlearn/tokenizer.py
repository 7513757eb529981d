"""Byte-level tokenizer: ids 0..255 are raw bytes, followed by three specials."""

from __future__ import annotations

from typing import Iterable

import numpy as np

PAD = 256
BOS = 257
EOS = 258
VOCAB_SIZE = 259
SPECIALS = (PAD, BOS, EOS)


def encode(text: str, bos: bool = True, eos: bool = False) -> np.ndarray:
    ids = list(text.encode("utf-8"))
    if bos:
        ids.insert(0, BOS)
    if eos:
        ids.append(EOS)
    return np.asarray(ids, dtype=np.int64)


def decode(ids: Iterable[int]) -> str:
    """Bytes up to the first EOS; PAD and BOS are dropped."""
    out = bytearray()
    for i in ids:
        i = int(i)
        if i == EOS:
            break
        if i < 256:
            out.append(i)
    return out.decode("utf-8", errors="replace")


def byte_len(text: str) -> int:
    return len(text.encode("utf-8"))


def vocab_surfaces() -> list[bytes]:
    """Surface string of every token id (specials map to empty bytes)."""
    return [bytes([i]) for i in range(256)] + [b"", b"", b""]
