"""Mapping target-vocabulary mass onto inverter-vocabulary tokens."""

from __future__ import annotations

from typing import Sequence

import numpy as np


class AlignmentError(ValueError):
    pass


def alignment_map(target_surfaces: Sequence[bytes], inverter_surfaces: Sequence[bytes], fallback: int | None = None) -> np.ndarray:
    """Row-stochastic (V_target, V_inv) routing matrix.

    A target token whose surface exists in the inverter vocabulary maps there;
    otherwise its mass is split evenly over the byte decomposition. Empty
    surfaces (special tokens) map to the inverter token at the same index when
    it is also special, else to ``fallback``.
    """
    lookup: dict[bytes, int] = {}
    for j, s in enumerate(inverter_surfaces):
        if s and s not in lookup:
            lookup[s] = j
    vt, vi = len(target_surfaces), len(inverter_surfaces)
    a = np.zeros((vt, vi), dtype=np.float64)
    for i, s in enumerate(target_surfaces):
        if s in lookup:
            a[i, lookup[s]] = 1.0
        elif s:
            parts = [lookup.get(bytes([b])) for b in s]
            if any(p is None for p in parts):
                raise AlignmentError(f"target token {i} ({s!r}) has no inverter decomposition")
            for p in parts:
                a[i, p] += 1.0 / len(parts)
        elif i < vi and not inverter_surfaces[i]:
            a[i, i] = 1.0
        elif fallback is not None:
            a[i, fallback] = 1.0
        else:
            raise AlignmentError(f"special target token {i} has no inverter counterpart")
    check_total(a)
    return a


def check_total(a: np.ndarray) -> None:
    if a.ndim != 2 or np.any(a < 0) or not np.allclose(a.sum(axis=1), 1.0):
        raise AlignmentError("alignment must route every target token to at least one inverter token")
