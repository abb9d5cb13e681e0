"""Deterministic pseudo-random streams for reproducible benchmark data.

Uses the SplitMix64 output function as a counter-based generator so traces
and generated datasets are bit-reproducible across platforms, independent
of any numpy version's stream guarantees. Normal variates come from the
Box-Muller transform.
"""

from __future__ import annotations

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


def _mix(v: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer applied elementwise to uint64 values."""
    v = (v ^ (v >> np.uint64(30))) * _MIX1
    v = (v ^ (v >> np.uint64(27))) * _MIX2
    return v ^ (v >> np.uint64(31))


class RandomStream:
    """Seeded stream of uniforms and normals.

    The i-th raw word is mix(seed + i * 0x9E3779B97F4A7C15); the stream
    keeps a counter so successive calls never overlap.
    """

    def __init__(self, seed: int):
        self._seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._count = 0

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles uniform on [0, 1), each from the top 53 bits of a word."""
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        with np.errstate(over="ignore"):
            words = _mix(self._seed + idx * _GOLDEN)
        return (words >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def normals(self, n: int) -> np.ndarray:
        """n standard normal variates via Box-Muller pairs."""
        m = (n + 1) // 2
        u1 = np.maximum(self.uniforms(m), _INV_2_53)  # keep log() finite
        u2 = self.uniforms(m)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        out = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])
        return out[:n]

    def normal_matrix(self, rows: int, cols: int) -> np.ndarray:
        return self.normals(rows * cols).reshape(rows, cols)
