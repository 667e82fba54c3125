"""Cross-sample trainer state: per-filter frequency-domain running averages.

The only state an online trainer carries between samples, besides the
dictionary itself, is one real plane per filter accumulating coefficient
spectrum power and one complex plane per filter accumulating the cross terms
with reconstruction spectra.  Total size is therefore linear in K times the
lattice size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class HistoryPair:
    """Running averages (alpha, beta) over the first ``n`` samples.

    ``alpha`` is (K, H, W) real and elementwise nonnegative (it averages
    squared magnitudes); ``beta`` is (K, H, W) complex.  Both start at zero
    with ``n = 0``.  The two trainers give the pair different normalization
    conventions; see their modules.
    """

    alpha: np.ndarray
    beta: np.ndarray
    n: int = 0

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.complex128)
        if self.alpha.shape != self.beta.shape or self.alpha.ndim != 3:
            raise ValueError("alpha and beta must share a (K, H, W) shape")
        if self.n < 0:
            raise ValueError("sample count must be nonnegative")
        if np.any(self.alpha < 0):
            raise ValueError("alpha must be elementwise nonnegative")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.alpha.shape

    def copy(self) -> "HistoryPair":
        return HistoryPair(self.alpha.copy(), self.beta.copy(), self.n)


def zero_history(k: int, height: int, width: int) -> HistoryPair:
    """The empty history: zero arrays, zero samples seen."""
    return HistoryPair(
        np.zeros((k, height, width)),
        np.zeros((k, height, width), dtype=np.complex128),
        0,
    )
