"""The dictionary feasible set, projections onto it, and test-set evaluation.

A filter is feasible when its support fits in an m-by-m corner patch and its
l2 norm is at most one.  Projection first crops to the support, then rescales
onto the unit ball when necessary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Norms within this slack of 1 are treated as feasible, which makes the ball
# projection an exact fixed point under repeated application.
_NORM_SLACK = 1e-12


@dataclass(frozen=True)
class FilterBank:
    """A stack of K square filters with support side m, shape (K, m, m)."""

    filters: np.ndarray

    def __post_init__(self):
        filters = np.asarray(self.filters, dtype=np.float64)
        if filters.ndim != 3 or filters.shape[1] != filters.shape[2]:
            raise ValueError(f"expected (K, m, m) filter stack, got {filters.shape}")
        if filters.shape[0] < 1 or filters.shape[1] < 1:
            raise ValueError("a bank needs at least one nonempty filter")
        if not np.all(np.isfinite(filters)):
            raise ValueError("filters must be finite")
        norms = np.linalg.norm(filters.reshape(filters.shape[0], -1), axis=1)
        if np.any(norms > 1.0 + _NORM_SLACK):
            raise ValueError(f"filter norm {norms.max():.17g} exceeds the unit ball")
        object.__setattr__(self, "filters", filters)

    @property
    def k(self) -> int:
        return self.filters.shape[0]

    @property
    def m(self) -> int:
        return self.filters.shape[1]


@dataclass
class EvalReport:
    """Objective values of the sparse-coding problem over an image set."""

    per_image_objective: list[float] = field(default_factory=list)
    mean_objective: float = float("nan")
    lambda_used: float = float("nan")


def project_filter(candidate: np.ndarray, m: int) -> np.ndarray:
    """Euclidean projection of a plane onto the feasible set, as an m-by-m patch.

    Entries outside the top-left m-by-m support are zeroed (dropped), then the
    patch is rescaled to unit norm only if it lies outside the unit ball.
    Idempotent: projecting a projection returns it bit-exactly.
    """
    candidate = np.asarray(candidate, dtype=np.float64)
    if m > candidate.shape[0] or m > candidate.shape[1]:
        raise ValueError(f"support {m} exceeds candidate {candidate.shape}")
    patch = candidate[:m, :m].copy()
    norm = float(np.linalg.norm(patch))
    if norm > 1.0 + _NORM_SLACK:
        patch /= norm
    return patch


def project_bank(candidates: np.ndarray, m: int) -> np.ndarray:
    """Per-filter projection of a (K, H, W) stack; returns (K, m, m).

    Delegates to :func:`project_filter` so the two entry points are
    bit-identical (batched norm reductions round differently).
    """
    candidates = np.asarray(candidates, dtype=np.float64)
    return np.stack([project_filter(c, m) for c in candidates])


def init_dictionary(k: int, m: int, seed: int = 0) -> FilterBank:
    """Unit-norm Gaussian random filters; deterministic for a given seed."""
    if k < 1 or m < 1:
        raise ValueError("need at least one filter of side at least 1")
    rng = np.random.default_rng(seed)
    filters = rng.standard_normal((k, m, m))
    norms = np.linalg.norm(filters.reshape(k, -1), axis=1)
    norms[norms == 0.0] = 1.0
    return FilterBank(filters / norms[:, None, None])


def evaluate(dataset, bank: FilterBank, lam: float, settings=None) -> EvalReport:
    """Sparse-code every image with a fixed bank and report the objectives.

    ``dataset`` is any iterable of 2-D arrays; images are processed in the
    order given and the mean is the arithmetic mean of the per-image values.
    """
    from ocdl.csc import csc_objective, csc_solve

    per_image = []
    for plane in dataset:
        maps, _ = csc_solve(plane, bank, lam, settings)
        per_image.append(float(csc_objective(plane, bank, maps, lam)))
    if not per_image:
        raise ValueError("empty dataset")
    return EvalReport(
        per_image_objective=per_image,
        mean_objective=float(np.mean(per_image)),
        lambda_used=float(lam),
    )
