"""Convolutional sparse approximation with a fixed dictionary.

For a signal ``s`` and filters ``d_k`` this module solves

    minimize_x  (1/2) || sum_k d_k (*) x_k - s ||_2^2 + lambda sum_k ||x_k||_1

where ``(*)`` is circular convolution, by ADMM on the split ``x = y``.  The
quadratic subproblem decouples per frequency into a diagonal-plus-rank-one
K-by-K system solved in O(K) via the Sherman-Morrison identity; the sparsity
subproblem is an elementwise soft threshold.  Over-relaxation and an adaptive
penalty are available and on by default.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

import numpy as np

from ocdl import spectral

if TYPE_CHECKING:
    from ocdl.dict_space import FilterBank


@dataclass
class AdmmSettings:
    """Shared knobs for every ADMM loop in the package.

    ``eps_abs``/``eps_rel`` feed the usual residual-based stopping rule,
    scaled by the square root of the number of constrained entries.  The
    penalty is rescaled by ``penalty_tau`` whenever one residual exceeds
    ``penalty_mu`` times the other, at most ``max_penalty_changes`` times
    per solve so the varying scheme still converges.
    """

    rho0: float = 10.0
    max_iter: int = 300
    eps_abs: float = 1e-4
    eps_rel: float = 1e-4
    relax: float = 1.8
    penalty_mu: float = 10.0
    penalty_tau: float = 2.0
    vary_penalty: bool = True
    max_penalty_changes: int = 30

    def validate(self) -> "AdmmSettings":
        if self.rho0 <= 0:
            raise ValueError("rho0 must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.eps_abs <= 0 or self.eps_rel <= 0:
            raise ValueError("tolerances must be positive")
        if not 1.0 <= self.relax < 2.0:
            raise ValueError("relax must lie in [1, 2)")
        if self.penalty_mu <= 1 or self.penalty_tau <= 1:
            raise ValueError("penalty_mu and penalty_tau must exceed 1")
        return self


@dataclass
class AdmmStatus:
    """Outcome of one ADMM solve."""

    iterations: int
    primal_residual: float
    dual_residual: float
    converged: bool
    final_rho: float


def soft_threshold(values, theta):
    """Elementwise shrinkage sign(v) * max(|v| - theta, 0); exact zeros inside."""
    if np.any(np.asarray(theta) < 0):
        raise ValueError("threshold must be nonnegative")
    return np.sign(values) * np.maximum(np.abs(values) - theta, 0.0)


def lambda_max(s: np.ndarray, bank: "FilterBank") -> float:
    """Smallest sparsity weight for which the all-zero maps are optimal.

    Equals the largest magnitude over filters and positions of the circular
    correlation of each zero-padded filter with the signal.  Returns 0 for an
    all-zero dictionary, which callers must reject before dividing by it.
    """
    s = np.asarray(s, dtype=np.float64)
    h, w = s.shape
    padded = spectral.pad_bank(bank.filters, h, w)
    corr = spectral.to_real(
        spectral.ifft2_stack(
            np.conj(spectral.fft2_stack(padded)) * spectral.forward_dft(s)[None]
        ),
        "lambda_max",
    )
    return float(np.max(np.abs(corr)))


def csc_objective(s: np.ndarray, bank: "FilterBank", maps: np.ndarray, lam: float) -> float:
    """Value of the sparse-coding objective at the given coefficient maps."""
    s = np.asarray(s, dtype=np.float64)
    maps = np.asarray(maps, dtype=np.float64)
    h, w = s.shape
    if maps.shape != (bank.k, h, w):
        raise ValueError(f"maps shape {maps.shape} does not match (K, H, W)")
    d_hat = spectral.fft2_stack(spectral.pad_bank(bank.filters, h, w))
    recon = spectral.to_real(
        spectral.inverse_dft(np.sum(d_hat * spectral.fft2_stack(maps), axis=0)),
        "csc_objective",
    )
    fit = 0.5 * float(np.sum((recon - s) ** 2))
    return fit + float(lam) * float(np.sum(np.abs(maps)))


def csc_solve(
    s: np.ndarray,
    bank: "FilterBank",
    lam: float,
    settings: AdmmSettings | None = None,
    x0: np.ndarray | None = None,
    callback: Callable[[dict], None] | None = None,
) -> tuple[np.ndarray, AdmmStatus]:
    """Solve the convolutional sparse approximation problem by ADMM.

    Parameters
    ----------
    s : (H, W) array
        Signal plane; must be finite.
    bank : FilterBank
        Fixed dictionary.
    lam : float
        Positive sparsity weight.
    settings : AdmmSettings, optional
        Solver knobs; defaults are used when omitted.
    x0 : (K, H, W) array, optional
        Warm-start maps; zeros when omitted (the deterministic default).
    callback : callable, optional
        Called once per iteration with a dict of copied iterates
        (``x``, ``y``, ``u``, ``u_prev``, ``rho``, ``iteration``); intended
        for diagnostics and tests.

    Returns
    -------
    maps : (K, H, W) array
        The thresholded (exactly sparse) solution variable.
    status : AdmmStatus
    """
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError("signal must be a 2-D plane")
    if not np.all(np.isfinite(s)):
        raise ValueError("signal must be finite")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    settings = (settings or AdmmSettings()).validate()

    k = bank.k
    h, w = s.shape
    p = h * w
    d_hat = spectral.fft2_stack(spectral.pad_bank(bank.filters, h, w))
    dsq = np.sum(np.abs(d_hat) ** 2, axis=0)  # (H, W)
    s_hat = spectral.forward_dft(s)
    rhs_data = np.conj(d_hat) * s_hat[None]

    if x0 is not None:
        y = np.array(x0, dtype=np.float64, copy=True)
        if y.shape != (k, h, w):
            raise ValueError("warm-start maps have the wrong shape")
    else:
        y = np.zeros((k, h, w))
    u = np.zeros((k, h, w))

    rho = settings.rho0
    changes = 0
    scale_dim = np.sqrt(k * p)
    r_norm = np.inf
    s_norm = np.inf
    converged = False
    iterations = 0

    for it in range(1, settings.max_iter + 1):
        iterations = it
        # Quadratic step: per-frequency rank-one solve of
        # (rho I + conj(dhat) dhat^T) chi = conj(dhat) shat + rho (yhat - uhat).
        rhs = rhs_data + rho * spectral.fft2_stack(y - u)
        cross = np.sum(d_hat * rhs, axis=0)
        x_hat = (rhs - np.conj(d_hat) * (cross / (rho + dsq))[None]) / rho
        x = spectral.to_real(spectral.ifft2_stack(x_hat), "csc x-update")

        x_rel = settings.relax * x + (1.0 - settings.relax) * y
        y_new = soft_threshold(x_rel + u, lam / rho)
        u_prev = u
        u = u + x_rel - y_new

        r_norm = float(np.linalg.norm(x - y_new))
        s_norm = float(rho * np.linalg.norm(y_new - y))
        y_old = y
        y = y_new

        if callback is not None:
            callback(
                {
                    "iteration": it,
                    "x": x.copy(),
                    "y": y.copy(),
                    "y_prev": y_old.copy(),
                    "u": u.copy(),
                    "u_prev": u_prev.copy(),
                    "rho": rho,
                }
            )

        eps_pri = scale_dim * settings.eps_abs + settings.eps_rel * max(
            np.linalg.norm(x), np.linalg.norm(y)
        )
        eps_dua = scale_dim * settings.eps_abs + settings.eps_rel * rho * np.linalg.norm(u)
        if r_norm <= eps_pri and s_norm <= eps_dua:
            converged = True
            break

        if settings.vary_penalty and changes < settings.max_penalty_changes:
            if r_norm > settings.penalty_mu * s_norm:
                rho *= settings.penalty_tau
                u = u / settings.penalty_tau
                changes += 1
            elif s_norm > settings.penalty_mu * r_norm:
                rho /= settings.penalty_tau
                u = u * settings.penalty_tau
                changes += 1

    status = AdmmStatus(
        iterations=iterations,
        primal_residual=r_norm,
        dual_residual=s_norm,
        converged=converged,
        final_rho=rho,
    )
    return y, status
