"""Online dictionary learning, method 1: joint per-sample/global optimization.

After sparse-coding each incoming sample, the per-sample dictionary and the
global dictionary are optimized jointly by a single ADMM loop.  Auxiliary
variables f (tied to the per-sample dictionary c) and g (tied to the global
dictionary d) live on the full lattice; c and d are their projections onto
the feasible set.  History enters only through per-filter running averages:
alpha of coefficient spectrum power, beta of coefficient-by-reconstruction
cross spectra.  Beta depends on the live f, so it is recomputed from the
frozen previous-sample value at every inner iteration and committed once the
sample's loop has finished.

Within an iteration the ordering is Gauss-Seidel: the f step sees the g of
the previous iteration (through its reconstruction spectra), the g step sees
the fresh f (through the recomputed beta).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from ocdl import spectral
from ocdl.csc import AdmmSettings, AdmmStatus, csc_objective, csc_solve, lambda_max
from ocdl.dict_space import FilterBank, init_dictionary, project_bank
from ocdl.history import HistoryPair, zero_history
from ocdl.persist import MetricsRow


@dataclass
class Alg1State:
    """Everything method 1 carries across samples."""

    bank: FilterBank
    history: HistoryPair
    settings: AdmmSettings
    lam: float | None
    seed: int = 0


def f_update(
    x_hat: np.ndarray,
    z_hat: np.ndarray,
    s_hat: np.ndarray,
    q_hat: np.ndarray,
    n: int,
    rho: float,
) -> np.ndarray:
    """Exact per-frequency minimizer of the per-sample auxiliary subproblem.

    Solves, independently at each frequency, the K-by-K normal system

        (diag(|xhat_k|^2 + N rho) + conj(xhat) xhat^T) f = rhs,
        rhs_k = conj(xhat_k) (zhat_k + shat) + N rho qhat_k,

    in O(K) via the rank-one inverse of a diagonal-plus-outer-product matrix.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    if n < 1:
        raise ValueError("sample index must be at least 1")
    power = np.abs(x_hat) ** 2
    a = 1.0 / (power + n * rho)
    rhs = np.conj(x_hat) * (z_hat + s_hat[None]) + (n * rho) * q_hat
    cross = np.sum(a * x_hat * rhs, axis=0)
    denom = 1.0 + np.sum(a * power, axis=0)
    return a * rhs - a * np.conj(x_hat) * (cross / denom)[None]


def g_update(
    alpha: np.ndarray, beta: np.ndarray, w_hat: np.ndarray, rho: float
) -> np.ndarray:
    """Per-filter, per-frequency scalar solve for the global auxiliary variable.

    The stationarity condition of the history-weighted least-squares plus
    proximal term gives ghat = (beta + rho * what) / (alpha + rho) exactly.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    return (beta + rho * w_hat) / (alpha + rho)


def alpha_update(alpha_prev: np.ndarray, x_hat: np.ndarray, n: int) -> np.ndarray:
    """Fold sample n's coefficient spectrum power into the running average."""
    if n < 1:
        raise ValueError("sample index must be at least 1")
    return ((n - 1) / n) * alpha_prev + (1.0 / n) * np.abs(x_hat) ** 2


def beta_recompute(
    beta_prev: np.ndarray, x_hat: np.ndarray, f_hat: np.ndarray, n: int
) -> np.ndarray:
    """Running cross-spectrum average using the live f of the current sample.

    Computes ((n-1)/n) beta_prev + (1/n) conj(xhat) (fhat xhat) without
    mutating ``beta_prev``; called once per inner iteration, and one final
    time to commit the sample.
    """
    if n < 1:
        raise ValueError("sample index must be at least 1")
    t_hat = f_hat * x_hat
    return ((n - 1) / n) * beta_prev + (1.0 / n) * np.conj(x_hat) * t_hat


def dict_step(
    state: Alg1State,
    s: np.ndarray,
    x: np.ndarray,
    x_hat: np.ndarray | None = None,
) -> tuple[Alg1State, AdmmStatus, FilterBank]:
    """One online dictionary update for the latest sample.

    Expects ``state.history.alpha`` to already include the current sample
    (committed by the caller right after sparse coding) while ``beta`` and
    the sample counter still describe the previous sample.  On exit the
    history is fully committed and the bank holds the new global dictionary.
    The per-sample dictionary is returned for inspection but deliberately
    kept out of the state: nothing of it survives to the next sample.
    """
    settings = state.settings.validate()
    s = np.asarray(s, dtype=np.float64)
    h, w = s.shape
    k = state.bank.k
    m = state.bank.m
    n = state.history.n + 1

    if x_hat is None:
        x_hat = spectral.fft2_stack(np.asarray(x, dtype=np.float64))
    s_hat = spectral.forward_dft(s)
    alpha = state.history.alpha
    beta_prev = state.history.beta

    d = state.bank.filters.copy()
    c = d.copy()
    d_pad = spectral.pad_bank(d, h, w)
    c_pad = d_pad.copy()
    g_hat = spectral.fft2_stack(d_pad)
    f_hat = g_hat
    u = np.zeros((k, h, w))
    v = np.zeros((k, h, w))

    rho = settings.rho0
    changes = 0
    scale_dim = np.sqrt(2 * k * h * w)
    r_norm = np.inf
    s_norm = np.inf
    converged = False
    iterations = 0

    for it in range(1, settings.max_iter + 1):
        iterations = it
        z_hat = g_hat * x_hat
        q_hat = spectral.fft2_stack(c_pad - u)
        f_hat = f_update(x_hat, z_hat, s_hat, q_hat, n, rho)
        beta_live = beta_recompute(beta_prev, x_hat, f_hat, n)
        w_hat = spectral.fft2_stack(d_pad - v)
        g_hat = g_update(alpha, beta_live, w_hat, rho)

        f = spectral.to_real(spectral.ifft2_stack(f_hat), "f-update")
        g = spectral.to_real(spectral.ifft2_stack(g_hat), "g-update")
        f_rel = settings.relax * f + (1.0 - settings.relax) * c_pad
        g_rel = settings.relax * g + (1.0 - settings.relax) * d_pad
        c = project_bank(f_rel + u, m)
        d = project_bank(g_rel + v, m)
        c_pad_new = spectral.pad_bank(c, h, w)
        d_pad_new = spectral.pad_bank(d, h, w)
        u = u + f_rel - c_pad_new
        v = v + g_rel - d_pad_new

        r_norm = float(
            np.sqrt(
                np.sum((f - c_pad_new) ** 2) + np.sum((g - d_pad_new) ** 2)
            )
        )
        s_norm = float(
            rho
            * np.sqrt(
                np.sum((c_pad_new - c_pad) ** 2) + np.sum((d_pad_new - d_pad) ** 2)
            )
        )
        c_pad = c_pad_new
        d_pad = d_pad_new

        aux_norm = np.sqrt(np.sum(f**2) + np.sum(g**2))
        prim_norm = np.sqrt(np.sum(c_pad**2) + np.sum(d_pad**2))
        dual_norm = np.sqrt(np.sum(u**2) + np.sum(v**2))
        eps_pri = scale_dim * settings.eps_abs + settings.eps_rel * max(
            aux_norm, prim_norm
        )
        eps_dua = scale_dim * settings.eps_abs + settings.eps_rel * rho * dual_norm
        if r_norm <= eps_pri and s_norm <= eps_dua:
            converged = True
            break

        if settings.vary_penalty and changes < settings.max_penalty_changes:
            if r_norm > settings.penalty_mu * s_norm:
                rho *= settings.penalty_tau
                u /= settings.penalty_tau
                v /= settings.penalty_tau
                changes += 1
            elif s_norm > settings.penalty_mu * r_norm:
                rho /= settings.penalty_tau
                u *= settings.penalty_tau
                v *= settings.penalty_tau
                changes += 1

    state.history = HistoryPair(alpha, beta_recompute(beta_prev, x_hat, f_hat, n), n)
    state.bank = FilterBank(d)
    status = AdmmStatus(
        iterations=iterations,
        primal_residual=r_norm,
        dual_residual=s_norm,
        converged=converged,
        final_rho=rho,
    )
    return state, status, FilterBank(c)


def train(
    dataset: Iterable[np.ndarray],
    k: int | None = None,
    m: int = 8,
    settings: AdmmSettings | None = None,
    lam: float | None = None,
    lambda_frac: float = 0.1,
    seed: int = 0,
    state: Alg1State | None = None,
    rescue_dead_filters: bool = False,
    accurate_objective: bool = False,
    on_sample: Callable[[Alg1State, MetricsRow], None] | None = None,
) -> tuple[Alg1State, list[MetricsRow]]:
    """One sequential pass of method 1 over a stream of image planes.

    The sparsity weight is fixed from the first streamed image as
    ``lambda_frac`` times its all-zero threshold unless ``lam`` is given.
    Pass ``state`` to continue an earlier run; its sample counter determines
    the numbering of the new samples.  ``on_sample`` is invoked after each
    completed sample with the live state and that sample's metrics row.

    The logged objective is the one attained while coding the sample (under
    the dictionary that coded it); ``accurate_objective`` recodes the sample
    under the updated dictionary instead, which is slower but matches what a
    later evaluation of the final state reports.
    """
    settings = (settings or AdmmSettings()).validate()
    rows: list[MetricsRow] = []
    streaks = None

    for plane in dataset:
        plane = np.asarray(plane, dtype=np.float64)
        if state is None:
            if k is None:
                raise ValueError("filter count k is required for a fresh run")
            state = Alg1State(
                bank=init_dictionary(k, m, seed),
                history=zero_history(k, *plane.shape),
                settings=settings,
                lam=lam,
                seed=seed,
            )
        if state.lam is None:
            lmax = lambda_max(plane, state.bank)
            if lmax <= 0:
                raise ValueError("first image gives a zero sparsity threshold")
            state.lam = lambda_frac * lmax
        if streaks is None:
            streaks = np.zeros(state.bank.k, dtype=int)

        started = time.perf_counter()
        maps, cs = csc_solve(plane, state.bank, state.lam, state.settings)
        objective = csc_objective(plane, state.bank, maps, state.lam)
        x_hat = spectral.fft2_stack(maps)
        n = state.history.n + 1
        state.history.alpha = alpha_update(state.history.alpha, x_hat, n)
        state, ds, _ = dict_step(state, plane, maps, x_hat=x_hat)
        if rescue_dead_filters:
            streaks = _rescue(state, streaks, n)
        if accurate_objective:
            fresh, _ = csc_solve(plane, state.bank, state.lam, state.settings)
            objective = csc_objective(plane, state.bank, fresh, state.lam)

        row = MetricsRow(
            sample_index=state.history.n,
            csc_iterations=cs.iterations,
            dict_iterations=ds.iterations,
            csc_objective=float(objective),
            approx_fit_term=_fit_term(plane, state.bank, x_hat),
            wall_time_seconds=time.perf_counter() - started,
        )
        rows.append(row)
        if on_sample is not None:
            on_sample(state, row)

    if state is None:
        raise ValueError("empty dataset")
    return state, rows


def _fit_term(s: np.ndarray, bank: FilterBank, x_hat: np.ndarray) -> float:
    """Data-fidelity of the updated dictionary on the current sample's maps."""
    h, w = s.shape
    d_hat = spectral.fft2_stack(spectral.pad_bank(bank.filters, h, w))
    recon = spectral.to_real(
        spectral.inverse_dft(np.sum(d_hat * x_hat, axis=0)), "fit term"
    )
    return 0.5 * float(np.sum((recon - s) ** 2))


def _rescue(state, streaks, sample_index):
    """Re-randomize filters that stayed identically zero for five samples."""
    filters = state.bank.filters
    zero = np.all(filters == 0.0, axis=(1, 2))
    streaks = np.where(zero, streaks + 1, 0)
    if np.any(streaks >= 5):
        filters = filters.copy()
        for idx in np.nonzero(streaks >= 5)[0]:
            rng = np.random.default_rng([state.seed, sample_index, int(idx)])
            fresh = rng.standard_normal((state.bank.m, state.bank.m))
            filters[idx] = fresh / np.linalg.norm(fresh)
            streaks[idx] = 0
        state.bank = FilterBank(filters)
    return streaks
