"""Online dictionary learning, method 2: exact latest-sample fit plus refit.

Per sample, three stages run in a fixed order.  First the global dictionary
is re-optimized against an objective that treats the newest sample exactly
and all older samples through per-filter history averages; the per-frequency
systems stay diagonal-plus-rank-one because only the newest coefficient
spectra couple the filters.  Second, a per-sample dictionary is refit to the
newest sample alone (a single-signal dictionary problem with the coefficient
maps held fixed), initialized at the just-updated global dictionary so its
fit cannot get worse.  Third, the history folds in the newest coefficient
spectra and the reconstruction spectra of that per-sample dictionary, after
which the per-sample dictionary is discarded.

The history pair here uses the 1/(n+1) normalization: after n samples,
alpha equals the sum of coefficient power spectra divided by n+1, which is
exactly the weight the dictionary objective puts on its history term.
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
class Alg2State:
    """Everything method 2 carries across samples."""

    bank: FilterBank
    history: HistoryPair
    settings: AdmmSettings
    lam: float | None
    seed: int = 0


def g_update(
    x_hat: np.ndarray,
    s_hat: np.ndarray,
    alpha_prev: np.ndarray,
    beta_prev: np.ndarray,
    e_hat: np.ndarray,
    n: int,
    rho: float,
) -> np.ndarray:
    """Exact per-frequency solve of the exact-latest-plus-history subproblem.

    Solves (diag(alpha_prev_k + rho) + (1/N) conj(xhat) xhat^T) g = rhs with
    rhs_k = (1/N) conj(xhat_k) shat + beta_prev_k + rho ehat_k, in O(K) per
    frequency via the rank-one identity.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    if n < 1:
        raise ValueError("sample index must be at least 1")
    b = 1.0 / (alpha_prev + rho)
    rhs = (1.0 / n) * np.conj(x_hat) * s_hat[None] + beta_prev + rho * e_hat
    cross = np.sum(b * x_hat * rhs, axis=0)
    denom = n + np.sum(b * np.abs(x_hat) ** 2, axis=0)
    return b * rhs - b * np.conj(x_hat) * (cross / denom)[None]


def d_update(
    state: Alg2State,
    s: np.ndarray,
    x: np.ndarray,
    x_hat: np.ndarray | None = None,
    callback=None,
) -> tuple[FilterBank, AdmmStatus]:
    """Re-optimize the global dictionary for the newest sample.

    ADMM with the auxiliary variable solved by :func:`g_update` and the
    dictionary obtained by projection onto the feasible set.  Does not touch
    the history; returns the new feasible bank.  ``callback`` receives a
    dict of copied iterates once per iteration (diagnostics and tests).
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
    alpha_prev = state.history.alpha
    beta_prev = state.history.beta

    d = state.bank.filters.copy()
    d_pad = spectral.pad_bank(d, h, w)
    v = np.zeros((k, h, w))
    rho = settings.rho0
    changes = 0
    scale_dim = np.sqrt(k * h * w)
    r_norm = np.inf
    s_norm = np.inf
    converged = False
    iterations = 0

    for it in range(1, settings.max_iter + 1):
        iterations = it
        e_hat = spectral.fft2_stack(d_pad - v)
        g_hat = g_update(x_hat, s_hat, alpha_prev, beta_prev, e_hat, n, rho)
        g = spectral.to_real(spectral.ifft2_stack(g_hat), "dictionary g-update")
        g_rel = settings.relax * g + (1.0 - settings.relax) * d_pad
        d = project_bank(g_rel + v, m)
        d_pad_new = spectral.pad_bank(d, h, w)
        v_prev = v
        v = v + g_rel - d_pad_new

        r_norm = float(np.linalg.norm(g - d_pad_new))
        s_norm = float(rho * np.linalg.norm(d_pad_new - d_pad))
        d_prev_pad = d_pad
        d_pad = d_pad_new
        if callback is not None:
            callback(
                {
                    "iteration": it,
                    "g": g.copy(),
                    "d": d_pad.copy(),
                    "d_prev": d_prev_pad.copy(),
                    "v": v.copy(),
                    "v_prev": v_prev.copy(),
                    "rho": rho,
                }
            )

        eps_pri = scale_dim * settings.eps_abs + settings.eps_rel * max(
            np.linalg.norm(g), np.linalg.norm(d_pad)
        )
        eps_dua = scale_dim * settings.eps_abs + settings.eps_rel * rho * np.linalg.norm(v)
        if r_norm <= eps_pri and s_norm <= eps_dua:
            converged = True
            break

        if settings.vary_penalty and changes < settings.max_penalty_changes:
            if r_norm > settings.penalty_mu * s_norm:
                rho *= settings.penalty_tau
                v /= settings.penalty_tau
                changes += 1
            elif s_norm > settings.penalty_mu * r_norm:
                rho /= settings.penalty_tau
                v *= settings.penalty_tau
                changes += 1

    status = AdmmStatus(
        iterations=iterations,
        primal_residual=r_norm,
        dual_residual=s_norm,
        converged=converged,
        final_rho=rho,
    )
    return FilterBank(d), status


def c_update(
    s: np.ndarray,
    x: np.ndarray,
    d_init: FilterBank,
    settings: AdmmSettings | None = None,
    x_hat: np.ndarray | None = None,
) -> tuple[FilterBank, AdmmStatus]:
    """Refit a per-sample dictionary to the newest sample, maps held fixed.

    Minimizes the single-signal fit (1/2P) || sum_k c_k (*) x_k - s ||^2 over
    feasible filters by ADMM.  The 1/P data scale is compensated by running
    the loop at penalty rho/P so the default penalty keeps its usual
    strength.  Initialized at ``d_init``, so the achieved fit never exceeds
    the fit of ``d_init`` itself (up to solver tolerance).
    """
    settings = (settings or AdmmSettings()).validate()
    s = np.asarray(s, dtype=np.float64)
    h, w = s.shape
    p = h * w
    k = d_init.k
    m = d_init.m

    if x_hat is None:
        x_hat = spectral.fft2_stack(np.asarray(x, dtype=np.float64))
    s_hat = spectral.forward_dft(s)
    power = np.abs(x_hat) ** 2

    c = d_init.filters.copy()
    c_pad = spectral.pad_bank(c, h, w)
    u = np.zeros((k, h, w))
    rho = settings.rho0 / p
    changes = 0
    scale_dim = np.sqrt(k * p)
    r_norm = np.inf
    s_norm = np.inf
    converged = False
    iterations = 0

    for it in range(1, settings.max_iter + 1):
        iterations = it
        # Per-frequency solve of ((1/P) conj(xhat) xhat^T + rho I) g = rhs,
        # rhs = (1/P) conj(xhat) shat + rho (chat - uhat).
        rhs = (1.0 / p) * np.conj(x_hat) * s_hat[None] + rho * spectral.fft2_stack(
            c_pad - u
        )
        cross = np.sum(x_hat * rhs, axis=0)
        g_hat = (rhs - np.conj(x_hat) * (cross / (rho * p + np.sum(power, axis=0)))[None]) / rho
        g = spectral.to_real(spectral.ifft2_stack(g_hat), "per-sample refit")

        g_rel = settings.relax * g + (1.0 - settings.relax) * c_pad
        c = project_bank(g_rel + u, m)
        c_pad_new = spectral.pad_bank(c, h, w)
        u = u + g_rel - c_pad_new

        r_norm = float(np.linalg.norm(g - c_pad_new))
        s_norm = float(rho * np.linalg.norm(c_pad_new - c_pad))
        c_pad = c_pad_new

        eps_pri = scale_dim * settings.eps_abs + settings.eps_rel * max(
            np.linalg.norm(g), np.linalg.norm(c_pad)
        )
        eps_dua = scale_dim * settings.eps_abs + settings.eps_rel * rho * np.linalg.norm(u)
        if r_norm <= eps_pri and s_norm <= eps_dua:
            converged = True
            break

        if settings.vary_penalty and changes < settings.max_penalty_changes:
            if r_norm > settings.penalty_mu * s_norm:
                rho *= settings.penalty_tau
                u /= settings.penalty_tau
                changes += 1
            elif s_norm > settings.penalty_mu * r_norm:
                rho /= settings.penalty_tau
                u *= settings.penalty_tau
                changes += 1

    status = AdmmStatus(
        iterations=iterations,
        primal_residual=r_norm,
        dual_residual=s_norm,
        converged=converged,
        final_rho=rho,
    )
    return FilterBank(c), status


def history_update(
    history: HistoryPair, x_hat: np.ndarray, r_hat: np.ndarray
) -> HistoryPair:
    """Fold the newest sample into the running averages (1/(n+1) convention).

    ``r_hat`` holds the per-filter reconstruction spectra of the freshly
    refit per-sample dictionary.  Committed exactly once per sample.
    """
    n = history.n + 1
    alpha = (n / (n + 1)) * history.alpha + (1.0 / (n + 1)) * np.abs(x_hat) ** 2
    beta = (n / (n + 1)) * history.beta + (1.0 / (n + 1)) * np.conj(x_hat) * r_hat
    return HistoryPair(alpha, beta, n)


def train(
    dataset: Iterable[np.ndarray],
    k: int | None = None,
    m: int = 8,
    settings: AdmmSettings | None = None,
    lam: float | None = None,
    lambda_frac: float = 0.1,
    seed: int = 0,
    state: Alg2State | None = None,
    rescue_dead_filters: bool = False,
    accurate_objective: bool = False,
    on_sample: Callable[[Alg2State, MetricsRow], None] | None = None,
) -> tuple[Alg2State, list[MetricsRow]]:
    """One sequential pass of method 2 over a stream of image planes.

    Per sample: sparse-code under the current dictionary, update the global
    dictionary, refit the per-sample dictionary, commit the history.  The
    sparsity weight comes from the first streamed image unless ``lam`` is
    given; ``state`` continues an earlier run.  ``accurate_objective``
    recodes each sample under the updated dictionary for the logged metric.
    """
    settings = (settings or AdmmSettings()).validate()
    rows: list[MetricsRow] = []
    streaks = None

    for plane in dataset:
        plane = np.asarray(plane, dtype=np.float64)
        if state is None:
            if k is None:
                raise ValueError("filter count k is required for a fresh run")
            state = Alg2State(
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

        new_bank, ds = d_update(state, plane, maps, x_hat=x_hat)
        state.bank = new_bank
        c_bank, cs2 = c_update(plane, maps, state.bank, state.settings, x_hat=x_hat)
        h, w = plane.shape
        r_hat = spectral.fft2_stack(spectral.pad_bank(c_bank.filters, h, w)) * x_hat
        state.history = history_update(state.history, x_hat, r_hat)
        if rescue_dead_filters:
            from ocdl.alg1 import _rescue

            streaks = _rescue(state, streaks, state.history.n)
        if accurate_objective:
            fresh, _ = csc_solve(plane, state.bank, state.lam, state.settings)
            objective = csc_objective(plane, state.bank, fresh, state.lam)

        row = MetricsRow(
            sample_index=state.history.n,
            csc_iterations=cs.iterations,
            dict_iterations=ds.iterations + cs2.iterations,
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
    h, w = s.shape
    d_hat = spectral.fft2_stack(spectral.pad_bank(bank.filters, h, w))
    recon = spectral.to_real(
        spectral.inverse_dft(np.sum(d_hat * x_hat, axis=0)), "fit term"
    )
    return 0.5 * float(np.sum((recon - s) ** 2))
