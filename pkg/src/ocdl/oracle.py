"""Slow, independent reference computations for the test surface.

Nothing here is wired into the CLI or the training paths.  Each function is
written for transparency rather than speed: naive double loops, dense linear
algebra, explicit batch sums.  Size guards keep accidental large runs from
happening.
"""

from __future__ import annotations

import numpy as np

from ocdl import spectral
from ocdl.csc import AdmmSettings, csc_objective, csc_solve
from ocdl.dict_space import FilterBank, EvalReport, evaluate, init_dictionary, project_bank


def naive_dft2(plane: np.ndarray) -> np.ndarray:
    """O(P^2) double-sum DFT, the definitional form of the transform."""
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape
    out = np.zeros((h, w), dtype=np.complex128)
    for u in range(h):
        for v in range(w):
            acc = 0.0 + 0.0j
            for i in range(h):
                for j in range(w):
                    acc += plane[i, j] * np.exp(-2j * np.pi * (u * i / h + v * j / w))
            out[u, v] = acc
    return out


def spatial_circular_convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Direct double-loop circular convolution on the periodic lattice."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("lattice mismatch")
    h, w = a.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for p in range(h):
                for q in range(w):
                    acc += a[p, q] * b[(i - p) % h, (j - q) % w]
            out[i, j] = acc
    return out


def spatial_circular_correlate(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Direct double-loop circular cross-correlation."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("lattice mismatch")
    h, w = a.shape
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for p in range(h):
                for q in range(w):
                    acc += a[p, q] * b[(i + p) % h, (j + q) % w]
            out[i, j] = acc
    return out


def dense_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a small dense complex system, refusing ill-conditioned inputs.

    The returned solution is verified to leave a relative residual of at
    most 1e-10; anything worse raises, so a passing call is itself a check.
    """
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if np.linalg.cond(a) > 1e12:
        raise np.linalg.LinAlgError("matrix is singular to working precision")
    x = np.linalg.solve(a, b)
    resid = np.linalg.norm(a @ x - b)
    if resid > 1e-10 * max(1e-300, np.linalg.norm(b)):
        raise np.linalg.LinAlgError(f"solve residual {resid:.3e} too large")
    return x


def history_mean_power(x_hats: list[np.ndarray], denom: int) -> np.ndarray:
    """Batch form of the running |x-spectrum|^2 average: sum/denom."""
    return sum(np.abs(x) ** 2 for x in x_hats) / float(denom)


def history_mean_cross(
    x_hats: list[np.ndarray], other_hats: list[np.ndarray], denom: int
) -> np.ndarray:
    """Batch form of the running conj(x) * other average: sum/denom."""
    return sum(np.conj(x) * t for x, t in zip(x_hats, other_hats)) / float(denom)


def accumulate_normal_systems(
    x_hat_list: list[np.ndarray], s_hat_list: list[np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Per-frequency K-by-K normal systems of the batch dictionary fit.

    Returns ``(A, b)`` with ``A`` of shape (P, K, K) and ``b`` of shape
    (P, K), normalized by 1/N so that for a single sample the system
    matches the exact latest-sample dictionary fit at the same penalty.
    ``A[p]`` accumulates the conjugate outer products of the coefficient
    spectra and is Hermitian positive semidefinite by construction; ``b[p]``
    accumulates conj(x-spectrum) times the signal spectrum.
    """
    n = len(x_hat_list)
    if n == 0:
        raise ValueError("empty sample list")
    k = x_hat_list[0].shape[0]
    p = x_hat_list[0].shape[1] * x_hat_list[0].shape[2]
    a = np.zeros((p, k, k), dtype=np.complex128)
    b = np.zeros((p, k), dtype=np.complex128)
    for x_hat, s_hat in zip(x_hat_list, s_hat_list):
        chi = x_hat.reshape(k, p).T  # (P, K)
        a += np.conj(chi[:, :, None]) * chi[:, None, :]
        b += np.conj(chi) * s_hat.reshape(p)[:, None]
    return a / n, b / n


def _tiny_guard(shapes, n, k):
    if n > 8 or k > 8:
        raise ValueError("desk-scale oracle: at most 8 samples and 8 filters")
    for h, w in shapes:
        if h > 64 or w > 64:
            raise ValueError("desk-scale oracle: lattice capped at 64x64")


def batch_cdl_tiny(
    dataset,
    k: int,
    m: int,
    lam: float,
    settings: AdmmSettings | None = None,
    alternations: int = 20,
    seed: int = 0,
    initial_bank: FilterBank | None = None,
) -> tuple[FilterBank, EvalReport]:
    """Batch dictionary learning on a tiny corpus by explicit alternation.

    Alternates sparse coding of every sample with a dictionary update that
    solves the accumulated per-frequency normal systems by dense linear
    algebra inside an ADMM loop (constraint split onto the feasible set).
    Returns the final bank and the corpus evaluation under it.
    """
    settings = settings or AdmmSettings()
    planes = [np.asarray(s, dtype=np.float64) for s in dataset]
    _tiny_guard([s.shape for s in planes], len(planes), k)
    if not planes:
        raise ValueError("empty dataset")
    h, w = planes[0].shape
    p = h * w
    bank = initial_bank if initial_bank is not None else init_dictionary(k, m, seed)
    s_hats = [spectral.forward_dft(s) for s in planes]

    for _ in range(alternations):
        x_hats = []
        for s in planes:
            maps, _ = csc_solve(s, bank, lam, settings)
            x_hats.append(spectral.fft2_stack(maps))
        a_sys, b_sys = accumulate_normal_systems(x_hats, s_hats)
        bank = _dict_update_dense(a_sys, b_sys, bank, h, w, settings)

    return bank, evaluate(planes, bank, lam, settings)


def _dict_update_dense(a_sys, b_sys, bank, h, w, settings):
    """ADMM dictionary update against accumulated normal systems.

    The quadratic term is handled per frequency with dense solves of
    (A + rho I) delta = b + rho * (constraint target); the feasibility step
    is the usual support crop plus unit-ball scaling.
    """
    p, k, _ = a_sys.shape
    m = bank.m
    rho = settings.rho0
    d = bank.filters.copy()
    d_pad = spectral.pad_bank(d, h, w)
    v = np.zeros((k, h, w))
    eye = np.eye(k)
    changes = 0
    for _ in range(settings.max_iter):
        e_hat = spectral.fft2_stack(d_pad - v)
        rhs = b_sys + rho * e_hat.reshape(k, p).T
        delta = np.linalg.solve(a_sys + rho * eye[None], rhs[:, :, None])[:, :, 0]
        g_hat = delta.T.reshape(k, h, w)
        g = spectral.to_real(spectral.ifft2_stack(g_hat), "batch dictionary update")
        g_rel = settings.relax * g + (1.0 - settings.relax) * d_pad
        d_new = project_bank(g_rel + v, m)
        d_pad_new = spectral.pad_bank(d_new, h, w)
        v = v + g_rel - d_pad_new
        r_norm = np.linalg.norm(g - d_pad_new)
        s_norm = rho * np.linalg.norm(d_pad_new - d_pad)
        d_pad = d_pad_new
        d = d_new
        dim = np.sqrt(k * h * w)
        eps_pri = dim * settings.eps_abs + settings.eps_rel * max(
            np.linalg.norm(g), np.linalg.norm(d_pad)
        )
        eps_dua = dim * settings.eps_abs + settings.eps_rel * rho * np.linalg.norm(v)
        if r_norm <= eps_pri and s_norm <= eps_dua:
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
    return FilterBank(d)


def subgradient_csc(
    s: np.ndarray,
    bank: FilterBank,
    lam: float,
    steps: int = 20000,
) -> np.ndarray:
    """Diminishing-step subgradient descent on the sparse-coding objective.

    Independent of the ADMM path: iterates x <- x - t_i * (grad + lam * sign(x))
    with t_i = (1/L)/sqrt(i+1), tracking the best iterate by objective value.
    Intended for small instances only.
    """
    s = np.asarray(s, dtype=np.float64)
    h, w = s.shape
    if h * w > 4096 or bank.k > 8:
        raise ValueError("desk-scale oracle: instance too large")
    k = bank.k
    d_hat = spectral.fft2_stack(spectral.pad_bank(bank.filters, h, w))
    s_hat = spectral.forward_dft(s)
    lipschitz = float(np.max(np.sum(np.abs(d_hat) ** 2, axis=0)))
    step0 = 1.0 / max(lipschitz, 1e-12)

    x = np.zeros((k, h, w))
    best = x.copy()
    best_obj = csc_objective(s, bank, x, lam)
    for i in range(steps):
        x_hat = spectral.fft2_stack(x)
        r_hat = np.sum(d_hat * x_hat, axis=0) - s_hat
        grad = spectral.to_real(
            spectral.ifft2_stack(np.conj(d_hat) * r_hat[None]), "subgradient"
        )
        x = x - step0 / np.sqrt(i + 1.0) * (grad + lam * np.sign(x))
        obj = csc_objective(s, bank, x, lam)
        if obj < best_obj:
            best_obj = obj
            best = x.copy()
    return best
