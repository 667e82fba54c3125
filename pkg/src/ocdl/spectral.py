"""2-D spectral substrate: DFTs, circular convolution/correlation, filter padding.

Every frequency-domain formula in this package relies on one transform
convention: unnormalized forward DFT and 1/P-scaled inverse (the numpy
default), with circular boundary conditions.  Under that convention the
spatial and spectral forms of every objective agree exactly, which is what
makes the per-frequency solvers in the other modules legitimate.

Filters are anchored at the top-left corner of the lattice when zero-padded;
a global cyclic shift of all filters is a symmetry of the convolutional
model, so one corner is fixed for determinism.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

_threads = 1


def set_thread_count(n: int) -> None:
    """Cap the worker threads used for batched transforms (default 1).

    Results are bitwise independent of the value: each plane in a batch is
    transformed by the same routine and written to a disjoint output slice.
    """
    global _threads
    n = int(n)
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = n


def thread_count() -> int:
    return _threads


def forward_dft(plane: np.ndarray) -> np.ndarray:
    """Unnormalized 2-D DFT of a real or complex plane."""
    return np.fft.fft2(plane)


def inverse_dft(spectrum: np.ndarray) -> np.ndarray:
    """Inverse 2-D DFT with the 1/P scaling."""
    return np.fft.ifft2(spectrum)


def fft2_stack(planes: np.ndarray) -> np.ndarray:
    """Forward DFT over the last two axes of a (..., H, W) stack."""
    planes = np.asarray(planes)
    if _threads == 1 or planes.ndim != 3 or planes.shape[0] < 2:
        return np.fft.fft2(planes, axes=(-2, -1))
    return _threaded(np.fft.fft2, planes)


def ifft2_stack(spectra: np.ndarray) -> np.ndarray:
    """Inverse DFT over the last two axes of a (..., H, W) stack."""
    spectra = np.asarray(spectra)
    if _threads == 1 or spectra.ndim != 3 or spectra.shape[0] < 2:
        return np.fft.ifft2(spectra, axes=(-2, -1))
    return _threaded(np.fft.ifft2, spectra)


def _threaded(func, stack):
    out = np.empty(stack.shape, dtype=np.complex128)
    k = stack.shape[0]
    spans = [(i, min(i + 1, k)) for i in range(k)]

    def run(span):
        lo, hi = span
        out[lo:hi] = func(stack[lo:hi], axes=(-2, -1))

    with ThreadPoolExecutor(max_workers=min(_threads, k)) as pool:
        list(pool.map(run, spans))
    return out


def to_real(values: np.ndarray, context: str = "inverse transform") -> np.ndarray:
    """Drop the imaginary part of a nominally real array, guarding its size.

    Synthesis of real signals from conjugate-symmetric spectra leaves only
    rounding noise in the imaginary part; anything larger indicates a broken
    spectrum and raises instead of being silently discarded.
    """
    if not np.iscomplexobj(values):
        return np.asarray(values, dtype=np.float64)
    residue = float(np.max(np.abs(values.imag))) if values.size else 0.0
    scale = max(1.0, float(np.max(np.abs(values.real)))) if values.size else 1.0
    if residue > 1e-8 * scale:
        raise ValueError(
            f"{context}: imaginary residue {residue:.3e} exceeds tolerance "
            f"for a real-valued result"
        )
    return values.real.copy()


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"lattice mismatch: {a.shape} vs {b.shape}")


def circular_convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Circular (periodic) convolution of two planes of identical shape."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    return to_real(np.fft.ifft2(np.fft.fft2(a) * np.fft.fft2(b)), "circular_convolve")


def circular_correlate(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Circular cross-correlation; the adjoint of convolution by ``a``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b)
    return to_real(
        np.fft.ifft2(np.conj(np.fft.fft2(a)) * np.fft.fft2(b)), "circular_correlate"
    )


def pad_filter(f: np.ndarray, height: int, width: int) -> np.ndarray:
    """Zero-pad an m-by-m filter onto an (height, width) lattice, top-left anchored."""
    f = np.asarray(f, dtype=np.float64)
    m = f.shape[-1]
    if f.shape != (m, m):
        raise ValueError(f"filter support must be square, got {f.shape}")
    if m > height or m > width:
        raise ValueError(f"support {m} exceeds lattice ({height}, {width})")
    out = np.zeros((height, width))
    out[:m, :m] = f
    return out


def crop_filter(plane: np.ndarray, m: int) -> np.ndarray:
    """Recover the m-by-m support from a padded plane; inverse of pad_filter."""
    plane = np.asarray(plane, dtype=np.float64)
    if m > plane.shape[0] or m > plane.shape[1]:
        raise ValueError(f"support {m} exceeds plane {plane.shape}")
    return plane[:m, :m].copy()


def pad_bank(filters: np.ndarray, height: int, width: int) -> np.ndarray:
    """Zero-pad a (K, m, m) filter stack onto the lattice, top-left anchored."""
    filters = np.asarray(filters, dtype=np.float64)
    k, m, m2 = filters.shape
    if m != m2:
        raise ValueError(f"filter supports must be square, got {filters.shape}")
    if m > height or m > width:
        raise ValueError(f"support {m} exceeds lattice ({height}, {width})")
    out = np.zeros((k, height, width))
    out[:, :m, :m] = filters
    return out
