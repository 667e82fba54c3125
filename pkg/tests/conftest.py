"""Shared test helpers: synthetic corpora and tiny image files."""

from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from ocdl import spectral
from ocdl.dict_space import FilterBank, init_dictionary


def smooth_bank(k: int, m: int, seed: int) -> FilterBank:
    """Unit-norm filters with local spatial correlation (blurred noise).

    Used as planted ground truth: smooth filters carry the kind of shared
    low-order structure that single-pass learning can pick up, unlike white
    noise supports.
    """
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((k, m + 4, m + 4))
    taps = np.array([0.25, 0.5, 1.0, 0.5, 0.25])
    kern = np.outer(taps, taps)
    out = np.empty((k, m, m))
    for i in range(k):
        acc = np.zeros((m, m))
        for dy in range(5):
            for dx in range(5):
                acc += kern[dy, dx] * raw[i, dy : dy + m, dx : dx + m]
        out[i] = acc / np.linalg.norm(acc)
    return FilterBank(out)


def planted_corpus(
    seed: int,
    n_images: int,
    h: int,
    w: int,
    truth: FilterBank,
    density: float = 0.005,
    sigma: float = 0.01,
) -> list[np.ndarray]:
    """Images synthesized as sparse circular combinations of planted filters."""
    rng = np.random.default_rng(seed)
    k = truth.k
    d_hat = spectral.fft2_stack(spectral.pad_bank(truth.filters, h, w))
    planes = []
    for _ in range(n_images):
        maps = rng.standard_normal((k, h, w)) * (rng.random((k, h, w)) < density)
        s = spectral.to_real(
            spectral.inverse_dft(np.sum(d_hat * spectral.fft2_stack(maps), axis=0))
        )
        planes.append(s + sigma * rng.standard_normal((h, w)))
    return planes


def write_gray_png(path, values: np.ndarray) -> None:
    """Write a [0, 1] float plane as an 8-bit grayscale PNG."""
    pixels = np.clip(np.rint(values * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(path)


def make_image_dir(dirpath, n_images: int, h: int = 32, w: int = 32, seed: int = 5):
    """Populate a directory with small deterministic grayscale PNGs."""
    rng = np.random.default_rng(seed)
    dirpath.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n_images):
        plane = 0.5 + 0.25 * np.sin(
            2 * np.pi * (i + 1) * np.arange(w) / w
        ) * np.ones((h, 1))
        plane = plane + 0.1 * rng.standard_normal((h, w))
        p = dirpath / f"img_{i:03d}.png"
        write_gray_png(p, np.clip(plane, 0, 1))
        paths.append(p)
    return paths


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_bank():
    return init_dictionary(3, 4, seed=7)
