"""Image loading, grayscale normalization, high-pass filtering, streaming.

The sparse convolutional model cannot represent smooth low-frequency
content, so training images are high-pass filtered: the low-pass part is the
minimizer of a gradient-penalized smoothing problem with circular
first-difference operators, which reduces to a single frequency-domain
division, and the high-pass part is the exact remainder.  Dataset ordering
is lexicographic by filename unless a shuffle seed requests a fixed
permutation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from ocdl import spectral

SUPPORTED_EXTENSIONS = (".png", ".pgm")

_LUMA = (0.299, 0.587, 0.114)


class IngestError(RuntimeError):
    """Raised for unreadable inputs or empty datasets, naming the path."""


@dataclass
class PreprocessRecord:
    """Per-image bookkeeping emitted while preprocessing."""

    path: str
    original_height: int
    original_width: int
    output_height: int
    output_width: int
    mean_before: float
    mean_after: float


@dataclass
class DatasetSource:
    """An ordered list of image files plus the preprocessing to apply."""

    root: Path
    files: tuple[Path, ...]
    height: int | None = None
    width: int | None = None
    highpass_reg: float = 5.0
    highpass: bool = True
    allow_16bit: bool = False
    shuffle_seed: int | None = field(default=None)

    @classmethod
    def from_dir(
        cls,
        root,
        height: int | None = None,
        width: int | None = None,
        highpass_reg: float = 5.0,
        highpass: bool = True,
        allow_16bit: bool = False,
        shuffle_seed: int | None = None,
    ) -> "DatasetSource":
        root = Path(root)
        if not root.is_dir():
            raise IngestError(f"data directory does not exist: {root}")
        files = sorted(
            (p for p in root.iterdir() if p.suffix.lower() in SUPPORTED_EXTENSIONS),
            key=lambda p: p.name,
        )
        if not files:
            raise IngestError(f"no supported images (.png, .pgm) in {root}")
        if shuffle_seed is not None:
            order = np.random.default_rng(shuffle_seed).permutation(len(files))
            files = [files[i] for i in order]
        return cls(
            root=root,
            files=tuple(files),
            height=height,
            width=width,
            highpass_reg=highpass_reg,
            highpass=highpass,
            allow_16bit=allow_16bit,
            shuffle_seed=shuffle_seed,
        )


def load_grayscale(path, allow_16bit: bool = False) -> np.ndarray:
    """Decode a PNG or binary PGM into a [0, 1] float64 plane.

    Color inputs are reduced with the 0.299/0.587/0.114 luma weights before
    normalization; 8-bit values divide by 255.  Bit depths above 8 are
    rejected unless ``allow_16bit`` is set (then divided by 65535).
    """
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode in ("I", "I;16", "I;16B", "I;16L"):
                if not allow_16bit:
                    raise IngestError(
                        f"bit depth above 8 requires allow_16bit: {path}"
                    )
                arr = np.asarray(img, dtype=np.float64)
                return arr / 65535.0
            if mode == "P":
                img = img.convert("RGB")
                mode = "RGB"
            if mode in ("RGBA", "LA"):
                img = img.convert("RGB" if mode == "RGBA" else "L")
                mode = img.mode
            if mode == "L":
                return np.asarray(img, dtype=np.float64) / 255.0
            if mode == "RGB":
                rgb = np.asarray(img, dtype=np.float64)
                luma = (
                    _LUMA[0] * rgb[..., 0]
                    + _LUMA[1] * rgb[..., 1]
                    + _LUMA[2] * rgb[..., 2]
                )
                return luma / 255.0
            raise IngestError(f"unsupported image mode {mode!r}: {path}")
    except IngestError:
        raise
    except Exception as exc:
        raise IngestError(f"cannot read image {path}: {exc}") from exc


def tikhonov_highpass(s: np.ndarray, reg: float = 5.0) -> tuple[np.ndarray, np.ndarray]:
    """Split a plane into gradient-smoothed low-pass and exact remainder.

    The low-pass solves min_l (1/2)||l - s||^2 + (reg/2)(||Gr l||^2 +
    ||Gc l||^2) with circular forward differences, i.e. a frequency-domain
    division by 1 + reg * (4 sin^2(pi u / H) + 4 sin^2(pi v / W)).  The DC
    gain of the high-pass is exactly zero, and low + high reproduces s.
    """
    if reg <= 0:
        raise ValueError("regularization must be positive")
    s = np.asarray(s, dtype=np.float64)
    h, w = s.shape
    gr = 4.0 * np.sin(np.pi * np.arange(h) / h) ** 2
    gc = 4.0 * np.sin(np.pi * np.arange(w) / w) ** 2
    denom = 1.0 + reg * (gr[:, None] + gc[None, :])
    lowpass = spectral.to_real(
        spectral.inverse_dft(spectral.forward_dft(s) / denom), "tikhonov_highpass"
    )
    return lowpass, s - lowpass


def center_crop_resize(s: np.ndarray, height: int, width: int) -> np.ndarray:
    """Center-crop to the target aspect ratio, then bilinear-resize.

    A no-op (bit-identical copy) when the plane already has the target size.
    """
    s = np.asarray(s, dtype=np.float64)
    h, w = s.shape
    if h < 2 or w < 2:
        raise ValueError(f"degenerate source plane {s.shape}")
    if (h, w) == (height, width):
        return s.copy()
    scale = min(h / height, w / width)
    ch = min(h, max(1, int(round(height * scale))))
    cw = min(w, max(1, int(round(width * scale))))
    y0 = (h - ch) // 2
    x0 = (w - cw) // 2
    return _bilinear_resize(s[y0 : y0 + ch, x0 : x0 + cw], height, width)


def _bilinear_resize(a: np.ndarray, height: int, width: int) -> np.ndarray:
    """Plain bilinear interpolation with the pixel-center convention."""
    h, w = a.shape
    if (h, w) == (height, width):
        return a.copy()
    ys = np.clip((np.arange(height) + 0.5) * h / height - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(width) + 0.5) * w / width - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = (1.0 - wx) * a[y0][:, x0] + wx * a[y0][:, x1]
    bottom = (1.0 - wx) * a[y1][:, x0] + wx * a[y1][:, x1]
    return (1.0 - wy) * top + wy * bottom


def preprocess_plane(
    plane: np.ndarray, source: DatasetSource
) -> tuple[np.ndarray, np.ndarray | None]:
    """Apply the source's crop/resize and high-pass steps to one plane.

    Returns the preprocessed plane and, when the high-pass ran, the low-pass
    companion (None otherwise).
    """
    if source.height is not None and source.width is not None:
        plane = center_crop_resize(plane, source.height, source.width)
    if source.highpass:
        lowpass, highpass = tikhonov_highpass(plane, source.highpass_reg)
        return highpass, lowpass
    return plane, None


def stream(source: DatasetSource) -> Iterator[np.ndarray]:
    """Yield preprocessed planes in the source order, one pass.

    Failures are wrapped so the offending file is named; re-streaming a
    source yields the identical sequence.
    """
    for path in source.files:
        try:
            plane = load_grayscale(path, allow_16bit=source.allow_16bit)
            out, _ = preprocess_plane(plane, source)
        except IngestError:
            raise
        except Exception as exc:
            raise IngestError(f"failed to preprocess {path}: {exc}") from exc
        yield out


def stream_with_records(
    source: DatasetSource,
) -> Iterator[tuple[np.ndarray, PreprocessRecord]]:
    """Like :func:`stream` but also yields per-image bookkeeping."""
    for path in source.files:
        try:
            plane = load_grayscale(path, allow_16bit=source.allow_16bit)
            mean_before = float(plane.mean())
            oh, ow = plane.shape
            out, _ = preprocess_plane(plane, source)
        except IngestError:
            raise
        except Exception as exc:
            raise IngestError(f"failed to preprocess {path}: {exc}") from exc
        record = PreprocessRecord(
            path=str(path),
            original_height=oh,
            original_width=ow,
            output_height=out.shape[0],
            output_width=out.shape[1],
            mean_before=mean_before,
            mean_after=float(out.mean()),
        )
        yield out, record
