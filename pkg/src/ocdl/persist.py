"""Bit-exact binary checkpoints, dictionary tile export, and metrics CSV.

Checkpoint layout (little-endian throughout):

    offset  size  field
    0       4     magic "OCDL"
    4       4     format version (u32)
    8       1     algorithm id (u8, 1 or 2)
    9       16    K, H, W, m (4 x u32)
    25      8     sample count N (u64)
    33      16    lambda, rho0 (2 x f64)
    49      32    rng state (4 x u64; master seed plus reserved words)
    81      -     dictionary (K*m*m f64), alpha (K*H*W f64),
                  beta (K*H*W interleaved re/im f64 pairs)

Total size is exactly HEADER_SIZE + 8*K*(m^2 + 3*H*W) bytes, linear in K
times the lattice size, matching the trainers' persistent state.  Saves are
atomic (temp file plus rename); loads verify magic, version, and the exact
byte count implied by the header dimensions.
"""

from __future__ import annotations

import csv
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ocdl.dict_space import FilterBank
from ocdl.history import HistoryPair

MAGIC = b"OCDL"
PLANE_MAGIC = b"OCDP"
VERSION = 1

_HEADER = struct.Struct("<4sIBIIIIQdd4Q")
HEADER_SIZE = _HEADER.size  # 81

_PLANE_HEADER = struct.Struct("<4sIII")


class CheckpointError(ValueError):
    """Raised for malformed, truncated, or mismatched checkpoint files."""


@dataclass
class Checkpoint:
    """On-disk trainer state: dictionary, history, and run constants."""

    algorithm: int
    n: int
    lam: float
    rho0: float
    dictionary: np.ndarray  # (K, m, m) float64
    alpha: np.ndarray  # (K, H, W) float64
    beta: np.ndarray  # (K, H, W) complex128
    rng_state: tuple[int, int, int, int] = (0, 0, 0, 0)

    @property
    def k(self) -> int:
        return self.dictionary.shape[0]

    @property
    def m(self) -> int:
        return self.dictionary.shape[1]

    @property
    def height(self) -> int:
        return self.alpha.shape[1]

    @property
    def width(self) -> int:
        return self.alpha.shape[2]

    def bank(self) -> FilterBank:
        return FilterBank(self.dictionary)

    def history(self) -> HistoryPair:
        return HistoryPair(self.alpha.copy(), self.beta.copy(), self.n)


@dataclass
class MetricsRow:
    """One CSV line of per-sample training metrics.

    ``approx_fit_term`` is the data-fidelity of the freshly updated
    dictionary on the current sample's coefficient maps.
    """

    sample_index: int
    csc_iterations: int
    dict_iterations: int
    csc_objective: float
    approx_fit_term: float
    wall_time_seconds: float


METRICS_FIELDS = (
    "sample_index",
    "csc_iterations",
    "dict_iterations",
    "csc_objective",
    "approx_fit_term",
    "wall_time_seconds",
)


def checkpoint_size(k: int, height: int, width: int, m: int) -> int:
    """Exact byte size of a checkpoint with the given dimensions."""
    return HEADER_SIZE + 8 * k * (m * m + 3 * height * width)


def checkpoint_from_state(state, algorithm: int) -> Checkpoint:
    """Snapshot a trainer state (duck-typed: bank, history, settings, lam)."""
    if algorithm not in (1, 2):
        raise CheckpointError(f"unknown algorithm id {algorithm}")
    return Checkpoint(
        algorithm=algorithm,
        n=state.history.n,
        lam=float(state.lam),
        rho0=float(state.settings.rho0),
        dictionary=state.bank.filters.copy(),
        alpha=state.history.alpha.copy(),
        beta=state.history.beta.copy(),
        rng_state=(int(state.seed) & 0xFFFFFFFFFFFFFFFF, 0, 0, 0),
    )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write a checkpoint atomically (temp file in place, then rename)."""
    if ckpt.algorithm not in (1, 2):
        raise CheckpointError(f"unknown algorithm id {ckpt.algorithm}")
    k, m = ckpt.k, ckpt.m
    h, w = ckpt.height, ckpt.width
    if ckpt.alpha.shape != (k, h, w) or ckpt.beta.shape != (k, h, w):
        raise CheckpointError("history dimensions do not match the dictionary")
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        ckpt.algorithm,
        k,
        h,
        w,
        m,
        ckpt.n,
        ckpt.lam,
        ckpt.rho0,
        *ckpt.rng_state,
    )
    payload = b"".join(
        (
            header,
            np.ascontiguousarray(ckpt.dictionary, dtype="<f8").tobytes(),
            np.ascontiguousarray(ckpt.alpha, dtype="<f8").tobytes(),
            np.ascontiguousarray(ckpt.beta, dtype="<c16").tobytes(),
        )
    )
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    """Read and validate a checkpoint; bitwise inverse of save_checkpoint."""
    data = Path(path).read_bytes()
    if len(data) < HEADER_SIZE:
        raise CheckpointError(f"truncated checkpoint: {path}")
    magic, version, algorithm, k, h, w, m, n, lam, rho0, r0, r1, r2, r3 = _HEADER.unpack(
        data[:HEADER_SIZE]
    )
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} in {path}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if algorithm not in (1, 2):
        raise CheckpointError(f"unknown algorithm id {algorithm}")
    expected = checkpoint_size(k, h, w, m)
    if len(data) != expected:
        raise CheckpointError(
            f"checkpoint size {len(data)} does not match dimensions "
            f"(expected {expected}): {path}"
        )
    off = HEADER_SIZE
    dict_bytes = 8 * k * m * m
    plane_bytes = 8 * k * h * w
    dictionary = np.frombuffer(data, dtype="<f8", count=k * m * m, offset=off).reshape(
        k, m, m
    )
    off += dict_bytes
    alpha = np.frombuffer(data, dtype="<f8", count=k * h * w, offset=off).reshape(
        k, h, w
    )
    off += plane_bytes
    beta = np.frombuffer(data, dtype="<c16", count=k * h * w, offset=off).reshape(
        k, h, w
    )
    return Checkpoint(
        algorithm=algorithm,
        n=n,
        lam=lam,
        rho0=rho0,
        dictionary=dictionary.astype(np.float64),
        alpha=alpha.astype(np.float64),
        beta=beta.astype(np.complex128),
        rng_state=(r0, r1, r2, r3),
    )


def export_dictionary_tiles(bank: FilterBank, path, cols: int = 8) -> None:
    """Render the bank as a grid of per-filter normalized tiles (8-bit PNG).

    Each filter is min-max normalized on its own to [0, 255] (a degenerate
    range maps to mid-gray), laid out row-major with one-pixel separators on
    all sides.  ``cols`` wider than the bank collapses to a single row.
    """
    k, m = bank.k, bank.m
    if cols < 1:
        raise ValueError("cols must be at least 1")
    cols = min(cols, k)
    rows = (k + cols - 1) // cols
    canvas = np.zeros((rows * (m + 1) + 1, cols * (m + 1) + 1), dtype=np.uint8)
    for idx in range(k):
        r, c = divmod(idx, cols)
        tile = bank.filters[idx]
        lo = float(tile.min())
        hi = float(tile.max())
        if hi - lo < 1e-12:
            pixels = np.full((m, m), 128, dtype=np.uint8)
        else:
            pixels = np.rint((tile - lo) / (hi - lo) * 255.0).astype(np.uint8)
        y = 1 + r * (m + 1)
        x = 1 + c * (m + 1)
        canvas[y : y + m, x : x + m] = pixels
    Image.fromarray(canvas, mode="L").save(path)


def append_metrics(row: MetricsRow, path) -> None:
    """Append one metrics row, writing the header on first use."""
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(METRICS_FIELDS)
        writer.writerow(
            [
                row.sample_index,
                row.csc_iterations,
                row.dict_iterations,
                repr(row.csc_objective),
                repr(row.approx_fit_term),
                repr(row.wall_time_seconds),
            ]
        )


def read_metrics(path) -> list[MetricsRow]:
    """Parse a metrics CSV back into rows."""
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(
                MetricsRow(
                    sample_index=int(rec["sample_index"]),
                    csc_iterations=int(rec["csc_iterations"]),
                    dict_iterations=int(rec["dict_iterations"]),
                    csc_objective=float(rec["csc_objective"]),
                    approx_fit_term=float(rec["approx_fit_term"]),
                    wall_time_seconds=float(rec["wall_time_seconds"]),
                )
            )
    return out


def save_plane(plane: np.ndarray, path) -> None:
    """Cache a real plane in the binary container (sibling of checkpoints)."""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ValueError("expected a 2-D plane")
    h, w = plane.shape
    header = _PLANE_HEADER.pack(PLANE_MAGIC, VERSION, h, w)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(plane, dtype="<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_plane(path) -> np.ndarray:
    """Read a plane written by save_plane, validating magic and size."""
    data = Path(path).read_bytes()
    if len(data) < _PLANE_HEADER.size:
        raise CheckpointError(f"truncated plane file: {path}")
    magic, version, h, w = _PLANE_HEADER.unpack(data[: _PLANE_HEADER.size])
    if magic != PLANE_MAGIC:
        raise CheckpointError(f"bad magic {magic!r} in {path}")
    if version != VERSION:
        raise CheckpointError(f"unsupported plane version {version}")
    if len(data) != _PLANE_HEADER.size + 8 * h * w:
        raise CheckpointError(f"plane size mismatch: {path}")
    return (
        np.frombuffer(data, dtype="<f8", count=h * w, offset=_PLANE_HEADER.size)
        .reshape(h, w)
        .astype(np.float64)
    )
