"""Checkpoint container, tile export, metrics CSV, plane cache."""

import numpy as np
import pytest
from PIL import Image

from ocdl.dict_space import init_dictionary
from ocdl.persist import (
    HEADER_SIZE,
    Checkpoint,
    CheckpointError,
    MetricsRow,
    append_metrics,
    checkpoint_size,
    export_dictionary_tiles,
    load_checkpoint,
    load_plane,
    read_metrics,
    save_checkpoint,
    save_plane,
)


def make_checkpoint(rng, k=3, h=8, w=10, m=4, algorithm=1, n=5):
    return Checkpoint(
        algorithm=algorithm,
        n=n,
        lam=0.123,
        rho0=10.0,
        dictionary=rng.standard_normal((k, m, m)),
        alpha=rng.random((k, h, w)),
        beta=rng.standard_normal((k, h, w)) + 1j * rng.standard_normal((k, h, w)),
        rng_state=(42, 0, 0, 0),
    )


class TestCheckpointRoundtrip:
    def test_bit_exact(self, tmp_path, rng):
        ckpt = make_checkpoint(rng)
        path = tmp_path / "state.ckpt"
        save_checkpoint(ckpt, path)
        back = load_checkpoint(path)
        assert back.algorithm == ckpt.algorithm
        assert back.n == ckpt.n
        assert back.lam == ckpt.lam
        assert back.rho0 == ckpt.rho0
        assert back.rng_state == ckpt.rng_state
        assert np.array_equal(back.dictionary, ckpt.dictionary)
        assert np.array_equal(back.alpha, ckpt.alpha)
        assert np.array_equal(back.beta, ckpt.beta)

    def test_save_twice_identical_bytes(self, tmp_path, rng):
        ckpt = make_checkpoint(rng)
        a = tmp_path / "a.ckpt"
        b = tmp_path / "b.ckpt"
        save_checkpoint(ckpt, a)
        save_checkpoint(ckpt, b)
        assert a.read_bytes() == b.read_bytes()

    def test_corrupted_magic_rejected(self, tmp_path, rng):
        path = tmp_path / "state.ckpt"
        save_checkpoint(make_checkpoint(rng), path)
        data = bytearray(path.read_bytes())
        data[:4] = b"JUNK"
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path, rng):
        path = tmp_path / "state.ckpt"
        save_checkpoint(make_checkpoint(rng), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CheckpointError, match="size"):
            load_checkpoint(path)

    def test_bad_version_rejected(self, tmp_path, rng):
        path = tmp_path / "state.ckpt"
        save_checkpoint(make_checkpoint(rng), path)
        data = bytearray(path.read_bytes())
        data[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_bad_algorithm_rejected(self, tmp_path, rng):
        ckpt = make_checkpoint(rng, algorithm=3)
        with pytest.raises(CheckpointError, match="algorithm"):
            save_checkpoint(ckpt, tmp_path / "x.ckpt")


class TestCheckpointSize:
    @pytest.mark.parametrize("k,h,w,m", [(8, 32, 32, 8), (16, 64, 64, 8)])
    def test_formula_matches_file(self, tmp_path, rng, k, h, w, m):
        ckpt = make_checkpoint(rng, k=k, h=h, w=w, m=m)
        path = tmp_path / "state.ckpt"
        save_checkpoint(ckpt, path)
        expected = HEADER_SIZE + 8 * k * (m * m + 3 * h * w)
        assert checkpoint_size(k, h, w, m) == expected
        assert path.stat().st_size == expected


class TestTileExport:
    def test_constant_filter_maps_to_midgray(self, tmp_path):
        filters = np.full((1, 4, 4), 0.1)
        bank = init_dictionary(1, 4, seed=0)
        object.__setattr__(bank, "filters", filters)
        path = tmp_path / "tiles.png"
        export_dictionary_tiles(bank, path, cols=1)
        pixels = np.asarray(Image.open(path))
        assert np.all(pixels[1:5, 1:5] == 128)

    def test_grid_dimensions_with_separators(self, tmp_path):
        bank = init_dictionary(4, 5, seed=1)
        path = tmp_path / "tiles.png"
        export_dictionary_tiles(bank, path, cols=2)
        pixels = np.asarray(Image.open(path))
        assert pixels.shape == (2 * 5 + 3, 2 * 5 + 3)

    def test_reread_matches_normalization(self, tmp_path):
        bank = init_dictionary(3, 4, seed=2)
        path = tmp_path / "tiles.png"
        export_dictionary_tiles(bank, path, cols=3)
        pixels = np.asarray(Image.open(path)).astype(np.float64)
        for idx in range(3):
            tile = bank.filters[idx]
            lo, hi = tile.min(), tile.max()
            expected = (tile - lo) / (hi - lo) * 255.0
            got = pixels[1:5, 1 + idx * 5 : 5 + idx * 5]
            assert np.max(np.abs(got - expected)) <= 1.0

    def test_wide_cols_collapse_to_single_row(self, tmp_path):
        bank = init_dictionary(3, 4, seed=3)
        path = tmp_path / "tiles.png"
        export_dictionary_tiles(bank, path, cols=10)
        pixels = np.asarray(Image.open(path))
        assert pixels.shape == (4 + 2, 3 * 5 + 1)

    def test_sixty_four_filters_in_eight_columns(self, tmp_path):
        bank = init_dictionary(64, 8, seed=4)
        path = tmp_path / "tiles.png"
        export_dictionary_tiles(bank, path, cols=8)
        pixels = np.asarray(Image.open(path))
        assert pixels.shape == (8 * 9 + 1, 8 * 9 + 1)


class TestMetrics:
    def test_header_then_rows(self, tmp_path):
        path = tmp_path / "metrics.csv"
        append_metrics(MetricsRow(1, 10, 20, 1.5, 0.5, 0.01), path)
        lines = path.read_text().strip().splitlines()
        assert lines[0].startswith("sample_index,")
        assert len(lines) == 2

    def test_n_appends_n_plus_one_lines(self, tmp_path):
        path = tmp_path / "metrics.csv"
        for i in range(5):
            append_metrics(MetricsRow(i + 1, 1, 1, float(i), 0.0, 0.0), path)
        assert len(path.read_text().strip().splitlines()) == 6

    def test_roundtrip_parse(self, tmp_path):
        path = tmp_path / "metrics.csv"
        row = MetricsRow(3, 17, 41, 1.2345678901234567, 0.1, 2.5e-3)
        append_metrics(row, path)
        (back,) = read_metrics(path)
        assert back == row


class TestPlaneCache:
    def test_roundtrip_bit_exact(self, tmp_path, rng):
        plane = rng.standard_normal((7, 9))
        path = tmp_path / "plane.bin"
        save_plane(plane, path)
        assert np.array_equal(load_plane(path), plane)

    def test_bad_magic_rejected(self, tmp_path, rng):
        path = tmp_path / "plane.bin"
        save_plane(rng.standard_normal((4, 4)), path)
        data = bytearray(path.read_bytes())
        data[:4] = b"XXXX"
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointError, match="magic"):
            load_plane(path)
