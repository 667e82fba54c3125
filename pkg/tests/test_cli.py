"""Command-line surface: training runs, evaluation, export, preprocessing."""

import numpy as np
import pytest
from PIL import Image

from ocdl.cli import main
from ocdl.persist import load_checkpoint, load_plane, read_metrics
from conftest import make_image_dir

FAST = ["--max-iter", "60", "--eps", "1e-3", "--k", "3", "--filter-size", "4"]


def run_train(data_dir, tmp_path, tag, extra=()):
    ckpt = tmp_path / f"{tag}.ckpt"
    metrics = tmp_path / f"{tag}.csv"
    code = main(
        ["train", "--data-dir", str(data_dir), "--checkpoint", str(ckpt),
         "--metrics", str(metrics), *FAST, *extra]
    )
    assert code == 0
    return ckpt, metrics


class TestTrain:
    def test_produces_checkpoint_metrics_figure(self, tmp_path):
        data = tmp_path / "data"
        make_image_dir(data, 4, h=24, w=24)
        ckpt, metrics = run_train(data, tmp_path, "run")
        rows = read_metrics(metrics)
        assert [r.sample_index for r in rows] == [1, 2, 3, 4]
        assert metrics.with_suffix(".png").exists()
        loaded = load_checkpoint(ckpt)
        assert loaded.algorithm == 2 and loaded.n == 4
        assert loaded.height == 24 and loaded.k == 3

    def test_missing_data_dir_exits_2(self, tmp_path, capsys):
        code = main(["train", "--data-dir", str(tmp_path / "absent"), "--k", "2"])
        assert code == 2
        assert "absent" in capsys.readouterr().err

    def test_invalid_algorithm_exits_2(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(["train", "--data-dir", str(tmp_path), "--k", "2",
                  "--algorithm", "alg3"])
        assert err.value.code == 2

    def test_deterministic_checkpoints(self, tmp_path):
        data = tmp_path / "data"
        make_image_dir(data, 3, h=20, w=20)
        a, _ = run_train(data, tmp_path, "a", ("--no-plot",))
        b, _ = run_train(data, tmp_path, "b", ("--no-plot",))
        assert a.read_bytes() == b.read_bytes()

    def test_thread_count_does_not_change_results(self, tmp_path):
        data = tmp_path / "data"
        make_image_dir(data, 3, h=20, w=20)
        a, _ = run_train(data, tmp_path, "t1", ("--no-plot", "--threads", "1"))
        b, _ = run_train(data, tmp_path, "t3", ("--no-plot", "--threads", "3"))
        assert a.read_bytes() == b.read_bytes()

    def test_resume_equals_straight_run(self, tmp_path):
        full = tmp_path / "full"
        paths = make_image_dir(full, 6, h=20, w=20)
        prefix = tmp_path / "prefix"
        prefix.mkdir()
        for p in paths[:3]:
            (prefix / p.name).write_bytes(p.read_bytes())

        straight, _ = run_train(full, tmp_path, "straight", ("--no-plot",))
        partial, _ = run_train(prefix, tmp_path, "partial", ("--no-plot",))
        resumed = tmp_path / "resumed.ckpt"
        code = main(
            ["train", "--data-dir", str(full), "--checkpoint", str(resumed),
             "--resume", str(partial), "--no-plot", *FAST]
        )
        assert code == 0
        assert resumed.read_bytes() == straight.read_bytes()

    def test_resume_algorithm_mismatch_exits_2(self, tmp_path, capsys):
        data = tmp_path / "data"
        make_image_dir(data, 2, h=16, w=16)
        ckpt, _ = run_train(data, tmp_path, "alg2run", ("--no-plot",))
        code = main(
            ["train", "--data-dir", str(data), "--resume", str(ckpt),
             "--algorithm", "alg1", *FAST]
        )
        assert code == 2
        assert "alg" in capsys.readouterr().err

    def test_config_file_with_cli_precedence(self, tmp_path):
        data = tmp_path / "data"
        make_image_dir(data, 2, h=16, w=16)
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            f"data_dir = {data}\nk = 2\nfilter_size = 4\nmax_iter = 50\n"
            "eps = 1e-3\nplot = false\nseed = 9\n"
        )
        ckpt = tmp_path / "cfg.ckpt"
        code = main(["train", "--config", str(cfg), "--checkpoint", str(ckpt),
                     "--k", "3"])
        assert code == 0
        assert load_checkpoint(ckpt).k == 3  # command line beats the file

    def test_checkpoint_every_writes_intermediate(self, tmp_path):
        data = tmp_path / "data"
        make_image_dir(data, 2, h=16, w=16)
        ckpt = tmp_path / "every.ckpt"
        seen = []

        import ocdl.cli as cli_module

        original = cli_module.save_checkpoint

        def spy(c, path):
            seen.append(c.n)
            original(c, path)

        cli_module.save_checkpoint = spy
        try:
            code = main(
                ["train", "--data-dir", str(data), "--checkpoint", str(ckpt),
                 "--checkpoint-every", "1", "--no-plot", *FAST]
            )
        finally:
            cli_module.save_checkpoint = original
        assert code == 0
        assert seen == [1, 2, 2]  # per-sample saves plus the final save


class TestEval:
    def test_eval_reports_and_writes_csv(self, tmp_path, capsys):
        data = tmp_path / "data"
        make_image_dir(data, 3, h=20, w=20)
        ckpt, _ = run_train(data, tmp_path, "run", ("--no-plot",))
        out_csv = tmp_path / "eval.csv"
        code = main(["eval", str(ckpt), "--data-dir", str(data),
                     "--csv", str(out_csv)])
        assert code == 0
        out = capsys.readouterr().out
        assert "mean objective" in out
        assert out_csv.exists() and out_csv.with_suffix(".png").exists()
        assert len(out_csv.read_text().strip().splitlines()) == 4

    def test_matches_trainer_logged_objective(self, tmp_path, capsys):
        data = tmp_path / "data"
        make_image_dir(data, 1, h=20, w=20)
        ckpt = tmp_path / "one.ckpt"
        metrics = tmp_path / "one.csv"
        code = main(
            ["train", "--data-dir", str(data), "--checkpoint", str(ckpt),
             "--metrics", str(metrics), "--accurate-objective", "--no-plot", *FAST]
        )
        assert code == 0
        (row,) = read_metrics(metrics)
        code = main(["eval", str(ckpt), "--data-dir", str(data),
                     "--max-iter", "60", "--eps", "1e-3"])
        assert code == 0
        out = capsys.readouterr().out
        mean = float(out.strip().splitlines()[-1].split(":")[-1])
        assert abs(mean - row.csc_objective) <= 1e-8

    def test_zero_test_image_gives_zero_objective(self, tmp_path, capsys):
        data = tmp_path / "data"
        make_image_dir(data, 1, h=16, w=16)
        ckpt, _ = run_train(data, tmp_path, "run", ("--no-plot",))
        black = tmp_path / "black"
        black.mkdir()
        Image.fromarray(np.zeros((16, 16), dtype=np.uint8), mode="L").save(
            black / "zero.png"
        )
        code = main(["eval", str(ckpt), "--data-dir", str(black)])
        assert code == 0
        out = capsys.readouterr().out
        mean = float(out.strip().splitlines()[-1].split(":")[-1])
        assert mean == 0.0

    def test_zero_lambda_override_rejected(self, tmp_path, capsys):
        data = tmp_path / "data"
        make_image_dir(data, 1, h=16, w=16)
        ckpt, _ = run_train(data, tmp_path, "run", ("--no-plot",))
        code = main(["eval", str(ckpt), "--data-dir", str(data), "--lambda", "0"])
        assert code == 2

    def test_bad_checkpoint_exits_1(self, tmp_path):
        data = tmp_path / "data"
        make_image_dir(data, 1, h=16, w=16)
        bogus = tmp_path / "bogus.ckpt"
        bogus.write_bytes(b"JUNKJUNKJUNK" * 20)
        code = main(["eval", str(bogus), "--data-dir", str(data)])
        assert code == 1


class TestExport:
    def test_grid_written(self, tmp_path):
        data = tmp_path / "data"
        make_image_dir(data, 2, h=16, w=16)
        ckpt, _ = run_train(data, tmp_path, "run", ("--no-plot",))
        out = tmp_path / "tiles.png"
        code = main(["export", str(ckpt), "--out", str(out), "--cols", "3"])
        assert code == 0
        pixels = np.asarray(Image.open(out))
        assert pixels.shape == (4 + 2, 3 * 5 + 1)  # one row of 3 size-4 tiles

    def test_invalid_checkpoint_exits_1(self, tmp_path):
        bogus = tmp_path / "bogus.ckpt"
        bogus.write_bytes(b"nope")
        code = main(["export", str(bogus), "--out", str(tmp_path / "o.png")])
        assert code == 1


class TestPreprocess:
    def test_constant_image_yields_zero_plane(self, tmp_path):
        data = tmp_path / "data"
        data.mkdir()
        Image.fromarray(np.full((16, 16), 130, dtype=np.uint8), mode="L").save(
            data / "flat.png"
        )
        out = tmp_path / "out"
        code = main(["preprocess", "--data-dir", str(data), "--out-dir", str(out)])
        assert code == 0
        plane = load_plane(out / "flat.plane")
        assert np.max(np.abs(plane)) < 1e-12

    def test_report_rows_match_inputs_and_rerun_is_idempotent(self, tmp_path):
        data = tmp_path / "data"
        make_image_dir(data, 3, h=16, w=16)
        out = tmp_path / "out"
        assert main(["preprocess", "--data-dir", str(data), "--out-dir", str(out)]) == 0
        report = (out / "preprocess_report.csv").read_text()
        assert len(report.strip().splitlines()) == 4
        blobs = {p.name: p.read_bytes() for p in out.glob("*.plane")}
        assert main(["preprocess", "--data-dir", str(data), "--out-dir", str(out)]) == 0
        assert (out / "preprocess_report.csv").read_text() == report
        for p in out.glob("*.plane"):
            assert p.read_bytes() == blobs[p.name]


class TestThreadsEnv:
    def test_env_var_sets_default(self, tmp_path, monkeypatch):
        from ocdl import spectral

        data = tmp_path / "data"
        make_image_dir(data, 1, h=16, w=16)
        monkeypatch.setenv("OCDL_THREADS", "2")
        code = main(["train", "--data-dir", str(data), "--no-plot", *FAST])
        assert code == 0
        assert spectral.thread_count() == 2
        spectral.set_thread_count(1)
