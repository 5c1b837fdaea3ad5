import json
from pathlib import Path

import numpy as np
import pytest

import minmarg as mm
from minmarg.cli import main


def read(path):
    return Path(path).read_bytes()


class TestGen:
    def test_deterministic_bytes(self, tmp_path, capsys):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        for d in (d1, d2):
            assert main(["gen", "--count", "3", "--n", "10", "--p", "0.25",
                         "--seed", "1", "--out", str(d)]) == 0
        for f in sorted(p.name for p in d1.iterdir()):
            assert read(d1 / f) == read(d2 / f)

    def test_zero_constraint_flagged(self, tmp_path, capsys):
        assert main(["gen", "--count", "1", "--n", "4", "--p", "0.0",
                     "--seed", "3", "--out", str(tmp_path / "z")]) == 0
        assert "zero constraints" in capsys.readouterr().out

    def test_manifest(self, tmp_path):
        main(["gen", "--count", "2", "--n", "6", "--p", "0.5", "--seed", "9",
              "--out", str(tmp_path / "m")])
        manifest = json.loads((tmp_path / "m" / "manifest.json").read_text())
        assert manifest["count"] == 2
        assert len(manifest["files"]) == 2


class TestSolve:
    def test_tiny_reaches_optimum(self, tmp_path, capsys):
        lp = tmp_path / "tiny.lp"
        lp.write_text(mm.to_lp(mm.tiny_instance()))
        log = tmp_path / "run.csv"
        assert main(["solve", str(lp), "--max-sweeps", "50",
                     "--log", str(log)]) == 0
        out = capsys.readouterr().out
        assert "final lower bound" in out
        rows = log.read_text().strip().splitlines()
        assert rows[0] == "sweep,seconds,lower_bound"
        last = rows[-1].split(",")
        assert abs(float(last[2]) - (-2.0)) <= 1e-6

    def test_zero_sweeps_init_row_only(self, tmp_path):
        lp = tmp_path / "tiny.lp"
        lp.write_text(mm.to_lp(mm.tiny_instance()))
        log = tmp_path / "run.csv"
        assert main(["solve", str(lp), "--max-sweeps", "0",
                     "--log", str(log)]) == 0
        rows = log.read_text().strip().splitlines()
        assert len(rows) == 2  # header + init record

    def test_malformed_file_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.lp"
        bad.write_text("Minimize\n x1\nSubject To\n x1 + x2 < 1\nBinary\n x1 x2\nEnd\n")
        assert main(["solve", str(bad)]) == 2

    def test_missing_file_exit_2(self):
        assert main(["solve", "/nonexistent/foo.lp"]) == 2

    def test_infeasible_row_exit_2(self, tmp_path):
        bad = tmp_path / "inf.lp"
        bad.write_text("Minimize\n x1\nSubject To\n c: x1 >= 2\nBinary\n x1\nEnd\n")
        assert main(["solve", str(bad)]) == 2

    def test_alpha_file(self, tmp_path):
        lp = tmp_path / "tiny.lp"
        lp.write_text(mm.to_lp(mm.tiny_instance()))
        alpha = tmp_path / "alpha.json"
        alpha.write_text(json.dumps([1.0, 0.5, 0.5, 1.0]))
        assert main(["solve", str(lp), "--max-sweeps", "5",
                     "--alpha", str(alpha)]) == 0
        alpha.write_text(json.dumps([1.0, 1.0]))
        assert main(["solve", str(lp), "--alpha", str(alpha)]) == 2


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    main(["gen", "--count", "4", "--n", "10", "--p", "0.3", "--seed", "5",
          "--out", str(d)])
    return d


class TestTrainEvalCli:

    def test_train_eval_roundtrip(self, dataset, tmp_path):
        weights = tmp_path / "w.bin"
        log = tmp_path / "train.csv"
        rc = main(["train", "--data", str(dataset), "--rounds", "3",
                   "--sweeps", "2", "--iters", "2", "--batch", "2",
                   "--seed", "1", "--out", str(weights), "--log", str(log)])
        assert rc == 0
        assert weights.exists()
        header = log.read_text().splitlines()[0]
        assert header == "iteration,loss,grad_norm,stage,sampled_rounds"

        out_csv = tmp_path / "eval.csv"
        rc = main(["eval", "--data", str(dataset), "--weights", str(weights),
                   "--rounds", "3", "--sweeps", "2", "--out", str(out_csv)])
        assert rc == 0
        rows = out_csv.read_text().strip().splitlines()
        assert rows[0] == "instance,E,t_best,g_I"
        assert rows[-1].startswith("MEAN,")
        # parses back losslessly
        for row in rows[1:-1]:
            name, e, t, g = row.split(",")
            float(e), float(t), float(g)

    def test_byte_identical_reruns(self, dataset, tmp_path):
        outs = []
        for tag in ("1", "2"):
            w = tmp_path / f"w{tag}.bin"
            log = tmp_path / f"t{tag}.csv"
            csv = tmp_path / f"e{tag}.csv"
            main(["train", "--data", str(dataset), "--rounds", "3",
                  "--sweeps", "2", "--iters", "2", "--batch", "2",
                  "--seed", "7", "--out", str(w), "--log", str(log)])
            main(["eval", "--data", str(dataset), "--weights", str(w),
                  "--rounds", "3", "--sweeps", "2", "--out", str(csv)])
            outs.append((read(w), read(log), read(csv)))
        assert outs[0] == outs[1]

    def test_eval_zero_baseline(self, dataset, tmp_path):
        csv = tmp_path / "base.csv"
        rc = main(["eval", "--data", str(dataset), "--rounds", "2",
                   "--sweeps", "2", "--out", str(csv)])
        assert rc == 0
        assert csv.exists()

    def test_bad_data_dir(self):
        assert main(["eval", "--data", "/nonexistent-dir"]) == 2


class TestVersionAndConfig:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0

    def test_config_echo(self, tmp_path, capsys):
        main(["gen", "--count", "1", "--n", "4", "--p", "0.5", "--seed", "0",
              "--out", str(tmp_path / "x")])
        assert '"command": "gen"' in capsys.readouterr().out
