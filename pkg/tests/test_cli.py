import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maxout_rf.cli import main
from maxout_rf.config import Cell, ConfigError, ExperimentConfig, RunReport, config_from_report
from maxout_rf.core import load_bank
from maxout_rf.data import load_dataset
from maxout_rf.kernel import kappa_closed_form_q2

BLOBS = ["--set", "dataset=blobs", "--set", "n_per_class=60", "--set", "classes=3",
         "--set", "dim=6", "--set", "separation=20", "--set", "m=64", "--set", "q=4",
         "--set", "holdout=30", "-q"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def strip_clock(text):
    return "\n".join(line for line in text.splitlines() if "wall_clock" not in line)


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = ExperimentConfig()
        assert ExperimentConfig.from_text(cfg.to_text()) == cfg

    @settings(max_examples=50, deadline=None)
    @given(m=st.lists(st.integers(1, 10**6), min_size=1, max_size=4),
           seeds=st.lists(st.integers(0, 2**40), min_size=1, max_size=5),
           grid=st.lists(st.floats(1e-12, 1e12), min_size=1, max_size=5),
           lr=st.floats(1e-9, 10.0), curve=st.booleans())
    def test_round_trip_lossless(self, m, seeds, grid, lr, curve):
        cfg = ExperimentConfig(m=m, seeds=seeds, lambda_grid=grid, sgd_lr0=lr, curve=curve)
        assert ExperimentConfig.from_text(cfg.to_text()) == cfg

    def test_comments_and_blank_lines(self):
        cfg = ExperimentConfig.from_text("# sweep\n\nm = 250, 1000\nq=1,4\n")
        assert (cfg.m, cfg.q) == ([250, 1000], [1, 4])

    @pytest.mark.parametrize("text,line,name", [
        ("m = 10\nq = four\n", 2, "q"),
        ("m = 10\n\nbogus = 1\n", 3, "bogus"),
        ("curve = maybe\n", 1, "curve"),
        ("m = 1\nm = 2\n", 2, "m"),
    ])
    def test_diagnostics_name_line_and_field(self, text, line, name):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_text(text)
        assert (exc.value.line, exc.value.field_name) == (line, name)
        assert f"line {line}" in str(exc.value)

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="line 1"):
            ExperimentConfig.from_text("m 10\n")

    @pytest.mark.parametrize("text,name", [
        ("seeds = \n", "seeds"), ("m = 0\n", "m"), ("q = -1\n", "q"),
        ("model = svm\n", "model"), ("dataset = file\n", "train_path"),
        ("lambda_grid = 0.0\n", "lambda_grid"),
    ])
    def test_invariants(self, text, name):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_text(text)
        assert exc.value.field_name == name

    def test_single(self):
        cfg = ExperimentConfig(m=[1, 2])
        with pytest.raises(ConfigError, match="'m'"):
            cfg.single("m")
        assert cfg.single("q") == 4


class TestRunReport:
    def test_mean_std_recomputable(self):
        cell = Cell(1000, 4, [1, 2, 3, 4, 5], [0.055, 0.057, 0.053, 0.056, 0.054])
        assert cell.mean == pytest.approx(np.mean(cell.errors))
        assert cell.std == pytest.approx(np.std(cell.errors, ddof=1))
        assert Cell(1, 1, [1], [0.2]).std == 0.0

    def test_report_embeds_config(self):
        cfg = ExperimentConfig(m=[250, 1000], q=[1, 4], seeds=[7])
        report = RunReport("sweep", cfg, [Cell(250, 1, [7], [0.1], [10.0])])
        text = report.to_text()
        assert "cell.m250_q1.errors = 0.1" in text
        assert config_from_report(text) == cfg

    def test_grid_csv(self):
        report = RunReport("sweep", ExperimentConfig(),
                           [Cell(1000, 4, [1, 2], [0.05, 0.06]), Cell(1000, 1, [1, 2], [0.14, 0.15])])
        lines = report.grid_csv().splitlines()
        assert lines[0] == "m,q,n_seeds,mean_error_pct,std_error_pct"
        assert lines[1].startswith("1000,4,2,5.5000,")


class TestCommands:
    def test_train_then_eval_separable_blobs(self, tmp_path):
        assert main(["train", *BLOBS, "--seed", "1", "--out", str(tmp_path / "t")]) == 0
        rc = main(["eval", *BLOBS, "--model", str(tmp_path / "t/model.bin"),
                   "--bank", str(tmp_path / "t/bank.bin"), "--out", str(tmp_path / "e")])
        assert rc == 0
        text = (tmp_path / "e/report.txt").read_text()
        assert "cell.m64_q4.errors = 0.0" in text
        assert (tmp_path / "e/confusion.csv").read_text().startswith("true\\pred,0,1,2")

    def test_train_logistic(self, tmp_path):
        rc = main(["train", *BLOBS, "--set", "model=logistic", "--set", "sgd_epochs=5",
                   "--seed", "2", "--out", str(tmp_path)])
        assert rc == 0
        assert "cell.m64_q4.errors = 0.0" in (tmp_path / "report.txt").read_text()

    def test_sweep_deterministic(self, tmp_path):
        args = ["sweep", *BLOBS, "--set", "m=16, 32", "--set", "q=1, 4", "--set", "seeds=1, 2"]
        assert main([*args, "--out", str(tmp_path / "a")]) == 0
        assert main([*args, "--out", str(tmp_path / "b")]) == 0
        ra = (tmp_path / "a/report.txt").read_text()
        rb = (tmp_path / "b/report.txt").read_text()
        assert strip_clock(ra).replace("/a", "") == strip_clock(rb).replace("/b", "")
        rows = read_csv(tmp_path / "a/grid.csv")
        assert [(r["m"], r["q"]) for r in rows] == [("16", "1"), ("16", "4"), ("32", "1"), ("32", "4")]
        assert (tmp_path / "a/seeds.csv").read_bytes() == (tmp_path / "b/seeds.csv").read_bytes()
        # A report alone is enough to rerun the experiment.
        cfg = config_from_report(ra)
        assert (cfg.m, cfg.q, cfg.seeds) == ([16, 32], [1, 4], [1, 2])

    def test_kernel_probe_q2_matches_closed_form(self, tmp_path):
        rc = main(["kernel-probe", "--set", "kernel_q=2", "--set", "kernel_rho_points=11",
                   "--set", "kernel_samples=200000", "-q", "--out", str(tmp_path)])
        assert rc == 0
        rows = read_csv(tmp_path / "kernel_probe.csv")
        assert list(rows[0]) == ["q", "rho", "kappa_mc", "kappa_stderr", "kappa_series",
                                 "expected_distance2", "expected_distance2_normalized"]
        assert len(rows) == 11
        for r in rows:
            rho, kappa, se = float(r["rho"]), float(r["kappa_mc"]), float(r["kappa_stderr"])
            assert abs(kappa - kappa_closed_form_q2(rho)) <= 4 * se + 1e-12

    def test_embed_with_curve(self, tmp_path):
        rc = main(["embed", "--set", "dataset=circle", "--set", "n_points=12", "--set", "m=100",
                   "--set", "q=8", "--set", "curve=true", "--seed", "3", "-q", "--out", str(tmp_path)])
        assert rc == 0
        coords = read_csv(tmp_path / "embedding.csv")
        assert list(coords[0]) == ["id", "coord_1", "coord_2"] and len(coords) == 12
        curve = read_csv(tmp_path / "distance_curve.csv")
        assert len(curve) == 66
        assert list(curve[0]) == ["orig_dist", "embed_dist", "embed_dist_normalized", "q", "m", "seed"]
        assert {r["seed"] for r in curve} == {"3"}

    def test_hash(self, tmp_path):
        rc = main(["hash", "--set", "dataset=circle", "--set", "n_points=5", "--set", "m=7",
                   "--set", "q=3", "--seed", "1", "-q", "--out", str(tmp_path)])
        assert rc == 0
        rows = read_csv(tmp_path / "codes.csv")
        assert len(rows) == 5 and len(rows[0]) == 8
        assert all(0 <= int(v) < 3 for r in rows for k, v in r.items() if k != "id")

    def test_featurize(self, tmp_path):
        rc = main(["featurize", *BLOBS, "--seed", "4", "--out", str(tmp_path)])
        assert rc == 0
        Z = load_dataset(tmp_path / "features_train.bin")
        assert Z.X.shape == (180, 64)
        assert load_bank(tmp_path / "bank.bin").seed == 4

    def test_config_file(self, tmp_path):
        (tmp_path / "c.cfg").write_text("dataset = circle\nn_points = 4\nm = 3\nq = 2\nseeds = 9\n")
        assert main(["hash", "--config", str(tmp_path / "c.cfg"), "-q", "--out", str(tmp_path)]) == 0
        assert config_from_report((tmp_path / "report.txt").read_text()).seeds == [9]


class TestExitCodes:
    def test_config_error(self, tmp_path, capsys):
        (tmp_path / "bad.cfg").write_text("m = 10\nq = x\n")
        assert main(["hash", "--config", str(tmp_path / "bad.cfg"), "--out", str(tmp_path)]) == 2
        assert "bad.cfg, line 2, field 'q'" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["hash", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == 2

    def test_missing_data(self, tmp_path, capsys):
        rc = main(["train", "--set", f"data_dir={tmp_path}", "--seed", "1", "--out", str(tmp_path)])
        assert rc == 3
        assert "maxout-rf train: error" in capsys.readouterr().err

    def test_dimension_mismatch(self, tmp_path):
        assert main(["train", *BLOBS, "--seed", "1", "--out", str(tmp_path / "t")]) == 0
        rc = main(["eval", *BLOBS, "--set", "dim=7", "--model", str(tmp_path / "t/model.bin"),
                   "--bank", str(tmp_path / "t/bank.bin"), "--out", str(tmp_path / "e")])
        assert rc == 3

    def test_numerical_failure(self, tmp_path):
        rc = main(["train", *BLOBS, "--set", "model=logistic", "--set", "sgd_lr0=1e12",
                   "--set", "separation=1e6", "--seed", "1", "--out", str(tmp_path)])
        assert rc == 4

    def test_argparse_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["no-such-command"])
        assert exc.value.code == 2
