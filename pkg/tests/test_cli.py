import csv
import io

import pytest

from coarse2fine.cli import main
from coarse2fine.config import load_config
from coarse2fine.data import read_manifest
from coarse2fine.flops import read_report_csv, schedule_flops
from coarse2fine.train import read_comparison_csv, read_runlog_csv

SPEC = """
[corpus]
samples_per_class = 4
duration_s = 0.5

[class.low]
kind = tone
freq = 500

[class.high]
kind = tone
freq = 4000
"""

RUN = """
[model]
embed_dim = 16
num_layers = 1
num_heads = 2

[data]
synthetic = spec.ini
seed = 1

[train]
seed = 2
batch_size = 4
baseline_epochs = 3

[phase.0]
method = pool_avg
C = 2
epochs = 1
lr = 0.001

[phase.1]
epochs = 1
lr = 0.001
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.delenv("C2F_SEED", raising=False)
    (tmp_path / "spec.ini").write_text(SPEC)
    (tmp_path / "run.ini").write_text(RUN)
    return tmp_path


class TestGenData:
    def test_writes_corpus(self, workdir, capsys):
        assert main(["gen-data", "--spec", str(workdir / "spec.ini"), "--seed", "4", "--out", str(workdir / "c")]) == 0
        m = read_manifest(workdir / "c" / "manifest.tsv")
        assert len(m.records) == 8 and m.seed == 4
        assert "8 clips" in capsys.readouterr().out

    def test_seed_from_env(self, workdir, monkeypatch):
        monkeypatch.setenv("C2F_SEED", "9")
        assert main(["gen-data", "--spec", "default", "--out", str(workdir / "c")]) == 0
        assert read_manifest(workdir / "c" / "manifest.tsv").seed == 9

    def test_missing_spec(self, workdir, capsys):
        assert main(["gen-data", "--spec", str(workdir / "nope.ini"), "--out", str(workdir / "c")]) == 1
        assert capsys.readouterr().err.startswith("c2f gen-data: error:")


class TestFlops:
    def test_matches_library(self, workdir, capsys):
        assert main(["flops", "--config", str(workdir / "run.ini")]) == 0
        rows = read_report_csv(io.StringIO(capsys.readouterr().out))
        run = load_config(workdir / "run.ini")
        assert rows[0]["cumulative"] == rows[0]["per_step"] * 6  # 8 clips, 2 held out
        report = schedule_flops(run.schedule, run.model_config(2), 6)
        assert [r["cumulative"] for r in rows[:-1]] == [p.cumulative for p in report.phases]
        assert rows[-1]["phase"] == "baseline" and rows[-1]["cumulative"] == report.baseline_cumulative
        assert rows[-2]["savings_percent"] == pytest.approx(report.savings_percent, abs=1e-12)

    def test_steps_override(self, workdir, capsys):
        main(["flops", "--config", str(workdir / "run.ini"), "--steps-per-epoch", "100"])
        rows = read_report_csv(io.StringIO(capsys.readouterr().out))
        assert rows[0]["cumulative"] == rows[0]["per_step"] * 100


class TestTrain:
    def test_deterministic_runlog(self, workdir):
        for out in ("a", "b"):
            assert main(["train", "--config", str(workdir / "run.ini"), "--out", str(workdir / out)]) == 0
        assert (workdir / "a" / "runlog.csv").read_bytes() == (workdir / "b" / "runlog.csv").read_bytes()
        log = read_runlog_csv(workdir / "a" / "runlog.csv")
        assert [r.phase_index for r in log] == [0, 1]
        assert (workdir / "a" / "phase0.npz").exists() and (workdir / "a" / "final.npz").exists()

    def test_env_seed_changes_run(self, workdir, monkeypatch):
        main(["train", "--config", str(workdir / "run.ini"), "--out", str(workdir / "a")])
        monkeypatch.setenv("C2F_SEED", "77")
        main(["train", "--config", str(workdir / "run.ini"), "--out", str(workdir / "b")])
        assert (workdir / "a" / "runlog.csv").read_bytes() != (workdir / "b" / "runlog.csv").read_bytes()

    def test_surpass_needs_target(self, workdir, capsys):
        (workdir / "run.ini").write_text(RUN + "[stop]\nkind = surpass_baseline\n")
        assert main(["train", "--config", str(workdir / "run.ini"), "--out", str(workdir / "a")]) == 1
        assert "target" in capsys.readouterr().err

    def test_invalid_config(self, workdir, capsys):
        (workdir / "run.ini").write_text(RUN.replace("C = 2", "C = 3"))
        assert main(["train", "--config", str(workdir / "run.ini"), "--out", str(workdir / "a")]) == 1
        err = capsys.readouterr().err
        assert "run.ini:" in err and "C=3" in err

    def test_manifest_geometry_mismatch(self, workdir, capsys):
        main(["gen-data", "--spec", str(workdir / "spec.ini"), "--out", str(workdir / "c")])
        text = RUN.replace("synthetic = spec.ini", "manifest = c/manifest.tsv\ntime_frames = 64")
        (workdir / "run.ini").write_text(text)
        assert main(["train", "--config", str(workdir / "run.ini"), "--out", str(workdir / "a")]) == 1
        assert "geometry" in capsys.readouterr().err

    def test_from_manifest(self, workdir):
        main(["gen-data", "--spec", str(workdir / "spec.ini"), "--out", str(workdir / "c")])
        (workdir / "run.ini").write_text(RUN.replace("synthetic = spec.ini", "manifest = c/manifest.tsv"))
        assert main(["train", "--config", str(workdir / "run.ini"), "--out", str(workdir / "a")]) == 0


class TestCompare:
    def test_outputs(self, workdir):
        (workdir / "run.ini").write_text(RUN + "[stop]\nkind = surpass_baseline\n")
        assert main(["compare", "--config", str(workdir / "run.ini"), "--out", str(workdir / "o")]) == 0
        base = read_runlog_csv(workdir / "o" / "baseline_runlog.csv")
        cur = read_runlog_csv(workdir / "o" / "runlog.csv")
        rows = read_comparison_csv(workdir / "o" / "compare.csv")
        assert len(base) == 3 and len(rows) == max(len(base), len(cur))
        assert [r.epoch for r in rows] == list(range(1, len(rows) + 1))
        assert rows[0].baseline_metric == base[0].eval_metric
        with open(workdir / "o" / "compare.csv", newline="") as f:
            assert len(list(csv.reader(f))) == len(rows) + 1


class TestArgs:
    def test_requires_command(self):
        with pytest.raises(SystemExit):
            main([])
