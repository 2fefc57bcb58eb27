"""End-to-end pipeline through the command line: exit codes, files,
reproducibility."""

import os

import numpy as np
import pytest

from dustbin_lab.cli import main
from dustbin_lab.harness import EvalReport

CONFIG = """
[experiment]
name = smoke
seed = 5

[data]
source = two-moons
n_per_class = 120
test_n_per_class = 60
noise_sigma = 0.08

[outdist]
kind = uniform-box
count = 160

[interp]
count = 80
alpha = 0.5

[mix]
in_dist = 240
out_dist = 160
interpolated = 80

[model]
architecture = mlp3
hidden = 24

[train]
learning_rate = 0.1
batch_size = 32
epochs = 120
optimizer = sgd-momentum

[eval]
attacks = fgs,ifgs
attack_limit = 40

[attack.fgs]
epsilon = 0.3

[attack.ifgs]
epsilon = 0.03
clip_radius = 0.3
iterations = 10
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli")
    cfg = path / "smoke.ini"
    cfg.write_text(CONFIG)
    return path


@pytest.fixture(scope="module")
def trained(workdir):
    out = workdir / "runs"
    code = main(["train", "--config", str(workdir / "smoke.ini"), "--out", str(out)])
    assert code == 0
    return out


class TestTrain:
    def test_writes_checkpoints_and_logs(self, workdir, trained):
        assert (trained / "smoke_naive.ckpt").exists()
        assert (trained / "smoke_augmented.ckpt").exists()
        assert (trained / "smoke_naive_loss.csv").exists()
        assert (trained / "smoke_train_meta.json").exists()
        assert (trained / "smoke_config.ini").exists()

    def test_missing_config_exits_2(self, workdir, capsys):
        code = main(["train", "--config", str(workdir / "absent.ini")])
        assert code == 2
        assert "absent.ini" in capsys.readouterr().err

    def test_rerun_is_byte_identical(self, workdir, trained, tmp_path):
        out2 = tmp_path / "rerun"
        code = main(["train", "--config", str(workdir / "smoke.ini"), "--out", str(out2)])
        assert code == 0
        a = (trained / "smoke_naive.ckpt").read_bytes()
        b = (out2 / "smoke_naive.ckpt").read_bytes()
        assert a == b
        a = (trained / "smoke_augmented.ckpt").read_bytes()
        b = (out2 / "smoke_augmented.ckpt").read_bytes()
        assert a == b


class TestAttack:
    def test_attack_csv(self, workdir, trained, tmp_path):
        out = tmp_path / "attacks"
        code = main([
            "attack", "--config", str(workdir / "smoke.ini"),
            "--model", str(trained / "smoke_naive.ckpt"),
            "--attack", "fgs", "--limit", "20", "--out", str(out),
        ])
        assert code == 0
        lines = (out / "smoke_fgs_attacks.csv").read_text().strip().splitlines()
        assert lines[0] == "sample_id,attack,success,linf,l2,iterations,source_label,adv_label"
        assert len(lines) == 21

    def test_epsilon_zero_never_succeeds_on_correct(self, workdir, trained, tmp_path):
        out = tmp_path / "eps0"
        code = main([
            "attack", "--config", str(workdir / "smoke.ini"),
            "--model", str(trained / "smoke_naive.ckpt"),
            "--attack", "fgs", "--epsilon", "0", "--limit", "30", "--out", str(out),
        ])
        assert code == 0
        rows = (out / "smoke_fgs_attacks.csv").read_text().strip().splitlines()[1:]
        for row in rows:
            _, _, success, _, _, _, src, adv = row.split(",")
            if src == adv:
                assert success == "0"

    def test_unknown_attack_exits_2(self, workdir, trained, capsys):
        code = main([
            "attack", "--config", str(workdir / "smoke.ini"),
            "--model", str(trained / "smoke_naive.ckpt"), "--attack", "bogus",
        ])
        assert code == 2
        assert "fgs" in capsys.readouterr().err  # lists valid names

    def test_deterministic_rerun(self, workdir, trained, tmp_path):
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            main([
                "attack", "--config", str(workdir / "smoke.ini"),
                "--model", str(trained / "smoke_naive.ckpt"),
                "--attack", "ifgs", "--limit", "10", "--out", str(out),
            ])
            outs.append((out / "smoke_ifgs_attacks.csv").read_bytes())
        assert outs[0] == outs[1]


class TestEval:
    def test_report_files_and_invariant(self, workdir, trained, tmp_path):
        out = tmp_path / "eval"
        code = main([
            "eval", "--config", str(workdir / "smoke.ini"),
            "--model", str(trained / "smoke_naive.ckpt"),
            "--model", str(trained / "smoke_augmented.ckpt"),
            "--source", str(trained / "smoke_naive.ckpt"),
            "--out", str(out),
        ])
        assert code == 0
        report = EvalReport.from_json((out / "smoke_report.json").read_text())
        assert len(report.rows) >= 4
        for cell in report.rows.values():
            total = cell.acc + cell.rej + cell.err + cell.below_threshold
            assert abs(total - 1.0) < 1e-12
        assert "config_sha256" in report.metadata
        csv_lines = (out / "smoke_report.csv").read_text().strip().splitlines()
        assert csv_lines[0] == "model,dataset,acc,rej,err"


class TestSelectOutdist:
    def test_ranking_and_artifacts(self, workdir, trained, tmp_path):
        cfg_text = CONFIG + """
[outdist.blobs]
kind = shifted-blobs
count = 120

[outdist.ring]
kind = ring
count = 120
radius = 3.0
"""
        cfg = tmp_path / "rank.ini"
        cfg.write_text(cfg_text.replace("name = smoke", "name = rank"))
        out = tmp_path / "rank-out"
        code = main([
            "select-outdist", "--config", str(cfg),
            "--model", str(trained / "smoke_naive.ckpt"), "--out", str(out),
        ])
        assert code == 0
        ranking = (out / "rank_outdist_ranking.csv").read_text().strip().splitlines()
        assert ranking[0] == "rank,set,score"
        assert len(ranking) == 4  # default section + two named candidates
        assert (out / "rank_outdist_ring.ppm").exists()
        assert (out / "rank_outdist_ring.csv").exists()

    def test_augmented_model_rejected(self, workdir, trained, capsys):
        code = main([
            "select-outdist", "--config", str(workdir / "smoke.ini"),
            "--model", str(trained / "smoke_augmented.ckpt"),
        ])
        assert code == 2


class TestPlot:
    def test_regions(self, workdir, trained, tmp_path):
        out = tmp_path / "plots"
        code = main([
            "plot", "--config", str(workdir / "smoke.ini"),
            "--model", str(trained / "smoke_augmented.ckpt"),
            "--kind", "regions", "--resolution", "40", "--out", str(out),
        ])
        assert code == 0
        blob = (out / "smoke_regions.ppm").read_bytes()
        assert blob.startswith(b"P6\n40 40\n255\n")
        assert len(blob) == 13 + 40 * 40 * 3

    def test_church_window_emits_requested_count(self, workdir, trained, tmp_path):
        out = tmp_path / "windows"
        code = main([
            "plot", "--config", str(workdir / "smoke.ini"),
            "--model", str(trained / "smoke_naive.ckpt"),
            "--kind", "church-window", "--windows", "4",
            "--resolution", "21", "--out", str(out),
        ])
        assert code == 0
        files = sorted(out.glob("smoke_window_0_*.ppm"))
        assert len(files) == 4

    def test_pca_csv(self, workdir, trained, tmp_path):
        out = tmp_path / "pca"
        code = main([
            "plot", "--config", str(workdir / "smoke.ini"),
            "--model", str(trained / "smoke_naive.ckpt"),
            "--kind", "pca", "--out", str(out),
        ])
        assert code == 0
        lines = (out / "smoke_pca.csv").read_text().strip().splitlines()
        assert lines[0].startswith("pc0,pc1")
        assert len(lines) == 121

    def test_histogram(self, workdir, trained, tmp_path):
        out = tmp_path / "hist"
        code = main([
            "plot", "--config", str(workdir / "smoke.ini"),
            "--model", str(trained / "smoke_naive.ckpt"),
            "--kind", "histogram", "--out", str(out),
        ])
        assert code == 0
        assert (out / "smoke_histogram.ppm").exists()

    def test_byte_identical_reruns(self, workdir, trained, tmp_path):
        blobs = []
        for sub in ("p1", "p2"):
            out = tmp_path / sub
            main([
                "plot", "--config", str(workdir / "smoke.ini"),
                "--model", str(trained / "smoke_naive.ckpt"),
                "--kind", "regions", "--resolution", "24", "--out", str(out),
            ])
            blobs.append((out / "smoke_regions.ppm").read_bytes())
        assert blobs[0] == blobs[1]


class TestUsage:
    def test_bad_subcommand_exits_2(self):
        assert main(["frobnicate"]) == 2

    def test_bad_threads_exits_2(self, workdir):
        code = main(["train", "--config", str(workdir / "smoke.ini"), "--threads", "0"])
        assert code == 2

    def test_env_var_data_dir(self, workdir, tmp_path, monkeypatch):
        import struct

        img = tmp_path / "imgs.idx"
        lbl = tmp_path / "lbls.idx"
        blob = struct.pack(">IIII", 0x00000803, 2, 2, 2) + bytes(8)
        img.write_bytes(blob)
        lbl.write_bytes(struct.pack(">II", 0x00000801, 2) + bytes([0, 1]))
        cfg = tmp_path / "idx.ini"
        cfg.write_text(
            "[experiment]\nname = idxsmoke\nseed = 1\n"
            "[data]\nsource = idx\nimages = imgs.idx\nlabels = lbls.idx\n"
            "k_classes = 2\nflatten = true\n"
            "[model]\narchitecture = mlp3\nhidden = 4\n"
            "[train]\nepochs = 1\n"
        )
        monkeypatch.setenv("DUSTBIN_LAB_DATA", str(tmp_path))
        out = tmp_path / "out"
        code = main(["train", "--config", str(cfg), "--out", str(out)])
        assert code == 0
        assert (out / "idxsmoke_naive.ckpt").exists()
