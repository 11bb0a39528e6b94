import os
import subprocess
import sys

import pytest

CLI = [sys.executable, "-m", "tcn_anticipation"]


def run(*argv, env=None, check=True):
    full_env = dict(os.environ)
    if env:
        full_env.update(env)
    proc = subprocess.run(CLI + list(argv), capture_output=True, text=True, env=full_env)
    if check and proc.returncode != 0:
        raise AssertionError(f"command failed ({proc.returncode}):\n{proc.stderr}")
    return proc


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    run("synth-gen", "--out", str(out), "--seed", "11", "--preset", "learnable",
        "--config", _tiny_cfg(tmp_path_factory))
    return out


def _tiny_cfg(tmp_path_factory):
    cfg = tmp_path_factory.mktemp("cfg") / "tiny.txt"
    cfg.write_text("train_per_class = 8\nval_per_class = 4\n", encoding="utf-8")
    return str(cfg)


@pytest.fixture(scope="module")
def trained_branch(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    run("train-branch", "--data", str(synth_dir), "--out", str(out),
        "--modality", "rgb", "--seed", "3", "--epochs", "2", "--lr", "0.02",
        "--batch", "16", "--channels", "12")
    return out


class TestSynthGen:
    def test_writes_splits_and_summary(self, synth_dir):
        assert (synth_dir / "train" / "index.csv").exists()
        assert (synth_dir / "val" / "index.csv").exists()
        assert (synth_dir / "summary.txt").exists()

    def test_fixed_seed_byte_identical_artifacts(self, tmp_path, tmp_path_factory):
        cfg = _tiny_cfg(tmp_path_factory)
        a, b = tmp_path / "a", tmp_path / "b"
        run("synth-gen", "--out", str(a), "--seed", "9", "--config", cfg)
        run("synth-gen", "--out", str(b), "--seed", "9", "--config", cfg)
        assert (a / "train" / "index.csv").read_bytes() == \
            (b / "train" / "index.csv").read_bytes()
        sample = "train-000-00000_rgb.fseq"
        assert (a / "train" / "features" / sample).read_bytes() == \
            (b / "train" / "features" / sample).read_bytes()

    def test_unknown_preset_fails(self, tmp_path):
        proc = run("synth-gen", "--out", str(tmp_path / "x"), "--preset", "nope",
                   check=False)
        assert proc.returncode == 2
        assert "preset" in proc.stderr


class TestConfigHandling:
    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "bad.txt"
        cfg.write_text("not_a_key = 1\n", encoding="utf-8")
        proc = run("synth-gen", "--out", str(tmp_path / "o"), "--config", str(cfg),
                   check=False)
        assert proc.returncode == 2 and "unknown config key" in proc.stderr

    def test_malformed_line_rejected(self, tmp_path):
        cfg = tmp_path / "bad.txt"
        cfg.write_text("epochs\n", encoding="utf-8")
        proc = run("synth-gen", "--out", str(tmp_path / "o"), "--config", str(cfg),
                   check=False)
        assert proc.returncode == 2 and "key = value" in proc.stderr

    def test_flags_override_config(self, tmp_path, synth_dir):
        cfg = tmp_path / "c.txt"
        cfg.write_text("epochs = 50\nchannels = 12\nlr = 0.02\n", encoding="utf-8")
        out = tmp_path / "run"
        run("train-branch", "--data", str(synth_dir), "--out", str(out),
            "--modality", "rgb", "--seed", "1", "--config", str(cfg),
            "--epochs", "1", "--batch", "16")
        log = (out / "train_log_rgb.csv").read_text().strip().splitlines()
        assert len(log) == 2  # header + one epoch: the flag won

    def test_env_seed_fallback(self, tmp_path, tmp_path_factory):
        cfg = _tiny_cfg(tmp_path_factory)
        a, b = tmp_path / "a", tmp_path / "b"
        run("synth-gen", "--out", str(a), "--config", cfg, env={"TCNA_SEED": "77"})
        run("synth-gen", "--out", str(b), "--seed", "77", "--config", cfg)
        assert (a / "train" / "features" / "train-000-00000_rgb.fseq").read_bytes() == \
            (b / "train" / "features" / "train-000-00000_rgb.fseq").read_bytes()


class TestTrainEvaluate:
    def test_train_branch_artifacts(self, trained_branch):
        assert (trained_branch / "branch_rgb.ckpt").exists()
        assert (trained_branch / "branch_rgb_best.ckpt").exists()
        log = (trained_branch / "train_log_rgb.csv").read_text().splitlines()
        assert log[0] == "epoch,lr,train_loss,val_top1_action,val_top5_action,wall_seconds"
        assert len(log) == 3

    def test_deterministic_modulo_timing_columns(self, synth_dir, tmp_path):
        logs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            run("train-branch", "--data", str(synth_dir), "--out", str(out),
                "--modality", "flow", "--seed", "5", "--epochs", "2", "--lr", "0.02",
                "--batch", "16", "--channels", "12")
            rows = (out / "train_log_flow.csv").read_text().splitlines()
            logs.append([",".join(r.split(",")[:-1]) for r in rows])  # drop wall_seconds
        assert logs[0] == logs[1]

    def test_missing_data_dir_fails(self, tmp_path):
        proc = run("train-branch", "--data", str(tmp_path / "nope"),
                   "--out", str(tmp_path / "o"), check=False)
        assert proc.returncode == 2

    def test_fusion_then_evaluate(self, synth_dir, trained_branch, tmp_path):
        for mod in ("flow", "obj"):
            run("train-branch", "--data", str(synth_dir), "--out", str(trained_branch),
                "--modality", mod, "--seed", "3", "--epochs", "1", "--lr", "0.02",
                "--batch", "16", "--channels", "12")
        out = tmp_path / "fusion"
        run("train-fusion", "--data", str(synth_dir), "--out", str(out),
            "--strategy", "mutual", "--seed", "4", "--epochs", "1", "--lr", "0.01",
            "--batch", "16", "--embed-dim", "16",
            "--rgb-ckpt", str(trained_branch / "branch_rgb_best.ckpt"),
            "--flow-ckpt", str(trained_branch / "branch_flow_best.ckpt"),
            "--obj-ckpt", str(trained_branch / "branch_obj_best.ckpt"),
            "--config", "/dev/null")
        ckpt = out / "fusion_mutual.ckpt"
        assert ckpt.exists()
        eval_out = tmp_path / "eval"
        proc = run("evaluate", "--ckpt", str(ckpt), "--data", str(synth_dir),
                   "--out", str(eval_out))
        assert (eval_out / "metrics.csv").exists()
        assert "action" in proc.stdout

    def test_evaluate_branch_checkpoint(self, synth_dir, trained_branch, tmp_path):
        eval_out = tmp_path / "eval"
        run("evaluate", "--ckpt", str(trained_branch / "branch_rgb_best.ckpt"),
            "--data", str(synth_dir), "--out", str(eval_out))
        lines = (eval_out / "metrics.csv").read_text().splitlines()
        assert lines[0] == "head,top1,top5,mean_top5_recall" and len(lines) == 4

    def test_mismatched_fusion_checkpoint_modality(self, synth_dir, trained_branch, tmp_path):
        proc = run("train-fusion", "--data", str(synth_dir), "--out", str(tmp_path / "o"),
                   "--strategy", "late",
                   "--rgb-ckpt", str(trained_branch / "branch_rgb_best.ckpt"),
                   "--flow-ckpt", str(trained_branch / "branch_rgb_best.ckpt"),
                   "--obj-ckpt", str(trained_branch / "branch_rgb_best.ckpt"),
                   check=False)
        assert proc.returncode == 2 and "flow" in proc.stderr


class TestGradcheckCommand:
    def test_exit_zero_and_table(self, tmp_path):
        proc = run("gradcheck", "--dtype", "f64", "--seed", "0",
                   "--out", str(tmp_path))
        assert "conv1d" in proc.stdout and "fusion" in proc.stdout
        csv = (tmp_path / "gradcheck.csv").read_text().splitlines()
        assert csv[0] == "layer,configs,max_rel_error,pass"
        assert all(row.endswith(",1") for row in csv[1:])

    def test_f32_rejected(self):
        proc = run("gradcheck", "--dtype", "f32", check=False)
        assert proc.returncode == 2


class TestStudies:
    def test_ablate_fusion_row_structure(self, tmp_path, tmp_path_factory):
        data = tmp_path / "data"
        run("synth-gen", "--out", str(data), "--seed", "2", "--preset", "complementary",
            "--config", _tiny_cfg(tmp_path_factory))
        out = tmp_path / "study"
        run("ablate-fusion", "--data", str(data), "--out", str(out), "--seed", "1",
            "--epochs", "1", "--channels", "12", "--batch", "16")
        rows = (out / "fusion_ablation.csv").read_text().strip().splitlines()
        assert rows[0] == "model,val_top1_action"
        assert [r.split(",")[0] for r in rows[1:]] == \
            ["rgb", "flow", "obj", "late", "attention", "mutual", "pairwise",
             "mutual_pairwise"]

    def test_ablate_obslen_rows(self, tmp_path, tmp_path_factory):
        data = tmp_path / "data"
        run("synth-gen", "--out", str(data), "--seed", "2", "--preset", "long-range",
            "--config", _tiny_cfg(tmp_path_factory))
        out = tmp_path / "study"
        run("ablate-obslen", "--data", str(data), "--out", str(out), "--seed", "1",
            "--epochs", "1", "--channels", "12", "--batch", "16")
        rows = (out / "obslen.csv").read_text().strip().splitlines()
        assert rows[0] == "snippets,obs_seconds,val_top1_action"
        assert [r.split(",")[0] for r in rows[1:]] == ["3", "7", "13", "21"]
