import dataclasses
import hashlib
import json
import re

import numpy as np
import pytest

from multiarm import cli
from multiarm import datasets as dsets
from multiarm.config import load_config


def run_cli(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def small_cfg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.yaml"
    path.write_text("""
diffusion:
  epochs: 2
  batch_size: 64
  learning_rate: 1.0e-3
data:
  birrt_max_iters: 2000
""")
    return str(path)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory, small_cfg_file):
    out = tmp_path_factory.mktemp("data") / "single.mad"
    code = cli.main(["gen-data", "--config", small_cfg_file, "--family", "single",
                     "--episodes", "6", "--out", str(out), "--seed", "3"])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def tiny_checkpoint(tmp_path_factory, small_cfg_file, tiny_dataset):
    out = tmp_path_factory.mktemp("ckpt") / "single.ckpt"
    code = cli.main(["train", "--config", small_cfg_file, "--family", "single",
                     "--data", str(tiny_dataset), "--out", str(out), "--seed", "3"])
    assert code == 0
    return out


class TestGenData:
    def test_deterministic_output(self, tmp_path, small_cfg_file, capsys):
        a, b = tmp_path / "a.mad", tmp_path / "b.mad"
        for out in (a, b):
            code, _, _ = run_cli(["gen-data", "--config", small_cfg_file,
                                  "--family", "single", "--episodes", "4",
                                  "--out", str(out), "--seed", "5"], capsys)
            assert code == 0
        assert hashlib.sha256(a.read_bytes()).hexdigest() == \
            hashlib.sha256(b.read_bytes()).hexdigest()

    def test_empty_dataset_warns(self, tmp_path, small_cfg_file, capsys):
        out = tmp_path / "empty.mad"
        code, stdout, _ = run_cli(["gen-data", "--config", small_cfg_file,
                                   "--family", "single", "--episodes", "0",
                                   "--out", str(out)], capsys)
        assert code == 0
        assert "warning=empty-dataset" in stdout
        loaded = dsets.load_dataset(out)
        assert len(loaded) == 0

    def test_sidecar_matches_header(self, tiny_dataset):
        sidecar = json.loads((str(tiny_dataset) + ".json")
                             and open(str(tiny_dataset) + ".json").read())
        loaded = dsets.load_dataset(tiny_dataset)
        assert sidecar["records"] == len(loaded)
        assert sidecar["family"] == "single"
        assert sidecar["t_p"] == loaded.t_p


class TestTrain:
    def test_loss_lines_parse(self, tmp_path, small_cfg_file, tiny_dataset, capsys):
        out = tmp_path / "model.ckpt"
        code, stdout, _ = run_cli(["train", "--config", small_cfg_file, "--family",
                                   "single", "--data", str(tiny_dataset), "--out",
                                   str(out), "--seed", "3"], capsys)
        assert code == 0
        lines = [ln for ln in stdout.splitlines() if ln.startswith("epoch=")]
        assert len(lines) == 2
        for ln in lines:
            assert re.fullmatch(r"epoch=\d+ loss=\d+\.\d+", ln)

    def test_family_mismatch_no_output(self, tmp_path, small_cfg_file, tiny_dataset,
                                       capsys):
        out = tmp_path / "bad.ckpt"
        code, _, err = run_cli(["train", "--config", small_cfg_file, "--family",
                                "dual", "--data", str(tiny_dataset), "--out",
                                str(out)], capsys)
        assert code == 2
        assert "family-mismatch" in err
        assert not out.exists()

    def test_deterministic_checkpoint(self, tmp_path, small_cfg_file, tiny_dataset,
                                      capsys):
        outs = []
        for name in ("a.ckpt", "b.ckpt"):
            out = tmp_path / name
            code, _, _ = run_cli(["train", "--config", small_cfg_file, "--family",
                                  "single", "--data", str(tiny_dataset), "--out",
                                  str(out), "--seed", "3"], capsys)
            assert code == 0
            outs.append(out.read_bytes())
        assert hashlib.sha256(outs[0]).hexdigest() == hashlib.sha256(outs[1]).hexdigest()


class TestPlan:
    def test_single_arm_json_and_dump(self, tmp_path, small_cfg_file,
                                      tiny_checkpoint, capsys):
        dump = tmp_path / "trace.jsonl"
        code, stdout, _ = run_cli(["plan", "--config", small_cfg_file, "--random",
                                   "1", "--single", str(tiny_checkpoint), "--seed",
                                   "4", "--dump", str(dump)], capsys)
        assert code == 0
        payload = json.loads(stdout.strip().splitlines()[-1])
        assert set(payload) >= {"success", "steps", "collision", "task_digest",
                                "config_digest"}
        assert len(dump.read_text().splitlines()) == payload["steps"]

    def test_same_seed_same_json(self, small_cfg_file, tiny_checkpoint, capsys):
        outs = []
        for _ in range(2):
            code, stdout, _ = run_cli(["plan", "--config", small_cfg_file,
                                       "--random", "1", "--single",
                                       str(tiny_checkpoint), "--seed", "4"], capsys)
            assert code == 0
            outs.append(stdout.strip().splitlines()[-1])
        assert outs[0] == outs[1]

    def test_missing_checkpoint(self, small_cfg_file, capsys):
        code, _, err = run_cli(["plan", "--config", small_cfg_file, "--random", "1",
                                "--single", "/nonexistent.ckpt"], capsys)
        assert code == 2
        assert "file-not-found" in err

    def test_requires_task_or_random(self, small_cfg_file, tiny_checkpoint, capsys):
        code, _, err = run_cli(["plan", "--config", small_cfg_file, "--single",
                                str(tiny_checkpoint)], capsys)
        assert code == 2
        assert "missing-task" in err


class TestLayout:
    def test_width_table(self, capsys):
        code, stdout, _ = run_cli(["layout"], capsys)
        assert code == 0
        assert "frame width (dof=3): 20" in stdout
        assert "paired conditioning width (T_o=2): 80" in stdout

    def test_stable_output(self, capsys):
        _, first, _ = run_cli(["layout"], capsys)
        _, second, _ = run_cli(["layout"], capsys)
        assert first == second


class TestChecks:
    def test_wrong_morphology_checkpoint_rejected(self, tmp_path, small_cfg_file,
                                                  tiny_checkpoint, capsys):
        other_cfg = tmp_path / "other.yaml"
        other_cfg.write_text("morphology: {link_lengths: [0.4, 0.4, 0.4]}\n")
        code, _, err = run_cli(["plan", "--config", str(other_cfg), "--random", "1",
                                "--single", str(tiny_checkpoint)], capsys)
        assert code == 2
        assert "incompatible-checkpoint" in err
