import csv
import subprocess
import sys

import numpy as np
import pytest

from sephrnet.cli import main
from sephrnet.data import load_dataset

TINY = ["--data.n_scenes=6", "--data.frames=2", "--train.epochs=2", "--train.batch_size=3"]


def read_csv(path):
    with open(path) as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert main(["train", "--out", str(out), "--threads", "1", "--seed", "3", *TINY]) == 0
    return out


def test_generate_writes_a_dataset(tmp_path):
    assert main(["generate", "--out", str(tmp_path), "--data.n_scenes=3", "--data.frames=2"]) == 0
    scenes, k = load_dataset(tmp_path / "dataset.spst")
    assert k == 6 and len(scenes) == 3 and scenes[0].frames.shape == (2, 4, 32, 32)


def test_train_outputs(trained):
    rows = read_csv(trained / "metrics.csv")
    assert [r["epoch"] for r in rows] == ["0", "1"]
    assert list(rows[0]) == ["epoch", "lr", "loss", "accuracy", "precision", "recall", "f1", "miou"]
    for name in ("model.spck", "best.spck"):
        assert (trained / name).read_bytes()[:4] == b"SPCK"


def test_eval_reproduces_the_logged_metrics(trained, tmp_path):
    ck = str(trained / "model.spck")
    assert main(["eval", "--out", str(tmp_path), f"--eval.checkpoint={ck}", "--eval.split=train", "--eval.max_maps=2", *TINY]) == 0
    report = read_csv(tmp_path / "report.csv")[0]
    final = read_csv(trained / "metrics.csv")[-1]
    for key in ("accuracy", "precision", "recall", "f1", "miou"):
        assert float(report[key]) == float(final[key])
    assert len(read_csv(tmp_path / "per_class.csv")) == 6
    assert len(list((tmp_path / "maps").glob("*.png"))) == 4
    assert (tmp_path / "report.txt").read_text().startswith("split")


def test_ensemble_train_and_eval(tmp_path):
    out = tmp_path / "ens"
    assert main(["train", "--out", str(out), "--ensemble.members=2", "--model.paradigm=ed", *TINY, "--train.epochs=1"]) == 0
    assert (out / "ensemble.json").exists() and (out / "member-1.spck").exists()
    rep = tmp_path / "rep"
    assert main(["eval", "--out", str(rep), f"--eval.checkpoint={out / 'ensemble.json'}", *TINY]) == 0
    assert read_csv(rep / "report.csv")[0]["scenes"] == "1"


def test_ablate_writes_twelve_rows(tmp_path):
    args = ["ablate", "--out", str(tmp_path), "--data.n_scenes=4", "--data.frames=2", "--train.epochs=1",
            "--train.batch_size=4", "--ablate.members=2"]
    assert main(args) == 0
    rows = read_csv(tmp_path / "ablation.csv")
    assert len(rows) == 12
    assert {(r["paradigm"], r["conv"], r["mode"]) for r in rows} == {
        (p, c, m) for p in ("ed", "eld", "esd") for c in ("separable", "standard") for m in ("single", "ensemble")
    }


def test_bench_reports_parameter_savings(tmp_path):
    assert main(["bench", "--out", str(tmp_path), "--bench.repeats=1", "--bench.batch=1", "--data.frames=2"]) == 0
    rows = read_csv(tmp_path / "bench.csv")
    assert len(rows) == 6
    for r in rows:
        assert int(r["encoder_params"]) == int(r["closed_form"])
    sep = {r["paradigm"]: int(r["encoder_params"]) for r in rows if r["conv"] == "separable"}
    std = {r["paradigm"]: int(r["encoder_params"]) for r in rows if r["conv"] == "standard"}
    saving = {int(r["saving"]) for r in rows if r["conv"] == "separable"}
    assert all(std[p] - sep[p] in saving and std[p] > sep[p] for p in sep)


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[data]\nn_scenes = 3\nframes = 2\n')
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path), "--data.noise=0"]) == 0
    scenes, _ = load_dataset(tmp_path / "dataset.spst")
    assert len(scenes) == 3
    assert np.unique(scenes[0].frames[:, 0]).size <= 6  # noiseless: one value per class


@pytest.mark.parametrize(
    "args, code",
    [
        (["train", "--model.preset=huge"], 3),
        (["train", "--model.paradigm=rnn"], 3),
        (["train", "--train.lr=fast"], 2),
        (["train", "--nonsense.key=1"], 2),
        (["train", "--threads", "0"], 2),
        (["eval"], 2),
        (["train", "--data.path=/does/not/exist.spst"], 4),
        (["eval", "--eval.checkpoint=/does/not/exist.spck"], 5),
    ],
)
def test_exit_codes(args, code, tmp_path, capsys):
    assert main([*args, "--out", str(tmp_path)]) == code
    assert capsys.readouterr().err.startswith("sephrnet ")


def test_bad_config_file(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[data\n")
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    cfg.write_text("[data]\nbogus = 1\n")
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_corrupt_inputs(tmp_path, trained):
    bad = tmp_path / "bad.spst"
    bad.write_bytes(b"SPSTgarbage")
    assert main(["train", f"--data.path={bad}", "--out", str(tmp_path)]) == 4
    ck = tmp_path / "bad.spck"
    ck.write_bytes((trained / "model.spck").read_bytes()[:100])
    assert main(["eval", f"--eval.checkpoint={ck}", "--out", str(tmp_path), *TINY]) == 5


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "sephrnet", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "generate" in res.stdout
    res = subprocess.run([sys.executable, "-m", "sephrnet", "bogus"], capture_output=True, text=True)
    assert res.returncode == 2
