"""Test cases for the uniperturb command line application."""

import json
import os

import numpy as np
import pytest

from uniperturb.lib import attack
from uniperturb.lib import nn
from uniperturb.lib.audio import load_manifest
from uniperturb.lib.dsp import MfccConfig
from uniperturb.lib.errors import InvalidConfig
from uniperturb.scripts import uniperturb

SYNTH = {"train_count": 4, "val_count": 2, "test_count": 2, "min_len": 3, "max_len": 4, "seed": 7}
QUICK_ATTACK = {"max_epochs": 1, "inner_max_iters": 2, "perturbation_len": 3000, "epsilon": 200}


def _write_config(path: str, config: dict) -> str:
    with open(path, "wt", encoding="utf-8") as config_file:
        json.dump(config, config_file)
    return path


def _error(capsys: pytest.CaptureFixture) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture
def corpus_dir(tmp_path: str, capsys: pytest.CaptureFixture) -> str:
    """A small synthetic corpus generated through the command line."""
    config = _write_config(str(tmp_path / "synth.json"), SYNTH)
    assert uniperturb.main(["synth", "-c", config, "-o", str(tmp_path / "corpus")]) == 0
    capsys.readouterr()
    return str(tmp_path / "corpus")


@pytest.fixture
def victim(corpus_dir: str, tmp_path: str) -> str:
    """Stored untrained victim whose blank output never wins."""
    train = load_manifest(os.path.join(corpus_dir, "train.csv"), "abcdefghij")
    mean, std = nn.feature_stats(nn.corpus_features(train, MfccConfig()))
    model = nn.init_model(nn.DS_LITE, train.alphabet, MfccConfig(), 0, {"context": 1, "hidden": [16, 16]}, mean, std)
    model.params["out.bias"][model.blank] -= 10.0
    path = str(tmp_path / "victim.bin")
    nn.save_model(path, model)
    return path


def test_load_config_overrides(tmp_path: str) -> None:
    """Flags take precedence over the file, and lists are split on commas."""
    config_path = _write_config(str(tmp_path / "config.json"), {"epsilon": 300.0, "alpha": 2.0, "sizes": [10]})
    args = uniperturb.parse_args(
        ["sweep", "-c", config_path, "--epsilon", "50", "--epsilon-grid", "100,200", "--sizes", "1,2", "--timing"]
    )
    config = uniperturb.load_config(args)
    assert config["epsilon"] == 50.0
    assert config["alpha"] == 2.0
    assert config["epsilon_grid"] == [100.0, 200.0]
    assert config["sizes"] == [1, 2]
    assert config["timing"] is True
    assert "debug" not in config


def test_load_config_bad_list() -> None:
    """Lists must hold numbers."""
    with pytest.raises(InvalidConfig):
        uniperturb.load_config(uniperturb.parse_args(["size-sweep", "--sizes", "1,two"]))


@pytest.mark.parametrize(
    "content,message",
    [
        (None, "No configuration file found"),
        ("{not json", "Invalid configuration file detected"),
        ("[1, 2]", "must hold a JSON object"),
    ],
)
def test_load_config_bad_file(tmp_path: str, capsys: pytest.CaptureFixture, content: str, message: str) -> None:
    """Unusable configuration files are reported and ignored."""
    path = tmp_path / "config.json"
    if content is not None:
        path.write_text(content)
    config = uniperturb.load_config(uniperturb.parse_args(["synth", "-c", str(path)]))
    assert config == {}
    assert message in capsys.readouterr().out


def test_missing_argument_reports_error(capsys: pytest.CaptureFixture) -> None:
    """Commands without their inputs fail with a machine readable error."""
    assert uniperturb.main(["eval"]) == 1
    assert _error(capsys) == {"error": "InvalidConfig", "message": "--model is required for this command"}


def test_plot_data_missing_report(tmp_path: str, capsys: pytest.CaptureFixture) -> None:
    """Missing reports are reported as NotFound."""
    assert uniperturb.main(["plot-data", "--report", str(tmp_path / "none.json")]) == 1
    assert _error(capsys)["error"] == "NotFound"


def test_unknown_command() -> None:
    """Argument parsing rejects unknown commands."""
    with pytest.raises(SystemExit):
        uniperturb.parse_args(["defend"])


def test_synth(corpus_dir: str) -> None:
    """Synthesis writes one manifest per split."""
    for split, count in (("train", 4), ("val", 2), ("test", 2)):
        assert len(load_manifest(os.path.join(corpus_dir, f"{split}.csv"), "abcdefghij")) == count


def test_train(corpus_dir: str, tmp_path: str, capsys: pytest.CaptureFixture) -> None:
    """Training stores a loadable model and reports its training error."""
    config = _write_config(str(tmp_path / "train.json"), {"epochs": 0, "hyper": {"context": 1, "hidden": [8, 8]}})
    out = str(tmp_path / "model.bin")
    assert uniperturb.main(["train", "-c", config, "--manifest", os.path.join(corpus_dir, "train.csv"), "-o", out]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["model_id"] == nn.load_model(out).model_id
    assert result["train_cer"] >= 0.0


def test_attack_eval_and_baseline(corpus_dir: str, victim: str, tmp_path: str, capsys: pytest.CaptureFixture) -> None:
    """A perturbation built from the command line can be evaluated, compared with noise, and plotted."""
    config = _write_config(str(tmp_path / "attack.json"), QUICK_ATTACK)
    manifests = {split: os.path.join(corpus_dir, f"{split}.csv") for split in ("train", "val", "test")}
    perturbation = str(tmp_path / "v.bin")
    attack_args = ["attack", "-c", config, "--model", victim, "--manifest", manifests["train"], "--val-manifest", manifests["val"]]
    assert uniperturb.main(attack_args + ["-o", perturbation]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["epochs_run"] == 1
    assert len(result["history"]) == 1
    assert os.path.isfile(perturbation + ".json")
    assert os.path.isfile(perturbation + ".wav")

    eval_args = ["eval", "-c", config, "--model", victim, "--manifest", manifests["test"], "--perturbation", perturbation]
    assert uniperturb.main(eval_args) == 0
    evaluation = json.loads(capsys.readouterr().out)
    assert evaluation["n_items"] == 2
    assert 0.0 <= evaluation["success_rate"] <= 1.0

    report = str(tmp_path / "baseline.json")
    baseline_args = ["baseline", "-c", config, "--model", victim, "--test-manifest", manifests["test"]]
    assert uniperturb.main(baseline_args + ["--perturbation", perturbation, "-o", report]) == 0
    saved = json.loads(capsys.readouterr().out)
    assert saved["rows"] == 2
    assert os.path.isfile(saved["csv"])

    assert uniperturb.main(["plot-data", "--report", report, "--kind", "baseline"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "epsilon,universal_success_rate,random_success_rate"
    assert len(lines) == 2
    assert lines[1].startswith("200.0,")


def test_tune_c(corpus_dir: str, victim: str, tmp_path: str, capsys: pytest.CaptureFixture) -> None:
    """Ties between candidates keep the first one."""
    config = _write_config(str(tmp_path / "tune.json"), {**QUICK_ATTACK, "threshold": 0})
    args = ["tune-c", "-c", config, "--model", victim, "--reg-c-grid", "0.5,0.1"]
    args += ["--manifest", os.path.join(corpus_dir, "train.csv"), "--val-manifest", os.path.join(corpus_dir, "val.csv")]
    assert uniperturb.main(args) == 0
    assert json.loads(capsys.readouterr().out) == {"reg_c": 0.5, "candidates": [0.5, 0.1], "val_success_rates": [0.0, 0.0]}


def test_stored_perturbation_respects_budget(corpus_dir: str, victim: str, tmp_path: str, capsys: pytest.CaptureFixture) -> None:
    """The stored samples stay inside the requested budget."""
    config = _write_config(str(tmp_path / "attack.json"), {**QUICK_ATTACK, "alpha": 50})
    out = str(tmp_path / "v.bin")
    args = ["attack", "-c", config, "--model", victim, "--epsilon", "60", "-o", out]
    args += ["--manifest", os.path.join(corpus_dir, "train.csv"), "--val-manifest", os.path.join(corpus_dir, "val.csv")]
    assert uniperturb.main(args) == 0
    capsys.readouterr()
    samples = np.fromfile(out, dtype="<f4")
    assert samples.shape == (3000,)
    assert np.max(np.abs(samples)) <= 60.0


def _manifests(corpus_dir: str) -> list:
    splits = zip(("--manifest", "--val-manifest", "--test-manifest"), ("train", "val", "test"))
    return [part for flag, split in splits for part in (flag, os.path.join(corpus_dir, f"{split}.csv"))]


def test_sweep_reports_are_reproducible(corpus_dir: str, victim: str, tmp_path: str, capsys: pytest.CaptureFixture) -> None:
    """Running the same sweep twice writes byte-identical reports that record how they were launched."""
    config = _write_config(str(tmp_path / "sweep.json"), QUICK_ATTACK)
    out = str(tmp_path / "sweep_report.json")
    args = ["sweep", "-c", config, "--model", victim, "--epsilon-grid", "100,200", "-o", out] + _manifests(corpus_dir)
    stored = []
    for _ in range(2):
        assert uniperturb.main(args) == 0
        assert json.loads(capsys.readouterr().out)["rows"] == 6
        with open(out, "rb") as report_file:
            stored.append(report_file.read())
    assert stored[0] == stored[1]
    meta = json.loads(stored[0])["meta"]
    assert meta["run_config"]["epsilon_grid"] == [100.0, 200.0]
    assert meta["run_config"]["inner_max_iters"] == 2
    assert meta["models"][0]["hyper"]["hidden"] == [16, 16]
    assert meta["models"][0]["feature_config"] == MfccConfig().to_dict()


def test_size_sweep(corpus_dir: str, victim: str, tmp_path: str, capsys: pytest.CaptureFixture) -> None:
    """Each requested training size becomes one test row."""
    config = _write_config(str(tmp_path / "sizes.json"), QUICK_ATTACK)
    out = str(tmp_path / "sizes_report.json")
    args = ["size-sweep", "-c", config, "--model", victim, "--sizes", "0,2", "-o", out] + _manifests(corpus_dir)
    assert uniperturb.main(args) == 0
    assert json.loads(capsys.readouterr().out)["rows"] == 2
    assert uniperturb.main(["plot-data", "--report", out, "--kind", "size"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "train_size,success_rate,mean_cer"
    assert [line.split(",")[0] for line in lines[1:]] == ["0", "2"]
    assert lines[1].startswith("0,0.0,")


def test_size_sweep_too_large(corpus_dir: str, victim: str, tmp_path: str, capsys: pytest.CaptureFixture) -> None:
    """Sizes beyond the training split fail with a machine readable error."""
    args = ["size-sweep", "--model", victim, "--sizes", "5", "-o", str(tmp_path / "r.json")] + _manifests(corpus_dir)
    assert uniperturb.main(args) == 1
    assert _error(capsys)["error"] == "ExperimentError"


def test_transfer(corpus_dir: str, victim: str, tmp_path: str, capsys: pytest.CaptureFixture) -> None:
    """A stored perturbation is evaluated on its own victim and on a second architecture."""
    train = load_manifest(os.path.join(corpus_dir, "train.csv"), "abcdefghij")
    mean, std = nn.feature_stats(nn.corpus_features(train, MfccConfig()))
    other = nn.init_model(nn.WN_LITE, train.alphabet, MfccConfig(), 0, {"channels": 8, "dilations": [1, 2]}, mean, std)
    other.params["out.bias"][other.blank] -= 10.0
    other_path = str(tmp_path / "other.bin")
    nn.save_model(other_path, other)
    source = nn.load_model(victim)
    perturbation = str(tmp_path / "v.bin")
    attack.save_perturbation(perturbation, attack.UniversalPerturbation(np.zeros(3000), 200.0, source.model_id))

    out = str(tmp_path / "transfer.json")
    args = ["transfer", "--model", victim, "--perturbation", perturbation, "-o", out]
    args += ["--test-manifest", os.path.join(corpus_dir, "test.csv")]
    assert uniperturb.main(args + ["--model-b", other_path]) == 0
    assert json.loads(capsys.readouterr().out)["rows"] == 2
    with open(out, "rt", encoding="utf-8") as report_file:
        report = json.load(report_file)
    assert [row["model_id"] for row in report["rows"]] == [source.model_id, other.model_id]
    assert all(row["success_rate"] == 0.0 for row in report["rows"])
    assert [described["arch"] for described in report["meta"]["models"]] == [nn.DS_LITE, nn.WN_LITE]

    assert uniperturb.main(args + ["--model-b", victim]) == 1
    assert _error(capsys)["error"] == "ExperimentError"
