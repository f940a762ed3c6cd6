"""Test cases for the attack module."""

import json
import logging
from typing import Callable

import numpy as np
import pytest

from uniperturb.lib import attack
from uniperturb.lib.audio import Waveform
from uniperturb.lib.audio import fit_perturbation
from uniperturb.lib.audio import read_wav
from uniperturb.lib.errors import AllTranscriptsEmpty
from uniperturb.lib.errors import CorruptFile
from uniperturb.lib.errors import InvalidConfig
from uniperturb.lib.errors import NotFound
from uniperturb.lib.errors import ShapeMismatch
from uniperturb.lib.metrics import cer
from uniperturb.lib.nn import transcribe

QUICK = {"max_epochs": 1, "inner_max_iters": 3, "perturbation_len": 4000}


@pytest.mark.parametrize(
    "test",
    [
        {"args": [[-500.0, -10.0, 0.0, 299.5, 301.0], 300.0], "returns": [-300.0, -10.0, 0.0, 299.5, 300.0]},
        {"args": [[], 1.0], "returns": []},
    ],
)
def test_clip_inf(test: dict, function_tester: Callable) -> None:
    """Samples are clamped into the budget."""
    function_tester(test, lambda u, epsilon: attack.clip_inf(np.array(u), epsilon).tolist())


def test_sign_step() -> None:
    """Steps move against the gradient sign and keep v + r inside the budget."""
    cfg = attack.AttackConfig()
    assert attack.sign_step(np.zeros(1), np.array([3.0]), np.zeros(1), cfg).tolist() == [-5.0]
    assert attack.sign_step(np.zeros(1), np.array([0.0]), np.zeros(1), cfg).tolist() == [0.0]
    assert attack.sign_step(np.zeros(1), np.array([-1.0]), np.array([298.0]), cfg).tolist() == [2.0]
    assert attack.sign_step(np.zeros(1), np.array([1.0]), np.array([-298.0]), cfg).tolist() == [-2.0]


@pytest.mark.parametrize(
    "test",
    [
        {"args": [{"epsilon": 0}], "raises": InvalidConfig},
        {"args": [{"delta": 1.5}], "raises": InvalidConfig},
        {"args": [{"threshold": -0.1}], "raises": InvalidConfig},
        {"args": [{"alpha": 0}], "raises": InvalidConfig},
        {"args": [{"reg_c": -1}], "raises": InvalidConfig},
        {"args": [{"inner_max_iters": -1}], "raises": InvalidConfig},
        {"args": [{"perturbation_len": 0}], "raises": InvalidConfig},
        {
            "args": [None],
            "attributes": {"epsilon": 300.0, "delta": 0.9, "threshold": 0.5, "alpha": 5.0, "reg_c": 0.5, "max_epochs": 20},
        },
    ],
)
def test_attack_config(test: dict, function_tester: Callable) -> None:
    """Attack settings are validated."""
    function_tester(test, attack.AttackConfig)


def test_perturbation_is_bounded_and_read_only() -> None:
    """Perturbations never exceed their budget and cannot be modified."""
    with pytest.raises(InvalidConfig):
        attack.UniversalPerturbation(np.array([0.0, 301.0]), 300.0)
    with pytest.raises(ShapeMismatch):
        attack.UniversalPerturbation(np.zeros(0), 300.0)
    perturbation = attack.UniversalPerturbation(np.array([0.0, -300.0]), 300.0)
    with pytest.raises(ValueError):
        perturbation.samples[0] = 1.0


def test_inner_attack_without_iterations(toy_corpus: tuple, tiny_model: Callable) -> None:
    """With no sign steps allowed the clean utterance is returned untouched."""
    model = tiny_model()
    x = toy_corpus[0].read(0)
    result = attack.inner_attack(model, x, np.zeros(len(x)), transcribe(model, x), attack.AttackConfig({"inner_max_iters": 0}))
    assert result.iterations == 0
    assert result.achieved_cer == 0.0
    assert not np.any(result.r)


def test_inner_attack_reports_its_outcome(toy_corpus: tuple, tiny_model: Callable) -> None:
    """The achieved CER is the CER of the final signal, which stays within the budget."""
    model = tiny_model()
    x = toy_corpus[0].read(1)
    cfg = attack.AttackConfig({"epsilon": 3000, "alpha": 200, "threshold": 0, "inner_max_iters": 20, "perturbation_len": 3000})
    v = fit_perturbation(attack.random_perturbation(1000.0, 3000, seed=2), len(x))
    target = transcribe(model, x)
    result = attack.inner_attack(model, x, v, target, cfg)
    assert result.iterations <= 20
    assert result.achieved_cer == cer(target, transcribe(model, Waveform(x.samples + v + result.r)))
    assert np.max(np.abs(v + result.r)) <= 3000 + 1e-9
    assert not np.any(result.r[3000:])


@pytest.mark.parametrize("iterations", [4, 5])
def test_inner_attack_steps_accumulate(toy_corpus: tuple, tiny_model: Callable, iterations: int) -> None:
    """The norm penalty only regularises, repeated steps keep moving r away from zero."""
    model = tiny_model()
    x = toy_corpus[0].read(0)
    cfg = attack.AttackConfig({"epsilon": 300, "alpha": 5, "threshold": 1e6, "inner_max_iters": iterations})
    result = attack.inner_attack(model, x, np.zeros(len(x)), transcribe(model, x), cfg)
    assert result.iterations == iterations
    assert np.count_nonzero(result.r) > 0
    assert np.max(np.abs(result.r)) >= (iterations - 2) * cfg.alpha


def test_inner_attack_shape(toy_corpus: tuple, tiny_model: Callable) -> None:
    """The universal perturbation must already be fitted to the utterance."""
    model = tiny_model()
    x = toy_corpus[0].read(0)
    with pytest.raises(ShapeMismatch):
        attack.inner_attack(model, x, np.zeros(len(x) - 1), "a", attack.AttackConfig())


def test_zero_delta_does_nothing(toy_corpus: tuple, tiny_model: Callable) -> None:
    """A stopping rate of zero is met before the first epoch."""
    train, val, _ = toy_corpus
    perturbation = attack.universal_train(tiny_model(), train, val, attack.AttackConfig({**QUICK, "delta": 0}))
    assert perturbation.epochs_run == 0
    assert perturbation.history == []
    assert not np.any(perturbation.samples)


def test_zero_threshold_skips_every_utterance(toy_corpus: tuple, tiny_model: Callable) -> None:
    """When every utterance already counts as broken there is nothing to update."""
    train, val, _ = toy_corpus
    updates = []
    perturbation = attack.universal_train(
        tiny_model(), train, val, attack.AttackConfig({**QUICK, "threshold": 0}), on_update=updates.append
    )
    assert updates == []
    assert not np.any(perturbation.samples)
    assert perturbation.history == [0.0]
    assert perturbation.epochs_run == 1


def test_updates_stay_within_budget(toy_corpus: tuple, tiny_model: Callable) -> None:
    """Every intermediate perturbation respects the budget and the requested length."""
    train, val, _ = toy_corpus
    model = tiny_model()
    updates = []
    cfg = attack.AttackConfig({**QUICK, "epsilon": 50, "alpha": 20})
    perturbation = attack.universal_train(model, train, val, cfg, on_update=updates.append)
    assert 1 <= len(updates) <= len(train)
    for update in updates:
        assert update.shape == (4000,)
        assert np.max(np.abs(update)) <= 50.0
    assert np.array_equal(updates[-1], perturbation.samples)
    assert len(perturbation.history) == perturbation.epochs_run == 1
    assert perturbation.model_id == model.model_id
    assert perturbation.config_snapshot == cfg.to_dict()


def test_training_is_deterministic(toy_corpus: tuple, tiny_model: Callable) -> None:
    """One seed gives one perturbation."""
    train, val, _ = toy_corpus
    cfg = attack.AttackConfig({**QUICK, "epsilon": 80, "alpha": 20, "seed": 4})
    first = attack.universal_train(tiny_model(), train, val, cfg)
    second = attack.universal_train(tiny_model(), train, val, cfg, workers=2)
    assert np.array_equal(first.samples, second.samples)
    assert first.history == second.history


def test_empty_targets_are_reported(toy_corpus: tuple, tiny_model: Callable, caplog: pytest.LogCaptureFixture) -> None:
    """Training warns when the victim transcribes most utterances as nothing."""
    train, val, _ = toy_corpus
    model = tiny_model()
    model.params["out.bias"][model.blank] += 1e6
    with caplog.at_level(logging.WARNING, logger="uniperturb"):
        with pytest.raises(AllTranscriptsEmpty):
            attack.universal_train(model, train, val, attack.AttackConfig(QUICK))
    assert "non-empty clean transcription" in caplog.text


def test_random_perturbation() -> None:
    """Uniform noise stays in its budget, is reproducible, and is centred."""
    noise = attack.random_perturbation(200.0, 150000, seed=0)
    assert noise.shape == (150000,)
    assert np.max(np.abs(noise)) <= 200.0
    assert abs(float(np.mean(noise))) < 1.5
    assert np.array_equal(noise, attack.random_perturbation(200.0, 150000, seed=0))
    assert not np.array_equal(noise, attack.random_perturbation(200.0, 150000, seed=1))
    with pytest.raises(InvalidConfig):
        attack.random_perturbation(0.0, 10)


def test_search_reg_c_keeps_first_on_ties(toy_corpus: tuple, tiny_model: Callable) -> None:
    """Equal validation rates select the earliest candidate."""
    train, val, _ = toy_corpus
    cfg = attack.AttackConfig({**QUICK, "threshold": 0})
    best, rates = attack.search_reg_c(tiny_model(), train, val, cfg, [2.0, 0.1])
    assert best == 2.0
    assert rates == [0.0, 0.0]
    with pytest.raises(InvalidConfig):
        attack.search_reg_c(tiny_model(), train, val, cfg, [])


def test_save_load_round_trip(tmp_path: str) -> None:
    """Samples and metadata survive storage."""
    config = attack.AttackConfig({"epsilon": 100}).to_dict()
    perturbation = attack.UniversalPerturbation(np.array([1.0, -100.0, 0.5, 3.0]), 100.0, "ds_lite-abc", config, [0.25, 0.5], 2)
    path = str(tmp_path / "v.bin")
    attack.save_perturbation(path, perturbation)
    loaded = attack.load_perturbation(path)
    assert loaded.samples.tolist() == [1.0, -100.0, 0.5, 3.0]
    assert loaded.metadata() == perturbation.metadata()
    assert loaded.metadata()["perturbation_len"] == 4


def test_round_trip_at_fractional_budget(tmp_path: str) -> None:
    """Samples at a budget float32 cannot represent still load within that budget."""
    path = str(tmp_path / "v.bin")
    attack.save_perturbation(path, attack.UniversalPerturbation(np.array([150.3, -150.3, 0.0]), 150.3))
    loaded = attack.load_perturbation(path)
    assert loaded.epsilon == 150.3
    assert np.max(np.abs(loaded.samples)) <= 150.3
    assert loaded.samples.tolist() == pytest.approx([150.3, -150.3, 0.0], abs=1e-4)


def test_load_rejects_samples_beyond_budget(tmp_path: str) -> None:
    """A sidecar whose budget the samples exceed is corrupt."""
    path = str(tmp_path / "v.bin")
    attack.save_perturbation(path, attack.UniversalPerturbation(np.array([150.0, -20.0]), 150.0))
    meta = json.loads((tmp_path / "v.bin.json").read_text())
    (tmp_path / "v.bin.json").write_text(json.dumps({**meta, "epsilon": 100.0}))
    with pytest.raises(CorruptFile):
        attack.load_perturbation(path)


def test_load_errors(tmp_path: str) -> None:
    """Missing sidecars and truncated samples are rejected."""
    path = str(tmp_path / "v.bin")
    with pytest.raises(NotFound):
        attack.load_perturbation(path)
    attack.save_perturbation(path, attack.UniversalPerturbation(np.ones(5), 1.0))
    data = (tmp_path / "v.bin").read_bytes()
    (tmp_path / "v.bin").write_bytes(data[:-4])
    with pytest.raises(CorruptFile):
        attack.load_perturbation(path)
    (tmp_path / "v.bin").write_bytes(data + b"\x00\x00")
    with pytest.raises(CorruptFile):
        attack.load_perturbation(path)
    (tmp_path / "v.bin.json").write_text("{broken")
    with pytest.raises(CorruptFile):
        attack.load_perturbation(path)


def test_export_wav(tmp_path: str) -> None:
    """Perturbations can be listened to as PCM16 audio."""
    path = str(tmp_path / "v.wav")
    attack.export_wav(path, attack.UniversalPerturbation(np.array([0.4, -2.5, 300.0]), 300.0))
    assert read_wav(path).samples.tolist() == [0.0, -3.0, 300.0]
