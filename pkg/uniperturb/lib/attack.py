"""Universal adversarial perturbations against a victim acoustic model.

A single perturbation v is accumulated over a training corpus. Utterances which v does not yet break get a
minimal extra perturbation from an iterative gradient sign attack on the model's own clean transcription, and
the sum is projected back into the l-infinity ball of radius epsilon after every update.
"""

import json
import logging
import os
from typing import Callable
from typing import List
from typing import NamedTuple
from typing import Sequence
from typing import Tuple

import numpy as np

from uniperturb.lib import ctc
from uniperturb.lib.audio import Corpus
from uniperturb.lib.audio import Waveform
from uniperturb.lib.audio import fit_perturbation
from uniperturb.lib.audio import write_wav
from uniperturb.lib.dsp import mfcc_backward
from uniperturb.lib.dsp import mfcc_forward
from uniperturb.lib.errors import CorruptFile
from uniperturb.lib.errors import EmptyCorpus
from uniperturb.lib.errors import GradientNonFinite
from uniperturb.lib.errors import InvalidConfig
from uniperturb.lib.errors import IoError
from uniperturb.lib.errors import NotFound
from uniperturb.lib.errors import ShapeMismatch
from uniperturb.lib.logs import LogService
from uniperturb.lib.metrics import cer
from uniperturb.lib.metrics import evaluate_universal
from uniperturb.lib.nn import AcousticModel
from uniperturb.lib.nn import model_backward
from uniperturb.lib.nn import model_forward
from uniperturb.lib.nn import transcribe

SIDECAR_SUFFIX = ".json"
MIN_NONEMPTY_FRACTION = 0.9


class AttackConfig(object):
    """Configuration information to control universal perturbation training.

    Attributes:
        epsilon: Largest absolute sample value of the perturbation, in int16 units.
        delta: Validation success rate at which training stops.
        threshold: CER above which an utterance counts as broken.
        alpha: Size of each sign step, in int16 units.
        reg_c: Weight of the squared norm penalty on the per-utterance perturbation.
        inner_max_iters: Sign steps allowed per utterance.
        max_epochs: Passes over the training corpus allowed.
        perturbation_len: Length of the perturbation in samples.
        seed: Seed of the per-epoch shuffles and of random baselines.
    """

    EPSILON = 300.0
    DELTA = 0.9
    THRESHOLD = 0.5
    ALPHA = 5.0
    REG_C = 0.5
    INNER_MAX_ITERS = 50
    MAX_EPOCHS = 20
    PERTURBATION_LEN = 150000
    SEED = 0

    def __init__(self, config: dict = None) -> None:
        """Initializes attributes from a user specified configuration object or defaults.

        Args:
            config: User predefined values for initialization.
        """
        if not config:
            config = {}
        self.epsilon = float(config.get("epsilon", AttackConfig.EPSILON))
        self.delta = float(config.get("delta", AttackConfig.DELTA))
        self.threshold = float(config.get("threshold", AttackConfig.THRESHOLD))
        self.alpha = float(config.get("alpha", AttackConfig.ALPHA))
        self.reg_c = float(config.get("reg_c", AttackConfig.REG_C))
        self.inner_max_iters = int(config.get("inner_max_iters", AttackConfig.INNER_MAX_ITERS))
        self.max_epochs = int(config.get("max_epochs", AttackConfig.MAX_EPOCHS))
        self.perturbation_len = int(config.get("perturbation_len", AttackConfig.PERTURBATION_LEN))
        self.seed = int(config.get("seed", AttackConfig.SEED))
        self.validate()

    def replace(self, **changes: float) -> "AttackConfig":
        """Creates a validated copy with some fields changed."""
        return AttackConfig({**self.to_dict(), **changes})

    def to_dict(self) -> dict:
        """Snapshot of the configuration for reports and sidecars."""
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "threshold": self.threshold,
            "alpha": self.alpha,
            "reg_c": self.reg_c,
            "inner_max_iters": self.inner_max_iters,
            "max_epochs": self.max_epochs,
            "perturbation_len": self.perturbation_len,
            "seed": self.seed,
        }

    def validate(self) -> None:
        """Ensure the values describe a usable attack."""
        if self.epsilon <= 0:
            raise InvalidConfig(f"epsilon must be positive, found {self.epsilon}")
        if not 0 <= self.delta <= 1:
            raise InvalidConfig(f"delta must be in [0, 1], found {self.delta}")
        if self.threshold < 0:
            raise InvalidConfig(f"threshold must be non-negative, found {self.threshold}")
        if self.alpha <= 0:
            raise InvalidConfig(f"alpha must be positive, found {self.alpha}")
        if self.reg_c < 0:
            raise InvalidConfig(f"reg_c must be non-negative, found {self.reg_c}")
        if self.inner_max_iters < 0 or self.max_epochs < 0:
            raise InvalidConfig("inner_max_iters and max_epochs must be non-negative")
        if self.perturbation_len < 1:
            raise InvalidConfig(f"perturbation_len must be positive, found {self.perturbation_len}")


class UniversalPerturbation(object):
    """A single additive signal meant to break the transcription of most utterances.

    Attributes:
        samples: Read-only perturbation vector, every value within [-epsilon, epsilon].
        epsilon: Budget the samples were clipped to.
        model_id: Identifier of the victim model, empty for random baselines.
        config_snapshot: Attack configuration which produced the perturbation.
        history: Validation success rate after each epoch.
        epochs_run: Number of passes over the training corpus.
    """

    def __init__(
        self,
        samples: np.ndarray,
        epsilon: float,
        model_id: str = "",
        config_snapshot: dict = None,
        history: List[float] = None,
        epochs_run: int = 0,
    ) -> None:
        """Validate and freeze the samples."""
        values = np.array(samples, dtype=np.float64).reshape(-1)
        if not values.shape[0]:
            raise ShapeMismatch("A perturbation needs at least one sample")
        if np.max(np.abs(values)) > epsilon:
            raise InvalidConfig(f"Perturbation exceeds its budget of {epsilon}")
        values.flags.writeable = False
        self.samples = values
        self.epsilon = epsilon
        self.model_id = model_id
        self.config_snapshot = config_snapshot or {}
        self.history = list(history or [])
        self.epochs_run = epochs_run

    def __len__(self) -> int:
        """Number of samples of the perturbation."""
        return self.samples.shape[0]

    def metadata(self) -> dict:
        """Everything stored in the sidecar of a saved perturbation."""
        snapshot = self.config_snapshot
        return {
            "epsilon": self.epsilon,
            "alpha": snapshot.get("alpha"),
            "reg_c": snapshot.get("reg_c"),
            "threshold": snapshot.get("threshold"),
            "model_id": self.model_id,
            "seed": snapshot.get("seed"),
            "epochs_run": self.epochs_run,
            "val_success_history": self.history,
            "perturbation_len": len(self),
            "config": snapshot,
        }


class InnerResult(NamedTuple):
    """Outcome of the per-utterance attack.

    Attributes:
        r: Extra perturbation over the utterance.
        achieved_cer: CER of the transcription of x + v + r against the target.
        iterations: Sign steps taken.
    """

    r: np.ndarray
    achieved_cer: float
    iterations: int


def clip_inf(u: np.ndarray, epsilon: float) -> np.ndarray:
    """Clamps every sample to [-epsilon, epsilon]."""
    return np.clip(np.asarray(u, dtype=np.float64), -epsilon, epsilon)


def sign_step(r: np.ndarray, grad: np.ndarray, v_current: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """One projected step of the iterative gradient sign method.

    Args:
        r: Current per-utterance perturbation.
        grad: Gradient of the objective with respect to r.
        v_current: Universal perturbation fitted to the utterance.
        cfg: Step size and budget.

    Returns:
        The next r, such that v_current + r stays within the budget.
    """
    stepped = r - cfg.alpha * np.sign(grad)
    return clip_inf(v_current + stepped, cfg.epsilon) - v_current


def inner_attack(
    model: AcousticModel,
    x: Waveform,
    v_current: np.ndarray,
    target: ctc.Transcript,
    cfg: AttackConfig,
) -> InnerResult:
    """Searches a small extra perturbation which breaks the transcription of one utterance.

    Minimizes c * |r|^2 / |x|^2 - CTC(f(x + v + r), target) with sign steps, stopping as soon as the CER of
    the transcription against the target exceeds the threshold or the iteration cap is reached. The penalty is
    measured against the energy of the clean utterance so that c keeps the same meaning at any amplitude.

    Args:
        model: Victim model.
        x: Clean utterance.
        v_current: Universal perturbation already fitted to len(x).
        target: The model's clean transcription of x.
        cfg: Attack settings.

    Returns:
        The final r, even when the attack did not succeed.
    """
    v_current = np.asarray(v_current, dtype=np.float64)
    if v_current.shape != x.samples.shape:
        raise ShapeMismatch(f"Perturbation of {v_current.shape[0]} samples does not fit a signal of {len(x)}")
    r = np.zeros(len(x))
    energy = max(float(np.dot(x.samples, x.samples)), 1.0)
    iterations = 0
    while True:
        feats, mfcc_tape = mfcc_forward(x.samples + v_current + r, model.feature_config)
        logits, model_tape = model_forward(model, feats)
        achieved = cer(target, ctc.greedy_decode(logits))
        if achieved > cfg.threshold or iterations >= cfg.inner_max_iters:
            return InnerResult(r, achieved, iterations)
        _, grad_logits = ctc.ctc_loss(logits, target)
        # The objective maximizes the CTC loss, so its logit gradient is the negated CTC gradient.
        grad_feats, _ = model_backward(model_tape, -grad_logits, with_params=False)
        grad = 2.0 * cfg.reg_c * r / energy + mfcc_backward(mfcc_tape, grad_feats)
        if not np.all(np.isfinite(grad)):
            raise GradientNonFinite(f"Non-finite gradient after {iterations} iterations")
        # Samples past the universal perturbation cannot carry any update.
        grad[cfg.perturbation_len :] = 0.0
        r = sign_step(r, grad, v_current, cfg)
        iterations += 1


class UniversalAttack(LogService):
    """Accumulates a universal perturbation over a training corpus.

    Attributes:
        config: Attack settings.
        workers: Threads used by the per-epoch validation.
    """

    def __init__(self, config: AttackConfig = None, workers: int = 1, logger: logging.Logger = None) -> None:
        """Set up the attack with its settings."""
        super(UniversalAttack, self).__init__(logger or logging.getLogger(__name__))
        self.config = config or AttackConfig()
        self.workers = workers

    def train(
        self,
        model: AcousticModel,
        train: Corpus,
        val: Corpus,
        on_update: Callable[[np.ndarray], None] = None,
    ) -> UniversalPerturbation:
        """Builds a perturbation until its validation success rate reaches delta or the epoch cap.

        Args:
            model: Victim model.
            train: Utterances the perturbation is built from.
            val: Utterances the stopping rule is measured on.
            on_update: Called with a copy of v after every update.

        Returns:
            The perturbation with its per-epoch validation history.
        """
        cfg = self.config
        if not len(train) or not len(val):
            raise EmptyCorpus("Universal training needs non-empty train and validation corpora")
        v = np.zeros(cfg.perturbation_len)
        waveforms = train.waveforms()
        targets = [transcribe(model, waveform) for waveform in waveforms]
        nonempty = sum(1 for target in targets if target) / len(targets)
        if nonempty < MIN_NONEMPTY_FRACTION:
            self.log_message(
                f"Only {nonempty:.0%} of training utterances have a non-empty clean transcription",
                level=logging.WARNING,
            )

        rng = np.random.default_rng(cfg.seed)
        history = []
        rate = 0.0
        epoch = 0
        while rate < cfg.delta and epoch < cfg.max_epochs:
            epoch += 1
            updates = 0
            for index in rng.permutation(len(waveforms)):
                target = targets[index]
                if not target:
                    continue
                x = waveforms[index]
                fitted = fit_perturbation(v, len(x))
                if cer(target, transcribe(model, Waveform(x.samples + fitted))) >= cfg.threshold:
                    continue
                result = inner_attack(model, x, fitted, target, cfg)
                self.log_message(
                    f"Utterance {index}: CER {result.achieved_cer:.3f} after {result.iterations} iterations",
                    level=logging.DEBUG,
                )
                v = clip_inf(v + fit_perturbation(result.r, cfg.perturbation_len), cfg.epsilon)
                updates += 1
                if on_update:
                    on_update(v.copy())
            rate = evaluate_universal(model, val, v, cfg.threshold, self.workers).success_rate
            history.append(rate)
            self.log_message(f"Epoch {epoch}: {updates} updates, validation success rate {rate:.4f}")
        return UniversalPerturbation(v, cfg.epsilon, model.model_id, cfg.to_dict(), history, epoch)


def universal_train(
    model: AcousticModel,
    train: Corpus,
    val: Corpus,
    cfg: AttackConfig = None,
    on_update: Callable[[np.ndarray], None] = None,
    workers: int = 1,
) -> UniversalPerturbation:
    """Builds a universal perturbation; deterministic for a given seed.

    Args:
        model: Victim model.
        train: Utterances the perturbation is built from.
        val: Utterances the stopping rule is measured on.
        cfg: Attack settings.
        on_update: Called with a copy of v after every update.
        workers: Threads used by the per-epoch validation.

    Returns:
        The trained perturbation.
    """
    return UniversalAttack(cfg, workers).train(model, train, val, on_update)


def random_perturbation(epsilon: float, length: int, seed: int = 0) -> np.ndarray:
    """Independent uniform samples on [-epsilon, epsilon]."""
    if epsilon <= 0:
        raise InvalidConfig(f"epsilon must be positive, found {epsilon}")
    return np.random.default_rng(seed).uniform(-epsilon, epsilon, size=length)


def search_reg_c(
    model: AcousticModel,
    train: Corpus,
    val: Corpus,
    cfg: AttackConfig,
    candidates: Sequence[float],
    workers: int = 1,
) -> Tuple[float, List[float]]:
    """Chooses the regularization weight with the best validation success rate.

    Args:
        model: Victim model.
        train: Utterances the perturbations are built from.
        val: Utterances the candidates are compared on.
        cfg: Attack settings shared by every candidate.
        candidates: Weights to try, in order; ties keep the earliest.
        workers: Threads used by validation.

    Returns:
        The best weight and the validation success rate of every candidate.
    """
    if not candidates:
        raise InvalidConfig("At least one regularization weight is needed")
    rates = []
    for reg_c in candidates:
        perturbation = universal_train(model, train, val, cfg.replace(reg_c=reg_c), workers=workers)
        rates.append(evaluate_universal(model, val, perturbation, cfg.threshold, workers).success_rate)
    best = max(range(len(rates)), key=lambda index: (rates[index], -index))
    return float(candidates[best]), rates


def save_perturbation(path: str, perturbation: UniversalPerturbation) -> None:
    """Writes raw little-endian float32 samples and a JSON sidecar next to them.

    Args:
        path: Location of the sample file; the sidecar is ``path + ".json"``.
        perturbation: The perturbation to store.
    """
    try:
        with open(path, "wb") as sample_file:
            sample_file.write(np.asarray(perturbation.samples, dtype="<f4").tobytes())
        with open(path + SIDECAR_SUFFIX, "wt", encoding="utf-8") as sidecar:
            json.dump(perturbation.metadata(), sidecar, indent=2, sort_keys=True)
    except OSError as error:
        raise IoError(f"Unable to write perturbation {path}: {error}") from error


def load_perturbation(path: str) -> UniversalPerturbation:
    """Reads a perturbation written by save_perturbation.

    Args:
        path: Location of the sample file.

    Returns:
        The stored perturbation.
    """
    for required in (path, path + SIDECAR_SUFFIX):
        if not os.path.isfile(required):
            raise NotFound(f"No perturbation file found: {required}")
    with open(path, "rb") as sample_file:
        data = sample_file.read()
    try:
        with open(path + SIDECAR_SUFFIX, "rt", encoding="utf-8") as sidecar:
            meta = json.load(sidecar)
    except ValueError as error:
        raise CorruptFile(f"Invalid perturbation sidecar for {path}") from error
    if len(data) % 4 or len(data) // 4 != meta.get("perturbation_len"):
        raise CorruptFile(f"Perturbation {path} does not hold {meta.get('perturbation_len')} float32 samples")
    samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    epsilon = float(meta["epsilon"])
    if np.max(np.abs(samples), initial=0.0) > np.float32(epsilon):
        raise CorruptFile(f"Perturbation {path} exceeds its stored budget of {epsilon}")
    # Rounding to float32 may move a sample at the budget just past it.
    return UniversalPerturbation(
        clip_inf(samples, epsilon),
        epsilon,
        meta.get("model_id", ""),
        meta.get("config", {}),
        meta.get("val_success_history", []),
        int(meta.get("epochs_run", 0)),
    )


def export_wav(path: str, perturbation: UniversalPerturbation) -> None:
    """Writes the perturbation as a PCM16 WAV file for listening."""
    write_wav(path, Waveform(perturbation.samples))
