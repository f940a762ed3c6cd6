"""Victim acoustic models over MFCC features, with hand written reverse-mode gradients.

Two architectures share the feature front-end:

    DS_LITE: normalize -> context window (+/- 4 frames) -> dense + clipped ReLU (x2) -> dense to logits
    WN_LITE: normalize -> dense to channels -> residual dilated tanh convolutions (1, 2, 4, 8) -> dense to logits

Each layer exposes ``forward(params, x) -> (y, cache)`` and ``backward(params, cache, grad_y)``, and a model is
an ordered list of layers. Models are trained with CTC and SGD with momentum.
"""

import abc
import hashlib
import json
import logging
import math
import os
from typing import Dict
from typing import List
from typing import Tuple

import numpy as np

from uniperturb.lib import ctc
from uniperturb.lib.audio import Corpus
from uniperturb.lib.audio import Waveform
from uniperturb.lib.dsp import FeatureMatrix
from uniperturb.lib.dsp import MfccConfig
from uniperturb.lib.dsp import mfcc_forward
from uniperturb.lib.errors import CorruptFile
from uniperturb.lib.errors import DivergedTraining
from uniperturb.lib.errors import EmptyCorpus
from uniperturb.lib.errors import InvalidConfig
from uniperturb.lib.errors import IoError
from uniperturb.lib.errors import NotFound
from uniperturb.lib.errors import ShapeMismatch
from uniperturb.lib.logs import LogService

DS_LITE = "DS_LITE"
WN_LITE = "WN_LITE"
ARCHS = (DS_LITE, WN_LITE)
RELU_CAP = 20.0
MODEL_FORMAT = "uniperturb-model"
MODEL_VERSION = 1

DEFAULT_HYPER = {
    DS_LITE: {"context": 4, "hidden": [256, 256], "relu_cap": RELU_CAP},
    WN_LITE: {"channels": 64, "kernel": 3, "dilations": [1, 2, 4, 8]},
}

Params = Dict[str, np.ndarray]


class Layer(object, metaclass=abc.ABCMeta):
    """A differentiable stage of an acoustic model.

    Attributes:
        name: Prefix of the parameters owned by the layer.
    """

    def __init__(self, name: str) -> None:
        """Set the parameter prefix of the layer."""
        self.name = name

    def param_shapes(self) -> Dict[str, Tuple[Tuple[int, ...], int]]:
        """Shape and fan-in of every parameter owned by the layer, in initialization order."""
        return {}

    @abc.abstractmethod
    def forward(self, params: Params, x: np.ndarray) -> Tuple[np.ndarray, tuple]:
        """Computes the output of the layer and the values needed by backward."""

    @abc.abstractmethod
    def backward(self, params: Params, cache: tuple, grad_y: np.ndarray, grads: Params = None) -> np.ndarray:
        """Returns the input gradient, adding parameter gradients into ``grads`` when provided."""


class Normalize(Layer):
    """Fixed per-coefficient standardization of the features."""

    def __init__(self, mean: np.ndarray, std: np.ndarray) -> None:
        """Store the statistics measured on the training features."""
        super(Normalize, self).__init__("normalize")
        self.mean = mean
        self.std = std

    def forward(self, params: Params, x: np.ndarray) -> Tuple[np.ndarray, tuple]:
        """Standardize each coefficient."""
        return (x - self.mean) / self.std, ()

    def backward(self, params: Params, cache: tuple, grad_y: np.ndarray, grads: Params = None) -> np.ndarray:
        """Scale the gradient back to feature units."""
        return grad_y / self.std


class ContextWindow(Layer):
    """Stacks each frame with its neighbors, zero padded at the edges."""

    def __init__(self, context: int) -> None:
        """Set the number of neighbors on each side."""
        super(ContextWindow, self).__init__("context")
        self.context = context

    def forward(self, params: Params, x: np.ndarray) -> Tuple[np.ndarray, tuple]:
        """Concatenate frames t - context .. t + context for every t."""
        frames, width = x.shape
        padded = np.pad(x, ((self.context, self.context), (0, 0)))
        stacked = np.concatenate([padded[offset : offset + frames] for offset in range(2 * self.context + 1)], axis=1)
        return stacked, (frames, width)

    def backward(self, params: Params, cache: tuple, grad_y: np.ndarray, grads: Params = None) -> np.ndarray:
        """Scatter every window slot back onto the frame it was copied from."""
        frames, width = cache
        grad_padded = np.zeros((frames + 2 * self.context, width))
        for offset in range(2 * self.context + 1):
            grad_padded[offset : offset + frames] += grad_y[:, offset * width : (offset + 1) * width]
        return grad_padded[self.context : self.context + frames]


class Dense(Layer):
    """Affine map applied to every frame."""

    def __init__(self, name: str, in_dim: int, out_dim: int) -> None:
        """Set the input and output widths."""
        super(Dense, self).__init__(name)
        self.in_dim = in_dim
        self.out_dim = out_dim

    def param_shapes(self) -> Dict[str, Tuple[Tuple[int, ...], int]]:
        """Weight matrix and bias, both initialized from the input width."""
        return {
            f"{self.name}.weight": ((self.in_dim, self.out_dim), self.in_dim),
            f"{self.name}.bias": ((self.out_dim,), self.in_dim),
        }

    def forward(self, params: Params, x: np.ndarray) -> Tuple[np.ndarray, tuple]:
        """Compute x W + b."""
        return x @ params[f"{self.name}.weight"] + params[f"{self.name}.bias"], (x,)

    def backward(self, params: Params, cache: tuple, grad_y: np.ndarray, grads: Params = None) -> np.ndarray:
        """Propagate through the affine map."""
        (x,) = cache
        if grads is not None:
            grads[f"{self.name}.weight"] += x.T @ grad_y
            grads[f"{self.name}.bias"] += grad_y.sum(axis=0)
        return grad_y @ params[f"{self.name}.weight"].T


class ClippedRelu(Layer):
    """min(max(z, 0), cap); the gradient is zero outside the open interval (0, cap)."""

    def __init__(self, cap: float = RELU_CAP) -> None:
        """Set the activation ceiling."""
        super(ClippedRelu, self).__init__("relu")
        self.cap = cap

    def forward(self, params: Params, x: np.ndarray) -> Tuple[np.ndarray, tuple]:
        """Clip the activations."""
        return np.clip(x, 0.0, self.cap), ((x > 0.0) & (x < self.cap),)

    def backward(self, params: Params, cache: tuple, grad_y: np.ndarray, grads: Params = None) -> np.ndarray:
        """Pass gradients only through unclipped units."""
        (passing,) = cache
        return grad_y * passing


class ResidualDilatedConv(Layer):
    """h + tanh(conv(h)) with a dilated convolution over the frame axis and zero padding."""

    def __init__(self, name: str, channels: int, kernel: int, dilation: int) -> None:
        """Set the width, kernel size, and dilation of the convolution."""
        super(ResidualDilatedConv, self).__init__(name)
        self.channels = channels
        self.kernel = kernel
        self.dilation = dilation
        self.pad = (kernel // 2) * dilation

    def param_shapes(self) -> Dict[str, Tuple[Tuple[int, ...], int]]:
        """One channels x channels matrix per kernel tap, plus a bias."""
        fan_in = self.kernel * self.channels
        return {
            f"{self.name}.weight": ((self.kernel, self.channels, self.channels), fan_in),
            f"{self.name}.bias": ((self.channels,), fan_in),
        }

    def _taps(self, padded: np.ndarray, frames: int) -> List[np.ndarray]:
        """Shifted views of the padded input, one per kernel tap."""
        return [padded[tap * self.dilation : tap * self.dilation + frames] for tap in range(self.kernel)]

    def forward(self, params: Params, x: np.ndarray) -> Tuple[np.ndarray, tuple]:
        """Apply the residual convolution block."""
        frames = x.shape[0]
        weight = params[f"{self.name}.weight"]
        padded = np.pad(x, ((self.pad, self.pad), (0, 0)))
        conv = params[f"{self.name}.bias"] + sum(view @ weight[tap] for tap, view in enumerate(self._taps(padded, frames)))
        activation = np.tanh(conv)
        return x + activation, (padded, activation)

    def backward(self, params: Params, cache: tuple, grad_y: np.ndarray, grads: Params = None) -> np.ndarray:
        """Propagate through the skip path and the convolution path."""
        padded, activation = cache
        frames = grad_y.shape[0]
        weight = params[f"{self.name}.weight"]
        grad_conv = grad_y * (1.0 - activation * activation)
        grad_padded = np.zeros_like(padded)
        for tap, view in enumerate(self._taps(padded, frames)):
            start = tap * self.dilation
            grad_padded[start : start + frames] += grad_conv @ weight[tap].T
            if grads is not None:
                grads[f"{self.name}.weight"][tap] += view.T @ grad_conv
        if grads is not None:
            grads[f"{self.name}.bias"] += grad_conv.sum(axis=0)
        return grad_y + grad_padded[self.pad : self.pad + frames]


class TrainConfig(object):
    """Configuration information to control victim model training.

    Attributes:
        epochs: Passes over the training corpus.
        batch_size: Utterances averaged per update.
        learning_rate: Step size of SGD.
        momentum: Momentum coefficient of SGD.
        clip_norm: Largest global gradient norm applied per update, 0 to disable.
        seed: Seed for initialization and shuffling.
    """

    EPOCHS = 30
    BATCH_SIZE = 8
    LEARNING_RATE = 2e-3
    MOMENTUM = 0.9
    CLIP_NORM = 5.0
    SEED = 0

    def __init__(self, config: dict = None) -> None:
        """Initializes attributes from a user specified configuration object or defaults.

        Args:
            config: User predefined values for initialization.
        """
        if not config:
            config = {}
        self.epochs = int(config.get("epochs", TrainConfig.EPOCHS))
        self.batch_size = int(config.get("batch_size", TrainConfig.BATCH_SIZE))
        self.learning_rate = float(config.get("learning_rate", TrainConfig.LEARNING_RATE))
        self.momentum = float(config.get("momentum", TrainConfig.MOMENTUM))
        self.clip_norm = float(config.get("clip_norm", TrainConfig.CLIP_NORM))
        self.seed = int(config.get("seed", TrainConfig.SEED))
        if self.epochs < 0:
            raise InvalidConfig(f"epochs must be non-negative, found {self.epochs}")
        if self.batch_size < 1:
            raise InvalidConfig(f"batch_size must be positive, found {self.batch_size}")
        if self.learning_rate <= 0:
            raise InvalidConfig(f"learning_rate must be positive, found {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise InvalidConfig(f"momentum must be in [0, 1), found {self.momentum}")

    def replace(self, **changes: float) -> "TrainConfig":
        """Creates a validated copy with some fields changed."""
        return TrainConfig({**self.to_dict(), **changes})

    def to_dict(self) -> dict:
        """Snapshot of the configuration for persistence."""
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "clip_norm": self.clip_norm,
            "seed": self.seed,
        }


class AcousticModel(object):
    """A victim network f mapping MFCC features to per-frame logits.

    Attributes:
        arch: Architecture tag, DS_LITE or WN_LITE.
        params: Named parameter tensors in initialization order.
        alphabet: Output characters; the blank is the implicit extra column.
        feature_config: Front-end the model consumes.
        hyper: Architecture hyperparameters.
        feature_mean: Per-coefficient mean removed before the first layer.
        feature_std: Per-coefficient scale divided out before the first layer.
    """

    def __init__(
        self,
        arch: str,
        params: Params,
        alphabet: str,
        feature_config: MfccConfig,
        hyper: dict = None,
        feature_mean: np.ndarray = None,
        feature_std: np.ndarray = None,
    ) -> None:
        """Validate the parameters against the architecture."""
        if arch not in ARCHS:
            raise InvalidConfig(f"Unknown architecture {arch}, expected one of {ARCHS}")
        self.arch = arch
        self.alphabet = alphabet
        self.feature_config = feature_config
        self.hyper = merge_hyper(arch, hyper)
        width = feature_config.n_coeffs
        self.feature_mean = np.zeros(width) if feature_mean is None else np.asarray(feature_mean, dtype=np.float64)
        self.feature_std = np.ones(width) if feature_std is None else np.asarray(feature_std, dtype=np.float64)
        self.layers = build_layers(arch, self.hyper, alphabet, feature_config, self.feature_mean, self.feature_std)
        expected = param_shapes(self.layers)
        if list(params) != list(expected):
            raise ShapeMismatch(f"Parameters {list(params)} do not match {arch} layout {list(expected)}")
        for name, (shape, _) in expected.items():
            if tuple(params[name].shape) != shape:
                raise ShapeMismatch(f"Parameter {name} has shape {params[name].shape}, expected {shape}")
            if not np.all(np.isfinite(params[name])):
                raise DivergedTraining(f"Parameter {name} holds non-finite values")
        self.params = {name: np.asarray(value, dtype=np.float64) for name, value in params.items()}

    @property
    def blank(self) -> int:
        """Index of the blank output."""
        return len(self.alphabet)

    @property
    def model_id(self) -> str:
        """Stable identifier derived from the architecture and stored parameter bytes."""
        digest = hashlib.sha256()
        for value in self.params.values():
            digest.update(np.asarray(value, dtype="<f4").tobytes())
        return f"{self.arch.lower()}-{digest.hexdigest()[:12]}"


class ModelTape(object):
    """Layer caches of a forward pass, consumed by model_backward.

    Attributes:
        model: The model which ran the forward pass.
        caches: One cache per layer, in forward order.
        frames: Number of frames of the input.
    """

    def __init__(self, model: AcousticModel, caches: List[tuple], frames: int) -> None:
        """Store the caches of a forward pass."""
        self.model = model
        self.caches = caches
        self.frames = frames


def merge_hyper(arch: str, hyper: dict = None) -> dict:
    """Architecture defaults overridden by user supplied hyperparameters."""
    if arch not in ARCHS:
        raise InvalidConfig(f"Unknown architecture {arch}, expected one of {ARCHS}")
    return {**DEFAULT_HYPER[arch], **(hyper or {})}


def build_layers(
    arch: str,
    hyper: dict,
    alphabet: str,
    feature_config: MfccConfig,
    feature_mean: np.ndarray = None,
    feature_std: np.ndarray = None,
) -> List[Layer]:
    """Creates the layer stack of an architecture.

    Args:
        arch: Architecture tag.
        hyper: Complete hyperparameters of the architecture.
        alphabet: Output characters.
        feature_config: Front-end feeding the first layer.
        feature_mean: Per-coefficient mean removed by the first layer.
        feature_std: Per-coefficient scale divided out by the first layer.

    Returns:
        The layers in forward order.
    """
    width = feature_config.n_coeffs
    outputs = len(alphabet) + 1
    layers = [Normalize(feature_mean, feature_std)]
    if arch == DS_LITE:
        context = int(hyper["context"])
        layers.append(ContextWindow(context))
        in_dim = (2 * context + 1) * width
        for index, hidden in enumerate(hyper["hidden"], start=1):
            layers.append(Dense(f"fc{index}", in_dim, int(hidden)))
            layers.append(ClippedRelu(float(hyper["relu_cap"])))
            in_dim = int(hidden)
        layers.append(Dense("out", in_dim, outputs))
    else:
        channels = int(hyper["channels"])
        layers.append(Dense("input", width, channels))
        for index, dilation in enumerate(hyper["dilations"], start=1):
            layers.append(ResidualDilatedConv(f"conv{index}", channels, int(hyper["kernel"]), int(dilation)))
        layers.append(Dense("out", channels, outputs))
    return layers


def param_shapes(layers: List[Layer]) -> Dict[str, Tuple[Tuple[int, ...], int]]:
    """Shapes and fan-ins of every parameter of a layer stack, in initialization order."""
    shapes = {}
    for layer in layers:
        shapes.update(layer.param_shapes())
    return shapes


def init_model(
    arch: str,
    alphabet: str,
    feature_config: MfccConfig = None,
    seed: int = 0,
    hyper: dict = None,
    feature_mean: np.ndarray = None,
    feature_std: np.ndarray = None,
) -> AcousticModel:
    """Creates a model with parameters drawn uniformly from [-s, s], s = 1 / sqrt(fan_in).

    Args:
        arch: Architecture tag.
        alphabet: Output characters.
        feature_config: Front-end the model consumes.
        seed: Seed of the initialization.
        hyper: Overrides of the architecture hyperparameters.
        feature_mean: Per-coefficient mean of the training features.
        feature_std: Per-coefficient standard deviation of the training features.

    Returns:
        A freshly initialized model.
    """
    feature_config = feature_config or MfccConfig()
    layers = build_layers(arch, merge_hyper(arch, hyper), alphabet, feature_config)
    rng = np.random.default_rng(seed)
    params = {}
    for name, (shape, fan_in) in param_shapes(layers).items():
        scale = 1.0 / math.sqrt(fan_in)
        params[name] = rng.uniform(-scale, scale, size=shape)
    return AcousticModel(arch, params, alphabet, feature_config, hyper, feature_mean, feature_std)


def model_forward(model: AcousticModel, feats: FeatureMatrix) -> Tuple[ctc.Logits, ModelTape]:
    """Computes per-frame logits from MFCC features.

    Args:
        model: The acoustic model.
        feats: Features produced with the model's front-end configuration.

    Returns:
        The logits and the tape for model_backward.
    """
    values = np.asarray(feats.values, dtype=np.float64)
    if feats.config != model.feature_config or values.ndim != 2 or values.shape[1] != model.feature_config.n_coeffs:
        raise ShapeMismatch(f"Features of shape {values.shape} do not match the model front-end")
    caches = []
    hidden = values
    for layer in model.layers:
        hidden, cache = layer.forward(model.params, hidden)
        caches.append(cache)
    return ctc.Logits(hidden, model.alphabet), ModelTape(model, caches, values.shape[0])


def model_backward(tape: ModelTape, grad_logits: np.ndarray, with_params: bool = True) -> Tuple[np.ndarray, Params]:
    """Back-propagates a logit gradient to the features and the parameters.

    Args:
        tape: Tape of the matching forward pass.
        grad_logits: T x (len(alphabet) + 1) gradient of a scalar objective.
        with_params: Whether parameter gradients are accumulated; skipped when only the input gradient is needed.

    Returns:
        The feature gradient, and the parameter gradients (empty when not requested).
    """
    model = tape.model
    grad = np.asarray(grad_logits, dtype=np.float64)
    if grad.shape != (tape.frames, len(model.alphabet) + 1):
        raise ShapeMismatch(f"Expected logit gradient of shape {(tape.frames, len(model.alphabet) + 1)}, found {grad.shape}")
    grads = {name: np.zeros_like(value) for name, value in model.params.items()} if with_params else None
    for layer, cache in zip(reversed(model.layers), reversed(tape.caches)):
        grad = layer.backward(model.params, cache, grad, grads)
    return grad, grads or {}


def features(model: AcousticModel, waveform: Waveform) -> FeatureMatrix:
    """MFCC features of a waveform with the model's front-end."""
    feats, _ = mfcc_forward(waveform.samples, model.feature_config)
    return feats


def transcribe(model: AcousticModel, waveform: Waveform) -> ctc.Transcript:
    """Greedy transcription of a waveform, C(x).

    Args:
        model: The victim model.
        waveform: Signal of at least one frame.

    Returns:
        The decoded transcript.
    """
    logits, _ = model_forward(model, features(model, waveform))
    return ctc.greedy_decode(logits)


class Trainer(LogService):
    """Trains victim models on a labeled corpus by minimizing mean CTC loss.

    Attributes:
        config: A TrainConfig controlling optimization.
        feature_config: Front-end of the trained models.
    """

    def __init__(self, config: TrainConfig = None, feature_config: MfccConfig = None, logger: logging.Logger = None) -> None:
        """Set up the trainer with optimization and front-end settings."""
        super(Trainer, self).__init__(logger or logging.getLogger(__name__))
        self.config = config or TrainConfig()
        self.feature_config = feature_config or MfccConfig()

    def train(self, corpus: Corpus, arch: str, hyper: dict = None) -> AcousticModel:
        """Trains a model of one architecture on every item of the corpus.

        Args:
            corpus: Labeled recordings.
            arch: Architecture tag.
            hyper: Overrides of the architecture hyperparameters.

        Returns:
            The trained model.
        """
        if not len(corpus):
            raise EmptyCorpus("Cannot train on an empty corpus")
        config = self.config
        inputs = corpus_features(corpus, self.feature_config)
        mean, std = feature_stats(inputs)
        model = init_model(arch, corpus.alphabet, self.feature_config, config.seed, hyper, mean, std)
        velocity = {name: np.zeros_like(value) for name, value in model.params.items()}
        # Shuffling draws from its own stream, initialization alone consumes the seed.
        rng = np.random.default_rng([config.seed, 1])
        labels = [item.transcript for item in corpus.items]

        self.log_message(f"Training {arch} on {len(corpus)} utterances for {config.epochs} epochs")
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(len(corpus))
            epoch_loss = 0.0
            for start in range(0, len(order), config.batch_size):
                batch = order[start : start + config.batch_size]
                totals = {name: np.zeros_like(value) for name, value in model.params.items()}
                batch_loss = 0.0
                for index in batch:
                    logits, tape = model_forward(model, inputs[index])
                    loss, grad_logits = ctc.ctc_loss(logits, labels[index])
                    _, grads = model_backward(tape, grad_logits)
                    batch_loss += loss
                    for name, value in grads.items():
                        totals[name] += value
                if not math.isfinite(batch_loss):
                    raise DivergedTraining(f"Loss became non-finite in epoch {epoch}")
                self._apply_update(model, totals, velocity, len(batch))
                epoch_loss += batch_loss
            self.log_message(f"Epoch {epoch}/{config.epochs} mean CTC loss {epoch_loss / len(corpus):.4f}")
        return model

    def _apply_update(self, model: AcousticModel, totals: Params, velocity: Params, count: int) -> None:
        """One SGD with momentum step on the mean gradient of a batch."""
        config = self.config
        grads = {name: value / count for name, value in totals.items()}
        norm = math.sqrt(sum(float(np.sum(value * value)) for value in grads.values()))
        if not math.isfinite(norm):
            raise DivergedTraining("Gradient became non-finite")
        scale = config.clip_norm / norm if config.clip_norm and norm > config.clip_norm else 1.0
        for name, value in grads.items():
            velocity[name] = config.momentum * velocity[name] - config.learning_rate * scale * value
            model.params[name] += velocity[name]


def corpus_features(corpus: Corpus, feature_config: MfccConfig) -> List[FeatureMatrix]:
    """MFCC features of every utterance of a corpus, in order."""
    return [mfcc_forward(waveform.samples, feature_config)[0] for waveform in corpus.waveforms()]


def feature_stats(inputs: List[FeatureMatrix]) -> Tuple[np.ndarray, np.ndarray]:
    """Per-coefficient mean and standard deviation over every frame of a corpus."""
    stacked = np.concatenate([feats.values for feats in inputs], axis=0)
    return stacked.mean(axis=0), np.maximum(stacked.std(axis=0), 1e-8)


def train_model(
    corpus: Corpus,
    arch: str,
    tc: TrainConfig = None,
    feature_config: MfccConfig = None,
    hyper: dict = None,
) -> AcousticModel:
    """Trains a victim model; deterministic for a given seed.

    Args:
        corpus: Labeled recordings.
        arch: Architecture tag.
        tc: Optimization settings.
        feature_config: Front-end of the model.
        hyper: Overrides of the architecture hyperparameters.

    Returns:
        The trained model.
    """
    return Trainer(tc, feature_config).train(corpus, arch, hyper)


def save_model(path: str, model: AcousticModel) -> None:
    """Writes a model as one JSON header line followed by little-endian float32 parameter blocks.

    Args:
        path: Location of the model file.
        model: The model to store.
    """
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "arch": model.arch,
        "alphabet": model.alphabet,
        "hyper": model.hyper,
        "feature_config": model.feature_config.to_dict(),
        "feature_mean": [float(value) for value in model.feature_mean],
        "feature_std": [float(value) for value in model.feature_std],
        "params": [{"name": name, "shape": list(value.shape)} for name, value in model.params.items()],
    }
    try:
        with open(path, "wb") as model_file:
            model_file.write(json.dumps(header).encode("utf-8") + b"\n")
            for value in model.params.values():
                model_file.write(np.asarray(value, dtype="<f4").tobytes())
    except OSError as error:
        raise IoError(f"Unable to write model {path}: {error}") from error


def load_model(path: str) -> AcousticModel:
    """Reads a model written by save_model.

    Args:
        path: Location of the model file.

    Returns:
        The stored model, parameters widened back to float64.
    """
    if not os.path.isfile(path):
        raise NotFound(f"No model file found: {path}")
    with open(path, "rb") as model_file:
        try:
            header = json.loads(model_file.readline().decode("utf-8"))
        except ValueError as error:
            raise CorruptFile(f"Invalid model header in {path}") from error
        if not isinstance(header, dict) or header.get("format") != MODEL_FORMAT:
            raise CorruptFile(f"Not a model file: {path}")
        params = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            size = int(np.prod(shape, dtype=np.int64))
            block = model_file.read(size * 4)
            if len(block) != size * 4:
                raise CorruptFile(f"Truncated parameter {entry['name']} in {path}")
            params[entry["name"]] = np.frombuffer(block, dtype="<f4").astype(np.float64).reshape(shape)
        if model_file.read(1):
            raise CorruptFile(f"Unexpected trailing data in {path}")
    return AcousticModel(
        header["arch"],
        params,
        header["alphabet"],
        MfccConfig(header["feature_config"]),
        header["hyper"],
        np.array(header["feature_mean"]),
        np.array(header["feature_std"]),
    )
