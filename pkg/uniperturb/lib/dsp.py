"""Differentiable MFCC front-end.

The forward pass keeps every intermediate needed to map feature gradients back onto raw samples:

    slice -> Hann window -> real DFT -> power -> mel filterbank -> log floor -> orthonormal DCT-II

The DFT is an explicit pair of cosine/sine matrices so that its adjoint is a plain transpose.
"""

import functools
from typing import Tuple

import numpy as np
import scipy.fft
import scipy.signal

from uniperturb.lib.audio import SAMPLE_RATE
from uniperturb.lib.errors import InvalidConfig
from uniperturb.lib.errors import ShapeMismatch
from uniperturb.lib.errors import TooShort


class MfccConfig(object):
    """Configuration information to control MFCC feature extraction.

    Attributes:
        frame_len: Samples per analysis frame.
        hop: Samples between the starts of consecutive frames.
        n_mels: Number of triangular mel filters.
        n_coeffs: Number of cepstral coefficients kept per frame.
        mel_fmin: Lowest filterbank edge in Hz.
        mel_fmax: Highest filterbank edge in Hz.
        log_floor: Smallest mel energy passed to the logarithm.
        sample_rate: Sampling rate of the analysed signals in Hz.
    """

    FRAME_LEN = 512
    HOP = 256
    N_MELS = 26
    N_COEFFS = 13
    MEL_FMIN = 0.0
    MEL_FMAX = 8000.0
    LOG_FLOOR = 1e-10

    def __init__(self, config: dict = None) -> None:
        """Initializes attributes from a user specified configuration object or defaults.

        Args:
            config: User predefined values for initialization.
        """
        if not config:
            config = {}
        self.frame_len = int(config.get("frame_len", MfccConfig.FRAME_LEN))
        self.hop = int(config.get("hop", MfccConfig.HOP))
        self.n_mels = int(config.get("n_mels", MfccConfig.N_MELS))
        self.n_coeffs = int(config.get("n_coeffs", MfccConfig.N_COEFFS))
        self.mel_fmin = float(config.get("mel_fmin", MfccConfig.MEL_FMIN))
        self.mel_fmax = float(config.get("mel_fmax", MfccConfig.MEL_FMAX))
        self.log_floor = float(config.get("log_floor", MfccConfig.LOG_FLOOR))
        self.sample_rate = SAMPLE_RATE
        self.validate()

    def __eq__(self, other: object) -> bool:
        """Configurations are equal when every field matches."""
        return isinstance(other, MfccConfig) and self.to_dict() == other.to_dict()

    def __hash__(self) -> int:
        """Hash over the field values."""
        return hash(tuple(self.to_dict().items()))

    @property
    def n_fft_bins(self) -> int:
        """Number of non-negative frequency bins of the real DFT."""
        return self.frame_len // 2 + 1

    def frame_count(self, n_samples: int) -> int:
        """Number of complete frames that fit in a signal.

        Args:
            n_samples: Length of the signal.

        Returns:
            The number of frames produced by mfcc_forward.
        """
        if n_samples < self.frame_len:
            raise TooShort(f"Signal of {n_samples} samples is shorter than one frame of {self.frame_len}")
        return (n_samples - self.frame_len) // self.hop + 1

    def replace(self, **changes: float) -> "MfccConfig":
        """Creates a validated copy with some fields changed."""
        return MfccConfig({**self.to_dict(), **changes})

    def to_dict(self) -> dict:
        """Snapshot of the configuration for persistence."""
        return {
            "frame_len": self.frame_len,
            "hop": self.hop,
            "n_mels": self.n_mels,
            "n_coeffs": self.n_coeffs,
            "mel_fmin": self.mel_fmin,
            "mel_fmax": self.mel_fmax,
            "log_floor": self.log_floor,
        }

    def validate(self) -> None:
        """Ensure the values describe a usable front-end."""
        if self.frame_len < 2 or self.frame_len % 2:
            raise InvalidConfig(f"frame_len must be an even number of at least 2, found {self.frame_len}")
        if not 1 <= self.hop <= self.frame_len:
            raise InvalidConfig(f"hop must be between 1 and frame_len, found {self.hop}")
        if not 1 <= self.n_coeffs <= self.n_mels:
            raise InvalidConfig(f"n_coeffs must be between 1 and n_mels, found {self.n_coeffs}")
        if not 0 <= self.mel_fmin < self.mel_fmax <= self.sample_rate / 2:
            raise InvalidConfig(f"Mel band must satisfy 0 <= fmin < fmax <= {self.sample_rate / 2}")
        if self.log_floor <= 0:
            raise InvalidConfig(f"log_floor must be positive, found {self.log_floor}")


class FeatureMatrix(object):
    """MFCC features of a signal.

    Attributes:
        values: T x n_coeffs matrix, one row per frame.
        config: The configuration which produced the features.
    """

    def __init__(self, values: np.ndarray, config: MfccConfig) -> None:
        """Store the features with their configuration."""
        self.values = values
        self.config = config

    @property
    def frames(self) -> int:
        """Number of frames T."""
        return self.values.shape[0]


class MfccTape(object):
    """Intermediates of a forward pass needed to evaluate its adjoint.

    Attributes:
        config: The configuration of the forward pass.
        n_samples: Length of the analysed signal.
        real: T x bins real parts of the frame spectra.
        imag: T x bins imaginary parts of the frame spectra.
        mel: T x n_mels mel energies before the log floor.
        floored: T x n_mels energies after the log floor.
        active: T x n_mels mask of energies above the floor.
    """

    def __init__(
        self,
        config: MfccConfig,
        n_samples: int,
        real: np.ndarray,
        imag: np.ndarray,
        mel: np.ndarray,
        floored: np.ndarray,
    ) -> None:
        """Store the intermediates of a forward pass."""
        self.config = config
        self.n_samples = n_samples
        self.real = real
        self.imag = imag
        self.mel = mel
        self.floored = floored
        self.active = mel > config.log_floor


def hz_to_mel(freq: np.ndarray) -> np.ndarray:
    """Converts frequencies in Hz to the mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(freq, dtype=np.float64) / 700.0)


def mel_to_hz(mel: np.ndarray) -> np.ndarray:
    """Converts mel scale values to frequencies in Hz."""
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_centers(cfg: MfccConfig) -> np.ndarray:
    """Edge and center frequencies of the filterbank in Hz, n_mels + 2 points equally spaced in mel."""
    mels = np.linspace(hz_to_mel(cfg.mel_fmin), hz_to_mel(cfg.mel_fmax), cfg.n_mels + 2)
    return mel_to_hz(mels)


def mel_filterbank(cfg: MfccConfig) -> np.ndarray:
    """Builds triangular filters with unit peaks, spaced equally on the mel scale.

    Args:
        cfg: Front-end configuration.

    Returns:
        An n_mels x n_fft_bins matrix of non-negative weights.
    """
    cfg.validate()
    points = mel_centers(cfg)
    bin_freqs = np.arange(cfg.n_fft_bins) * cfg.sample_rate / cfg.frame_len
    lower = points[:-2, None]
    center = points[1:-1, None]
    upper = points[2:, None]
    rising = (bin_freqs[None, :] - lower) / (center - lower)
    falling = (upper - bin_freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


@functools.lru_cache(maxsize=8)
def _analysis_matrices(frame_len: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hann window and real DFT matrices for a frame length, shared by every call."""
    window = scipy.signal.get_window("hann", frame_len, fftbins=True)
    bins = np.arange(frame_len // 2 + 1)[:, None]
    phase = 2.0 * np.pi * bins * np.arange(frame_len)[None, :] / frame_len
    cosine = np.cos(phase)
    sine = -np.sin(phase)
    for matrix in (window, cosine, sine):
        matrix.flags.writeable = False
    return window, cosine, sine


@functools.lru_cache(maxsize=8)
def _cached_filterbank(cfg: MfccConfig) -> np.ndarray:
    """Filterbank reused across calls with the same configuration."""
    filterbank = mel_filterbank(cfg)
    filterbank.flags.writeable = False
    return filterbank


def _frame_indices(cfg: MfccConfig, n_samples: int) -> np.ndarray:
    """Sample index of every frame position, T x frame_len."""
    frames = cfg.frame_count(n_samples)
    return np.arange(cfg.frame_len)[None, :] + cfg.hop * np.arange(frames)[:, None]


def mfcc_forward(samples: np.ndarray, cfg: MfccConfig) -> Tuple[FeatureMatrix, MfccTape]:
    """Computes MFCC features and records the tape for the backward pass.

    Args:
        samples: Signal in int16 amplitude scale.
        cfg: Front-end configuration.

    Returns:
        The features and the tape of intermediates.
    """
    samples = np.asarray(samples, dtype=np.float64)
    window, cosine, sine = _analysis_matrices(cfg.frame_len)
    frames = samples[_frame_indices(cfg, samples.shape[0])] * window
    real = frames @ cosine.T
    imag = frames @ sine.T
    power = real * real + imag * imag
    mel = power @ _cached_filterbank(cfg).T
    floored = np.maximum(mel, cfg.log_floor)
    cepstra = scipy.fft.dct(np.log(floored), type=2, norm="ortho", axis=1)[:, : cfg.n_coeffs]
    tape = MfccTape(cfg, samples.shape[0], real, imag, mel, floored)
    return FeatureMatrix(cepstra, cfg), tape


def mfcc_backward(tape: MfccTape, grad_features: np.ndarray) -> np.ndarray:
    """Maps a gradient on the features to a gradient on the raw samples.

    Args:
        tape: Intermediates recorded by the matching forward pass.
        grad_features: T x n_coeffs gradient of a scalar objective with respect to the features.

    Returns:
        The gradient with respect to every input sample. Samples past the last frame receive zero.
    """
    cfg = tape.config
    grad_features = np.asarray(grad_features, dtype=np.float64)
    frames = tape.real.shape[0]
    if grad_features.shape != (frames, cfg.n_coeffs):
        raise ShapeMismatch(f"Expected feature gradient of shape {(frames, cfg.n_coeffs)}, found {grad_features.shape}")
    window, cosine, sine = _analysis_matrices(cfg.frame_len)

    # Orthonormal DCT: the adjoint of keeping the first coefficients is zero fill then the inverse transform.
    grad_cepstra = np.zeros((frames, cfg.n_mels))
    grad_cepstra[:, : cfg.n_coeffs] = grad_features
    grad_log = scipy.fft.idct(grad_cepstra, type=2, norm="ortho", axis=1)
    grad_mel = np.where(tape.active, grad_log / tape.floored, 0.0)
    grad_power = grad_mel @ _cached_filterbank(cfg)
    grad_frames = (2.0 * tape.real * grad_power) @ cosine + (2.0 * tape.imag * grad_power) @ sine
    grad_frames *= window

    grad_samples = np.zeros(tape.n_samples)
    np.add.at(grad_samples, _frame_indices(cfg, tape.n_samples), grad_frames)
    return grad_samples
