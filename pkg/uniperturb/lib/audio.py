"""Waveform storage, corpus manifests, and length adaptation of perturbations."""

import csv
import os
import wave
from typing import Iterable
from typing import List

import numpy as np

from uniperturb.lib.errors import CorruptFile
from uniperturb.lib.errors import InvalidTranscript
from uniperturb.lib.errors import IoError
from uniperturb.lib.errors import MalformedManifest
from uniperturb.lib.errors import MissingAudio
from uniperturb.lib.errors import NonFiniteSignal
from uniperturb.lib.errors import NotFound
from uniperturb.lib.errors import UnsupportedFormat

SAMPLE_RATE = 16000
SAMPLE_WIDTH = 2
CHANNELS = 1
INT16_MIN = -32768
INT16_MAX = 32767
MANIFEST_HEADER = ["path", "transcript"]


class Waveform(object):
    """Mono audio samples kept in signed 16-bit amplitude scale.

    Samples are real numbers so that perturbed signals do not need to be quantized. The int16 range is only
    enforced when writing to storage.

    Attributes:
        samples: Read-only float64 vector of amplitudes.
        sample_rate: Sampling rate in Hz, always 16000.
    """

    def __init__(self, samples: Iterable[float], sample_rate: int = SAMPLE_RATE) -> None:
        """Validate and freeze the samples.

        Args:
            samples: Amplitudes in int16 scale.
            sample_rate: Sampling rate in Hz.
        """
        if sample_rate != SAMPLE_RATE:
            raise UnsupportedFormat(f"Sample rate must be {SAMPLE_RATE} Hz, found {sample_rate}")
        values = np.array(samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise NonFiniteSignal("Waveform samples must be finite")
        values.flags.writeable = False
        self.samples = values
        self.sample_rate = sample_rate

    def __len__(self) -> int:
        """Number of samples in the waveform."""
        return self.samples.shape[0]


class CorpusItem(object):
    """A single labeled recording from a manifest.

    Attributes:
        audio_path: Absolute path to the PCM16 WAV file.
        transcript: Reference label, only used to train victim models.
    """

    def __init__(self, audio_path: str, transcript: str) -> None:
        """Store the path and label of the recording."""
        self.audio_path = audio_path
        self.transcript = transcript

    def __repr__(self) -> str:
        """Readable representation for debugging."""
        return f"CorpusItem({self.audio_path!r}, {self.transcript!r})"


class Corpus(object):
    """Ordered, duplicate free collection of recordings sharing an alphabet.

    Attributes:
        items: The recordings in manifest order.
        alphabet: Ordered characters which transcripts may use.
    """

    def __init__(self, items: List[CorpusItem], alphabet: str) -> None:
        """Validate the items and prepare an empty waveform cache."""
        paths = [item.audio_path for item in items]
        if len(set(paths)) != len(paths):
            raise MalformedManifest("Corpus contains duplicate audio paths")
        for item in items:
            _check_transcript(item.transcript, alphabet)
        self.items = list(items)
        self.alphabet = alphabet
        self._waveforms = {}

    def __len__(self) -> int:
        """Number of recordings in the corpus."""
        return len(self.items)

    def read(self, index: int) -> Waveform:
        """Load, and cache, the waveform of a single item.

        Args:
            index: Position of the item in the corpus.

        Returns:
            The waveform stored for the item.
        """
        path = self.items[index].audio_path
        if path not in self._waveforms:
            self._waveforms[path] = read_wav(path)
        return self._waveforms[path]

    def subset(self, indices: Iterable[int]) -> "Corpus":
        """Creates a new corpus from selected items, in the order given.

        Args:
            indices: Positions of the items to keep.

        Returns:
            A corpus sharing the alphabet and any waveforms already loaded.
        """
        items = [self.items[index] for index in indices]
        corpus = Corpus(items, self.alphabet)
        corpus._waveforms = {item.audio_path: self._waveforms[item.audio_path] for item in items if item.audio_path in self._waveforms}
        return corpus

    def waveforms(self) -> List[Waveform]:
        """Load every waveform of the corpus, in order."""
        return [self.read(index) for index in range(len(self.items))]


def _check_transcript(transcript: str, alphabet: str) -> None:
    """Ensure every character of a transcript belongs to the alphabet."""
    invalid = sorted(set(transcript) - set(alphabet))
    if invalid:
        raise InvalidTranscript(f"Transcript {transcript!r} uses characters outside the alphabet: {invalid}")


def read_wav(path: str) -> Waveform:
    """Reads a PCM16 mono 16 kHz WAV file.

    Args:
        path: Location of the file.

    Returns:
        A waveform whose samples are the stored integers.
    """
    if not os.path.isfile(path):
        raise NotFound(f"No audio file found: {path}")
    try:
        with wave.open(path, "rb") as wave_file:
            channels = wave_file.getnchannels()
            width = wave_file.getsampwidth()
            rate = wave_file.getframerate()
            frame_count = wave_file.getnframes()
            if channels != CHANNELS or width != SAMPLE_WIDTH or rate != SAMPLE_RATE:
                raise UnsupportedFormat(
                    f"Expected PCM16 mono {SAMPLE_RATE} Hz, found {width * 8}-bit {channels} channel(s) {rate} Hz: {path}"
                )
            frames = wave_file.readframes(frame_count)
    except wave.Error as error:
        # The standard reader only rejects non PCM encodings with this message, everything else is damage.
        if "unknown format" in str(error):
            raise UnsupportedFormat(f"Audio file is not PCM encoded: {path}") from error
        raise CorruptFile(f"Invalid WAV header in {path}: {error}") from error
    except EOFError as error:
        raise CorruptFile(f"Truncated WAV file: {path}") from error
    if len(frames) != frame_count * SAMPLE_WIDTH:
        raise CorruptFile(f"Truncated WAV payload in {path}: expected {frame_count} frames")
    samples = np.frombuffer(frames, dtype="<i2").astype(np.float64)
    return Waveform(samples)


def quantize(samples: np.ndarray) -> np.ndarray:
    """Rounds half away from zero and clamps to the int16 range.

    Args:
        samples: Real valued amplitudes.

    Returns:
        The int16 samples that would be stored on disk.
    """
    samples = np.asarray(samples, dtype=np.float64)
    rounded = np.sign(samples) * np.floor(np.abs(samples) + 0.5)
    return np.clip(rounded, INT16_MIN, INT16_MAX).astype(np.int16)


def write_wav(path: str, waveform: Waveform) -> None:
    """Writes a waveform as a PCM16 mono 16 kHz WAV file.

    Warning: Existing file will be overwritten.

    Args:
        path: Location of the file.
        waveform: Samples to store, quantized with round half away from zero and clamping.
    """
    data = quantize(waveform.samples).astype("<i2").tobytes()
    try:
        with wave.open(path, "wb") as wave_file:
            wave_file.setnchannels(CHANNELS)
            wave_file.setsampwidth(SAMPLE_WIDTH)
            wave_file.setframerate(SAMPLE_RATE)
            wave_file.writeframes(data)
    except OSError as error:
        raise IoError(f"Unable to write audio file {path}: {error}") from error


def load_manifest(path: str, alphabet: str) -> Corpus:
    """Loads a ``path,transcript`` CSV manifest.

    Audio paths are resolved relative to the directory of the manifest.

    Args:
        path: Location of the manifest.
        alphabet: Characters allowed in transcripts.

    Returns:
        A corpus in file order.
    """
    if not os.path.isfile(path):
        raise NotFound(f"No manifest found: {path}")
    root = os.path.dirname(os.path.abspath(path))
    items = []
    try:
        with open(path, "rt", encoding="utf-8", newline="") as manifest:
            reader = csv.reader(manifest)
            header = next(reader, None)
            if header != MANIFEST_HEADER:
                raise MalformedManifest(f"Manifest header must be {','.join(MANIFEST_HEADER)}: {path}")
            for line, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 2:
                    raise MalformedManifest(f"Expected 2 columns on line {line} of {path}, found {len(row)}")
                audio_path = os.path.normpath(os.path.join(root, row[0]))
                _check_transcript(row[1], alphabet)
                if not os.path.isfile(audio_path):
                    raise MissingAudio(f"Line {line} of {path} references missing audio: {audio_path}")
                items.append(CorpusItem(audio_path, row[1]))
    except UnicodeDecodeError as error:
        raise MalformedManifest(f"Manifest is not UTF-8: {path}") from error
    except csv.Error as error:
        raise MalformedManifest(f"Invalid CSV in {path}: {error}") from error
    return Corpus(items, alphabet)


def write_manifest(path: str, items: Iterable[CorpusItem]) -> None:
    """Writes a ``path,transcript`` CSV manifest with paths relative to the manifest directory.

    Args:
        path: Location of the manifest.
        items: Recordings to list, in order.
    """
    root = os.path.dirname(os.path.abspath(path))
    try:
        with open(path, "wt", encoding="utf-8", newline="") as manifest:
            writer = csv.writer(manifest, lineterminator="\n")
            writer.writerow(MANIFEST_HEADER)
            for item in items:
                writer.writerow([os.path.relpath(item.audio_path, root), item.transcript])
    except OSError as error:
        raise IoError(f"Unable to write manifest {path}: {error}") from error


def fit_perturbation(v: np.ndarray, n: int) -> np.ndarray:
    """Crops or zero-pads a perturbation at the end to match a signal length.

    Args:
        v: Non-empty perturbation samples.
        n: Target length in samples.

    Returns:
        A new vector of exactly n samples whose prefix equals the prefix of v.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] >= n:
        return v[:n].copy()
    return np.concatenate([v, np.zeros(n - v.shape[0])])
