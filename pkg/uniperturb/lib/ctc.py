"""Connectionist Temporal Classification loss, greedy decoding, and an exhaustive reference."""

import itertools
import math
from typing import List
from typing import Tuple

import numpy as np
import scipy.special

from uniperturb.lib.errors import InfeasibleTarget
from uniperturb.lib.errors import InvalidTranscript
from uniperturb.lib.errors import ShapeMismatch
from uniperturb.lib.errors import TooLargeForOracle

# Stand-in for log(0). Sums involving it stay below IMPOSSIBLE and are treated as zero probability.
NEG_INF = -1.0e30
IMPOSSIBLE = NEG_INF / 2
ORACLE_MAX_FRAMES = 8
ORACLE_MAX_ALPHABET = 3

# Transcripts are plain strings over an alphabet, the blank symbol never appears in them.
Transcript = str


class Logits(object):
    """Per-frame unnormalized scores over an alphabet plus the blank symbol.

    Attributes:
        values: T x (len(alphabet) + 1) matrix; the last column is the blank.
        alphabet: Ordered characters matching the first columns.
    """

    def __init__(self, values: np.ndarray, alphabet: str) -> None:
        """Validate the score matrix against the alphabet."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(alphabet) + 1:
            raise ShapeMismatch(f"Expected T x {len(alphabet) + 1} logits, found {values.shape}")
        self.values = values
        self.alphabet = alphabet

    @property
    def blank(self) -> int:
        """Column index of the blank symbol."""
        return len(self.alphabet)

    @property
    def frames(self) -> int:
        """Number of frames T."""
        return self.values.shape[0]

    def encode(self, text: Transcript) -> List[int]:
        """Converts a transcript to column indices."""
        lookup = {char: index for index, char in enumerate(self.alphabet)}
        try:
            return [lookup[char] for char in text]
        except KeyError as error:
            raise InvalidTranscript(f"Transcript {text!r} uses a character outside the alphabet") from error


def required_frames(labels: List[int]) -> int:
    """Minimum frames needed to emit a labeling: one per label plus a blank between repeats."""
    repeats = sum(1 for prev, cur in zip(labels, labels[1:]) if prev == cur)
    return len(labels) + repeats


def _extend(labels: List[int], blank: int) -> np.ndarray:
    """Interleaves blanks around the labels: blank, l1, blank, l2, ..., blank."""
    extended = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    extended[1::2] = labels
    return extended


def _forward_backward(log_probs: np.ndarray, extended: np.ndarray, blank: int) -> Tuple[np.ndarray, np.ndarray]:
    """Runs the alpha and beta recursions in log space.

    Alpha includes the emission of the current frame, beta covers only the frames after it.
    """
    frames = log_probs.shape[0]
    states = extended.shape[0]
    emit = log_probs[:, extended]
    # A state may be entered from two states back when it is a label differing from the previous label.
    skip = np.zeros(states, dtype=bool)
    skip[2:] = (extended[2:] != blank) & (extended[2:] != extended[:-2])

    alpha = np.full((frames, states), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if states > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, frames):
        prev = alpha[t - 1]
        total = prev.copy()
        total[1:] = np.logaddexp(total[1:], prev[:-1])
        total[2:] = np.where(skip[2:], np.logaddexp(total[2:], prev[:-2]), total[2:])
        alpha[t] = np.maximum(total + emit[t], NEG_INF)

    beta = np.full((frames, states), NEG_INF)
    beta[-1, -1] = 0.0
    if states > 1:
        beta[-1, -2] = 0.0
    for t in range(frames - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        total = nxt.copy()
        total[:-1] = np.logaddexp(total[:-1], nxt[1:])
        total[:-2] = np.where(skip[2:], np.logaddexp(total[:-2], nxt[2:]), total[:-2])
        beta[t] = np.maximum(total, NEG_INF)
    return alpha, beta


def ctc_loss(logits: Logits, target: Transcript) -> Tuple[float, np.ndarray]:
    """Negative log likelihood of a transcript under per-frame softmax distributions.

    Args:
        logits: Scores for every frame.
        target: Transcript to score, may be empty.

    Returns:
        The loss, and its gradient with respect to the logits (softmax minus the per-frame symbol posterior).
    """
    labels = logits.encode(target)
    if logits.frames < required_frames(labels):
        raise InfeasibleTarget(f"{logits.frames} frames cannot emit {target!r}; {required_frames(labels)} needed")
    log_probs = scipy.special.log_softmax(logits.values, axis=1)
    extended = _extend(labels, logits.blank)
    alpha, beta = _forward_backward(log_probs, extended, logits.blank)
    log_likelihood = float(alpha[-1, -1])
    if extended.shape[0] > 1:
        log_likelihood = float(np.logaddexp(alpha[-1, -1], alpha[-1, -2]))
    if log_likelihood <= IMPOSSIBLE:
        raise InfeasibleTarget(f"Target {target!r} has zero probability")

    occupancy = np.exp(alpha + beta - log_likelihood)
    posterior = np.zeros_like(log_probs)
    for state, symbol in enumerate(extended):
        posterior[:, symbol] += occupancy[:, state]
    grad = np.exp(log_probs) - posterior
    return -log_likelihood, grad


def greedy_decode(logits: Logits) -> Transcript:
    """Best path decoding: per-frame argmax, collapse repeats, drop blanks.

    Ties are broken toward the lowest index.
    """
    best = np.argmax(logits.values, axis=1)
    chars = []
    previous = None
    for index in best:
        if index != previous and index != logits.blank:
            chars.append(logits.alphabet[index])
        previous = index
    return "".join(chars)


def collapse(path: Tuple[int, ...], blank: int) -> Tuple[int, ...]:
    """Collapses a frame labeling: merge consecutive repeats, then drop blanks."""
    merged = [label for index, label in enumerate(path) if index == 0 or label != path[index - 1]]
    return tuple(label for label in merged if label != blank)


def ctc_loss_bruteforce(logits: Logits, target: Transcript) -> float:
    """Reference CTC loss by enumerating every frame labeling.

    Args:
        logits: Scores for at most 8 frames over at most 3 characters.
        target: Transcript to score.

    Returns:
        The negative log of the total probability of paths collapsing to the target, infinity if none do.
    """
    if logits.frames > ORACLE_MAX_FRAMES or len(logits.alphabet) > ORACLE_MAX_ALPHABET:
        raise TooLargeForOracle(
            f"Enumeration is limited to {ORACLE_MAX_FRAMES} frames and {ORACLE_MAX_ALPHABET} characters"
        )
    wanted = tuple(logits.encode(target))
    log_probs = scipy.special.log_softmax(logits.values, axis=1)
    frames = np.arange(logits.frames)
    matching = [
        float(log_probs[frames, path].sum())
        for path in itertools.product(range(logits.blank + 1), repeat=logits.frames)
        if collapse(path, logits.blank) == wanted
    ]
    if not matching:
        return math.inf
    return -float(scipy.special.logsumexp(matching))
