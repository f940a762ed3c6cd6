"""Edit distance, character error rate, loudness metrics, and aggregate attack evaluation."""

import concurrent.futures
import logging
import math
from typing import List
from typing import NamedTuple
from typing import Optional
from typing import Sequence
from typing import Union

import numpy as np

from uniperturb.lib.audio import Corpus
from uniperturb.lib.audio import Waveform
from uniperturb.lib.audio import fit_perturbation
from uniperturb.lib.errors import AllTranscriptsEmpty
from uniperturb.lib.errors import EmptyCorpus
from uniperturb.lib.errors import EmptyOriginal
from uniperturb.lib.errors import SilentSignal
from uniperturb.lib.nn import AcousticModel
from uniperturb.lib.nn import transcribe

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5


class EvalRecord(NamedTuple):
    """Outcome of a perturbation on a single utterance.

    Attributes:
        item_id: Audio path of the utterance.
        clean_transcript: Model transcription of the clean signal.
        adv_transcript: Model transcription of the perturbed signal.
        cer: CER of the perturbed transcription against the clean one.
        success: Whether cer exceeded the threshold.
        db_rel: Loudness of the fitted perturbation relative to the signal, None when either is silent.
    """

    item_id: str
    clean_transcript: str
    adv_transcript: str
    cer: float
    success: bool
    db_rel: Optional[float]


class Evaluation(NamedTuple):
    """Aggregates of a perturbation over a corpus.

    Attributes:
        success_rate: Fraction of included items whose CER exceeded the threshold.
        mean_cer: Mean CER over included items.
        mean_db_rel: Mean relative loudness over included items with a defined value, or None.
        records: Per-item outcomes of included items, in corpus order.
        n_excluded: Items left out because their clean transcription was empty.
    """

    success_rate: float
    mean_cer: float
    mean_db_rel: Optional[float]
    records: List[EvalRecord]
    n_excluded: int


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit cost insertions, deletions, and substitutions."""
    previous = list(range(len(b) + 1))
    for i, char_a in enumerate(a, start=1):
        current = [i] + [0] * len(b)
        for j, char_b in enumerate(b, start=1):
            current[j] = min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (char_a != char_b),
            )
        previous = current
    return previous[-1]


def cer(original: str, adversarial: str) -> float:
    """Character error rate, normalized by the length of the original transcription.

    Args:
        original: Reference transcription, spaces count as characters.
        adversarial: Transcription to compare.

    Returns:
        The edit distance divided by len(original); may exceed 1.
    """
    if not original:
        raise EmptyOriginal("CER is undefined for an empty original transcription")
    return edit_distance(original, adversarial) / len(original)


def db(v: np.ndarray) -> float:
    """Peak loudness of a signal, 20 * log10(max |v_i|)."""
    peak = float(np.max(np.abs(np.asarray(v, dtype=np.float64)), initial=0.0))
    if peak == 0.0:
        raise SilentSignal("Loudness is undefined for an all-zero signal")
    return 20.0 * math.log10(peak)


def db_relative(x: Union[Waveform, np.ndarray], v: np.ndarray) -> float:
    """Loudness of a perturbation relative to a signal; negative when the perturbation is quieter.

    Args:
        x: The clean signal.
        v: The perturbation.

    Returns:
        db(v) - db(x).
    """
    samples = x.samples if isinstance(x, Waveform) else x
    return db(v) - db(samples)


def success_rate(records: Sequence[EvalRecord], t: float = DEFAULT_THRESHOLD) -> float:
    """Fraction of records whose CER exceeds a threshold, 0 when there are none."""
    if not records:
        return 0.0
    return sum(1 for record in records if record.cer > t) / len(records)


def _evaluate_item(model: AcousticModel, waveform: Waveform, item_id: str, v: np.ndarray, t: float) -> Optional[EvalRecord]:
    """Transcribes one utterance with and without the perturbation, None when the clean transcription is empty."""
    clean = transcribe(model, waveform)
    if not clean:
        return None
    fitted = fit_perturbation(v, len(waveform))
    adv = transcribe(model, Waveform(waveform.samples + fitted))
    score = cer(clean, adv)
    try:
        loudness = db_relative(waveform, fitted)
    except SilentSignal:
        loudness = None
    return EvalRecord(item_id, clean, adv, score, score > t, loudness)


def evaluate_universal(
    model: AcousticModel,
    corpus: Corpus,
    v: np.ndarray,
    t: float = DEFAULT_THRESHOLD,
    workers: int = 1,
) -> Evaluation:
    """Measures how often a perturbation breaks the transcriptions of a corpus.

    Args:
        model: Victim model.
        corpus: Utterances to perturb.
        v: Perturbation samples, or an object carrying them in ``samples``.
        t: CER above which an utterance counts as broken.
        workers: Threads used to evaluate utterances; the reduction stays in corpus order.

    Returns:
        The aggregates and per-item records.
    """
    if not len(corpus):
        raise EmptyCorpus("Cannot evaluate on an empty corpus")
    samples = np.asarray(getattr(v, "samples", v), dtype=np.float64)
    waveforms = corpus.waveforms()
    ids = [item.audio_path for item in corpus.items]
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda pair: _evaluate_item(model, pair[0], pair[1], samples, t), zip(waveforms, ids)))
    else:
        outcomes = [_evaluate_item(model, waveform, item_id, samples, t) for waveform, item_id in zip(waveforms, ids)]

    records = [record for record in outcomes if record is not None]
    excluded = len(outcomes) - len(records)
    if not records:
        raise AllTranscriptsEmpty("Every clean transcription is empty, nothing to evaluate")
    if excluded:
        logger.debug(f"Excluded {excluded} utterances with empty clean transcriptions")
    loudness = [record.db_rel for record in records if record.db_rel is not None]
    return Evaluation(
        success_rate=success_rate(records, t),
        mean_cer=sum(record.cer for record in records) / len(records),
        mean_db_rel=sum(loudness) / len(loudness) if loudness else None,
        records=records,
        n_excluded=excluded,
    )


def corpus_cer(model: AcousticModel, corpus: Corpus) -> float:
    """Mean CER of the model's clean transcriptions against the manifest labels.

    Items with an empty label are skipped.
    """
    if not len(corpus):
        raise EmptyCorpus("Cannot score an empty corpus")
    scores = [
        cer(item.transcript, transcribe(model, corpus.read(index)))
        for index, item in enumerate(corpus.items)
        if item.transcript
    ]
    if not scores:
        raise AllTranscriptsEmpty("Every manifest transcript is empty")
    return sum(scores) / len(scores)
