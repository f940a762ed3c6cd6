"""Synthetic corpora, experiment drivers, and their reports."""

import csv
import json
import logging
import os
import time
from typing import Dict
from typing import List
from typing import Sequence
from typing import Tuple

import numpy as np

from uniperturb import __version__
from uniperturb.lib.attack import AttackConfig
from uniperturb.lib.attack import UniversalPerturbation
from uniperturb.lib.attack import random_perturbation
from uniperturb.lib.attack import universal_train
from uniperturb.lib.audio import SAMPLE_RATE
from uniperturb.lib.audio import Corpus
from uniperturb.lib.audio import CorpusItem
from uniperturb.lib.audio import Waveform
from uniperturb.lib.audio import write_manifest
from uniperturb.lib.audio import write_wav
from uniperturb.lib.errors import CorruptFile
from uniperturb.lib.errors import ExperimentError
from uniperturb.lib.errors import InvalidConfig
from uniperturb.lib.errors import IoError
from uniperturb.lib.errors import NotFound
from uniperturb.lib.logs import LogService
from uniperturb.lib.metrics import Evaluation
from uniperturb.lib.metrics import evaluate_universal
from uniperturb.lib.nn import AcousticModel

SPLITS = ("train", "val", "test")
UNIVERSAL = "universal"
RANDOM = "random"
ROW_FIELDS = [
    "epsilon",
    "split",
    "perturbation_kind",
    "model_id",
    "mean_db_rel",
    "success_rate",
    "mean_cer",
    "n_items",
    "n_excluded_empty",
]
PLOT_FIELDS = {
    "baseline": ["epsilon", "universal_success_rate", "random_success_rate"],
    "size": ["train_size", "success_rate", "mean_cer"],
}
DEFAULT_EPSILON_GRID = (100.0, 150.0, 200.0, 300.0, 400.0)
DEFAULT_SIZES = (10, 50, 100, 500)


class SynthConfig(object):
    """Configuration information to control synthetic corpus generation.

    Every symbol of an utterance is a sine tone followed by silence, and the whole utterance carries
    Gaussian noise.

    Attributes:
        alphabet: Symbols of the corpus; symbol k is a tone at base_freq + k * freq_step.
        tone_ms: Duration of each tone.
        gap_ms: Silence after each tone.
        base_freq: Frequency of the first symbol in Hz.
        freq_step: Frequency spacing between symbols in Hz.
        amplitude: Peak amplitude of the tones, in int16 units.
        noise_db: Noise level relative to the tone amplitude.
        min_len: Fewest symbols per utterance.
        max_len: Most symbols per utterance.
        train_count: Utterances in the training split.
        val_count: Utterances in the validation split.
        test_count: Utterances in the test split.
        seed: Seed of every random draw.
    """

    ALPHABET = "abcdefghij"
    TONE_MS = 120
    GAP_MS = 20
    BASE_FREQ = 400.0
    FREQ_STEP = 150.0
    AMPLITUDE = 20000.0
    NOISE_DB = -40.0
    MIN_LEN = 3
    MAX_LEN = 8
    TRAIN_COUNT = 500
    VAL_COUNT = 100
    TEST_COUNT = 200
    SEED = 0

    def __init__(self, config: dict = None) -> None:
        """Initializes attributes from a user specified configuration object or defaults.

        Args:
            config: User predefined values for initialization.
        """
        if not config:
            config = {}
        self.alphabet = str(config.get("alphabet", SynthConfig.ALPHABET))
        self.tone_ms = int(config.get("tone_ms", SynthConfig.TONE_MS))
        self.gap_ms = int(config.get("gap_ms", SynthConfig.GAP_MS))
        self.base_freq = float(config.get("base_freq", SynthConfig.BASE_FREQ))
        self.freq_step = float(config.get("freq_step", SynthConfig.FREQ_STEP))
        self.amplitude = float(config.get("amplitude", SynthConfig.AMPLITUDE))
        self.noise_db = float(config.get("noise_db", SynthConfig.NOISE_DB))
        self.min_len = int(config.get("min_len", SynthConfig.MIN_LEN))
        self.max_len = int(config.get("max_len", SynthConfig.MAX_LEN))
        self.train_count = int(config.get("train_count", SynthConfig.TRAIN_COUNT))
        self.val_count = int(config.get("val_count", SynthConfig.VAL_COUNT))
        self.test_count = int(config.get("test_count", SynthConfig.TEST_COUNT))
        self.seed = int(config.get("seed", SynthConfig.SEED))
        self.validate()

    @property
    def counts(self) -> Dict[str, int]:
        """Number of utterances per split."""
        return {"train": self.train_count, "val": self.val_count, "test": self.test_count}

    @property
    def noise_std(self) -> float:
        """Standard deviation of the background noise in int16 units."""
        return self.amplitude * 10.0 ** (self.noise_db / 20.0)

    def frequency(self, symbol: int) -> float:
        """Tone frequency of a symbol index."""
        return self.base_freq + self.freq_step * symbol

    def replace(self, **changes: object) -> "SynthConfig":
        """Creates a validated copy with some fields changed."""
        return SynthConfig({**self.to_dict(), **changes})

    def to_dict(self) -> dict:
        """Snapshot of the configuration for reports."""
        return {
            "alphabet": self.alphabet,
            "tone_ms": self.tone_ms,
            "gap_ms": self.gap_ms,
            "base_freq": self.base_freq,
            "freq_step": self.freq_step,
            "amplitude": self.amplitude,
            "noise_db": self.noise_db,
            "min_len": self.min_len,
            "max_len": self.max_len,
            "train_count": self.train_count,
            "val_count": self.val_count,
            "test_count": self.test_count,
            "seed": self.seed,
        }

    def validate(self) -> None:
        """Ensure the values describe a corpus which can be stored as PCM16."""
        if not self.alphabet or len(set(self.alphabet)) != len(self.alphabet):
            raise InvalidConfig("alphabet must hold distinct characters")
        if self.frequency(len(self.alphabet) - 1) >= SAMPLE_RATE / 2 or self.base_freq <= 0:
            raise InvalidConfig(f"Symbol frequencies must lie in (0, {SAMPLE_RATE // 2}) Hz")
        if not 0 < self.amplitude <= 32767:
            raise InvalidConfig(f"amplitude must be in (0, 32767], found {self.amplitude}")
        if self.tone_ms <= 0 or self.gap_ms < 0:
            raise InvalidConfig("tone_ms must be positive and gap_ms non-negative")
        if not 1 <= self.min_len <= self.max_len:
            raise InvalidConfig("Utterance lengths must satisfy 1 <= min_len <= max_len")
        if min(self.counts.values()) < 0:
            raise InvalidConfig("Split counts must be non-negative")


def synth_utterance(symbols: Sequence[int], cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Renders symbol indices as tones and gaps, with noise over the whole utterance."""
    tone_len = cfg.tone_ms * SAMPLE_RATE // 1000
    gap = np.zeros(cfg.gap_ms * SAMPLE_RATE // 1000)
    time_axis = np.arange(tone_len) / SAMPLE_RATE
    pieces = []
    for symbol in symbols:
        pieces.append(cfg.amplitude * np.sin(2.0 * np.pi * cfg.frequency(symbol) * time_axis))
        pieces.append(gap)
    clean = np.concatenate(pieces)
    return clean + rng.normal(0.0, cfg.noise_std, size=clean.shape[0])


def synth_corpus(cfg: SynthConfig, out_dir: str) -> Tuple[Corpus, Corpus, Corpus]:
    """Writes a labeled tone corpus with train, val, and test splits.

    Audio lands in ``<out_dir>/<split>/`` and each split gets a ``<out_dir>/<split>.csv`` manifest.

    Args:
        cfg: Generation settings.
        out_dir: Destination directory, created when missing.

    Returns:
        The train, val, and test corpora.
    """
    rng = np.random.default_rng(cfg.seed)
    corpora = []
    for split in SPLITS:
        split_dir = os.path.join(os.path.abspath(out_dir), split)
        try:
            os.makedirs(split_dir, exist_ok=True)
        except OSError as error:
            raise IoError(f"Unable to create {split_dir}: {error}") from error
        items = []
        for index in range(cfg.counts[split]):
            length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
            symbols = rng.integers(0, len(cfg.alphabet), size=length)
            path = os.path.join(split_dir, f"{split}_{index:05d}.wav")
            write_wav(path, Waveform(synth_utterance(symbols, cfg, rng)))
            items.append(CorpusItem(path, "".join(cfg.alphabet[symbol] for symbol in symbols)))
        write_manifest(os.path.join(os.path.abspath(out_dir), f"{split}.csv"), items)
        corpora.append(Corpus(items, cfg.alphabet))
    return corpora[0], corpora[1], corpora[2]


class ExperimentReport(object):
    """Rows of an experiment plus everything needed to reproduce it.

    Attributes:
        rows: One dict per evaluated cell.
        meta: Configurations, seeds, corpus sizes and, when requested, wall clock time.
    """

    def __init__(self, rows: List[dict] = None, meta: dict = None) -> None:
        """Store rows and metadata."""
        self.rows = rows or []
        self.meta = meta or {}

    def to_dict(self) -> dict:
        """JSON form of the report."""
        return {"meta": self.meta, "rows": self.rows}

    def fields(self) -> List[str]:
        """CSV columns: the standard row keys followed by any extra keys in order of appearance."""
        fields = list(ROW_FIELDS)
        for row in self.rows:
            fields.extend(key for key in row if key not in fields)
        return fields

    def save(self, path: str) -> str:
        """Writes the report as JSON and as CSV next to it.

        Args:
            path: Location of the JSON report; the CSV shares its name with a ``.csv`` extension.

        Returns:
            The location of the CSV report.
        """
        csv_path = os.path.splitext(path)[0] + ".csv"
        try:
            with open(path, "wt", encoding="utf-8") as json_file:
                json.dump(self.to_dict(), json_file, indent=2)
                json_file.write("\n")
            write_csv(csv_path, self.fields(), self.rows)
        except OSError as error:
            raise IoError(f"Unable to write report {path}: {error}") from error
        return csv_path

    @classmethod
    def load(cls, path: str) -> "ExperimentReport":
        """Reads a JSON report written by save."""
        if not os.path.isfile(path):
            raise NotFound(f"No report found: {path}")
        try:
            with open(path, "rt", encoding="utf-8") as json_file:
                data = json.load(json_file)
            return cls(data["rows"], data["meta"])
        except (ValueError, KeyError, TypeError) as error:
            raise CorruptFile(f"Invalid report {path}") from error


def write_csv(path: str, fields: List[str], rows: List[dict]) -> None:
    """Writes dict rows as CSV; missing and None values become empty cells."""
    with open(path, "wt", encoding="utf-8", newline="") as csv_file:
        writer = csv.DictWriter(csv_file, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: ("" if row.get(key) is None else row[key]) for key in fields})


def report_row(epsilon: float, split: str, kind: str, model_id: str, corpus: Corpus, evaluation: Evaluation) -> dict:
    """One report row from the evaluation of a perturbation on a corpus."""
    return {
        "epsilon": epsilon,
        "split": split,
        "perturbation_kind": kind,
        "model_id": model_id,
        "mean_db_rel": evaluation.mean_db_rel,
        "success_rate": evaluation.success_rate,
        "mean_cer": evaluation.mean_cer,
        "n_items": len(corpus),
        "n_excluded_empty": evaluation.n_excluded,
    }


class ExperimentHarness(LogService):
    """Drives the experiments comparing universal perturbations, training sizes, noise, and victims.

    Attributes:
        config: Attack settings shared by every experiment; epsilon is overridden per cell.
        workers: Threads used by evaluations.
        timing: Whether reports record wall clock time, which makes them differ between runs.
        run_config: Flat settings the experiment was launched with, recorded verbatim in every report.
    """

    def __init__(
        self,
        config: AttackConfig = None,
        workers: int = 1,
        timing: bool = False,
        logger: logging.Logger = None,
        run_config: dict = None,
    ) -> None:
        """Set up the harness with shared attack settings."""
        super(ExperimentHarness, self).__init__(logger or logging.getLogger(__name__))
        self.config = config or AttackConfig()
        self.workers = workers
        self.timing = timing
        self.run_config = dict(run_config or {})

    def _evaluate(self, model: AcousticModel, corpus: Corpus, v: np.ndarray) -> Evaluation:
        """Evaluates a perturbation with the shared threshold."""
        return evaluate_universal(model, corpus, v, self.config.threshold, self.workers)

    def _meta(
        self,
        experiment: str,
        started: float,
        corpora: Dict[str, Corpus],
        models: Sequence[AcousticModel],
        **extra: object,
    ) -> dict:
        """Metadata common to every report, enough to rerun the experiment."""
        meta = {
            "experiment": experiment,
            "version": __version__,
            "attack_config": self.config.to_dict(),
            "seeds": {"attack": self.config.seed, "random": self.config.seed},
            "corpus_sizes": {name: len(corpus) for name, corpus in corpora.items()},
            "model_ids": [model.model_id for model in models],
            "models": [
                {
                    "model_id": model.model_id,
                    "arch": model.arch,
                    "hyper": model.hyper,
                    "feature_config": model.feature_config.to_dict(),
                }
                for model in models
            ],
            **extra,
        }
        if self.run_config:
            meta["run_config"] = self.run_config
        if self.timing:
            meta["wall_clock_s"] = time.perf_counter() - started
        return meta

    def run_epsilon_sweep(
        self,
        model: AcousticModel,
        train: Corpus,
        val: Corpus,
        test: Corpus,
        eps_grid: Sequence[float] = DEFAULT_EPSILON_GRID,
    ) -> ExperimentReport:
        """Trains one perturbation per budget and evaluates it on train and test, next to random noise on test.

        Args:
            model: Victim model.
            train: Utterances the perturbations are built from.
            val: Utterances the stopping rule is measured on.
            test: Held out utterances.
            eps_grid: Budgets to sweep.

        Returns:
            Three rows per budget: universal on train, universal on test, random on test.
        """
        started = time.perf_counter()
        rows = []
        for epsilon in eps_grid:
            cfg = self.config.replace(epsilon=epsilon)
            perturbation = universal_train(model, train, val, cfg, workers=self.workers)
            for split, corpus in (("train", train), ("test", test)):
                evaluation = self._evaluate(model, corpus, perturbation.samples)
                rows.append(report_row(cfg.epsilon, split, UNIVERSAL, model.model_id, corpus, evaluation))
            noise = random_perturbation(cfg.epsilon, cfg.perturbation_len, cfg.seed)
            rows.append(report_row(cfg.epsilon, "test", RANDOM, model.model_id, test, self._evaluate(model, test, noise)))
            self.log_message(
                f"epsilon {cfg.epsilon:g}: test success {rows[-2]['success_rate']:.4f}, random {rows[-1]['success_rate']:.4f}"
            )
        meta = self._meta(
            "epsilon_sweep",
            started,
            {"train": train, "val": val, "test": test},
            [model],
            eps_grid=[float(epsilon) for epsilon in eps_grid],
        )
        return ExperimentReport(rows, meta)

    def run_baseline_comparison(
        self,
        model: AcousticModel,
        test: Corpus,
        v: UniversalPerturbation,
        eps: float = None,
        seed: int = None,
    ) -> ExperimentReport:
        """Evaluates a universal perturbation and uniform noise of the same budget on the test split.

        Args:
            model: Victim model.
            test: Held out utterances.
            v: Perturbation trained at budget eps.
            eps: Budget of the noise, the budget of v by default.
            seed: Seed of the noise, the attack seed by default.

        Returns:
            A universal row followed by a random row.
        """
        started = time.perf_counter()
        eps = float(v.epsilon if eps is None else eps)
        seed = self.config.seed if seed is None else seed
        noise = random_perturbation(eps, len(v), seed)
        rows = [
            report_row(eps, "test", UNIVERSAL, model.model_id, test, self._evaluate(model, test, v.samples)),
            report_row(eps, "test", RANDOM, model.model_id, test, self._evaluate(model, test, noise)),
        ]
        self.log_message(f"epsilon {eps:g}: universal {rows[0]['success_rate']:.4f}, random {rows[1]['success_rate']:.4f}")
        meta = self._meta("baseline", started, {"test": test}, [model], noise_seed=seed)
        return ExperimentReport(rows, meta)

    def run_size_sweep(
        self,
        model: AcousticModel,
        train: Corpus,
        val: Corpus,
        test: Corpus,
        sizes: Sequence[int] = DEFAULT_SIZES,
        eps: float = None,
    ) -> ExperimentReport:
        """Trains perturbations on growing prefixes of one shuffled training order.

        Args:
            model: Victim model.
            train: Pool of training utterances.
            val: Utterances the stopping rule is measured on.
            test: Held out utterances.
            sizes: Number of training utterances per cell, each at most len(train).
            eps: Budget of every perturbation, the configured epsilon by default.

        Returns:
            One test row per size, tagged with train_size.
        """
        started = time.perf_counter()
        cfg = self.config if eps is None else self.config.replace(epsilon=eps)
        too_large = [size for size in sizes if not 0 <= size <= len(train)]
        if too_large:
            raise ExperimentError(f"Training sizes {too_large} are outside [0, {len(train)}]")
        order = np.random.default_rng(cfg.seed).permutation(len(train))
        rows = []
        for size in sizes:
            if size:
                v = universal_train(model, train.subset(order[:size]), val, cfg, workers=self.workers).samples
            else:
                v = np.zeros(cfg.perturbation_len)
            row = report_row(cfg.epsilon, "test", UNIVERSAL, model.model_id, test, self._evaluate(model, test, v))
            row["train_size"] = int(size)
            rows.append(row)
            self.log_message(f"train size {size}: test success {row['success_rate']:.4f}")
        meta = self._meta(
            "size_sweep",
            started,
            {"train": train, "val": val, "test": test},
            [model],
            sizes=[int(size) for size in sizes],
        )
        return ExperimentReport(rows, meta)

    def run_transfer(
        self,
        model_a: AcousticModel,
        model_b: AcousticModel,
        test: Corpus,
        v: UniversalPerturbation,
    ) -> ExperimentReport:
        """Evaluates one perturbation against the model it was built on and a model of another architecture.

        Args:
            model_a: Victim the perturbation was trained against.
            model_b: Second victim with a different architecture.
            test: Held out utterances.
            v: The perturbation.

        Returns:
            One row per model.
        """
        if model_a.arch == model_b.arch:
            raise ExperimentError(f"Transfer needs two architectures, both models are {model_a.arch}")
        started = time.perf_counter()
        rows = []
        for model in (model_a, model_b):
            rows.append(report_row(float(v.epsilon), "test", UNIVERSAL, model.model_id, test, self._evaluate(model, test, v.samples)))
            self.log_message(f"{model.model_id}: success {rows[-1]['success_rate']:.4f}")
        meta = self._meta(
            "transfer",
            started,
            {"test": test},
            [model_a, model_b],
            source_model_id=v.model_id,
        )
        return ExperimentReport(rows, meta)


def plot_data(report: ExperimentReport, kind: str) -> List[dict]:
    """Reshapes a report into the series of a figure.

    Args:
        report: Report of an epsilon sweep or baseline (kind "baseline"), or of a size sweep (kind "size").
        kind: Shape of the series.

    Returns:
        Rows keyed by PLOT_FIELDS[kind].
    """
    if kind not in PLOT_FIELDS:
        raise InvalidConfig(f"Unknown plot kind {kind}, expected one of {sorted(PLOT_FIELDS)}")
    if kind == "size":
        return [
            {"train_size": row["train_size"], "success_rate": row["success_rate"], "mean_cer": row["mean_cer"]}
            for row in report.rows
            if "train_size" in row
        ]
    series = {}
    for row in report.rows:
        if row["split"] != "test":
            continue
        point = series.setdefault(
            row["epsilon"], {"epsilon": row["epsilon"], "universal_success_rate": None, "random_success_rate": None}
        )
        point[f"{row['perturbation_kind']}_success_rate"] = row["success_rate"]
    return list(series.values())
