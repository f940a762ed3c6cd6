"""Errors raised by the perturbation toolkit.

Every error carries a machine-readable ``code`` (the class name) so command line tools can report failures
without parsing messages. Each class also derives from the closest builtin exception.
"""


class UniperturbError(Exception):
    """Base error for all toolkit failures."""

    @property
    def code(self) -> str:
        """Machine-readable name of the error."""
        return type(self).__name__


class UnsupportedFormat(UniperturbError, ValueError):
    """Audio file is not PCM16, mono, 16 kHz."""


class CorruptFile(UniperturbError, ValueError):
    """File header or payload is truncated or invalid."""


class NotFound(UniperturbError, FileNotFoundError):
    """Requested file does not exist."""


class IoError(UniperturbError, OSError):
    """File could not be written."""


class MissingAudio(UniperturbError, FileNotFoundError):
    """Manifest row references an audio file that does not exist."""


class InvalidTranscript(UniperturbError, ValueError):
    """Transcript contains a character outside the alphabet."""


class MalformedManifest(UniperturbError, ValueError):
    """Manifest is not a valid ``path,transcript`` CSV."""


class InvalidConfig(UniperturbError, ValueError):
    """Configuration value is out of range or inconsistent."""


class TooShort(UniperturbError, ValueError):
    """Signal holds fewer samples than a single analysis frame."""


class ShapeMismatch(UniperturbError, ValueError):
    """Array shapes do not agree with the producing computation."""


class EmptyCorpus(UniperturbError, ValueError):
    """Corpus holds no items."""


class DivergedTraining(UniperturbError, ArithmeticError):
    """Training loss became non-finite."""


class InfeasibleTarget(UniperturbError, ValueError):
    """Target cannot be aligned to the available frames."""


class TooLargeForOracle(UniperturbError, ValueError):
    """Instance is too large for exhaustive path enumeration."""


class EmptyOriginal(UniperturbError, ValueError):
    """Character error rate is undefined for an empty reference."""


class SilentSignal(UniperturbError, ValueError):
    """Loudness is undefined for an all-zero signal."""


class NonFiniteSignal(UniperturbError, ValueError):
    """Signal holds NaN or infinite samples."""


class AllTranscriptsEmpty(UniperturbError, ValueError):
    """Every clean transcription in the corpus is empty."""


class GradientNonFinite(UniperturbError, ArithmeticError):
    """Gradient contains NaN or infinite values."""


class ExperimentError(UniperturbError, ValueError):
    """Experiment inputs violate a driver precondition."""
