"""Universal adversarial audio perturbations against CTC speech recognizers."""

__version__ = "0.3"
