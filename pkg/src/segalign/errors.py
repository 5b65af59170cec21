"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so raising the right class is
part of the contract: configuration problems, data problems, and numeric
failures must stay distinguishable.
"""


class ConfigError(ValueError):
    """Invalid configuration key, value, or combination."""


class DataError(ValueError):
    """Dataset missing, malformed, or inconsistent with the vocabulary."""


class ZeroNormError(FloatingPointError):
    """A representation collapsed to the zero vector.

    Cosine similarity is undefined there; this signals a broken decoder
    rather than something to paper over with an epsilon.
    """


class TrainingDivergedError(FloatingPointError):
    """A loss component became non-finite during optimization."""
