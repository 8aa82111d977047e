"""Semantic learning-to-hash toolkit.

Continuous embeddings are trained to reproduce semantic target distances,
pushed toward a near-binary distribution with a nearest-neighbor KL
estimate, thresholded into hash codes and searched exactly in Hamming
space.
"""

__version__ = "0.1.0"


class SemhashError(Exception):
    """Base class for all errors raised by this package."""


class DataError(SemhashError):
    """Malformed or inconsistent input data."""


class DegenerateBatchError(SemhashError):
    """A batch for which a loss term is undefined."""
