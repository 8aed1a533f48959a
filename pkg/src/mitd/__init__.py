"""Character-level inflection transducers, exact and heuristic decoding, calibration analysis."""

__version__ = "0.1.0"
