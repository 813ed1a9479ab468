"""Source-oriented exposure classification, propensity-score matching, and
per-region Poisson rate-ratio analysis for ZIP-level cohort tables."""

__version__ = "0.1.0"
