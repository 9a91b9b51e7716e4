"""Cognitive activity recognition from ECG, respiration, GSR and gaze.

Modules: ``corpus`` (sessions and their on-disk format), ``synthetic``
(corpus generator), ``preprocess``, ``features``, ``model`` (gradient-boosted
trees), ``eval`` (cross-validation scenarios and metrics) and ``cli``.
"""
__version__ = "0.1.0"
