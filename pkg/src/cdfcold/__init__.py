"""Causal multivariate forecasting for data centers, with cold-start transfer.

Modules: ``data`` (panels), ``preprocess`` (smoothing, differencing, z-score),
``causal`` (VARLiNGAM discovery), ``nn`` (graph + LSTM network), ``model``
(training and prediction), ``similarity`` (GMM, Eros, Manhattan),
``coldstart`` (donor strategies), ``synth`` (synthetic fleets), ``eval``
(metrics and experiments) and ``cli``.
"""

__version__ = "0.1.0"
