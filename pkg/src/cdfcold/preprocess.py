"""Smoothing, differencing and z-scoring with the state needed to invert them."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import Panel
from .errors import DimensionMismatch, InsufficientData, TooShort, ZeroWindow


@dataclass(frozen=True)
class ZScoreParams:
    mu: np.ndarray
    sigma: np.ndarray
    degenerate: np.ndarray

    def to_dict(self):
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist(),
                "degenerate": self.degenerate.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mu"], float), np.array(d["sigma"], float),
                   np.array(d["degenerate"], bool))


@dataclass(frozen=True)
class DifferenceAnchor:
    last_levels: np.ndarray


def rolling_median(series, window: int, observed=None) -> np.ndarray:
    """Trailing median over the last ``window`` observed entries' positions.

    With a mask, unobserved positions are skipped; a position whose whole
    window is unobserved yields NaN.
    """
    if window < 1:
        raise ZeroWindow("window must be >= 1")
    x = np.asarray(series, dtype=np.float64)
    if observed is not None:
        x = np.where(np.asarray(observed, bool), x, np.nan)
    if window == 1:
        return x.copy()
    padded = np.concatenate([np.full(window - 1, np.nan), x])
    windows = sliding_window_view(padded, window)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmedian(windows, axis=1)


def smooth_panel(panel: Panel, window: int) -> Panel:
    out = np.empty_like(panel.values)
    for j in range(panel.A):
        out[:, j] = rolling_median(panel.values[:, j], window, panel.observed[:, j])
    observed = panel.observed & ~np.isnan(out)
    # a masked cell stays masked even if its neighbours are observed
    return panel.replace(values=np.nan_to_num(out), observed=observed)


def difference(panel: Panel) -> tuple[Panel, DifferenceAnchor]:
    """Row t of the result is x[t+1] - x[t]; the anchor is the last input row."""
    if panel.T < 2:
        raise TooShort("differencing needs T >= 2")
    diffs = panel.values[1:] - panel.values[:-1]
    observed = panel.observed[1:] & panel.observed[:-1]
    anchor = DifferenceAnchor(panel.values[-1].copy())
    return panel.replace(values=diffs, observed=observed), anchor


def inverse_difference(diffs, anchor: DifferenceAnchor) -> np.ndarray:
    diffs = np.asarray(diffs, dtype=np.float64)
    levels = np.asarray(anchor.last_levels, dtype=np.float64)
    if diffs.ndim != 2 or diffs.shape[1] != levels.shape[0]:
        raise DimensionMismatch(f"diffs {diffs.shape} vs anchor length {levels.shape[0]}")
    return levels + np.cumsum(diffs, axis=0)


def zscore_fit(panel: Panel) -> ZScoreParams:
    A = panel.A
    mu, sigma, degenerate = np.zeros(A), np.ones(A), np.zeros(A, bool)
    for j in range(A):
        col = panel.values[panel.observed[:, j], j]
        if col.size < 2:
            raise InsufficientData(f"attribute {panel.schema.names[j]!r} has {col.size} observed values")
        mu[j] = col.mean()
        s = col.std()
        if s > 0:
            sigma[j] = s
        else:
            degenerate[j] = True
    return ZScoreParams(mu, sigma, degenerate)


def _check_width(width, params):
    if width != params.mu.shape[0]:
        raise DimensionMismatch(f"{width} columns vs {params.mu.shape[0]} z-score parameters")


def zscore_apply(panel: Panel, params: ZScoreParams) -> Panel:
    _check_width(panel.A, params)
    return panel.replace(values=(panel.values - params.mu) / params.sigma)


def zscore_invert(matrix, params: ZScoreParams, columns=None) -> np.ndarray:
    """Undo z-scoring. ``columns`` picks the parameter subset matching the matrix."""
    m = np.asarray(matrix, dtype=np.float64)
    mu, sigma = params.mu, params.sigma
    if columns is not None:
        mu, sigma = mu[columns], sigma[columns]
    if m.shape[-1] != mu.shape[0]:
        raise DimensionMismatch(f"{m.shape[-1]} columns vs {mu.shape[0]} z-score parameters")
    return m * sigma + mu


@dataclass(frozen=True)
class PipelineConfig:
    smooth: bool = True
    window: int = 7
    difference: bool = True
    zscore: bool = True


@dataclass(frozen=True)
class PipelineState:
    config: PipelineConfig
    zscore: ZScoreParams | None = None
    anchor: DifferenceAnchor | None = None
    level_mean: np.ndarray | None = field(default=None)

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "zscore": None if self.zscore is None else self.zscore.to_dict(),
            "anchor": None if self.anchor is None else self.anchor.last_levels.tolist(),
            "level_mean": None if self.level_mean is None else self.level_mean.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineState":
        return cls(
            PipelineConfig(**d["config"]),
            None if d["zscore"] is None else ZScoreParams.from_dict(d["zscore"]),
            None if d["anchor"] is None else DifferenceAnchor(np.array(d["anchor"], float)),
            None if d.get("level_mean") is None else np.array(d["level_mean"], float),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "PipelineState":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _observed_mean(panel: Panel) -> np.ndarray:
    counts = panel.observed.sum(axis=0)
    sums = np.where(panel.observed, panel.values, 0.0).sum(axis=0)
    return np.divide(sums, counts, out=np.zeros(panel.A), where=counts > 0)


def transform(panel: Panel, config: PipelineConfig) -> tuple[Panel, DifferenceAnchor | None]:
    """Smoothing and differencing only (the stateless stages)."""
    anchor = None
    if config.smooth:
        panel = smooth_panel(panel, config.window)
    if config.difference:
        panel, anchor = difference(panel)
    return panel, anchor


def preprocess_pipeline(panel: Panel, config: PipelineConfig | None = None) -> tuple[Panel, PipelineState]:
    """Rolling median -> first differences -> z-score, each stage optional."""
    config = config or PipelineConfig()
    levels = smooth_panel(panel, config.window) if config.smooth else panel
    level_mean = _observed_mean(levels)
    out, anchor = transform(panel, config)
    params = None
    if config.zscore:
        params = zscore_fit(out)
        out = zscore_apply(out, params)
    return out, PipelineState(config, params, anchor, level_mean)


def apply_pipeline(panel: Panel, state: PipelineState) -> Panel:
    """Transform new data with the fitted state (no refitting)."""
    out, _ = transform(panel, state.config)
    if state.zscore is not None:
        out = zscore_apply(out, state.zscore)
    return out


def smoothed_levels(panel: Panel, state: PipelineState) -> Panel:
    return smooth_panel(panel, state.config.window) if state.config.smooth else panel


def invert_forecast(pred, state: PipelineState, anchor_levels=None, columns=None) -> np.ndarray:
    """Map an H x C model-space forecast back to original units.

    ``columns`` are the attribute indices of the forecast's columns;
    ``anchor_levels`` are the (smoothed) levels of those columns at the
    forecast origin and are required when differencing is on.
    """
    out = np.asarray(pred, dtype=np.float64)
    if state.zscore is not None:
        out = zscore_invert(out, state.zscore, columns)
    if state.config.difference:
        if anchor_levels is None:
            if state.anchor is None:
                raise DimensionMismatch("differenced forecast needs anchor levels")
            anchor_levels = state.anchor.last_levels if columns is None else state.anchor.last_levels[columns]
        out = inverse_difference(out, DifferenceAnchor(np.asarray(anchor_levels, float)))
    return out
