"""Cold-start forecasting from models trained on similar data centers."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import similarity
from .data import Panel
from .errors import (
    EmptyCandidates,
    EmptyDonorSet,
    NoEligibleDonors,
    SchemaMismatch,
    StrategyPreconditionFailed,
)
from .model import CdfModel, ForecastResult, ModelConfig, fit, predict_many

STRATEGIES = ("gmm", "gmm_sd", "eros", "virtual", "virtual_mn")


@dataclass(frozen=True)
class ColdStartConfig:
    strategy: str = "gmm_sd"
    k: int = 5
    gmm_K: int = 7
    seed: int = 0
    model: ModelConfig | None = None  # for virtual strategies; defaults to the donors' config

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.k < 1 or self.gmm_K < 1:
            raise ValueError("k and gmm_K must be >= 1")


@dataclass
class Donor:
    panel: Panel
    model: CdfModel

    @property
    def id(self) -> str:
        return self.panel.id


@dataclass(frozen=True)
class CandidateForecast:
    source: str
    values: np.ndarray


@dataclass
class ColdStartResult:
    forecasts: list  # ForecastResult per origin
    ranking: similarity.SimilarityRanking
    chosen: list
    candidates: dict = field(default_factory=dict)  # donor id -> list of H x |O2| arrays


def sd_filter_average(candidates: Sequence) -> np.ndarray:
    """Iteratively drop forecasts farther than mean + 1 sd from the centre.

    Distances are Euclidean between each flattened forecast and the mean
    forecast; filtering stops when nothing is removed or two remain.
    """
    if len(candidates) == 0:
        raise EmptyCandidates("sd filter needs at least one forecast")
    arrs = [np.asarray(c.values if isinstance(c, CandidateForecast) else c, dtype=np.float64)
            for c in candidates]
    keep = np.stack([a.ravel() for a in arrs])
    while len(keep) > 2:
        m = keep.mean(axis=0)
        d = np.linalg.norm(keep - m, axis=1)
        survivors = d <= d.mean() + d.std()
        if survivors.all():
            break
        keep = keep[survivors]
    return keep.mean(axis=0).reshape(arrs[0].shape)


def build_virtual_panel(donors: Sequence[Panel], weights: str = "uniform", target: Panel | None = None,
                        window: tuple[int, int] | None = None, panel_id: str = "virtual") -> Panel:
    """Pointwise (optionally inverse-Manhattan weighted) average of donor panels."""
    if not donors:
        raise EmptyDonorSet("virtual panel needs at least one donor")
    schema = donors[0].schema
    T = donors[0].T
    for d in donors[1:]:
        if d.schema != schema or d.T != T:
            raise SchemaMismatch(f"donor {d.id!r} differs in schema or length")
    if weights == "uniform":
        w = np.full(len(donors), 1.0 / len(donors))
    elif weights == "manhattan":
        if target is None:
            raise StrategyPreconditionFailed("Manhattan weighting needs the target panel")
        window = window or (0, min(T, target.T))
        attrs = similarity.common_attributes([target, *donors], window)
        dist = np.array([similarity.manhattan_distance(target, d, window, attrs) for d in donors])
        w = manhattan_weights(dist)
    else:
        raise ValueError(f"unknown weighting {weights!r}")
    stack = np.stack([d.values for d in donors])
    values = np.tensordot(w, stack, axes=1)
    observed = np.logical_and.reduce([d.observed for d in donors])
    return Panel(panel_id, values, schema, observed)


def manhattan_weights(dist) -> np.ndarray:
    dist = np.asarray(dist, dtype=np.float64)
    zero = dist == 0
    if zero.any():
        w = np.zeros_like(dist)
        w[np.flatnonzero(zero)[0]] = 1.0
        return w
    inv = 1.0 / dist
    return inv / inv.sum()


def eligible_donors(target: Panel, donors: Sequence[Donor], train_end: int) -> list[Donor]:
    """Donors whose history covers every attribute the target is missing."""
    missing = ~target.observed[:train_end].all(axis=0)
    out = [d for d in donors
           if d.panel.schema.names == target.schema.names
           and d.panel.observed[:train_end, missing].all()]
    return sorted(out, key=lambda d: d.id)


def rank_donors(target: Panel, donors: Sequence[Donor], method: str, window: tuple[int, int],
                gmm_K: int = 7, seed: int = 0) -> similarity.SimilarityRanking:
    panels = [d.panel for d in donors]
    attrs = similarity.common_attributes([target, *panels], window)
    if method == "eros":
        return similarity.eros_rank(target, panels, window, attrs)
    ranking, _ = similarity.gmm_similarity(target, panels, window, gmm_K, seed, attrs)
    return ranking


def coldstart_forecast_many(target: Panel, donors: Sequence[Donor], config: ColdStartConfig,
                            origins: Sequence[int], train_end: int | None = None) -> ColdStartResult:
    """Forecast the target at every origin with the configured strategy.

    Similarity is measured on rows [0, min(origins) + 1) only; virtual models
    train on rows [0, train_end) with ``train_end`` defaulting to the same
    bound, so nothing after the first forecast origin is read.
    """
    origins = [int(t) for t in origins]
    first = min(origins)
    window = (0, first + 1)
    train_end = first + 1 if train_end is None else train_end
    pool = eligible_donors(target, donors, min(train_end, first + 1))
    if not pool:
        raise NoEligibleDonors(f"no donor has history for the attributes target {target.id!r} lacks")
    method = "eros" if config.strategy == "eros" else "gmm"
    ranking = rank_donors(target, pool, method, window, config.gmm_K, config.seed)
    chosen = ranking.top(config.k)
    by_id = {d.id: d for d in pool}
    if config.strategy in ("virtual", "virtual_mn"):
        weights = "uniform" if config.strategy == "virtual" else "manhattan"
        virtual = build_virtual_panel([by_id[i].panel for i in chosen], weights, target, window,
                                      panel_id=f"virtual:{target.id}")
        cfg = config.model or by_id[chosen[0]].model.config
        model, _ = fit(virtual, cfg, train_end)
        forecasts = predict_many(model, target, origins, fill_masked=True)
        for f in forecasts:
            f.method = config.strategy
        return ColdStartResult(forecasts, ranking, chosen)
    per_donor = {}
    for i in chosen:
        preds = predict_many(by_id[i].model, target, origins, fill_masked=True)
        per_donor[i] = [p.values for p in preds]
    columns = by_id[chosen[0]].model.target_names
    forecasts = []
    for n, t in enumerate(origins):
        cands = [CandidateForecast(i, per_donor[i][n]) for i in chosen]
        if config.strategy == "gmm_sd":
            values = sd_filter_average(cands)
        else:
            values = np.mean([c.values for c in cands], axis=0)
        forecasts.append(ForecastResult(values, columns, t, target.id, config.strategy))
    return ColdStartResult(forecasts, ranking, chosen, per_donor)


def coldstart_forecast(target: Panel, donors: Sequence[Donor], config: ColdStartConfig,
                       origin: int, train_end: int | None = None) -> ForecastResult:
    return coldstart_forecast_many(target, donors, config, [origin], train_end).forecasts[0]


def virtual_strategy_forecast(target: Panel, donors: Sequence[Donor], config: ColdStartConfig,
                              origin: int, train_end: int | None = None) -> ForecastResult:
    if config.strategy not in ("virtual", "virtual_mn"):
        config = replace(config, strategy="virtual")
    return coldstart_forecast(target, donors, config, origin, train_end)
