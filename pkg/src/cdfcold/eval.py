"""Metrics and experiment harnesses on (synthetic) fleets.

Every score is computed on the total-traffic attribute in original units,
averaged over all valid forecast origins of the evaluation region.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .coldstart import ColdStartConfig, Donor, coldstart_forecast_many
from .data import Fleet, Panel
from .errors import AllTermsExcluded, DimensionMismatch, StrategyPreconditionFailed
from .model import ModelConfig, fit, predict_many, split_points
from .preprocess import PipelineConfig
from .synth import make_coldstart_scenario

MAPE_EPS = 1e-8
FORECAST_METHODS = {"lstm": "none", "lstm_gnn": "all_ones", "cdf": "causal"}
COLDSTART_STRATEGIES = ("cdf", "lstm", "lstm_gnn", "gmm", "gmm_sd", "eros", "virtual", "virtual_mn")
TOTAL = "total"


@dataclass(frozen=True)
class MetricReport:
    mse: float
    mae: float
    mape: float
    mape_excluded_count: int = 0
    n: int = 0


def metrics(pred, actual, eps: float = MAPE_EPS, strict_mape: bool = True) -> MetricReport:
    """MSE, MAE and MAPE (as a ratio). MAPE skips terms with |actual| < eps.

    When every term is excluded and ``strict_mape`` is set, AllTermsExcluded
    is raised with the partial report (MAPE = NaN) attached; otherwise that
    report is returned.
    """
    p = np.asarray(pred, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if p.shape != a.shape:
        raise DimensionMismatch(f"prediction {p.shape} vs actual {a.shape}")
    err = p - a
    keep = np.abs(a) >= eps
    excluded = int(np.sum(~keep))
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(a))):
        raise ValueError("metrics need finite inputs")
    mape = float(np.mean(np.abs(err[keep]) / np.abs(a[keep]))) if keep.any() else float("nan")
    report = MetricReport(float(np.mean(err ** 2)), float(np.mean(np.abs(err))), mape, excluded, int(p.size))
    if strict_mape and not keep.any():
        raise AllTermsExcluded("every actual value is below the MAPE threshold", report)
    return report


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=lambda: ModelConfig(
        epochs=50, learning_rate=1e-3, pipeline=PipelineConfig(smooth=False)))
    train_frac: float = 0.8
    val_frac: float = 0.1
    n_masked: int = 3
    cut_frac: float = 0.75
    cut: int | None = None
    k: int = 5
    gmm_K: int = 7
    seed: int = 0
    jobs: int = 1

    def cut_for(self, T: int) -> int:
        return self.cut if self.cut is not None else int(self.cut_frac * T)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentResult:
    records: list = field(default_factory=list)  # (seed, center, method, metric, value)
    config: dict = field(default_factory=dict)

    def add(self, seed, center, method, report: MetricReport):
        for metric in ("mse", "mae", "mape"):
            self.records.append((seed, center, method, metric, getattr(report, metric)))

    def extend(self, other: "ExperimentResult"):
        self.records.extend(other.records)

    def methods(self) -> list[str]:
        return list(dict.fromkeys(r[2] for r in self.records))

    def centers(self) -> list[str]:
        return list(dict.fromkeys(r[1] for r in self.records))

    def values(self, method: str, metric: str = "mse", seed=None) -> list[float]:
        return [r[4] for r in self.records
                if r[2] == method and r[3] == metric and (seed is None or r[0] == seed)]

    def median(self, method: str, metric: str = "mse", seed=None) -> float:
        vals = self.values(method, metric, seed)
        return float(np.nanmedian(vals)) if vals else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "center", "method", "metric", "value"])
        for seed, center, method, metric, value in self.records:
            w.writerow([seed, center, method, metric, repr(float(value))])
        return buf.getvalue()

    def summary(self) -> dict:
        seeds = sorted(set(r[0] for r in self.records))
        return {
            "methods": {m: {k: self.median(m, k) for k in ("mse", "mae", "mape")} for m in self.methods()},
            "per_seed_median_mse": {str(s): {m: self.median(m, "mse", s) for m in self.methods()}
                                    for s in seeds},
            "config": self.config,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=1, sort_keys=True, default=str)


def _score_total(forecasts, truth: Panel) -> MetricReport:
    tot = truth.column(TOTAL)
    j = None
    preds, actual = [], []
    for f in forecasts:
        j = f.columns.index(TOTAL) if j is None else j
        H = f.values.shape[0]
        preds.append(f.values[:, j])
        actual.append(tot[f.origin + 1:f.origin + 1 + H])
    return metrics(np.concatenate(preds), np.concatenate(actual), strict_mape=False)


def _map(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _forecast_center(args):
    panel, methods, config = args
    a, b = split_points(panel.T, config.train_frac, config.val_frac)
    H = config.model.H
    origins = list(range(b - 1, panel.T - H))
    out = []
    for method in methods:
        cfg = replace(config.model, adjacency_mode=FORECAST_METHODS[method])
        model, _ = fit(panel, cfg, a, b)
        out.append((method, _score_total(predict_many(model, panel, origins), panel)))
    return panel.id, out


def run_forecast_experiment(fleet: Fleet, methods: Sequence[str] = ("lstm", "lstm_gnn", "cdf"),
                            config: ExperimentConfig | None = None) -> ExperimentResult:
    """Chronological 80/10/10 split per center; test-split scores per method."""
    config = config or ExperimentConfig()
    result = ExperimentResult(config=config.to_dict())
    methods = list(methods)
    unknown = [m for m in methods if m not in FORECAST_METHODS]
    if unknown:
        raise ValueError(f"unknown forecast methods {unknown}")
    if not methods:
        return result
    for center, scores in _map(_forecast_center, [(p, methods, config) for p in fleet], config.jobs):
        for method, report in scores:
            result.add(config.seed, center, method, report)
    return result


def _train_donor(args):
    panel, cfg, cut = args
    model, _ = fit(panel, cfg, cut)
    return Donor(panel, model)


def train_donors(fleet: Fleet, config: ExperimentConfig) -> list[Donor]:
    """One CDF model per center on rows before the cold-start cut."""
    cut = config.cut_for(fleet[0].T)
    cfg = replace(config.model, adjacency_mode="causal")
    return _map(_train_donor, [(p, cfg, cut) for p in fleet], config.jobs)


def coldstart_origins(T: int, cut: int, H: int) -> list[int]:
    """Origins from the cut onwards: the first forecast row is the cut itself."""
    return list(range(cut - 1, T - H))


def _target_only(target: Panel, method: str, config: ExperimentConfig, cut: int, origins) -> list:
    """Baseline without cold-start handling: train on the target's own observed attributes."""
    attrs = [n for n, ok in zip(target.schema.names, target.observed[:cut].all(axis=0)) if ok]
    sub = target.select(attrs)
    cfg = replace(config.model, adjacency_mode=FORECAST_METHODS[method])
    model, _ = fit(sub, cfg, cut)
    return predict_many(model, sub, origins)


def _coldstart_target(args):
    fleet, donors, index, strategies, config = args
    T = fleet[0].T
    cut = config.cut_for(T)
    masked_fleet, targets = make_coldstart_scenario(fleet, index, config.n_masked, cut)
    target = masked_fleet[index]
    others = [d for d in donors if d.id != target.id]
    origins = coldstart_origins(T, cut, config.model.H)
    out = []
    for strategy in strategies:
        if strategy in FORECAST_METHODS:
            forecasts = _target_only(target, strategy, config, cut, origins)
        else:
            cs = ColdStartConfig(strategy, config.k, config.gmm_K, config.seed, config.model)
            forecasts = coldstart_forecast_many(target, others, cs, origins, train_end=cut).forecasts
        out.append((strategy, _score_total(forecasts, targets.truth)))
    return target.id, out


def run_coldstart_experiment(fleet: Fleet, strategies: Sequence[str] = COLDSTART_STRATEGIES,
                             config: ExperimentConfig | None = None,
                             donors: list[Donor] | None = None) -> ExperimentResult:
    """Leave-one-center-out: each center in turn is the cold-start target."""
    config = config or ExperimentConfig()
    if len(fleet) < 3:
        raise StrategyPreconditionFailed("cold-start experiment needs at least 3 centers")
    strategies = list(strategies)
    bad = [s for s in strategies if s not in COLDSTART_STRATEGIES]
    if bad:
        raise ValueError(f"unknown strategies {bad}")
    result = ExperimentResult(config=config.to_dict())
    if not strategies:
        return result
    donors = donors if donors is not None else train_donors(fleet, config)
    tasks = [(fleet, donors, i, strategies, config) for i in range(len(fleet))]
    for center, scores in _map(_coldstart_target, tasks, config.jobs):
        for strategy, report in scores:
            result.add(config.seed, center, strategy, report)
    return result


def sweep_k(fleet: Fleet, strategy: str, values: Sequence[int], config: ExperimentConfig | None = None,
            donors: list[Donor] | None = None) -> list[dict]:
    """Median cold-start error per k (Eros donor count) or per K (GMM components)."""
    config = config or ExperimentConfig()
    if strategy not in ("eros", "gmm"):
        raise ValueError("sweep supports the eros and gmm strategies")
    donors = donors if donors is not None else train_donors(fleet, config)
    rows = []
    for v in values:
        cfg = replace(config, k=v) if strategy == "eros" else replace(config, gmm_K=v)
        res = run_coldstart_experiment(fleet, [strategy], cfg, donors)
        rows.append({"k": v, "mse": res.median(strategy, "mse"), "mae": res.median(strategy, "mae"),
                     "mape": res.median(strategy, "mape")})
    return rows


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "median_mse", "median_mae", "median_mape"])
    for r in rows:
        w.writerow([r["k"], repr(r["mse"]), repr(r["mae"]), repr(r["mape"])])
    return buf.getvalue()
