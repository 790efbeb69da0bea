"""Command-line entry point: ``cdfcold <command> [--config FILE] [--seed N] [--jobs N] [--out DIR]``.

Configuration is an INI file; every key has a default (see ``DEFAULTS``) and
command-line flags override the file. Exit codes: 0 ok, 1 runtime error,
2 configuration error.

Sections and keys::

    [paths]       data_dir, out_dir, model_dir
    [fleet]       n_centers, n_services, T, usage_noise, traffic_noise, total_noise,
                  seasonal_amplitude, persistence, heterogeneity, n_profiles
    [model]       U, H, graph_dim, lstm_dim, lstm_layers, adjacency_mode, learning_rate,
                  epochs, batch_size, lag_order, edge_threshold
    [preprocess]  smooth, window, difference, zscore
    [coldstart]   strategy, k, gmm_K, n_masked, cut_frac
    [experiment]  kind (forecast | coldstart), methods, seeds
    [sweep]       strategy, k_min, k_max
    [run]         seed, jobs, center, origin
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import platform
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy

from . import __version__
from .causal import discover
from .coldstart import STRATEGIES, ColdStartConfig, coldstart_forecast_many
from .data import Fleet, load_fleet, load_panel, save_panel, slice_panel
from .errors import CdfError, ConfigError
from .eval import (
    COLDSTART_STRATEGIES,
    FORECAST_METHODS,
    ExperimentConfig,
    ExperimentResult,
    coldstart_origins,
    run_coldstart_experiment,
    run_forecast_experiment,
    sweep_csv,
    sweep_k,
    train_donors,
)
from .model import CdfModel, ModelConfig, fit, predict, split_points
from .preprocess import PipelineConfig, preprocess_pipeline
from .synth import FleetSpec, fleet_schema, generate_fleet, make_coldstart_scenario

COMMANDS = ("synth", "discover", "train", "forecast", "coldstart", "experiment", "sweep")

DEFAULTS = {
    "paths": {"data_dir": "data", "out_dir": "out", "model_dir": "model"},
    "fleet": {"n_centers": "6", "n_services": "5", "T": "600", "usage_noise": "1.0",
              "traffic_noise": "1.0", "total_noise": "1.0", "seasonal_amplitude": "3.0",
              "persistence": "0.3", "heterogeneity": "0.1", "n_profiles": "3"},
    "model": {"U": "12", "H": "10", "graph_dim": "16", "lstm_dim": "32", "lstm_layers": "1",
              "adjacency_mode": "causal", "learning_rate": "0.001", "epochs": "50",
              "batch_size": "32", "lag_order": "1", "edge_threshold": "0.1"},
    "preprocess": {"smooth": "false", "window": "7", "difference": "true", "zscore": "true"},
    "coldstart": {"strategy": "gmm_sd", "k": "5", "gmm_K": "7", "n_masked": "3", "cut_frac": "0.75"},
    "experiment": {"kind": "forecast", "methods": "lstm,lstm_gnn,cdf", "seeds": "1"},
    "sweep": {"strategy": "eros", "k_min": "1", "k_max": "10"},
    "run": {"seed": "0", "jobs": "1", "center": "dc00", "origin": "-1"},
}


@dataclass
class RunConfig:
    data_dir: str
    out_dir: str
    model_dir: str
    fleet: FleetSpec
    model: ModelConfig
    coldstart: ColdStartConfig
    n_masked: int
    cut_frac: float
    kind: str
    methods: list
    seeds: int
    sweep_strategy: str
    k_range: tuple
    seed: int
    jobs: int
    center: str
    origin: int
    raw: dict = field(default_factory=dict)

    def experiment(self, seed: int | None = None) -> ExperimentConfig:
        seed = self.seed if seed is None else seed
        return ExperimentConfig(model=replace(self.model, seed=seed), n_masked=self.n_masked,
                                cut_frac=self.cut_frac, k=self.coldstart.k, gmm_K=self.coldstart.gmm_K,
                                seed=seed, jobs=self.jobs)


def _parse_bool(section, key, value):
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: expected a boolean, got {value!r}")


def _typed(raw, section, key, kind):
    value = raw[section][key]
    if kind is bool:
        return _parse_bool(section, key, value)
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected {kind.__name__}, got {value!r}") from None


def read_config(path: str | None, overrides: dict | None = None) -> dict:
    """Merge defaults < file < overrides into a nested dict of strings."""
    raw = {s: dict(v) for s, v in DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser()
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from None
        for section in parser.sections():
            if section not in raw:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                if key not in raw[section]:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                raw[section][key] = value
    for (section, key), value in (overrides or {}).items():
        if value is not None:
            raw[section][key] = str(value)
    return raw


def build_config(raw: dict) -> RunConfig:
    try:
        f = raw["fleet"]
        fleet = FleetSpec(**{k: _typed(raw, "fleet", k, int if k in ("n_centers", "n_services", "T", "n_profiles")
                                       else float) for k in f},
                          seed=_typed(raw, "run", "seed", int))
        fleet.validate()
        pipeline = PipelineConfig(_typed(raw, "preprocess", "smooth", bool), _typed(raw, "preprocess", "window", int),
                                  _typed(raw, "preprocess", "difference", bool),
                                  _typed(raw, "preprocess", "zscore", bool))
        ints = ("U", "H", "graph_dim", "lstm_dim", "lstm_layers", "epochs", "batch_size", "lag_order")
        mk = {k: _typed(raw, "model", k, int) for k in ints}
        model = ModelConfig(adjacency_mode=raw["model"]["adjacency_mode"],
                            learning_rate=_typed(raw, "model", "learning_rate", float),
                            edge_threshold=_typed(raw, "model", "edge_threshold", float),
                            seed=_typed(raw, "run", "seed", int), pipeline=pipeline, **mk)
        cs = ColdStartConfig(raw["coldstart"]["strategy"], _typed(raw, "coldstart", "k", int),
                             _typed(raw, "coldstart", "gmm_K", int), _typed(raw, "run", "seed", int), model)
        methods = [m.strip() for m in raw["experiment"]["methods"].split(",") if m.strip()]
        kind = raw["experiment"]["kind"]
        if kind not in ("forecast", "coldstart"):
            raise ConfigError(f"[experiment] kind must be forecast or coldstart, got {kind!r}")
        allowed = FORECAST_METHODS if kind == "forecast" else COLDSTART_STRATEGIES
        bad = [m for m in methods if m not in allowed]
        if bad:
            raise ConfigError(f"[experiment] methods: {bad} not valid for kind {kind!r}")
        k_range = (_typed(raw, "sweep", "k_min", int), _typed(raw, "sweep", "k_max", int))
        if not 1 <= k_range[0] <= k_range[1]:
            raise ConfigError("[sweep] need 1 <= k_min <= k_max")
        if raw["sweep"]["strategy"] not in ("eros", "gmm"):
            raise ConfigError("[sweep] strategy must be eros or gmm")
        cut_frac = _typed(raw, "coldstart", "cut_frac", float)
        if not 0 < cut_frac < 1:
            raise ConfigError("[coldstart] cut_frac must lie in (0, 1)")
        jobs = _typed(raw, "run", "jobs", int)
        seeds = _typed(raw, "experiment", "seeds", int)
        if jobs < 1 or seeds < 1:
            raise ConfigError("jobs and seeds must be >= 1")
        return RunConfig(raw["paths"]["data_dir"], raw["paths"]["out_dir"], raw["paths"]["model_dir"], fleet, model,
                         cs, _typed(raw, "coldstart", "n_masked", int), cut_frac, kind, methods, seeds,
                         raw["sweep"]["strategy"], k_range, _typed(raw, "run", "seed", int), jobs,
                         raw["run"]["center"], _typed(raw, "run", "origin", int), raw)
    except ConfigError:
        raise
    except (ValueError, TypeError, CdfError) as exc:
        raise ConfigError(str(exc)) from None


def write_manifest(cfg: RunConfig, command: str, outputs: list[str]) -> str:
    path = os.path.join(cfg.out_dir, f"manifest_{command}.json")
    manifest = {
        "command": command,
        "seed": cfg.seed,
        "config": cfg.raw,
        "outputs": sorted(outputs),
        "versions": {"cdfcold": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


def _write(path: str, text: str) -> str:
    with open(path, "w") as fh:
        fh.write(text)
    return path


def _fleet(cfg: RunConfig) -> Fleet:
    if not os.path.isdir(cfg.data_dir):
        raise CdfError(f"fleet directory not found: {cfg.data_dir} (run `cdfcold synth` first)")
    return load_fleet(cfg.data_dir, fleet_schema(cfg.fleet.n_services))


def _panel(cfg: RunConfig):
    path = os.path.join(cfg.data_dir, f"{cfg.center}.csv")
    if not os.path.exists(path):
        raise CdfError(f"panel not found: {path}")
    return load_panel(path, fleet_schema(cfg.fleet.n_services), cfg.center)


def _forecast_csv(forecast, first_row: int) -> str:
    lines = ["step,row," + ",".join(forecast.columns)]
    for h, row in enumerate(forecast.values):
        lines.append(f"{h + 1},{first_row + h}," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def cmd_synth(cfg: RunConfig) -> list[str]:
    """Generate a synthetic fleet and its ground truth."""
    fleet, truth = generate_fleet(cfg.fleet)
    os.makedirs(cfg.data_dir, exist_ok=True)
    out = []
    for panel in fleet:
        path = os.path.join(cfg.data_dir, f"{panel.id}.csv")
        save_panel(panel, path)
        out.append(path)
    truth_path = os.path.join(cfg.data_dir, "ground_truth.json")
    truth.save(truth_path)
    return out + [truth_path]


def cmd_discover(cfg: RunConfig) -> list[str]:
    """Discover the causal graph of one center."""
    panel = _panel(cfg)
    a, _ = split_points(panel.T)
    prepared, _ = preprocess_pipeline(slice_panel(panel, 0, a), cfg.model.pipeline)
    graph = discover(prepared, cfg.model.lag_order, cfg.model.edge_threshold)
    path = os.path.join(cfg.out_dir, f"graph_{cfg.center}.json")
    graph.save(path)
    return [path]


def cmd_train(cfg: RunConfig) -> list[str]:
    """Train a model for one center and save the bundle."""
    panel = _panel(cfg)
    a, b = split_points(panel.T)
    model, report = fit(panel, cfg.model, a, b)
    model.save(cfg.model_dir)
    log = os.path.join(cfg.out_dir, f"train_{cfg.center}.json")
    with open(log, "w") as fh:
        json.dump({"initial_loss": report.initial_loss, "train_loss": report.train_loss,
                   "val_loss": report.val_loss}, fh, indent=1)
    return [cfg.model_dir, log]


def _default_origin(cfg: RunConfig, T: int) -> int:
    return cfg.origin if cfg.origin >= 0 else T - cfg.model.H - 1


def cmd_forecast(cfg: RunConfig) -> list[str]:
    """Forecast one origin with a saved model bundle."""
    if not os.path.exists(os.path.join(cfg.model_dir, "model.json")):
        raise CdfError(f"model bundle not found: {cfg.model_dir} (run `cdfcold train` first)")
    model = CdfModel.load(cfg.model_dir)
    panel = _panel(cfg)
    origin = _default_origin(cfg, panel.T)
    forecast = predict(model, panel, origin)
    path = os.path.join(cfg.out_dir, f"forecast_{cfg.center}_{origin}.csv")
    return [_write(path, _forecast_csv(forecast, origin + 1))]


def cmd_coldstart(cfg: RunConfig) -> list[str]:
    """Forecast a center with masked services from donor models."""
    fleet = _fleet(cfg)
    if cfg.center not in fleet.ids:
        raise CdfError(f"center {cfg.center!r} not in fleet {cfg.data_dir}")
    exp = cfg.experiment()
    cut = exp.cut_for(fleet[0].T)
    index = fleet.ids.index(cfg.center)
    masked, _ = make_coldstart_scenario(fleet, index, cfg.n_masked, cut)
    others = Fleet(tuple(p for p in fleet if p.id != cfg.center))
    donors = train_donors(others, exp)
    origin = cfg.origin if cfg.origin >= 0 else cut - 1
    if origin not in coldstart_origins(fleet[0].T, cut, cfg.model.H):
        raise CdfError(f"origin {origin} outside the post-cut forecast range")
    res = coldstart_forecast_many(masked[index], donors, cfg.coldstart, [origin], train_end=cut)
    fpath = os.path.join(cfg.out_dir, f"coldstart_{cfg.center}_{cfg.coldstart.strategy}.csv")
    rpath = os.path.join(cfg.out_dir, f"ranking_{cfg.center}.csv")
    return [_write(fpath, _forecast_csv(res.forecasts[0], origin + 1)), _write(rpath, res.ranking.to_csv())]


def _experiment_fleets(cfg: RunConfig):
    """Seed s uses a fresh synthetic fleet; with one seed and a data dir, that fleet."""
    if cfg.seeds == 1 and os.path.isdir(cfg.data_dir):
        yield cfg.seed, _fleet(cfg)
        return
    for s in range(cfg.seeds):
        seed = cfg.seed + s
        yield seed, generate_fleet(replace(cfg.fleet, seed=seed))[0]


def cmd_experiment(cfg: RunConfig) -> list[str]:
    """Run the multi-seed forecast or cold-start experiment."""
    result = ExperimentResult(config={"raw": cfg.raw})
    for seed, fleet in _experiment_fleets(cfg):
        exp = cfg.experiment(seed)
        if cfg.kind == "forecast":
            result.extend(run_forecast_experiment(fleet, cfg.methods, exp))
        else:
            result.extend(run_coldstart_experiment(fleet, cfg.methods, exp))
    csv_path = _write(os.path.join(cfg.out_dir, f"experiment_{cfg.kind}.csv"), result.to_csv())
    summary = _write(os.path.join(cfg.out_dir, f"experiment_{cfg.kind}_summary.json"), result.summary_json())
    return [csv_path, summary]


def cmd_sweep(cfg: RunConfig) -> list[str]:
    """Sweep k (eros) or the component count (gmm)."""
    out = []
    for seed, fleet in _experiment_fleets(cfg):
        exp = cfg.experiment(seed)
        donors = train_donors(fleet, exp)
        rows = sweep_k(fleet, cfg.sweep_strategy, range(cfg.k_range[0], cfg.k_range[1] + 1), exp, donors)
        out.append(_write(os.path.join(cfg.out_dir, f"sweep_{cfg.sweep_strategy}_seed{seed}.csv"), sweep_csv(rows)))
    return out


HANDLERS = {"synth": cmd_synth, "discover": cmd_discover, "train": cmd_train, "forecast": cmd_forecast,
            "coldstart": cmd_coldstart, "experiment": cmd_experiment, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdfcold", description="Causal forecasting with cold-start transfer.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HANDLERS[name].__doc__ or name)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--jobs", type=int, help="worker processes")
        p.add_argument("--out", help="output directory")
        p.add_argument("--data", help="fleet directory")
        p.add_argument("--model-dir", help="model bundle directory")
        p.add_argument("--center", help="panel id (train, forecast, discover, coldstart)")
        p.add_argument("--origin", type=int, help="forecast origin row")
        if name == "coldstart":
            p.add_argument("--strategy", choices=STRATEGIES)
            p.add_argument("--k", type=int)
        if name == "experiment":
            p.add_argument("--kind", choices=("forecast", "coldstart"))
            p.add_argument("--methods", help="comma-separated methods or strategies")
            p.add_argument("--seeds", type=int, help="number of seeded fleets")
        if name == "sweep":
            p.add_argument("--strategy", choices=("eros", "gmm"))
    return parser


def _overrides(args) -> dict:
    ov = {("run", "seed"): args.seed, ("run", "jobs"): args.jobs, ("paths", "out_dir"): args.out,
          ("paths", "data_dir"): args.data, ("paths", "model_dir"): args.model_dir,
          ("run", "center"): args.center, ("run", "origin"): args.origin}
    if args.command == "coldstart":
        ov[("coldstart", "strategy")] = args.strategy
        ov[("coldstart", "k")] = args.k
    if args.command == "experiment":
        ov[("experiment", "kind")] = args.kind
        ov[("experiment", "methods")] = args.methods
        ov[("experiment", "seeds")] = args.seeds
    if args.command == "sweep":
        ov[("sweep", "strategy")] = args.strategy
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = build_config(read_config(args.config, _overrides(args)))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        os.makedirs(cfg.out_dir, exist_ok=True)
        outputs = HANDLERS[args.command](cfg)
        write_manifest(cfg, args.command, outputs)
    except (CdfError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for path in outputs:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
