from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cdfcold.data import Fleet
from cdfcold.errors import AllTermsExcluded, DimensionMismatch, StrategyPreconditionFailed
from cdfcold.eval import (
    ExperimentConfig,
    metrics,
    run_coldstart_experiment,
    run_forecast_experiment,
    sweep_csv,
    sweep_k,
    train_donors,
)
from cdfcold.model import ModelConfig
from cdfcold.preprocess import PipelineConfig
from cdfcold.synth import FleetSpec, generate_fleet

SMALL = ExperimentConfig(model=ModelConfig(U=6, H=3, graph_dim=4, lstm_dim=8, epochs=3,
                                           pipeline=PipelineConfig(smooth=False)),
                         n_masked=1, gmm_K=2, k=2)


@pytest.fixture(scope="module")
def fleet():
    return generate_fleet(FleetSpec(n_centers=4, n_services=2, T=150, seed=2))[0]


def test_metrics_examples():
    r = metrics([1.0, 2.0], [1.0, 2.0])
    assert (r.mse, r.mae, r.mape) == (0, 0, 0)
    r = metrics([2.0, 4.0], [1.0, 2.0])
    assert (r.mse, r.mae, r.mape) == (2.5, 1.5, 1.0)
    with pytest.raises(AllTermsExcluded) as exc:
        metrics([1.0, 2.0], [0.0, 0.0])
    assert exc.value.report.mse == 2.5 and exc.value.report.mae == 1.5
    assert exc.value.report.mape_excluded_count == 2
    r = metrics([1.0, 3.0], [0.0, 2.0])
    assert r.mape == 0.5 and r.mape_excluded_count == 1
    with pytest.raises(DimensionMismatch):
        metrics([1.0], [1.0, 2.0])


@given(arrays(np.float64, 6, elements=st.floats(-1e3, 1e3)), arrays(np.float64, 6, elements=st.floats(1, 1e3)))
def test_metrics_jensen(pred, actual):
    r = metrics(pred, actual)
    assert r.mse >= 0 and r.mae >= 0 and r.mape >= 0
    assert r.mae ** 2 <= r.mse * (1 + 1e-12) + 1e-12


def test_forecast_experiment(fleet):
    single = run_forecast_experiment(Fleet((fleet[0],)), ["cdf"], SMALL)
    assert len(single.records) == 3 and single.centers() == [fleet[0].id]
    assert run_forecast_experiment(fleet, [], SMALL).records == []
    res = run_forecast_experiment(fleet, ["lstm", "cdf"], SMALL)
    assert set(res.methods()) == {"lstm", "cdf"} and len(res.centers()) == 4
    assert np.isfinite([r[4] for r in res.records]).all()
    again = run_forecast_experiment(fleet, ["lstm", "cdf"], SMALL)
    assert again.to_csv() == res.to_csv()
    assert res.to_csv().splitlines()[0] == "seed,center,method,metric,value"


def test_forecast_experiment_parallel_matches_serial(fleet):
    a = run_forecast_experiment(fleet, ["cdf"], SMALL)
    b = run_forecast_experiment(fleet, ["cdf"], replace(SMALL, jobs=2))
    assert a.to_csv() == b.to_csv()


def test_coldstart_experiment(fleet):
    cfg = replace(SMALL, cut=110)
    res = run_coldstart_experiment(fleet, ["cdf", "gmm", "gmm_sd", "eros", "virtual", "virtual_mn"], cfg)
    assert len(res.centers()) == 4 and len(res.methods()) == 6
    assert all(np.isfinite(res.values(m)).all() for m in res.methods())
    with pytest.raises(StrategyPreconditionFailed):
        run_coldstart_experiment(Fleet(tuple(fleet)[:2]), ["gmm"], cfg)


def test_identical_fleet_strategies_agree():
    base = generate_fleet(FleetSpec(n_centers=2, n_services=2, T=150, seed=8))[0][0]
    fleet = Fleet(tuple(base.replace(id=f"dc{i}") for i in range(4)))
    cfg = replace(SMALL, cut=110)
    res = run_coldstart_experiment(fleet, ["gmm", "gmm_sd", "eros", "virtual", "virtual_mn"], cfg)
    meds = [res.median(m) for m in res.methods()]
    assert max(meds) <= 1.1 * min(meds)


def test_sweep(fleet):
    cfg = replace(SMALL, cut=110)
    donors = train_donors(fleet, cfg)
    rows = sweep_k(fleet, "eros", [2], cfg, donors)
    assert len(rows) == 1 and rows[0]["k"] == 2
    rows = sweep_k(fleet, "eros", [1, 2, 3], cfg, donors)
    assert [r["k"] for r in rows] == [1, 2, 3]
    assert sweep_csv(rows).count("\n") == 4
    assert len(sweep_k(fleet, "gmm", [1, 2], cfg, donors)) == 2
    with pytest.raises(ValueError):
        sweep_k(fleet, "virtual", [1], cfg, donors)
