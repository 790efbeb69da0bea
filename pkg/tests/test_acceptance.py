"""The ten acceptance criteria, at their stated tolerances.

Each test records one PASS/FAIL line, printed in the terminal summary.
Criteria 6-8 train many models and take tens of minutes on one core.
"""

import os
import time
from dataclasses import replace

import numpy as np
import pytest

from cdfcold.causal import discover, edge_f1
from cdfcold.cli import main
from cdfcold.coldstart import ColdStartConfig, coldstart_forecast_many
from cdfcold.data import mask_history
from cdfcold.eval import (
    ExperimentConfig,
    coldstart_origins,
    run_coldstart_experiment,
    run_forecast_experiment,
    sweep_k,
    train_donors,
)
from cdfcold.model import ModelConfig, fit, predict, predict_many
from cdfcold.preprocess import PipelineConfig, invert_forecast, preprocess_pipeline, rolling_median
from cdfcold.similarity import eros_similarity, eros_weights, gmm_fit, gmm_log_resp
from cdfcold.synth import FleetSpec, SvarSpec, generate_fleet, generate_svar, make_coldstart_scenario

from conftest import make_panel, max_gradient_error, random_net, record_criterion

pytestmark = pytest.mark.acceptance

SEEDS = range(10)


def test_criterion_1_gradients():
    start = time.perf_counter()
    net, X, KF, Y = random_net(A=5, U=6, H=3, graph_dim=4, lstm_dim=8, layers=2)
    err = max_gradient_error(net, X, KF, Y, h=1e-5)
    elapsed = time.perf_counter() - start
    ok = err < 1e-4 and elapsed < 5
    record_criterion(1, ok, f"max relative gradient error {err:.2e} (< 1e-4) in {elapsed:.2f}s (< 5s)")
    assert ok


def test_criterion_2_preprocessing_inversion():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        T, A = rng.integers(20, 200), rng.integers(1, 6)
        x = rng.uniform(-100, 100, A) + rng.normal(0, rng.uniform(0.1, 10), (T, A)).cumsum(axis=0)
        p = make_panel(x)
        out, state = preprocess_pipeline(p, PipelineConfig(smooth=False))
        back = invert_forecast(out.values, state, anchor_levels=x[0])
        worst = max(worst, np.abs(back - x[1:]).max())
    causal = True
    for trial in range(100):
        s = rng.normal(size=50)
        t = rng.integers(0, 49)
        mutated = s.copy()
        mutated[t + 1:] = rng.normal(size=49 - t) * 100
        causal &= np.array_equal(rolling_median(s, 7)[:t + 1], rolling_median(mutated, 7)[:t + 1])
    ok = worst < 1e-9 and causal
    record_criterion(2, ok, f"max reconstruction error {worst:.2e} (< 1e-9) on 100 panels; "
                            f"rolling-median causality {'holds' if causal else 'violated'}")
    assert ok


def test_criterion_3_causal_recovery():
    start = time.perf_counter()
    scores = []
    for seed in SEEDS:
        data, _, _, truth = generate_svar(SvarSpec(n_vars=5, T=1000, seed=seed))
        scores.append(edge_f1(discover(make_panel(data)).adjacency, truth))
    elapsed = time.perf_counter() - start
    med = float(np.median(scores))
    ok = med >= 0.8 and elapsed < 60
    record_criterion(3, ok, f"median edge F1 {med:.3f} (>= 0.8) over 10 SVAR seeds in {elapsed:.1f}s (< 60s)")
    assert ok


def test_criterion_4_em():
    monotone = True
    rng = np.random.default_rng(0)
    for run in range(50):
        X = rng.normal(size=(int(rng.integers(10, 60)), int(rng.integers(1, 5))))
        h = gmm_fit(X, int(rng.integers(1, 5)), seed=run).history
        monotone &= bool(np.all(np.diff(h) >= -1e-9))
    blobs_ok = 0
    for seed in SEEDS:
        r = np.random.default_rng(seed)
        X = np.vstack([r.normal(-5, 0.3, (20, 2)), r.normal(5, 0.3, (20, 2))])
        labels = np.repeat([0, 1], 20)
        m = gmm_fit(X, 2, seed=seed)
        monotone &= bool(np.all(np.diff(m.history) >= -1e-9))
        a = gmm_log_resp(m, X)[0].argmax(axis=1)
        blobs_ok += bool((a == labels).all() or (a == 1 - labels).all())
    ok = monotone and blobs_ok == 10
    record_criterion(4, ok, f"EM log-likelihood non-decreasing: {monotone}; two-blob assignment {blobs_ok}/10")
    assert ok


def test_criterion_5_eros():
    rng = np.random.default_rng(0)
    self_err = sym_err = 0.0
    in_range = True
    for _ in range(100):
        A = int(rng.integers(2, 6))
        a = make_panel(rng.normal(size=(40, A)) @ rng.normal(size=(A, A)), pid="a")
        b = make_panel(rng.normal(size=(40, A)) @ rng.normal(size=(A, A)), pid="b")
        w = eros_weights([a, b])
        s = eros_similarity(a, b, w)
        in_range &= 0.0 <= s <= 1.0
        sym_err = max(sym_err, abs(s - eros_similarity(b, a, w)))
        self_err = max(self_err, abs(eros_similarity(a, a, w) - 1.0))
    # two attributes whose principal axes are swapped: orthonormal, zero-mean columns
    u = rng.normal(size=(200, 2))
    u -= u.mean(axis=0)
    u, _, _ = np.linalg.svd(u, full_matrices=False)
    x = make_panel(u * [5.0, 1.0], pid="x")
    y = make_panel((u * [5.0, 1.0])[:, ::-1], pid="y")
    ortho = eros_similarity(x, y, [0.5, 0.5])
    ok = self_err <= 1e-9 and sym_err <= 1e-12 and in_range and abs(ortho) <= 1e-9
    record_criterion(5, ok, f"self-similarity error {self_err:.1e}, symmetry error {sym_err:.1e}, "
                            f"range ok {in_range}, orthogonal axes score {ortho:.1e}")
    assert ok


def test_criterion_6_forecast_ordering():
    start = time.perf_counter()
    wins_gnn = wins_lstm = 0
    rows = []
    for seed in SEEDS:
        fleet, _ = generate_fleet(FleetSpec(n_centers=6, n_services=5, T=600, seed=seed))
        res = run_forecast_experiment(fleet, ["lstm", "lstm_gnn", "cdf"], ExperimentConfig(seed=seed))
        med = {m: res.median(m) for m in res.methods()}
        wins_gnn += med["cdf"] <= med["lstm_gnn"]
        wins_lstm += med["cdf"] <= med["lstm"]
        rows.append(f"seed {seed}: " + ", ".join(f"{m} {v:.1f}" for m, v in med.items()))
    elapsed = time.perf_counter() - start
    for r in rows:
        print(r)
    ok = wins_gnn >= 7 and wins_lstm >= 8 and elapsed < 1800
    record_criterion(6, ok, f"CDF <= LSTM+GNN in {wins_gnn}/10 (need 7), CDF <= LSTM in {wins_lstm}/10 "
                            f"(need 8); {elapsed / 60:.1f} min (< 30)")
    assert ok


COLD_N = 12  # the eros k-sweep up to 10 needs at least 11 donors


@pytest.fixture(scope="module")
def coldstart_runs():
    """Per seed: fleet, shared donor models and the leave-one-out result."""
    runs = {}
    for seed in SEEDS:
        fleet, _ = generate_fleet(FleetSpec(n_centers=COLD_N, n_services=5, T=600, seed=seed))
        cfg = ExperimentConfig(seed=seed)
        donors = train_donors(fleet, cfg)
        res = run_coldstart_experiment(fleet, ["cdf", "gmm", "gmm_sd", "eros", "virtual", "virtual_mn"], cfg, donors)
        runs[seed] = (fleet, cfg, donors, res)
    return runs


def test_criterion_7_coldstart_ordering(coldstart_runs):
    others = ["cdf", "eros", "gmm", "virtual", "virtual_mn"]
    sd_best = 0
    beats = {m: 0 for m in ["gmm", "gmm_sd", "eros", "virtual", "virtual_mn"]}
    for seed, (_, _, _, res) in coldstart_runs.items():
        med = {m: res.median(m) for m in res.methods()}
        print(f"seed {seed}: " + ", ".join(f"{m} {v:.1f}" for m, v in med.items()))
        sd_best += all(med["gmm_sd"] <= med[m] for m in others)
        for m in beats:
            beats[m] += med[m] < med["cdf"]
    ok = sd_best >= 6 and min(beats.values()) >= 7
    record_criterion(7, ok, f"gmm_sd best in {sd_best}/10 (need 6); beats plain CDF: "
                            + ", ".join(f"{m} {v}/10" for m, v in beats.items()) + " (need 7 each)")
    assert ok


def test_criterion_8_k_sweep(coldstart_runs):
    interior = 0
    for seed, (fleet, cfg, donors, _) in coldstart_runs.items():
        rows = sweep_k(fleet, "eros", range(1, 11), cfg, donors)
        mse = [r["mse"] for r in rows]
        best_k = rows[int(np.argmin(mse))]["k"]
        print(f"seed {seed}: eros best k = {best_k}; " + " ".join(f"{v:.1f}" for v in mse))
        interior += best_k > 1
    ok = interior >= 6
    record_criterion(8, ok, f"eros k-sweep minimum at k > 1 in {interior}/10 seeds (need 6)")
    assert ok


def test_criterion_9_determinism(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[fleet]\nn_centers = 3\nn_services = 2\nT = 150\n"
                   "[model]\nU = 6\nH = 3\ngraph_dim = 4\nlstm_dim = 8\nepochs = 3\n"
                   "[coldstart]\nn_masked = 1\n[experiment]\nseeds = 2\n")
    outs = []
    for run in range(2):
        out = tmp_path / f"out{run}"
        assert main(["experiment", "--config", str(cfg), "--seed", "7", "--out", str(out),
                     "--data", str(tmp_path / "nodata")]) == 0
        assert main(["experiment", "--config", str(cfg), "--seed", "7", "--out", str(out),
                     "--data", str(tmp_path / "nodata"), "--kind", "coldstart", "--methods", "gmm_sd,eros,cdf"]) == 0
        outs.append([(out / f).read_bytes() for f in ("experiment_forecast.csv", "experiment_coldstart.csv")])
    ok = outs[0] == outs[1]
    record_criterion(9, ok, "repeated cmd_experiment runs with master seed 7 give byte-identical CSVs"
                     if ok else "result CSVs differ between identical runs")
    assert ok


def test_criterion_10_leakage():
    """Poisoned cells must not change any output: masked history and post-origin targets."""
    fleet, _ = generate_fleet(FleetSpec(n_centers=5, n_services=3, T=200, seed=3))
    cfg = ModelConfig(U=8, H=4, graph_dim=4, lstm_dim=8, epochs=3, pipeline=PipelineConfig())
    cut = 150
    masked, targets = make_coldstart_scenario(fleet, 0, 2, cut)
    raw = fleet[0]
    idx = raw.schema.indices(targets.masked)
    tgt = list(raw.schema.target_idx)
    violations = []

    # plain forecasting: rows after the origin, except O1 columns, are poison-proof
    model, _ = fit(raw, cfg, 120)
    # (identical call shapes are compared: BLAS results may differ in the last bit across batch sizes)
    for t in (120, 160, 190):
        v = raw.values.copy()
        v[t + 1:, tgt] = 1e12
        poisoned = raw.replace(values=v)
        if not np.array_equal(predict(model, poisoned, t).values, predict(model, raw, t).values):
            violations.append(f"predict reads future targets at origin {t}")
        if not np.array_equal(predict_many(model, poisoned, [t])[0].values,
                              predict_many(model, raw, [t])[0].values):
            violations.append(f"predict_many reads future targets at origin {t}")

    # cold start: masked history (values poisoned before masking) and post-origin target rows
    exp = ExperimentConfig(model=cfg, k=2, gmm_K=2)
    donors = [d for d in train_donors(fleet, replace(exp, cut=cut)) if d.id != raw.id]
    v = raw.values.copy()
    v[:cut, idx] = 1e12
    poisoned_target = mask_history(raw.replace(values=v), targets.masked, cut)
    origins = coldstart_origins(raw.T, cut, cfg.H)
    for strategy in ("gmm", "gmm_sd", "eros", "virtual", "virtual_mn"):
        cs = ColdStartConfig(strategy, 2, 2, 0, cfg)
        clean = coldstart_forecast_many(masked[0], donors, cs, origins, cut)
        dirty = coldstart_forecast_many(poisoned_target, donors, cs, origins, cut)
        if any(not np.array_equal(a.values, b.values) for a, b in zip(clean.forecasts, dirty.forecasts)):
            violations.append(f"{strategy} reads masked history")
        t = origins[0]
        w = masked[0].values.copy()
        w[t + 1:, tgt] = 1e12
        future = coldstart_forecast_many(masked[0].replace(values=w), donors, cs, [t], cut)
        single = coldstart_forecast_many(masked[0], donors, cs, [t], cut)
        if not np.array_equal(future.forecasts[0].values, single.forecasts[0].values):
            violations.append(f"{strategy} reads post-origin targets")
    ok = not violations
    record_criterion(10, ok, "zero reads of masked history or post-origin targets (poisoned-cell audit)"
                     if ok else "; ".join(violations))
    assert ok
