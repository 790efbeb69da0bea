"""CDF model assembly, windowing, training, tuning and prediction."""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import causal
from .data import AttributeSchema, Panel, slice_panel
from .errors import (
    EmptyGrid,
    EmptyTrainingSet,
    InsufficientHistory,
    MissingKnownFuture,
    PanelTooShort,
)
from .nn import Network, RmsPropState, mse_loss, rmsprop_step
from .preprocess import (
    PipelineConfig,
    PipelineState,
    apply_pipeline,
    invert_forecast,
    preprocess_pipeline,
    smoothed_levels,
)

ADJACENCY_MODES = ("causal", "all_ones", "none")


@dataclass(frozen=True)
class ModelConfig:
    U: int = 12
    H: int = 10
    graph_dim: int = 16
    lstm_dim: int = 32
    lstm_layers: int = 1
    adjacency_mode: str = "causal"
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    lag_order: int = 1
    edge_threshold: float = 0.1
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        if self.U < 1 or self.H < 1:
            raise ValueError("U and H must be >= 1")
        if min(self.graph_dim, self.lstm_dim, self.lstm_layers) < 1:
            raise ValueError("layer widths and depth must be >= 1")
        if self.adjacency_mode not in ADJACENCY_MODES:
            raise ValueError(f"adjacency_mode must be one of {ADJACENCY_MODES}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    @property
    def offset(self) -> int:
        """Model-space row r corresponds to raw row r + offset."""
        return 1 if self.pipeline.difference else 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if isinstance(d.get("pipeline"), dict):
            d["pipeline"] = PipelineConfig(**d["pipeline"])
        return cls(**d)


@dataclass(frozen=True)
class WindowSample:
    X: np.ndarray
    known_future: np.ndarray
    target: np.ndarray
    origin: int


@dataclass
class Windows:
    """Stacked window samples, ready for batched forward passes."""

    X: np.ndarray
    known_future: np.ndarray
    target: np.ndarray
    origins: np.ndarray

    def __len__(self):
        return len(self.origins)

    def take(self, idx) -> "Windows":
        return Windows(self.X[idx], self.known_future[idx], self.target[idx], self.origins[idx])


@dataclass
class TrainReport:
    initial_loss: float
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)

    @property
    def final_val_loss(self) -> float:
        if self.val_loss:
            return self.val_loss[-1]
        return float("nan")


@dataclass
class ForecastResult:
    values: np.ndarray  # H x |O2|, original units
    columns: tuple[str, ...]
    origin: int
    source: str = ""
    method: str = ""

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]


def _window_origins(T, U, H, first=None, last=None):
    lo = U - 1 if first is None else max(U - 1, first)
    hi = T - H - 1 if last is None else min(T - H - 1, last)
    return np.arange(lo, hi + 1)


def _gather(panel: Panel, U: int, H: int, origins) -> Windows:
    schema = panel.schema
    k_idx, o_idx = schema.known_idx, schema.target_idx
    origins = np.asarray(origins, dtype=int)
    past = origins[:, None] + np.arange(-U + 1, 1)[None, :]
    fut = origins[:, None] + np.arange(1, H + 1)[None, :]
    v, m = panel.values, panel.observed
    ok = m[past].all(axis=(1, 2))
    ok &= m[fut][:, :, k_idx].all(axis=(1, 2)) & m[fut][:, :, o_idx].all(axis=(1, 2))
    origins, past, fut = origins[ok], past[ok], fut[ok]
    return Windows(v[past], v[fut][:, :, k_idx], v[fut][:, :, o_idx], origins)


def window_arrays(panel: Panel, U: int, H: int, first=None, last=None) -> Windows:
    """Every fully observed window, origins restricted to [first, last] if given."""
    if panel.T < U + H:
        raise PanelTooShort(f"T={panel.T} < U + H = {U + H}")
    return _gather(panel, U, H, _window_origins(panel.T, U, H, first, last))


def make_windows(panel: Panel, config: ModelConfig) -> list[WindowSample]:
    w = window_arrays(panel, config.U, config.H)
    return [WindowSample(w.X[i], w.known_future[i], w.target[i], int(w.origins[i])) for i in range(len(w))]


def stack_windows(samples) -> Windows:
    if isinstance(samples, Windows):
        return samples
    if not samples:
        raise EmptyTrainingSet("no window samples")
    return Windows(np.stack([s.X for s in samples]), np.stack([s.known_future for s in samples]),
                   np.stack([s.target for s in samples]), np.array([s.origin for s in samples]))


@dataclass
class CdfModel:
    config: ModelConfig
    network: Network
    schema: AttributeSchema
    state: PipelineState | None = None
    graph: causal.CausalGraph | None = None
    source: str = ""

    @property
    def target_names(self) -> tuple[str, ...]:
        return tuple(self.schema.names[j] for j in self.schema.target_idx)

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        self.network.save(os.path.join(directory, "params.json"))
        meta = {"config": self.config.to_dict(), "schema": self.schema.to_dict(), "source": self.source}
        with open(os.path.join(directory, "model.json"), "w") as fh:
            json.dump(meta, fh, indent=1)
        if self.state is not None:
            self.state.save(os.path.join(directory, "pipeline.json"))
        if self.graph is not None:
            self.graph.save(os.path.join(directory, "graph.json"))

    @classmethod
    def load(cls, directory) -> "CdfModel":
        with open(os.path.join(directory, "model.json")) as fh:
            meta = json.load(fh)
        state_path = os.path.join(directory, "pipeline.json")
        graph_path = os.path.join(directory, "graph.json")
        return cls(
            ModelConfig.from_dict(meta["config"]),
            Network.load(os.path.join(directory, "params.json")),
            AttributeSchema.from_dict(meta["schema"]),
            PipelineState.load(state_path) if os.path.exists(state_path) else None,
            causal.CausalGraph.load(graph_path) if os.path.exists(graph_path) else None,
            meta.get("source", ""),
        )


def build_model(schema: AttributeSchema, config: ModelConfig, graph: causal.CausalGraph | None = None,
                state: PipelineState | None = None, source: str = "") -> CdfModel:
    propagation = None
    if config.adjacency_mode != "none":
        if graph is None:
            graph = causal.all_ones_graph(schema.names) if config.adjacency_mode == "all_ones" else None
        if graph is None:
            raise ValueError("causal adjacency mode needs a discovered graph")
        propagation = graph.propagation
    net = Network(schema.size, config.H, schema.known_idx, schema.target_idx, config.graph_dim,
                  config.lstm_dim, config.lstm_layers, propagation, seed=config.seed)
    return CdfModel(config, net, schema, state, graph if config.adjacency_mode != "none" else None, source)


def _batch_loss(net: Network, w: Windows, chunk=512) -> float:
    total = 0.0
    for s in range(0, len(w), chunk):
        part = w.take(slice(s, s + chunk))
        pred = net.forward(part.X, part.known_future)
        total += np.sum((pred - part.target) ** 2)
    return float(total / w.target.size)


def train(model: CdfModel, samples, config: ModelConfig | None = None, val=None) -> TrainReport:
    """Mini-batch RMSProp on the MSE of the fused forecast."""
    config = config or model.config
    w = stack_windows(samples)
    if len(w) == 0:
        raise EmptyTrainingSet("no training windows")
    val_w = stack_windows(val) if val is not None and len(val) else None
    net = model.network
    report = TrainReport(_batch_loss(net, w))
    opt = RmsPropState(lr=config.learning_rate)
    rng = np.random.default_rng([config.seed, 1])
    n = len(w)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for s in range(0, n, config.batch_size):
            b = w.take(order[s:s + config.batch_size])
            _, grads = net.loss_and_grads(b.X, b.known_future, b.target)
            rmsprop_step(opt, net.params, grads)
        report.train_loss.append(_batch_loss(net, w))
        if val_w is not None:
            report.val_loss.append(_batch_loss(net, val_w))
    return report


def split_points(T: int, train_frac=0.8, val_frac=0.1) -> tuple[int, int]:
    """Chronological split boundaries: train [0, a), validation [a, b), test [b, T)."""
    a = int(np.floor(train_frac * T))
    b = int(np.floor((train_frac + val_frac) * T))
    return a, b


def fit(panel: Panel, config: ModelConfig, train_end: int | None = None, val_end: int | None = None,
        graph: causal.CausalGraph | None = None) -> tuple[CdfModel, TrainReport]:
    """Preprocess, discover (causal mode), build and train on rows [0, train_end).

    Validation windows are those whose forecast rows fall in [train_end, val_end).
    """
    train_end = panel.T if train_end is None else train_end
    train_panel = slice_panel(panel, 0, train_end)
    prepared, state = preprocess_pipeline(train_panel, config.pipeline)
    if config.adjacency_mode == "causal" and graph is None:
        graph = causal.discover(prepared, config.lag_order, config.edge_threshold)
    model = build_model(panel.schema, config, graph, state, panel.id)
    samples = window_arrays(prepared, config.U, config.H)
    val = None
    if val_end is not None and val_end > train_end:
        val = model_windows(model, slice_panel(panel, 0, val_end), first_target=train_end)
    return model, train(model, samples, config, val)


def model_windows(model: CdfModel, panel: Panel, first_target: int | None = None,
                  origins=None) -> Windows:
    """Windows in model space over a raw panel, indexed by raw origin.

    ``first_target`` keeps only origins whose first forecast row is at or
    after that raw row.
    """
    cfg = model.config
    prepared = apply_pipeline(panel, model.state) if model.state is not None else panel
    off = cfg.offset
    if origins is None:
        first = None if first_target is None else first_target - 1 - off
        w = window_arrays(prepared, cfg.U, cfg.H, first=first)
    else:
        w = _gather(prepared, cfg.U, cfg.H, np.asarray(origins) - off)
    w.origins = w.origins + off
    return w


def tune(panel: Panel, grid: dict, base: ModelConfig | None = None,
         train_frac=0.8, val_frac=0.1) -> tuple[ModelConfig, list]:
    """Exhaustive grid search on validation loss; ties go to the earlier grid point."""
    base = base or ModelConfig()
    keys = list(grid)
    points = list(itertools.product(*(grid[k] for k in keys)))
    if not keys or not points:
        raise EmptyGrid("hyperparameter grid is empty")
    a, b = split_points(panel.T, train_frac, val_frac)
    graph = None
    results = []
    best, best_loss = None, np.inf
    for point in points:
        cfg = replace(base, **dict(zip(keys, point)))
        if cfg.adjacency_mode == "causal" and graph is None:
            prepared, _ = preprocess_pipeline(slice_panel(panel, 0, a), cfg.pipeline)
            graph = causal.discover(prepared, cfg.lag_order, cfg.edge_threshold)
        model, report = fit(panel, cfg, a, b, graph=graph if cfg.adjacency_mode == "causal" else None)
        loss = report.final_val_loss
        if np.isnan(loss):
            loss = _batch_loss(model.network, model_windows(model, slice_panel(panel, 0, b), first_target=a))
        results.append((cfg, loss))
        if loss < best_loss:
            best, best_loss = cfg, loss
    return best, results


def _check_visible(model: CdfModel, panel: Panel, t: int, fill_masked: bool):
    cfg = model.config
    schema = model.schema
    lo = t - cfg.U + 1 - cfg.offset
    if lo < 0:
        raise InsufficientHistory(f"origin {t} needs {cfg.U + cfg.offset} rows of history")
    if t + cfg.H >= panel.T:
        raise MissingKnownFuture(f"known futures for rows {t + 1}..{t + cfg.H} not in panel")
    if not panel.observed[t + 1:t + cfg.H + 1][:, schema.known_idx].all():
        raise MissingKnownFuture(f"known-future attributes unobserved after origin {t}")
    if not fill_masked and not panel.observed[lo:t + 1].all():
        raise InsufficientHistory(f"unobserved cells in the input window ending at {t}")


def visible_panel(model: CdfModel, panel: Panel, t: int) -> Panel:
    """Rows the forecast at origin t may read: history up to t plus O1 futures."""
    cfg = model.config
    start = max(0, t - cfg.U - cfg.offset - (cfg.pipeline.window if cfg.pipeline.smooth else 0) - 1)
    end = t + cfg.H + 1
    sub = slice_panel(panel, start, end)
    observed = sub.observed.copy()
    observed[t + 1 - start:, model.schema.target_idx] = False
    values = np.where(observed, sub.values, 0.0)
    return sub.replace(values=values, observed=observed), start


def _to_original(model: CdfModel, pred_std, anchors):
    if model.state is None:
        return np.asarray(pred_std)
    return invert_forecast(pred_std, model.state, anchors, columns=model.schema.target_idx)


def _anchor(model: CdfModel, levels: Panel, row: int) -> np.ndarray:
    idx = model.schema.target_idx
    vals = levels.values[row, idx].copy()
    missing = ~levels.observed[row, idx]
    if missing.any():
        mean = model.state.level_mean if model.state is not None and model.state.level_mean is not None else None
        vals[missing] = 0.0 if mean is None else mean[idx][missing]
    return vals


def predict(model: CdfModel, panel: Panel, origin: int, fill_masked: bool = False) -> ForecastResult:
    """H-step forecast of O2 in original units from raw panel rows up to ``origin``.

    The panel is cut down to what the forecast may legally read before any
    transform runs. With ``fill_masked`` unobserved window cells are replaced
    by the model's training mean (zero in model space).
    """
    if panel.schema.names != model.schema.names:
        panel = panel.select(model.schema.names)
    _check_visible(model, panel, origin, fill_masked)
    vis, start = visible_panel(model, panel, origin)
    return _predict_prepared(model, vis, [origin - start], fill_masked, shift=start)[0]


def predict_many(model: CdfModel, panel: Panel, origins, fill_masked: bool = False) -> list[ForecastResult]:
    """Batched ``predict``; all transforms are causal so one pass serves every origin."""
    if panel.schema.names != model.schema.names:
        panel = panel.select(model.schema.names)
    for t in origins:
        _check_visible(model, panel, int(t), fill_masked)
    return _predict_prepared(model, panel, list(origins), fill_masked, shift=0)


def _predict_prepared(model, panel, origins, fill_masked, shift):
    cfg = model.config
    state = model.state
    prepared = apply_pipeline(panel, state) if state is not None else panel
    levels = smoothed_levels(panel, state) if state is not None else panel
    off = cfg.offset
    o = np.asarray(origins, dtype=int) - off
    past = o[:, None] + np.arange(-cfg.U + 1, 1)[None, :]
    fut = o[:, None] + np.arange(1, cfg.H + 1)[None, :]
    vals = np.where(prepared.observed, prepared.values, 0.0)
    X = vals[past]
    KF = vals[fut][:, :, model.schema.known_idx]
    if not fill_masked and not prepared.observed[past].all():
        raise InsufficientHistory("unobserved cells in the transformed input window")
    pred = model.network.forward(X, KF)
    out = []
    for i, t in enumerate(origins):
        anchors = _anchor(model, levels, t) if cfg.pipeline.difference else None
        out.append(ForecastResult(_to_original(model, pred[i], anchors), model.target_names,
                                  t + shift, model.source, cfg.adjacency_mode))
    return out
