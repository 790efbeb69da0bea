"""Neural-network kernels with analytic gradients (float64 throughout).

The network family is fixed: an optional graph-propagation layer, a stack of
LSTM layers, a dense head producing an H x A preliminary forecast, and a
fusion head that swaps in the known future values before the final dense map.
Everything is batched over the leading axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, MissingCache

PARAM_FORMAT_VERSION = 1


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def relu(x):
    return np.maximum(x, 0.0)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "identity"


@dataclass
class GraphLayer:
    propagation: np.ndarray
    W: np.ndarray


@dataclass
class LstmLayer:
    W: np.ndarray  # (input + hidden, 4 * hidden), gate blocks f, i, o, g
    b: np.ndarray

    @property
    def hidden_dim(self) -> int:
        return self.W.shape[1] // 4

    @property
    def input_dim(self) -> int:
        return self.W.shape[0] - self.hidden_dim


def _check(cond, msg):
    if not cond:
        raise DimensionMismatch(msg)


def graph_forward(layer: GraphLayer, X):
    """ReLU((X @ M_hat) @ W_g) over the last axis; returns (Z, cache)."""
    X = np.asarray(X, dtype=np.float64)
    A = layer.propagation.shape[0]
    _check(X.shape[-1] == A and layer.W.shape[0] == A,
           f"graph layer expects {A} attributes, got {X.shape[-1]}")
    P = X @ layer.propagation
    pre = P @ layer.W
    return relu(pre), (P, pre)


def graph_backward(layer: GraphLayer, cache, dZ):
    P, pre = cache
    dpre = dZ * (pre > 0)
    A = P.shape[-1]
    dW = P.reshape(-1, A).T @ dpre.reshape(-1, dpre.shape[-1])
    return dW


def lstm_forward(layer: LstmLayer, seq):
    """Run one LSTM layer over ``seq`` of shape (B, U, in) or (U, in).

    Returns (hidden states, final hidden state, cache) with zero initial state.
    """
    seq = np.asarray(seq, dtype=np.float64)
    squeeze = seq.ndim == 2
    if squeeze:
        seq = seq[None]
    B, U, n_in = seq.shape
    D = layer.hidden_dim
    _check(n_in == layer.input_dim, f"LSTM expects input width {layer.input_dim}, got {n_in}")
    _check(U >= 1, "LSTM needs at least one time step")
    h = np.zeros((B, D))
    c = np.zeros((B, D))
    Hs = np.empty((B, U, D))
    steps = []
    Wx, Wh = layer.W[:n_in], layer.W[n_in:]
    xproj = seq @ Wx + layer.b
    for t in range(U):
        z = xproj[:, t] + h @ Wh
        f = sigmoid(z[:, :D])
        i = sigmoid(z[:, D:2 * D])
        o = sigmoid(z[:, 2 * D:3 * D])
        g = np.tanh(z[:, 3 * D:])
        c_prev, h_prev = c, h
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        Hs[:, t] = h
        steps.append((h_prev, c_prev, f, i, o, g, tc))
    cache = (seq, steps)
    if squeeze:
        return Hs[0], h[0], cache
    return Hs, h, cache


def lstm_backward(layer: LstmLayer, cache, dHs):
    """Backprop through time. ``dHs`` is dL/dh_t for every step, (B, U, D)."""
    seq, steps = cache
    B, U, n_in = seq.shape
    D = layer.hidden_dim
    Wx, Wh = layer.W[:n_in], layer.W[n_in:]
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros_like(layer.b)
    dseq = np.empty_like(seq)
    dh_next = np.zeros((B, D))
    dc_next = np.zeros((B, D))
    for t in reversed(range(U)):
        h_prev, c_prev, f, i, o, g, tc = steps[t]
        dh = dHs[:, t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc ** 2) + dc_next
        df = dc * c_prev
        di = dc * g
        dg = dc * i
        dz = np.concatenate([
            df * f * (1.0 - f),
            di * i * (1.0 - i),
            do * o * (1.0 - o),
            dg * (1.0 - g ** 2),
        ], axis=1)
        dWx += seq[:, t].T @ dz
        dWh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dseq[:, t] = dz @ Wx.T
        dh_next = dz @ Wh.T
        dc_next = dc * f
    return dseq, np.vstack([dWx, dWh]), db


def dense_forward(layer: DenseLayer, x):
    x = np.asarray(x, dtype=np.float64)
    _check(x.shape[-1] == layer.W.shape[0],
           f"dense layer expects width {layer.W.shape[0]}, got {x.shape[-1]}")
    pre = x @ layer.W + layer.b
    return relu(pre) if layer.activation == "relu" else pre


def mse_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check(pred.shape == target.shape, f"shape {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


@dataclass
class RmsPropState:
    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-8
    acc: dict = field(default_factory=dict)


def rmsprop_step(state: RmsPropState, params: dict, grads: dict) -> dict:
    """In-place RMSProp update; also returns ``params`` for chaining."""
    for name, g in grads.items():
        p = params[name]
        _check(p.shape == g.shape, f"gradient for {name} has shape {g.shape}, param {p.shape}")
        acc = state.acc.get(name)
        if acc is None:
            acc = np.zeros_like(p)
        acc = state.rho * acc + (1.0 - state.rho) * g * g
        state.acc[name] = acc
        p -= state.lr * g / np.sqrt(acc + state.eps)
    return params


class Network:
    """Graph layer -> LSTM stack -> preliminary head -> known-future fusion head.

    Parameters live in ``self.params`` (a flat dict of arrays) so that the
    optimizer and serializer can treat them uniformly.
    """

    def __init__(self, n_attrs, horizon, known_idx, target_idx, graph_dim, lstm_dim,
                 lstm_layers=1, propagation=None, seed=0, head_activation="identity"):
        self.A = int(n_attrs)
        self.H = int(horizon)
        self.known_idx = np.asarray(known_idx, dtype=int)
        self.target_idx = np.asarray(target_idx, dtype=int)
        self.graph_dim = int(graph_dim)
        self.lstm_dim = int(lstm_dim)
        self.lstm_layers = int(lstm_layers)
        self.propagation = None if propagation is None else np.asarray(propagation, dtype=np.float64)
        self.head_activation = head_activation
        if self.propagation is not None and self.propagation.shape != (self.A, self.A):
            raise DimensionMismatch(f"propagation {self.propagation.shape} vs {self.A} attributes")
        if sorted(np.concatenate([self.known_idx, self.target_idx]).tolist()) != list(range(self.A)):
            raise DimensionMismatch("known and target indices must partition the attributes")
        self.params = self._init_params(np.random.default_rng(seed))

    @property
    def n_known(self):
        return len(self.known_idx)

    @property
    def n_targets(self):
        return len(self.target_idx)

    def _init_params(self, rng):
        p = {}
        width = self.A
        if self.propagation is not None:
            p["Wg"] = glorot(rng, self.A, self.graph_dim)
            width = self.graph_dim
        D = self.lstm_dim
        for layer in range(self.lstm_layers):
            W = glorot(rng, width + D, D, shape=(width + D, 4 * D))
            b = np.zeros(4 * D)
            b[:D] = 1.0
            p[f"lstm{layer}_W"] = W
            p[f"lstm{layer}_b"] = b
            width = D
        HA = self.H * self.A
        p["W3"] = glorot(rng, D, HA)
        p["b3"] = np.zeros(HA)
        p["W4"] = glorot(rng, HA, self.H * self.n_targets)
        p["b4"] = np.zeros(self.H * self.n_targets)
        return p

    def _graph(self):
        return GraphLayer(self.propagation, self.params["Wg"])

    def _lstm(self, layer):
        return LstmLayer(self.params[f"lstm{layer}_W"], self.params[f"lstm{layer}_b"])

    def forward(self, X, known_future, keep_cache=False):
        """X: (B, U, A); known_future: (B, H, |O1|) -> (B, H, |O2|)."""
        X = np.asarray(X, dtype=np.float64)
        KF = np.asarray(known_future, dtype=np.float64)
        _check(X.ndim == 3 and X.shape[2] == self.A, f"X must be (B, U, {self.A}), got {X.shape}")
        B = X.shape[0]
        _check(KF.shape == (B, self.H, self.n_known),
               f"known_future must be {(B, self.H, self.n_known)}, got {KF.shape}")
        cache = {}
        h = X
        if self.propagation is not None:
            h, cache["graph"] = graph_forward(self._graph(), h)
        for layer in range(self.lstm_layers):
            h, last, cache[f"lstm{layer}"] = lstm_forward(self._lstm(layer), h)
        pre3 = last @ self.params["W3"] + self.params["b3"]
        prelim = relu(pre3) if self.head_activation == "relu" else pre3
        fused = prelim.reshape(B, self.H, self.A).copy()
        fused[:, :, self.known_idx] = KF
        fused = fused.reshape(B, -1)
        pre4 = fused @ self.params["W4"] + self.params["b4"]
        out = relu(pre4) if self.head_activation == "relu" else pre4
        if keep_cache:
            cache.update(last=last, pre3=pre3, fused=fused, pre4=pre4, batch=B)
            self._cache = cache
        return out.reshape(B, self.H, self.n_targets)

    def backward(self, dY):
        """Gradients of every parameter given dL/d(output) of the last cached forward."""
        cache = getattr(self, "_cache", None)
        if cache is None:
            raise MissingCache("backward called without a cached forward pass")
        B = cache["batch"]
        dout = np.asarray(dY, dtype=np.float64).reshape(B, -1)
        if self.head_activation == "relu":
            dout = dout * (cache["pre4"] > 0)
        g = {}
        g["W4"] = cache["fused"].T @ dout
        g["b4"] = dout.sum(axis=0)
        dfused = (dout @ self.params["W4"].T).reshape(B, self.H, self.A)
        dfused[:, :, self.known_idx] = 0.0  # known futures are inputs, not predictions
        dprelim = dfused.reshape(B, -1)
        if self.head_activation == "relu":
            dprelim = dprelim * (cache["pre3"] > 0)
        g["W3"] = cache["last"].T @ dprelim
        g["b3"] = dprelim.sum(axis=0)
        dlast = dprelim @ self.params["W3"].T
        top = self.lstm_layers - 1
        dH = None
        for layer in range(top, -1, -1):
            seq = cache[f"lstm{layer}"][0]
            if layer == top:
                dH = np.zeros((B, seq.shape[1], self.lstm_dim))
                dH[:, -1] = dlast
            dH, g[f"lstm{layer}_W"], g[f"lstm{layer}_b"] = lstm_backward(
                self._lstm(layer), cache[f"lstm{layer}"], dH)
        if self.propagation is not None:
            g["Wg"] = graph_backward(self._graph(), cache["graph"], dH)
        return g

    def loss_and_grads(self, X, known_future, target):
        pred = self.forward(X, known_future, keep_cache=True)
        loss, dY = mse_loss(pred, target)
        grads = self.backward(dY)
        self._cache = None
        return loss, grads

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def to_dict(self) -> dict:
        return {
            "format_version": PARAM_FORMAT_VERSION,
            "architecture": {
                "n_attrs": self.A, "horizon": self.H,
                "known_idx": self.known_idx.tolist(), "target_idx": self.target_idx.tolist(),
                "graph_dim": self.graph_dim, "lstm_dim": self.lstm_dim,
                "lstm_layers": self.lstm_layers, "head_activation": self.head_activation,
                "propagation": None if self.propagation is None else self.propagation.tolist(),
            },
            "params": {k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                       for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        if d.get("format_version") != PARAM_FORMAT_VERSION:
            raise ValueError(f"unsupported parameter format {d.get('format_version')!r}")
        arch = dict(d["architecture"])
        net = cls(arch.pop("n_attrs"), arch.pop("horizon"), arch.pop("known_idx"),
                  arch.pop("target_idx"), **arch)
        for k, v in d["params"].items():
            arr = np.array(v["values"], dtype=np.float64).reshape(v["shape"])
            if k not in net.params or net.params[k].shape != arr.shape:
                raise DimensionMismatch(f"parameter {k} shape {arr.shape} does not fit architecture")
            net.params[k] = arr
        return net

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Network":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
