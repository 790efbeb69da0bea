"""Ranking donor data centers by similarity to a cold-start target.

Three measures are provided: GMM clustering over per-panel summary features,
Eros (covariance eigenvector agreement weighted by eigenvalues), and the
Manhattan distance used to weight virtual panels. All of them look only at a
shared comparison window and at attributes observed throughout that window.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .data import Panel
from .errors import (
    DegenerateCovariance,
    InsufficientData,
    LengthMismatch,
    SchemaMismatch,
    TooFewSamples,
)

VAR_FLOOR = 1e-6


@dataclass(frozen=True)
class PanelFeatures:
    panel_id: str
    attrs: tuple[str, ...]
    vector: np.ndarray  # [means..., stds..., lag-1 autocorrelations...]


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: float
    history: list = field(default_factory=list)
    n_iter: int = 0

    @property
    def K(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class SimilarityRanking:
    entries: tuple[tuple[str, float], ...]
    method: str

    @property
    def ids(self) -> list[str]:
        return [e[0] for e in self.entries]

    def top(self, k: int) -> list[str]:
        return self.ids[:k]

    def to_csv(self) -> str:
        lines = ["rank,panel_id,score"]
        lines += [f"{r},{pid},{score!r}" for r, (pid, score) in enumerate(self.entries)]
        return "\n".join(lines) + "\n"


def _rank(scores: dict, method: str) -> SimilarityRanking:
    # stable: ties keep the candidates' input order
    items = sorted(scores.items(), key=lambda kv: -kv[1])
    return SimilarityRanking(tuple((k, float(v)) for k, v in items), method)


def common_attributes(panels: Sequence[Panel], window: tuple[int, int]) -> list[str]:
    """Attributes observed on every row of the window in every panel."""
    t0, t1 = window
    names = panels[0].schema.names
    for p in panels[1:]:
        if p.schema.names != names:
            raise SchemaMismatch(f"panel {p.id!r} has a different attribute set")
    keep = np.ones(len(names), dtype=bool)
    for p in panels:
        keep &= p.observed[t0:t1].all(axis=0)
    return [n for n, k in zip(names, keep) if k]


def window_matrix(panel: Panel, window: tuple[int, int], attrs: Sequence[str]) -> np.ndarray:
    t0, t1 = window
    idx = panel.schema.indices(attrs)
    if not panel.observed[t0:t1, idx].all():
        raise InsufficientData(f"panel {panel.id!r} has unobserved cells in the comparison window")
    return panel.values[t0:t1, idx]


def _lag1_autocorr(x: np.ndarray) -> float:
    d = x - x.mean()
    denom = np.dot(d, d)
    if denom <= 0:
        return 0.0
    return float(np.dot(d[1:], d[:-1]) / denom)


def panel_features(panel: Panel, window: tuple[int, int] | None = None,
                   attrs: Sequence[str] | None = None) -> PanelFeatures:
    window = window or (0, panel.T)
    if attrs is None:
        attrs = common_attributes([panel], window)
    X = window_matrix(panel, window, attrs)
    if X.shape[0] < 3:
        raise InsufficientData("features need at least 3 observed rows")
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    ac = np.array([_lag1_autocorr(X[:, j]) for j in range(X.shape[1])])
    return PanelFeatures(panel.id, tuple(attrs), np.concatenate([means, stds, ac]))


def standardize_features(features: Sequence[PanelFeatures]) -> np.ndarray:
    """Column-wise z-score of the stacked feature vectors (constant columns -> 0)."""
    F = np.stack([f.vector for f in features])
    sd = F.std(axis=0)
    return np.divide(F - F.mean(axis=0), sd, out=np.zeros_like(F), where=sd > 0)


def _as_matrix(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        return np.atleast_2d(np.asarray(features, dtype=np.float64))
    return np.stack([f.vector if isinstance(f, PanelFeatures) else np.asarray(f, float) for f in features])


def _log_gauss(X, means, variances):
    # (n, K) log densities of diagonal Gaussians
    diff = X[:, None, :] - means[None, :, :]
    return -0.5 * (np.sum(diff ** 2 / variances[None], axis=2)
                   + np.sum(np.log(2 * np.pi * variances), axis=1)[None, :])


def gmm_log_resp(model: GmmModel, X) -> tuple[np.ndarray, float]:
    X = _as_matrix(X)
    weighted = _log_gauss(X, model.means, model.variances) + np.log(model.weights)[None, :]
    norm = logsumexp(weighted, axis=1)
    return weighted - norm[:, None], float(norm.sum())


def gmm_fit(features, K: int, seed: int = 0, max_iter: int = 200, tol: float = 1e-6) -> GmmModel:
    """EM for a diagonal-covariance Gaussian mixture.

    Means start at K distinct samples drawn with ``seed``; variances start at
    the global per-dimension variance. Variances are floored at 1e-6.
    """
    X = _as_matrix(features)
    n, d = X.shape
    if K < 1:
        raise ValueError("K must be >= 1")
    if n < K:
        raise TooFewSamples(f"{n} samples for {K} components")
    rng = np.random.default_rng(seed)
    means = X[rng.choice(n, size=K, replace=False)].copy()
    variances = np.tile(np.maximum(X.var(axis=0), VAR_FLOOR), (K, 1))
    model = GmmModel(np.full(K, 1.0 / K), means, variances, -np.inf)
    log_resp, ll = gmm_log_resp(model, X)
    history = [ll]
    it = 0
    for it in range(1, max_iter + 1):
        resp = np.exp(log_resp)
        nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
        weights = nk / n
        means = (resp.T @ X) / nk[:, None]
        variances = np.maximum((resp.T @ X ** 2) / nk[:, None] - means ** 2, VAR_FLOOR)
        model = GmmModel(weights / weights.sum(), means, variances, ll)
        log_resp, ll = gmm_log_resp(model, X)
        history.append(ll)
        if abs(history[-1] - history[-2]) < tol:
            break
    model.log_likelihood = ll
    model.history = history
    model.n_iter = it
    return model


def gmm_rank(target, model: GmmModel, candidates: dict) -> SimilarityRanking:
    """Same-component candidates first, each group ordered by feature distance.

    ``candidates`` maps panel id to feature vector (or PanelFeatures). Scores
    are ``1 + 1/(1+d)`` inside the target's component and ``1/(1+d)`` outside,
    so they are monotone in rank order.
    """
    t = _as_matrix([target])[0]
    ids = list(candidates)
    C = _as_matrix([candidates[i] for i in ids])
    comp_target = int(np.argmax(gmm_log_resp(model, t[None])[0][0]))
    comps = np.argmax(gmm_log_resp(model, C)[0], axis=1)
    dist = np.linalg.norm(C - t[None], axis=1)
    scores = {i: (1.0 if comps[n] == comp_target else 0.0) + 1.0 / (1.0 + dist[n])
              for n, i in enumerate(ids)}
    return _rank(scores, "gmm")


def _sorted_eig(X: np.ndarray):
    if X.shape[0] < X.shape[1] + 1:
        raise InsufficientData(f"need at least {X.shape[1] + 1} rows for a covariance")
    cov = np.atleast_2d(np.cov(X, rowvar=False, bias=True))
    if not np.all(np.isfinite(cov)) or np.trace(cov) <= 0:
        raise DegenerateCovariance("covariance matrix has zero trace")
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    for i in range(vecs.shape[1]):
        nz = np.flatnonzero(np.abs(vecs[:, i]) > 1e-12)
        if nz.size and vecs[nz[0], i] < 0:
            vecs[:, i] = -vecs[:, i]
    return vals, vecs


def eros_similarity(a: Panel, b: Panel, w, window: tuple[int, int] | None = None,
                    attrs: Sequence[str] | None = None, window_b: tuple[int, int] | None = None) -> float:
    if a.schema.names != b.schema.names:
        raise SchemaMismatch("Eros needs panels over the same attributes")
    window = window or (0, min(a.T, b.T))
    window_b = window_b or window
    if attrs is None:
        attrs = common_attributes([a], window)
        attrs = [n for n in attrs if n in common_attributes([b], window_b)]
    _, U = _sorted_eig(window_matrix(a, window, attrs))
    _, V = _sorted_eig(window_matrix(b, window_b, attrs))
    w = np.asarray(w, dtype=np.float64)
    if w.shape[0] != U.shape[1]:
        raise SchemaMismatch(f"{w.shape[0]} weights for {U.shape[1]} attributes")
    score = float(np.sum(w * np.abs(np.sum(U * V, axis=0))))
    return min(max(score, 0.0), 1.0)


def eros_weights(panels: Sequence[Panel], window: tuple[int, int] | None = None,
                 attrs: Sequence[str] | None = None) -> np.ndarray:
    """Mean over panels of the normalised eigenvalue spectrum, renormalised."""
    if not panels:
        raise InsufficientData("Eros weights need at least one panel")
    window = window or (0, min(p.T for p in panels))
    if attrs is None:
        attrs = common_attributes(list(panels), window)
    acc = np.zeros(len(attrs))
    for p in panels:
        vals, _ = _sorted_eig(window_matrix(p, window, attrs))
        acc += vals / vals.sum()
    acc /= len(panels)
    return acc / acc.sum()


def eros_rank(target: Panel, candidates: Sequence[Panel], window, attrs=None) -> SimilarityRanking:
    if attrs is None:
        attrs = common_attributes([target, *candidates], window)
    w = eros_weights([target, *candidates], window, attrs)
    scores = {c.id: eros_similarity(target, c, w, window, attrs) for c in candidates}
    return _rank(scores, "eros")


def manhattan_distance(a: Panel, b: Panel, window: tuple[int, int] | None = None,
                       attrs: Sequence[str] | None = None) -> float:
    if a.schema.names != b.schema.names:
        raise SchemaMismatch("Manhattan distance needs panels over the same attributes")
    if window is None:
        if a.T != b.T:
            raise LengthMismatch(f"panel lengths differ: {a.T} vs {b.T}")
        window = (0, a.T)
    if attrs is None:
        attrs = common_attributes([a, b], window)
    return float(np.abs(window_matrix(a, window, attrs) - window_matrix(b, window, attrs)).sum())


def manhattan_rank(target: Panel, candidates: Sequence[Panel], window, attrs=None) -> SimilarityRanking:
    if attrs is None:
        attrs = common_attributes([target, *candidates], window)
    scores = {c.id: -manhattan_distance(target, c, window, attrs) for c in candidates}
    return _rank(scores, "manhattan")


def gmm_similarity(target: Panel, candidates: Sequence[Panel], window, K: int = 7, seed: int = 0,
                   attrs=None) -> tuple[SimilarityRanking, GmmModel]:
    """Fit a GMM on standardized features of target + candidates and rank."""
    if attrs is None:
        attrs = common_attributes([target, *candidates], window)
    feats = [panel_features(p, window, attrs) for p in [target, *candidates]]
    F = standardize_features(feats)
    model = gmm_fit(F, min(K, len(feats)), seed)
    ranking = gmm_rank(F[0], model, {c.id: F[n + 1] for n, c in enumerate(candidates)})
    return ranking, model
