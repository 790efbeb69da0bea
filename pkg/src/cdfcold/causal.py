"""VARLiNGAM causal discovery and the propagation matrix fed to the graph layer.

Matrix conventions
------------------
``B0`` and the lagged ``B_tau`` follow the structural-equation convention
``x_t = B0 x_t + sum_tau B_tau x_{t-tau} + e_t``: entry ``[j, k]`` is the
effect of attribute k on attribute j. The adjacency ``M`` uses the graph
convention instead: ``M[k, j] = 1`` means k causes j, so that ``X @ M``
aggregates each column from its parents.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Panel
from .errors import (
    DegenerateColumn,
    DimensionMismatch,
    InsufficientRows,
    MaskedInput,
    SingularDesign,
    TooFewSamples,
)

RIDGE = 1e-8
MIN_LINGAM_SAMPLES = 50

# maximum-entropy approximation of differential entropy
_K1 = 79.047
_K2 = 7.4129
_GAMMA = 0.37457


@dataclass(frozen=True)
class VarFit:
    lag_order: int
    coeffs: np.ndarray  # (p, A, A); coeffs[tau-1][j, k]: x_{t-tau}[k] -> x_t[j]
    intercept: np.ndarray
    residuals: np.ndarray


@dataclass(frozen=True)
class CausalGraph:
    names: tuple[str, ...]
    B0: np.ndarray
    B_lagged: np.ndarray
    causal_order: tuple[int, ...]
    adjacency: np.ndarray
    propagation: np.ndarray
    threshold: float

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "B0": self.B0.tolist(),
            "B_lagged": self.B_lagged.tolist(),
            "causal_order": list(self.causal_order),
            "adjacency": self.adjacency.astype(int).tolist(),
            "propagation": self.propagation.tolist(),
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CausalGraph":
        A = len(d["names"])
        lagged = np.array(d.get("B_lagged", []), float).reshape(-1, A, A)
        return cls(
            tuple(d["names"]),
            np.array(d.get("B0", np.zeros((A, A))), float),
            lagged,
            tuple(d.get("causal_order", range(A))),
            np.array(d["adjacency"], float),
            np.array(d["propagation"], float),
            float(d.get("threshold", 0.0)),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "CausalGraph":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def from_adjacency(cls, names, adjacency, threshold: float = 0.0) -> "CausalGraph":
        """Wrap a user-supplied binary adjacency (``M[k, j]``: k causes j)."""
        M = (np.asarray(adjacency, float) != 0).astype(float)
        np.fill_diagonal(M, 0.0)
        A = M.shape[0]
        return cls(tuple(names), np.zeros((A, A)), np.zeros((0, A, A)), tuple(range(A)),
                   M, propagation_matrix(M), threshold)


def fit_var(panel: Panel | np.ndarray, p: int = 1) -> VarFit:
    """Least-squares VAR(p) with intercept, one normal-equation solve per target."""
    if isinstance(panel, Panel):
        if not panel.fully_observed:
            raise MaskedInput(f"panel {panel.id!r} has unobserved cells")
        X = panel.values
    else:
        X = np.asarray(panel, dtype=np.float64)
    if p < 1:
        raise ValueError("lag order must be >= 1")
    T, A = X.shape
    if T <= p * A + 1:
        raise InsufficientRows(f"T={T} too small for VAR({p}) on {A} attributes")
    n = T - p
    design = np.ones((n, 1 + p * A))
    for tau in range(1, p + 1):
        design[:, 1 + (tau - 1) * A: 1 + tau * A] = X[p - tau: T - tau]
    Y = X[p:]
    gram = design.T @ design + RIDGE * np.eye(design.shape[1])
    try:
        beta = np.linalg.solve(gram, design.T @ Y)  # (1 + pA, A), column per target
    except np.linalg.LinAlgError as exc:
        raise SingularDesign(f"VAR normal equations are singular: {exc}") from None
    if not np.all(np.isfinite(beta)):
        raise SingularDesign("VAR normal equations produced non-finite coefficients")
    intercept = beta[0]
    coeffs = np.stack([beta[1 + (tau - 1) * A: 1 + tau * A].T for tau in range(1, p + 1)])
    residuals = Y - design @ beta
    return VarFit(p, coeffs, intercept, residuals)


def _entropy(u: np.ndarray) -> float:
    return ((1 + np.log(2 * np.pi)) / 2
            - _K1 * (np.mean(np.log(np.cosh(u))) - _GAMMA) ** 2
            - _K2 * np.mean(u * np.exp(-(u ** 2) / 2)) ** 2)


def _residual(xi: np.ndarray, xj: np.ndarray) -> np.ndarray:
    """Residual of regressing xi on xj."""
    return xi - (np.cov(xi, xj, bias=True)[0, 1] / np.var(xj)) * xj


def _standardize(x):
    return (x - x.mean()) / x.std()


def pairwise_score(xi: np.ndarray, xj: np.ndarray) -> float:
    """Likelihood-ratio score; positive favours xi -> xj.

    Inputs must be standardized.
    """
    ri_j = _residual(xi, xj)
    rj_i = _residual(xj, xi)
    return (_entropy(xj) + _entropy(ri_j / np.std(ri_j))) - (_entropy(xi) + _entropy(rj_i / np.std(rj_i)))


def _search_exogenous(X: np.ndarray, remaining: list[int]) -> int:
    if len(remaining) == 1:
        return remaining[0]
    std = {j: _standardize(X[:, j]) for j in remaining}
    best, best_score = remaining[0], -np.inf
    for i in remaining:
        total = 0.0
        for j in remaining:
            if i != j:
                total += min(0.0, pairwise_score(std[i], std[j])) ** 2
        if -total > best_score:
            best, best_score = i, -total
    return best


def direct_lingam(residuals, prune: float = 0.1) -> tuple[tuple[int, ...], np.ndarray]:
    """DirectLiNGAM: causal order by repeated exogeneity search, then B0 by OLS.

    Entries of B0 with magnitude <= ``prune`` are zeroed.
    """
    X = np.array(residuals, dtype=np.float64)
    n, A = X.shape
    if n < MIN_LINGAM_SAMPLES:
        raise TooFewSamples(f"{n} samples; DirectLiNGAM needs >= {MIN_LINGAM_SAMPLES}")
    sd = X.std(axis=0)
    flat = sd <= 1e-12 * np.maximum(1.0, np.abs(X).max(axis=0))
    if flat.any():
        raise DegenerateColumn(f"zero-variance residual column(s) {np.flatnonzero(flat).tolist()}")
    X = X - X.mean(axis=0)
    work = X.copy()
    remaining = list(range(A))
    order: list[int] = []
    while remaining:
        m = _search_exogenous(work, remaining)
        order.append(m)
        remaining.remove(m)
        for i in remaining:
            work[:, i] = _residual(work[:, i], work[:, m])
    B0 = np.zeros((A, A))
    for pos in range(1, A):
        target, parents = order[pos], order[:pos]
        P = X[:, parents]
        coef = np.linalg.solve(P.T @ P + RIDGE * np.eye(len(parents)), P.T @ X[:, target])
        B0[target, parents] = coef
    B0[np.abs(B0) <= prune] = 0.0
    return tuple(order), B0


def compose_lagged_effects(varfit: VarFit, B0) -> np.ndarray:
    B0 = np.asarray(B0, dtype=np.float64)
    A = varfit.coeffs.shape[1]
    if B0.shape != (A, A):
        raise DimensionMismatch(f"B0 {B0.shape} vs VAR dimension {A}")
    I_B0 = np.eye(A) - B0
    return np.stack([I_B0 @ M for M in varfit.coeffs])


def influence_matrix(B0, B_lagged) -> np.ndarray:
    """Combined |effect| in graph convention: C[k, j] is the pull of k on j."""
    C = np.abs(np.asarray(B0, float)).copy()
    for B in np.asarray(B_lagged, float).reshape(-1, *C.shape):
        C += np.abs(B)
    return C.T


def propagation_matrix(M) -> np.ndarray:
    """Column-normalise M + I so each attribute keeps its own signal."""
    P = np.asarray(M, float) + np.eye(len(M))
    return P / P.sum(axis=0, keepdims=True)


def extract_adjacency(B0, B_lagged, threshold: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    if threshold < 0:
        raise ValueError("edge threshold must be >= 0")
    C = influence_matrix(B0, B_lagged)
    M = (C > threshold).astype(float)
    np.fill_diagonal(M, 0.0)
    return M, propagation_matrix(M)


def discover(panel: Panel, p: int = 1, threshold: float = 0.1) -> CausalGraph:
    """VAR fit -> DirectLiNGAM on residuals -> lagged effects -> adjacency."""
    names = panel.schema.names
    if panel.A == 1:
        varfit = fit_var(panel, p)
        one = np.ones((1, 1))
        return CausalGraph(names, np.zeros((1, 1)), compose_lagged_effects(varfit, np.zeros((1, 1))),
                           (0,), np.zeros((1, 1)), one, threshold)
    varfit = fit_var(panel, p)
    order, B0 = direct_lingam(varfit.residuals, prune=threshold)
    lagged = compose_lagged_effects(varfit, B0)
    M, Mhat = extract_adjacency(B0, lagged, threshold)
    return CausalGraph(names, B0, lagged, order, M, Mhat, threshold)


def all_ones_graph(names) -> CausalGraph:
    A = len(names)
    M = np.ones((A, A))
    np.fill_diagonal(M, 0.0)
    return CausalGraph(tuple(names), np.zeros((A, A)), np.zeros((0, A, A)), tuple(range(A)),
                       M, propagation_matrix(M), 0.0)


def edge_f1(predicted, truth) -> float:
    """F1 of off-diagonal edges between two binary adjacency matrices."""
    P = np.asarray(predicted) != 0
    G = np.asarray(truth) != 0
    off = ~np.eye(P.shape[0], dtype=bool)
    tp = np.sum(P & G & off)
    fp = np.sum(P & ~G & off)
    fn = np.sum(~P & G & off)
    if tp == 0:
        return 1.0 if fp == 0 and fn == 0 else 0.0
    return 2 * tp / (2 * tp + fp + fn)
