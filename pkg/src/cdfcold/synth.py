"""Synthetic data-center fleets with a planted causal structure.

Each center has S services. Machine usage of a service drives its network
traffic instantaneously, traffic persists with a lag-1 term, and the total
traffic is the sum of the service traffic. Usage is the known-future block.
Centers are drawn from a few archetype profiles and jittered, so that
similarity search has real structure to find.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import AttributeSchema, Fleet, Panel, mask_history
from .errors import InvalidSpec


@dataclass(frozen=True)
class FleetSpec:
    n_centers: int = 15
    n_services: int = 10
    T: int = 533
    usage_noise: float = 1.0
    traffic_noise: float = 1.0
    total_noise: float = 1.0
    base_range: tuple = (20.0, 60.0)
    trend_range: tuple = (-0.02, 0.05)
    seasonal_amplitude: float = 3.0
    gain_range: tuple = (0.5, 3.0)
    persistence: float = 0.3
    heterogeneity: float = 0.1
    n_profiles: int = 3
    seed: int = 0

    def validate(self):
        if self.n_centers < 2:
            raise InvalidSpec("a fleet needs at least 2 centers")
        if self.n_services < 1:
            raise InvalidSpec("n_services must be >= 1")
        if self.T < 100:
            raise InvalidSpec("T must be >= 100")
        if min(self.usage_noise, self.traffic_noise, self.total_noise, self.seasonal_amplitude) < 0:
            raise InvalidSpec("noise levels and amplitude must be >= 0")
        if not 0 <= self.persistence < 1:
            raise InvalidSpec("persistence must lie in [0, 1)")
        if self.heterogeneity < 0 or self.n_profiles < 1:
            raise InvalidSpec("heterogeneity must be >= 0 and n_profiles >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class GroundTruth:
    names: tuple
    adjacency: np.ndarray  # graph convention, instantaneous + lagged cross edges
    instantaneous: np.ndarray
    coefficients: dict = field(default_factory=dict)  # center id -> generating parameters
    profiles: dict = field(default_factory=dict)  # center id -> profile index

    def to_dict(self):
        return {
            "names": list(self.names),
            "adjacency": self.adjacency.astype(int).tolist(),
            "instantaneous": self.instantaneous.astype(int).tolist(),
            "coefficients": self.coefficients,
            "profiles": self.profiles,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def fleet_schema(n_services: int) -> AttributeSchema:
    usage = [f"usage_{s:02d}" for s in range(n_services)]
    traffic = [f"traffic_{s:02d}" for s in range(n_services)]
    names = usage + traffic + ["total"]
    roles = ["machine-usage"] * n_services + ["service-traffic"] * n_services + ["total-traffic"]
    known = [True] * n_services + [False] * (n_services + 1)
    return AttributeSchema(tuple(names), tuple(roles), tuple(known))


def true_adjacency(n_services: int) -> np.ndarray:
    A = 2 * n_services + 1
    M = np.zeros((A, A))
    for s in range(n_services):
        M[s, n_services + s] = 1.0  # usage_s -> traffic_s
        M[n_services + s, A - 1] = 1.0  # traffic_s -> total
    return M


def _uniform(rng, scale, size):
    # zero-mean uniform with standard deviation ``scale``
    half = np.sqrt(3.0) * scale
    return rng.uniform(-half, half, size=size)


def _jitter(rng, value, het):
    return value * (1.0 + het * rng.uniform(-1.0, 1.0, size=np.shape(value)))


def generate_center(spec: FleetSpec, profile: dict, rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    S, T = spec.n_services, spec.T
    het = spec.heterogeneity
    base = _jitter(rng, profile["base"], het)
    trend = profile["trend"] + het * rng.uniform(-1, 1, S) * (spec.trend_range[1] - spec.trend_range[0]) / 2
    gain = _jitter(rng, profile["gain"], het)
    phase = profile["phase"] + het * rng.uniform(-1, 1, S)
    t = np.arange(T)
    # noise enters as integrated uniform innovations, so first differences
    # form a structural VAR with i.i.d. non-Gaussian shocks
    usage = (base[None, :] + trend[None, :] * t[:, None]
             + spec.seasonal_amplitude * np.sin(2 * np.pi * t[:, None] / 7.0 + phase[None, :])
             + np.cumsum(_uniform(rng, spec.usage_noise, (T, S)), axis=0))
    drift = np.cumsum(_uniform(rng, spec.traffic_noise, (T, S)), axis=0)
    traffic = np.empty((T, S))
    prev = (gain * usage[0] + drift[0]) / (1.0 - spec.persistence)
    for k in range(T):
        prev = gain * usage[k] + spec.persistence * prev + drift[k]
        traffic[k] = prev
    total = traffic.sum(axis=1) + np.cumsum(_uniform(rng, spec.total_noise, T))
    coeffs = {"base": base.tolist(), "trend": trend.tolist(), "gain": gain.tolist(),
              "phase": phase.tolist(), "persistence": spec.persistence}
    return np.column_stack([usage, traffic, total]), coeffs


def generate_fleet(spec: FleetSpec | None = None) -> tuple[Fleet, GroundTruth]:
    spec = spec or FleetSpec()
    spec.validate()
    S = spec.n_services
    root = np.random.SeedSequence(spec.seed)
    profile_seq, *center_seqs = root.spawn(spec.n_centers + 1)
    prng = np.random.default_rng(profile_seq)
    profiles = []
    for _ in range(spec.n_profiles):
        profiles.append({
            "base": prng.uniform(*spec.base_range, S),
            "trend": prng.uniform(*spec.trend_range, S),
            "gain": prng.uniform(*spec.gain_range, S),
            "phase": prng.uniform(0, 2 * np.pi, S),
        })
    assignment = [c % spec.n_profiles for c in range(spec.n_centers)]
    prng.shuffle(assignment)
    schema = fleet_schema(S)
    panels, coeffs, prof = [], {}, {}
    for c, seq in enumerate(center_seqs):
        cid = f"dc{c:02d}"
        values, cf = generate_center(spec, profiles[assignment[c]], np.random.default_rng(seq))
        panels.append(Panel(cid, values, schema))
        coeffs[cid] = cf
        prof[cid] = int(assignment[c])
    M = true_adjacency(S)
    truth = GroundTruth(schema.names, M, M.copy(), coeffs, prof)
    return Fleet(tuple(panels)), truth


@dataclass
class ColdStartTargets:
    """What a cold-start run is scored against."""

    target_id: str
    cut: int
    masked: tuple[str, ...]
    truth: Panel  # the unmasked target panel

    def total_after(self, t0: int, t1: int) -> np.ndarray:
        return self.truth.column("total")[t0:t1]


def masked_services(panel: Panel, n_masked: int) -> list[int]:
    """The ``n_masked`` services with the highest mean traffic."""
    traffic = [j for j, r in enumerate(panel.schema.roles) if r == "service-traffic"]
    means = panel.values[:, traffic].mean(axis=0)
    order = np.argsort(-means, kind="stable")[:n_masked]
    return sorted(int(i) for i in order)


def make_coldstart_scenario(fleet: Fleet, target: int, n_masked: int = 10, cut: int = 400
                            ) -> tuple[Fleet, ColdStartTargets]:
    panel = fleet[target]
    S = sum(1 for r in panel.schema.roles if r == "service-traffic")
    if n_masked > S:
        raise InvalidSpec(f"cannot mask {n_masked} of {S} services")
    services = masked_services(panel, n_masked) if n_masked else []
    attrs = [f"traffic_{s:02d}" for s in services] + [f"usage_{s:02d}" for s in services]
    masked = mask_history(panel, attrs, cut)
    targets = ColdStartTargets(panel.id, cut, tuple(attrs), panel)
    return fleet.replace_panel(masked), targets


@dataclass(frozen=True)
class SvarSpec:
    """Plain structural VAR(1) used to score causal discovery."""

    n_vars: int = 5
    T: int = 1000
    edge_prob: float = 0.4
    lag_edges: int = 2
    seed: int = 0


def generate_svar(spec: SvarSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Returns (data, B0, B1, true graph-convention adjacency)."""
    rng = np.random.default_rng(spec.seed)
    A = spec.n_vars
    perm = rng.permutation(A)
    B0 = np.zeros((A, A))
    for a in range(1, A):
        for b in range(a):
            if rng.uniform() < spec.edge_prob:
                B0[perm[a], perm[b]] = rng.choice([-1, 1]) * rng.uniform(0.5, 0.9)
    B1 = np.diag(rng.uniform(0.2, 0.5, A))
    placed = 0
    while placed < spec.lag_edges:
        j, k = rng.integers(A, size=2)
        if j != k and B1[j, k] == 0:
            B1[j, k] = rng.choice([-1, 1]) * rng.uniform(0.3, 0.5)
            placed += 1
    inv = np.linalg.inv(np.eye(A) - B0)
    radius = np.max(np.abs(np.linalg.eigvals(inv @ B1)))
    if radius >= 0.95:
        B1 *= 0.9 / radius
    burn = 200
    e = rng.uniform(-1, 1, size=(spec.T + burn, A))
    x = np.zeros((spec.T + burn, A))
    for t in range(1, spec.T + burn):
        x[t] = inv @ (B1 @ x[t - 1] + e[t])
    truth = ((np.abs(B0) + np.abs(B1)).T > 0).astype(float)
    np.fill_diagonal(truth, 0.0)
    return x[burn:], B0, B1, truth
