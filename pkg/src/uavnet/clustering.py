"""Service planning: capacity heuristics, K-means grouping, serving times.

The capacity chain estimates a per-Hz spectral efficiency by Monte-Carlo at a
fixed LoS reference distance, then derives connectivity time tau, per-slot
user capacity C_max, and the cluster count.  Scenario overrides for tau and
C_max take precedence; the published formulas cannot produce a C_max above 1
for any tau >= 2 (floor(tau/x) with x in (tau-1, tau]), so realistic setups
pin both explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import draw_fading, path_loss
from .scenario import ScenarioConfig


class InfeasibilityError(RuntimeError):
    """Scenario cannot satisfy its own QoS/budget arithmetic."""


@dataclass(frozen=True)
class CapacityEstimate:
    lambda_se: float  # bits/s/Hz
    r_max: float  # bits/s
    tau: int  # required connectivity slots per user
    c_max: int  # users servable in one slot
    n_clusters: int


@dataclass
class ClusterPlan:
    assignments: np.ndarray  # (N,) user -> cluster index
    centroids: np.ndarray  # (L, 2)
    serve_times: list  # slots per cluster; None until planned
    order: list = field(default_factory=list)  # visiting order, filled by the orchestrator
    tau: int | None = None
    c_max: int | None = None

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)

    def members(self, cluster: int) -> np.ndarray:
        return np.nonzero(self.assignments == cluster)[0]


def reference_distance(cfg: ScenarioConfig) -> float:
    """LoS reference range: half the area diagonal at the lowest altitude."""
    width = cfg.area_x_bounds[1] - cfg.area_x_bounds[0]
    depth = cfg.area_y_bounds[1] - cfg.area_y_bounds[0]
    return float(np.hypot(np.hypot(width, depth) / 2.0, cfg.altitude_bounds[0]))


def estimate_capacity(cfg: ScenarioConfig, mc_samples: int,
                      rng: np.random.Generator) -> CapacityEstimate:
    """Monte-Carlo spectral efficiency and the tau/C_max/L heuristic chain."""
    if mc_samples < 1:
        raise ValueError("mc_samples must be at least 1")
    d_ref = reference_distance(cfg)
    pl = float(path_loss(d_ref, cfg.carrier_freq, cfg.eta_los))
    sigma2 = cfg.b_total_max * cfg.noise_psd
    h = draw_fading(rng, cfg.antennas, size=mc_samples)
    h2 = np.sum(np.abs(h) ** 2, axis=-1)
    # printed formula, kept verbatim: power over (f_c sigma^2), beam gain squared
    lambda_se = float(np.mean(np.log2(
        1.0 + (cfg.p_total_max / (cfg.carrier_freq * sigma2)) * (h2 ** 2 / pl)
    )))
    r_max = cfg.b_total_max * lambda_se

    overrides = cfg.tau_slots is not None and cfg.c_max_users is not None
    if not overrides and cfg.qos_bits > r_max * cfg.total_flight_time:
        raise InfeasibilityError(
            f"qos_bits={cfg.qos_bits:.3g} exceeds the {r_max * cfg.total_flight_time:.3g}"
            " bits achievable across the whole flight"
        )

    if cfg.tau_slots is not None:
        tau = cfg.tau_slots
    elif cfg.qos_bits == 0.0:
        tau = 1
    else:
        tau = max(1, math.ceil(cfg.qos_bits / (r_max * cfg.slot_duration)))
    if cfg.c_max_users is not None:
        c_max = cfg.c_max_users
    elif cfg.qos_bits == 0.0:
        c_max = cfg.n_users
    else:
        c_max = max(1, math.floor(tau * r_max * cfg.slot_duration / cfg.qos_bits))
    n_clusters = math.ceil(cfg.n_users / c_max)
    return CapacityEstimate(lambda_se=lambda_se, r_max=r_max, tau=int(tau),
                            c_max=int(c_max), n_clusters=int(n_clusters))


def _kmeans_once(points: np.ndarray, k: int, rng: np.random.Generator,
                 max_iters: int = 100) -> tuple[np.ndarray, np.ndarray, float]:
    n = len(points)
    # k-means++ seeding
    centroids = np.empty((k, 2))
    centroids[0] = points[rng.integers(n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centroids[j] = points[rng.integers(n)]
        else:
            centroids[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))

    assign = np.full(n, -1)
    for _ in range(max_iters):
        dist2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(dist2, axis=1)
        for j in range(k):  # empty cluster: seize the globally farthest point
            if not np.any(new_assign == j):
                far = int(np.argmax(dist2[np.arange(n), new_assign]))
                new_assign[far] = j
                dist2[far, :] = np.inf
                dist2[far, j] = 0.0
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            centroids[j] = points[assign == j].mean(axis=0)
    wcss = float(((points - centroids[assign]) ** 2).sum())
    return assign, centroids, wcss


def kmeans_clusters(positions: np.ndarray, n_clusters: int, rng: np.random.Generator,
                    tau: int | None = None, c_max: int | None = None,
                    restarts: int = 20) -> ClusterPlan:
    """Best-of-restarts Lloyd clustering; labels follow first-member order."""
    points = np.asarray(positions, dtype=float)
    if n_clusters > len(points):
        raise ValueError("more clusters than users")
    best = None
    for _ in range(restarts):
        assign, centroids, wcss = _kmeans_once(points, n_clusters, rng)
        if best is None or wcss < best[2] - 1e-12:
            best = (assign, centroids, wcss)
    assign, centroids, _ = best

    # canonical labels: clusters numbered by their first member
    relabel = {}
    for a in assign:
        if a not in relabel:
            relabel[a] = len(relabel)
    new_assign = np.array([relabel[a] for a in assign])
    new_centroids = np.empty_like(centroids)
    for old, new in relabel.items():
        new_centroids[new] = centroids[old]
    return ClusterPlan(assignments=new_assign, centroids=new_centroids,
                       serve_times=[None] * n_clusters, tau=tau, c_max=c_max)


def nearest_cluster(pose, plan: ClusterPlan, served: set[int]) -> int:
    """Unserved cluster with least 3D distance to the pose; ties to lowest index."""
    xyz = pose.as_array() if hasattr(pose, "as_array") else np.asarray(pose, dtype=float)
    dist2 = ((plan.centroids - xyz[:2]) ** 2).sum(axis=1) + xyz[2] ** 2
    dist2 = np.where(np.isin(np.arange(plan.n_clusters), sorted(served)), np.inf, dist2)
    if not np.isfinite(dist2).any():
        raise ValueError("all clusters already served")
    return int(np.argmin(dist2))


def serving_time(plan: ClusterPlan, pose, cfg: ScenarioConfig, cluster: int,
                 c_max_override: int | None = None) -> int:
    """Service rounds for the cluster's population plus travel slots to reach it.

    c_max_override narrows the per-slot user capacity below the plan's value
    (schemes that serve one user per slot need n_l * tau service rounds).
    """
    if plan.tau is None or plan.c_max is None:
        raise ValueError("plan is missing tau/c_max capacity context")
    c_max = plan.c_max if c_max_override is None else c_max_override
    xyz = pose.as_array() if hasattr(pose, "as_array") else np.asarray(pose, dtype=float)
    n_l = int(np.sum(plan.assignments == cluster))
    travel = float(np.hypot(*(plan.centroids[cluster] - xyz[:2])))
    return math.ceil(n_l / c_max) * plan.tau + math.ceil(travel / cfg.s_xy_max)


def plan_serve_times(plan: ClusterPlan, pose, cfg: ScenarioConfig,
                     budget_slots: int) -> list[int]:
    """Per-cluster serving times, rescaled (floor) into the remaining budget.

    Raises InfeasibilityError if the rescale pushes any cluster below tau.
    """
    times = [serving_time(plan, pose, cfg, l) for l in range(plan.n_clusters)]
    total = sum(times)
    if total > budget_slots:
        factor = budget_slots / total
        times = [math.floor(t * factor) for t in times]
    for l, t in enumerate(times):
        if t < plan.tau:
            raise InfeasibilityError(
                f"cluster {l} gets {t} slots after rescale, below the"
                f" minimum connectivity time {plan.tau}"
            )
    plan.serve_times = list(times)
    return times


def plan_to_dict(plan: ClusterPlan) -> dict:
    """JSON-ready dump of a service-round plan."""
    return {
        "assignments": [int(a) for a in plan.assignments],
        "centroids": [[float(x), float(y)] for x, y in plan.centroids],
        "serve_times": [None if t is None else int(t) for t in plan.serve_times],
        "order": [int(l) for l in plan.order],
        "tau": None if plan.tau is None else int(plan.tau),
        "c_max": None if plan.c_max is None else int(plan.c_max),
    }
