"""Mission driver: cluster, predict, optimize, serve, repeat.

One scheme run walks the mission clock cluster by cluster: re-cluster the
unserved users, fly to the nearest cluster, optimize that leg with block
coordinate descent (association, then trajectory SCA, then allocation SCA),
and score the leg against the ground-truth tracks.  Benchmark schemes swap
out single blocks (oracle or held positions, equal resources, one user per
slot, pinned altitude) while everything else stays identical, including the
random substreams.

Substreams from the run seed: 0 ground-truth tracks, 1 small-scale fading,
2 capacity Monte Carlo, (3, round) k-means restarts.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .allocation import AllocationTable, init_allocation, sca_allocation
from .association import AssociationMatrix, solve_association
from .channel import average_rates, fading_power_table, link_table, rate
from .clustering import (CapacityEstimate, ClusterPlan, estimate_capacity,
                         kmeans_clusters, nearest_cluster, serving_time)
from .mobility import GmParams, UserTrack, generate_tracks
from .prediction import StateSpace, fit_tensor, predict_locations, quantize_track
from .scenario import ScenarioConfig, seeded_rng
from .trajectory import Trajectory, check_trajectory, compose_leg, sca_trajectory

SCHEMES = (
    "proposed",
    "upper_bound",
    "no_prediction",
    "fixed_resources",
    "time_dividend",
    "traj_2d",
    "traj_2d_prediction",
)

_PREDICTING = {"proposed", "fixed_resources", "time_dividend", "traj_2d_prediction"}
_ORACLE = {"upper_bound"}
_FIXED_ALTITUDE = {"traj_2d", "traj_2d_prediction"}
_EQUAL_RESOURCES = {"fixed_resources", "time_dividend"}


@dataclass
class RoundResult:
    """Everything one service leg produced, evaluated against truth."""

    cluster: int
    flight: Trajectory
    assoc: AssociationMatrix
    alloc: AllocationTable
    min_rate: float  # bits/s, min over served members at true positions
    per_user_rates: np.ndarray  # (members,) bits/s at true positions
    outage_slots: int  # members whose accumulated bits fell short of r_on
    bcd_iters: int
    members: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    dropped: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    start_slot: int = 0
    serve_slots: int = 0
    predicted: np.ndarray | None = None  # (members, serve_slots, 2)
    gamma_history: list = field(default_factory=list)  # model objective per BCD iter
    closed: bool = True
    bcd_converged: bool = False


def bcd_converged(f_prev: float, f_curr: float, eps: float) -> bool:
    """Absolute-difference stopping test between consecutive objectives."""
    return abs(f_prev - f_curr) < eps


def ground_truth(cfg: ScenarioConfig, seed: int) -> list[UserTrack]:
    """History plus mission tracks from substream (seed, 0)."""
    total = cfg.history_slots + cfg.slot_count()
    ext = dataclasses.replace(cfg, total_flight_time=total * cfg.slot_duration)
    return generate_tracks(ext, GmParams.from_config(cfg), seeded_rng(seed, 0))


def fit_mobility_model(cfg: ScenarioConfig, truth: list[UserTrack]):
    """Quantize full tracks and fit the transition tensor on history only."""
    step = cfg.gm_mean_speed * cfg.slot_duration
    if step <= 0.0:
        step = 1.0  # static users: any positive step quantizes to "stay"
    space = StateSpace.compass(step)
    states = [quantize_track(tr, space) for tr in truth]
    tensor = fit_tensor([s[: cfg.history_slots] for s in states], space.k)
    return space, states, tensor


def _whatif_rates(traj: Trajectory, user_xy: np.ndarray, cfg: ScenarioConfig,
                  fading: np.ndarray, share: int) -> np.ndarray:
    """Per-slot rates if every user got a 1/share split of both budgets."""
    links = link_table(traj.poses, user_xy, cfg, fading)
    b_eq = cfg.b_total_max / share
    p_eq = min(cfg.p_user_max, cfg.p_total_max / share)
    return np.asarray(rate(b_eq, p_eq, links.gain, cfg))


def _time_dividend_assoc(n: int, t: int, tau: int) -> AssociationMatrix:
    """Round-robin, one user per slot; callers keep n <= t // tau so every
    user still reaches its tau connectivity slots."""
    j = np.zeros((n, t), dtype=np.int8)
    j[np.arange(t) % n, np.arange(t)] = 1
    return AssociationMatrix(j=j, tau_req=tau)


def _predict_members(scheme: str, members, truth, states, tensor, space, cfg,
                     now: int, horizon: int) -> np.ndarray:
    """(M, horizon+1, 2) positions the optimizer will design against."""
    out = np.empty((len(members), horizon + 1, 2))
    for i, u in enumerate(members):
        pos_now = truth[u].positions[now]
        if scheme in _ORACLE:
            out[i] = truth[u].positions[now:now + horizon + 1]
        elif scheme in _PREDICTING and horizon >= 1:
            last_two = (int(states[u][now - 2]), int(states[u][now - 1]))
            pred = predict_locations(
                pos_now, last_two, tensor, space, horizon,
                bounds=(cfg.area_x_bounds, cfg.area_y_bounds), user_id=int(u),
            )
            out[i] = pred.positions
        else:
            out[i] = np.tile(pos_now, (horizon + 1, 1))
    return out


def run_scheme(cfg: ScenarioConfig, scheme: str, rng: int | None = None,
               serve_cap: int | None = None) -> list[RoundResult]:
    """Execute one full mission under a scheme; deterministic in (cfg, seed).

    rng is an integer seed (None uses cfg.rng_seed); serve_cap, when given,
    caps each leg's slot count to emulate a constrained serving-time budget.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    seed = cfg.rng_seed if rng is None else int(rng)
    mission = cfg.slot_count()
    n = cfg.n_users
    truth = ground_truth(cfg, seed)
    fading = fading_power_table(seeded_rng(seed, 1), n, mission, cfg.antennas)
    cap = estimate_capacity(cfg, cfg.capacity_mc_samples, seeded_rng(seed, 2))
    tau, c_max = cap.tau, cap.c_max
    space, states, tensor = fit_mobility_model(cfg, truth)

    fixed_alt = None
    if scheme in _FIXED_ALTITUDE:
        fixed_alt = 0.5 * (cfg.altitude_bounds[0] + cfg.altitude_bounds[1])
    home = np.array(cfg.start_pose(), dtype=float)
    pose = home.copy()
    if fixed_alt is not None:
        pose[2] = fixed_alt
        home = pose.copy()

    remaining = list(range(n))
    slots_used = 0
    results: list[RoundResult] = []
    round_idx = 0
    while remaining and slots_used < mission:
        now = cfg.history_slots + slots_used
        pos_now = np.array([truth[u].positions[now] for u in range(n)])
        rem = np.array(sorted(remaining), dtype=int)
        n_clusters = math.ceil(len(rem) / c_max)
        plan = kmeans_clusters(pos_now[rem], n_clusters, seeded_rng(seed, 3, round_idx),
                               tau=tau, c_max=c_max)
        choice = nearest_cluster(pose, plan, set())
        members = rem[plan.members(choice)]
        final_leg = len(members) == len(rem)

        # one user per slot shrinks the effective per-slot capacity to 1
        c_eff = 1 if scheme == "time_dividend" else c_max
        t_need = serving_time(plan, pose, cfg, choice,
                              c_max_override=c_eff if c_eff != c_max else None)
        if final_leg:
            back = float(np.linalg.norm(plan.centroids[choice] - home[:2]))
            t_need += math.ceil(back / cfg.s_xy_max) + 2
        budget = mission - slots_used
        t_leg = min(t_need, budget)
        if serve_cap is not None:
            t_leg = min(t_leg, serve_cap)
        if t_leg < 1:
            break

        predicted = _predict_members(scheme, members, truth, states, tensor,
                                     space, cfg, now, t_leg - 1)
        fad_leg = fading[np.ix_(members, np.arange(slots_used, slots_used + t_leg))]

        # shortage: keep the members the capacity can actually fit
        fit_cap = 0 if t_leg < tau else c_eff * t_leg // tau
        if fit_cap >= len(members):
            kept_rows = np.arange(len(members))
        else:
            center = predicted.mean(axis=(0, 1))
            score = ((predicted - center) ** 2).sum(axis=2).mean(axis=1)
            kept_rows = np.sort(np.argsort(score, kind="stable")[:fit_cap])
        dropped = members[np.setdiff1d(np.arange(len(members)), kept_rows)]
        kept = members[kept_rows]

        end_target = home if final_leg else None
        round_rec = _serve_leg(
            scheme, cfg, pose, kept, kept_rows, members, predicted, fad_leg,
            t_leg, tau, c_max, fixed_alt, end_target,
        )
        round_rec.cluster = round_idx
        round_rec.start_slot = slots_used
        round_rec.dropped = dropped

        # realized performance against the true tracks
        truth_leg = np.stack([truth[u].positions[now:now + t_leg] for u in members])
        gain_truth = link_table(round_rec.flight.poses, truth_leg, cfg, fad_leg).gain
        per_user = average_rates(round_rec.assoc.j, round_rec.alloc.b,
                                 round_rec.alloc.p, gain_truth, cfg, t_leg)
        served = np.asarray(round_rec.assoc.j).sum(axis=1) > 0
        bits = per_user * t_leg * cfg.slot_duration
        round_rec.per_user_rates = per_user
        round_rec.min_rate = float(per_user[served].min()) if served.any() else 0.0
        round_rec.outage_slots = int(np.sum(bits < cfg.qos_bits))
        round_rec.predicted = predicted
        results.append(round_rec)

        pose = round_rec.flight.poses[-1].copy()
        slots_used += t_leg
        remaining = [u for u in remaining if u not in set(members.tolist())]
        round_idx += 1
    return results


def _serve_leg(scheme, cfg, pose, kept, kept_rows, members, predicted, fad_leg,
               t_leg, tau, c_max, fixed_alt, end_target) -> RoundResult:
    """BCD on one leg; returns a RoundResult with flight/assoc/alloc filled."""
    m_all = len(members)
    pred_kept = predicted[kept_rows]
    fad_kept = fad_leg[kept_rows]
    pos_kept = pred_kept[:, 0, :]

    if len(kept) == 0:
        sub_plan = ClusterPlan(
            assignments=np.zeros(m_all, dtype=int),
            centroids=predicted[:, 0, :].mean(axis=0, keepdims=True),
            serve_times=[t_leg], tau=tau, c_max=c_max,
        )
        flight, closed = compose_leg(pose, sub_plan, 0, cfg, t_leg,
                                     predicted[:, 0, :], end_pose=end_target,
                                     altitude=fixed_alt)
        check_trajectory(flight, cfg)
        empty = AssociationMatrix(j=np.zeros((m_all, t_leg), dtype=np.int8), tau_req=0)
        zeros = AllocationTable(b=np.zeros((m_all, t_leg)), p=np.zeros((m_all, t_leg)))
        return RoundResult(cluster=-1, flight=flight, assoc=empty, alloc=zeros,
                           min_rate=0.0, per_user_rates=np.zeros(m_all),
                           outage_slots=m_all, bcd_iters=0, members=members,
                           serve_slots=t_leg, closed=closed)

    sub_plan = ClusterPlan(
        assignments=np.zeros(len(kept), dtype=int),
        centroids=pos_kept.mean(axis=0, keepdims=True),
        serve_times=[t_leg], tau=tau, c_max=c_max,
    )
    traj, closed = compose_leg(pose, sub_plan, 0, cfg, t_leg, pos_kept,
                               end_pose=end_target, altitude=fixed_alt)
    share = min(c_max, len(kept))
    assoc = alloc = None
    gamma_history: list[float] = []
    f_prev = 0.0
    converged = False
    iters = 0
    for it in range(1, cfg.sca_max_iters + 1):
        iters = it
        rates_eq = _whatif_rates(traj, pred_kept, cfg, fad_kept, share)
        if scheme == "time_dividend":
            assoc_new = _time_dividend_assoc(len(kept), t_leg, tau)
        else:
            assoc_new, _ = solve_association(rates_eq, tau, c_max, cfg.qos_bits,
                                             t_leg, cfg.slot_duration)
        alloc_eq = init_allocation(assoc_new, cfg)
        traj_new, _ = sca_trajectory(
            traj, assoc_new, alloc_eq, pred_kept, cfg, fad_kept,
            start_pose=pose, end_pose=end_target, fixed_h=fixed_alt,
        )
        gain_pred = link_table(traj_new.poses, pred_kept, cfg, fad_kept).gain
        if scheme in _EQUAL_RESOURCES:
            alloc_new = alloc_eq
        else:
            alloc_new, _ = sca_allocation(alloc_eq, assoc_new, gain_pred, cfg)
        rates_model = average_rates(assoc_new.j, alloc_new.b, alloc_new.p,
                                    gain_pred, cfg, t_leg)
        served = np.asarray(assoc_new.j).sum(axis=1) > 0
        f_curr = float(rates_model[served].min()) if served.any() else 0.0
        if gamma_history and f_curr < f_prev * (1.0 - 1e-9):
            break  # keep the previous blocks; the swap did not help
        assoc, alloc, traj = assoc_new, alloc_new, traj_new
        gamma_history.append(f_curr)
        if bcd_converged(f_prev, f_curr, cfg.sca_tol * max(1.0, abs(f_curr))):
            converged = True
            break
        f_prev = f_curr

    check_trajectory(traj, cfg)
    assoc.validate(c_max)
    alloc.validate(assoc, cfg)

    # expand kept-row blocks back onto the full member axis
    j_full = np.zeros((m_all, t_leg), dtype=np.int8)
    b_full = np.zeros((m_all, t_leg))
    p_full = np.zeros((m_all, t_leg))
    j_full[kept_rows] = assoc.j
    b_full[kept_rows] = alloc.b
    p_full[kept_rows] = alloc.p
    assoc_full = AssociationMatrix(j=j_full, tau_req=assoc.tau_req,
                                   qos_met=assoc.qos_met)
    alloc_full = AllocationTable(b=b_full, p=p_full)
    return RoundResult(cluster=-1, flight=traj, assoc=assoc_full, alloc=alloc_full,
                       min_rate=0.0, per_user_rates=np.zeros(m_all),
                       outage_slots=0, bcd_iters=iters, members=members,
                       serve_slots=t_leg, gamma_history=gamma_history,
                       closed=closed, bcd_converged=converged)


@dataclass
class MetricsReport:
    """Aggregates one run: fairness, outage, prediction error, kinematics."""

    global_min_rate: float
    per_round_min_rates: list
    outage_users: int
    outage_probability: float
    served_users: int
    n_users: int
    prediction_rmse_x: float
    prediction_rmse_y: float
    speed_profile: list
    total_serve_slots: int
    bcd_iters: list
    rounds_converged: list
    closed_flags: list

    def to_dict(self) -> dict:
        return {
            "global_min_rate": self.global_min_rate,
            "per_round_min_rates": list(self.per_round_min_rates),
            "outage_users": self.outage_users,
            "outage_probability": self.outage_probability,
            "served_users": self.served_users,
            "n_users": self.n_users,
            "prediction_rmse_x": self.prediction_rmse_x,
            "prediction_rmse_y": self.prediction_rmse_y,
            "speed_profile": [float(v) for v in self.speed_profile],
            "total_serve_slots": self.total_serve_slots,
            "bcd_iters": list(self.bcd_iters),
            "rounds_converged": list(self.rounds_converged),
            "closed_flags": list(self.closed_flags),
        }


def collect_metrics(results: list[RoundResult], truth: list[UserTrack],
                    cfg: ScenarioConfig) -> MetricsReport:
    """Score a completed run.  A user is in outage when the bits accumulated
    over its served slots fall short of the QoS requirement; users the mission
    never reached count as outages too."""
    n = cfg.n_users
    bits = np.zeros(n)
    covered = np.zeros(n, dtype=bool)
    sq_err = np.zeros(2)
    err_count = 0
    speeds: list[float] = []
    min_rates = []
    for res in results:
        for i, u in enumerate(res.members):
            bits[u] += res.per_user_rates[i] * res.serve_slots * cfg.slot_duration
            if np.asarray(res.assoc.j)[i].sum() > 0:
                covered[u] = True
        if res.predicted is not None:
            now = cfg.history_slots + res.start_slot
            for i, u in enumerate(res.members):
                true_seg = truth[u].positions[now:now + res.serve_slots]
                delta = res.predicted[i] - true_seg
                sq_err += (delta ** 2).sum(axis=0)
                err_count += len(true_seg)
        speeds.extend(res.flight.speeds(cfg).tolist())
        if np.asarray(res.assoc.j).sum() > 0:
            min_rates.append(res.min_rate)
    outage = int(np.sum(bits < cfg.qos_bits))
    rmse = np.sqrt(sq_err / err_count) if err_count else np.zeros(2)
    return MetricsReport(
        global_min_rate=float(min(min_rates)) if min_rates else 0.0,
        per_round_min_rates=[float(r.min_rate) for r in results],
        outage_users=outage,
        outage_probability=outage / n,
        served_users=int(covered.sum()),
        n_users=n,
        prediction_rmse_x=float(rmse[0]),
        prediction_rmse_y=float(rmse[1]),
        speed_profile=speeds,
        total_serve_slots=int(sum(r.serve_slots for r in results)),
        bcd_iters=[int(r.bcd_iters) for r in results],
        rounds_converged=[bool(r.bcd_converged) for r in results],
        closed_flags=[bool(r.closed) for r in results],
    )
