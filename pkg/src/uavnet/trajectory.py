"""Per-round 3D trajectory optimization: circle start, Taylor bound, SCA.

The slot rate seen from squared 3D distance s is log2(1 + C2/s), convex and
decreasing in s, so its tangent at the previous iterate is a global under
estimator within the frozen LoS regime.  The convex step lifts squared
distances into epigraph variables (u >= ||w - Q||^2, v >= H^2), maximizes the
worst surrogate rate, and the outer loop re-freezes regimes, accepting only
iterates whose true objective does not decrease.

The convex program works in hectometers so every coefficient is O(1).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import convex
from .channel import average_rates, link_table
from .scenario import SPEED_OF_LIGHT, ScenarioConfig

POS_SCALE = 100.0  # meters per program length unit
RATE_SCALE = 1e6  # bits/s per program rate unit


@dataclass
class Trajectory:
    poses: np.ndarray  # (T, 3): x, y, altitude

    def __post_init__(self) -> None:
        self.poses = np.asarray(self.poses, dtype=float)

    @property
    def xy(self) -> np.ndarray:
        return self.poses[:, :2]

    @property
    def h(self) -> np.ndarray:
        return self.poses[:, 2]

    def __len__(self) -> int:
        return len(self.poses)

    def speeds(self, cfg: ScenarioConfig) -> np.ndarray:
        """Horizontal speed per slot; slot 0 reports 0."""
        steps = np.linalg.norm(np.diff(self.xy, axis=0), axis=1)
        return np.concatenate([[0.0], steps / cfg.slot_duration])


def check_trajectory(traj: Trajectory, cfg: ScenarioConfig, tol: float = 1e-9,
                     start_pose=None, end_pose=None, closure_tol: float = 1e-6) -> None:
    """Raise ValueError on any box/speed violation beyond tol (meters)."""
    poses = traj.poses
    (x_lo, x_hi), (y_lo, y_hi) = cfg.area_x_bounds, cfg.area_y_bounds
    h_lo, h_hi = cfg.altitude_bounds
    if np.any(poses[:, 0] < x_lo - tol) or np.any(poses[:, 0] > x_hi + tol):
        raise ValueError("trajectory leaves the x bounds")
    if np.any(poses[:, 1] < y_lo - tol) or np.any(poses[:, 1] > y_hi + tol):
        raise ValueError("trajectory leaves the y bounds")
    if np.any(poses[:, 2] < h_lo - tol) or np.any(poses[:, 2] > h_hi + tol):
        raise ValueError("trajectory leaves the altitude corridor")
    steps = np.linalg.norm(np.diff(poses[:, :2], axis=0), axis=1)
    if np.any(steps > cfg.s_xy_max + tol):
        raise ValueError(f"horizontal step {steps.max():.9g} exceeds s_xy_max")
    climbs = np.abs(np.diff(poses[:, 2]))
    if len(climbs) and np.any(climbs > cfg.s_h_max + tol):
        raise ValueError(f"vertical step {climbs.max():.9g} exceeds s_h_max")
    if start_pose is not None and np.max(np.abs(poses[0] - np.asarray(start_pose))) > closure_tol:
        raise ValueError("trajectory does not start at the required pose")
    if end_pose is not None and np.max(np.abs(poses[-1] - np.asarray(end_pose))) > closure_tol:
        raise ValueError("trajectory does not close at the required pose")


def _clamp_point(p: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    return np.array([
        np.clip(p[0], *cfg.area_x_bounds),
        np.clip(p[1], *cfg.area_y_bounds),
    ])


def initial_trajectory(plan, cluster: int, cfg: ScenarioConfig, serve_slots: int,
                       positions: np.ndarray, altitude: float | None = None) -> Trajectory:
    """Constant-speed circle around the cluster's geometric center.

    Radius is min(speed-limited radius, half the farthest-user radius);
    waypoints sweep a full turn across the leg.  If the clamped circle cannot
    respect the per-slot speed cap, the fallback hovers at the center.
    """
    members = plan.members(cluster)
    pts = np.asarray(positions, dtype=float)[members]
    center = pts.mean(axis=0)
    rho_u = float(np.max(np.linalg.norm(pts - center, axis=1))) if len(pts) else 0.0
    z = 0.5 * (cfg.altitude_bounds[0] + cfg.altitude_bounds[1]) if altitude is None else altitude
    if serve_slots < 2:
        c = _clamp_point(center, cfg)
        return Trajectory(np.array([[c[0], c[1], z]]))
    rho_max = cfg.s_xy_max * serve_slots / (2.0 * np.pi)
    rho = min(rho_max, rho_u / 2.0)
    angles = 2.0 * np.pi * np.arange(serve_slots) / (serve_slots - 1)
    ring = center[None, :] + rho * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    ring = np.stack([
        np.clip(ring[:, 0], *cfg.area_x_bounds),
        np.clip(ring[:, 1], *cfg.area_y_bounds),
    ], axis=1)
    steps = np.linalg.norm(np.diff(ring, axis=0), axis=1)
    if np.any(steps > cfg.s_xy_max + 1e-9):
        c = _clamp_point(center, cfg)
        ring = np.tile(c, (serve_slots, 1))
    poses = np.column_stack([ring, np.full(serve_slots, z)])
    return Trajectory(poses)


def compose_leg(start_pose, plan, cluster: int, cfg: ScenarioConfig, serve_slots: int,
                positions: np.ndarray, end_pose=None,
                altitude: float | None = None) -> tuple[Trajectory, bool]:
    """Feasible leg: approach the cluster circle, orbit it, optionally return.

    Every step is built inside the speed caps and clamped to the box
    (projection is nonexpansive, so clamping never breaks a chord).  Returns
    the trajectory and whether the requested end pose was reached exactly.
    """
    start = np.asarray(start_pose, dtype=float)
    members = plan.members(cluster)
    pts = np.asarray(positions, dtype=float)[members]
    center = _clamp_point(pts.mean(axis=0), cfg)
    rho_u = float(np.max(np.linalg.norm(pts - center, axis=1))) if len(pts) else 0.0
    z_target = 0.5 * sum(cfg.altitude_bounds) if altitude is None else altitude
    end = None if end_pose is None else np.asarray(end_pose, dtype=float)

    # fixed-point sizing of approach/orbit/return slot shares
    rho = min(cfg.s_xy_max * serve_slots / (2.0 * np.pi), rho_u / 2.0)
    k_return = 0
    for _ in range(4):
        d_in = max(0.0, float(np.linalg.norm(start[:2] - center)) - rho)
        k_in = math.ceil(d_in / cfg.s_xy_max)
        if end is not None:
            d_out = float(np.linalg.norm(center - end[:2])) + rho
            k_return = math.ceil(d_out / cfg.s_xy_max) + 1
        m = max(serve_slots - k_in - k_return, 1)
        rho_new = min(cfg.s_xy_max * m / (2.0 * np.pi), rho_u / 2.0)
        if abs(rho_new - rho) < 1e-12:
            break
        rho = rho_new

    omega_cap = 2.0 * math.asin(min(1.0, cfg.s_xy_max / (2.0 * rho))) if rho > 0 else 0.0

    def _step_toward(cur_xy: np.ndarray, goal: np.ndarray) -> np.ndarray:
        delta = goal - cur_xy
        d = float(np.linalg.norm(delta))
        if d <= 1e-12:
            return goal.copy()
        return cur_xy + delta * (min(cfg.s_xy_max, d) / d)

    poses = np.empty((serve_slots, 3))
    poses[0] = start
    phase = "approach"
    angle = 0.0
    for t in range(1, serve_slots):
        cur = poses[t - 1].copy()
        slots_left = serve_slots - t
        if end is not None and slots_left < k_return:
            phase = "return"
        if phase == "approach":
            offset = cur[:2] - center
            dist_c = float(np.linalg.norm(offset))
            if rho <= 0.0:
                ring_pt = center
            elif dist_c > 1e-12:
                ring_pt = center + (rho / dist_c) * offset
            else:
                ring_pt = center + np.array([rho, 0.0])
            if float(np.linalg.norm(ring_pt - cur[:2])) <= cfg.s_xy_max:
                cur[:2] = ring_pt  # land on the ring; orbiting starts next slot
                rel = cur[:2] - center
                angle = math.atan2(rel[1], rel[0])
                phase = "orbit"
            else:
                cur[:2] = _step_toward(cur[:2], ring_pt)
        elif phase == "orbit":
            if rho > 0.0:
                omega = min(2.0 * np.pi / max(slots_left, 1), omega_cap)
                angle += omega
                cur[:2] = center + rho * np.array([math.cos(angle), math.sin(angle)])
            else:
                cur[:2] = _step_toward(cur[:2], center)
        elif phase == "return":
            cur[:2] = _step_toward(cur[:2], end[:2])
        # altitude ramp toward the working height (or the end height on return)
        z_goal = end[2] if (phase == "return" and end is not None) else z_target
        cur[2] += np.clip(z_goal - cur[2], -cfg.s_h_max, cfg.s_h_max)
        cur[:2] = _clamp_point(cur[:2], cfg)
        cur[2] = np.clip(cur[2], *cfg.altitude_bounds)
        poses[t] = cur

    closed = end is None or bool(np.max(np.abs(poses[-1] - end)) <= 1e-9)
    return Trajectory(poses), closed


@dataclass
class TaylorExpansion:
    """Per-(user, slot) expansion of the distance-to-rate map at traj0.

    c1 is the squared 3D distance at the expansion point, c2 the composite
    SNR numerator p*||h||^2/(B*N_o*eta*kappa); grad and f0 describe the
    tangent of log2(1 + c2/s) at s = c1.  Inactive pairs hold zeros.
    """

    c1: np.ndarray
    c2: np.ndarray
    grad: np.ndarray
    f0: np.ndarray
    active: np.ndarray

    def model_rate_se(self, s: np.ndarray) -> np.ndarray:
        """True frozen-regime spectral efficiency at squared distance s."""
        with np.errstate(divide="ignore"):
            return np.where(self.active, np.log2(1.0 + self.c2 / np.asarray(s)), 0.0)

    def surrogate_rate_se(self, s: np.ndarray) -> np.ndarray:
        """Tangent under-estimator at squared distance s."""
        return np.where(self.active, self.f0 + self.grad * (np.asarray(s) - self.c1), 0.0)


def taylor_bound(traj0: Trajectory, users: np.ndarray, alloc, cfg: ScenarioConfig,
                 fading: np.ndarray | None = None) -> TaylorExpansion:
    """Expansion of every associated slot rate around the current trajectory."""
    bw = np.asarray(alloc.b, dtype=float)
    power = np.asarray(alloc.p, dtype=float)
    n, t = bw.shape
    if fading is None:
        fading = np.ones((n, t))
    links = link_table(traj0.poses, users, cfg, fading)
    active = (bw > 0.0) & (power > 0.0)
    kappa = (4.0 * np.pi * cfg.carrier_freq / SPEED_OF_LIGHT) ** 2
    eta = np.where(links.los_mask, cfg.eta_los, cfg.eta_nlos)
    c1 = links.dist_3d ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        c2 = np.where(active, power * fading / (bw * cfg.noise_psd * eta * kappa), 0.0)
        f0 = np.where(active, np.log2(1.0 + c2 / c1), 0.0)
        grad = np.where(active, -c2 / (np.log(2.0) * c1 * (c1 + c2)), 0.0)
    return TaylorExpansion(c1=np.where(active, c1, 0.0), c2=c2, grad=grad, f0=f0,
                           active=active)


def _project_feasible(poses: np.ndarray, cfg: ScenarioConfig, start_pose=None,
                      end_pose=None) -> np.ndarray:
    """Snap endpoints, clamp the box exactly, then sweep steps into the caps."""
    out = poses.copy()
    if start_pose is not None:
        out[0] = start_pose
    if end_pose is not None:
        out[-1] = end_pose
    out[:, 0] = np.clip(out[:, 0], *cfg.area_x_bounds)
    out[:, 1] = np.clip(out[:, 1], *cfg.area_y_bounds)
    out[:, 2] = np.clip(out[:, 2], *cfg.altitude_bounds)
    shrink = 1.0 - 1e-12
    for t in range(1, len(out)):
        step = out[t, :2] - out[t - 1, :2]
        d = float(np.linalg.norm(step))
        if d > cfg.s_xy_max:
            out[t, :2] = out[t - 1, :2] + step * (cfg.s_xy_max / d) * shrink
        climb = out[t, 2] - out[t - 1, 2]
        if abs(climb) > cfg.s_h_max:
            out[t, 2] = out[t - 1, 2] + math.copysign(cfg.s_h_max * shrink, climb)
    return out


def solve_trajectory_step(
    traj0: Trajectory,
    assoc,
    alloc,
    users: np.ndarray,
    cfg: ScenarioConfig,
    fading: np.ndarray | None = None,
    start_pose=None,
    end_pose=None,
    fixed_h: float | None = None,
    trust: tuple[float, float] | None = None,
) -> tuple[Trajectory, float, bool]:
    """One convex step: maximize the worst surrogate average rate.

    trust, when given, caps per-slot displacement from traj0 (horizontal
    radius, vertical half-width, meters); traj0 always satisfies it, so the
    step stays feasible.  Returns (trajectory, surrogate objective in bits/s,
    stalled).  On solver failure the expansion trajectory comes back
    unchanged with stalled=True.
    """
    tay = taylor_bound(traj0, users, alloc, cfg, fading)
    j = np.asarray(assoc.j, dtype=bool)
    active = tay.active & j
    n, t = active.shape
    served = np.nonzero(active.any(axis=1))[0]
    if len(served) == 0:
        return traj0, 0.0, True

    bw = np.asarray(alloc.b, dtype=float)
    sc = POS_SCALE
    pairs = [(int(u), int(s)) for u, s in zip(*np.nonzero(active))]
    pair_idx = {pair: i for i, pair in enumerate(pairs)}

    prog = convex.ConvexProgram()
    wx = prog.add_var("wx", t)
    wy = prog.add_var("wy", t)
    hh = prog.add_var("hh", t)
    uu = prog.add_var("u", len(pairs))
    vv = prog.add_var("v", t)
    gam = prog.add_var("gamma")
    prog.maximize(gam[0])

    user_xy = np.asarray(users, dtype=float)
    if user_xy.ndim == 2:
        user_xy = np.broadcast_to(user_xy[:, None, :], (n, t, 2))

    for u in served:
        # gamma <= sum over active slots of (B/T) * [f0 + grad*(1e4*(u'+v') - (c1))]
        expr = convex.LinExpr()
        for s in range(t):
            if not active[u, s]:
                continue
            coef = bw[u, s] / RATE_SCALE / t
            const_part = tay.f0[u, s] - tay.grad[u, s] * tay.c1[u, s]
            slope = tay.grad[u, s] * sc * sc
            k = pair_idx[(u, s)]
            expr = expr + coef * (const_part + slope * (uu[k] + vv[s]))
        prog.add_ineq(gam[0] - expr, 0.0)

    for (u, s), k in pair_idx.items():
        qx, qy = user_xy[u, s] / sc
        prog.add_sq_leq([wx[s] - qx, wy[s] - qy], uu[k])
    for s in range(t):
        prog.add_sq_leq([hh[s]], vv[s])

    s_xy = cfg.s_xy_max / sc
    s_h = cfg.s_h_max / sc
    for s in range(t - 1):
        prog.add_soc(convex.LinExpr(const=s_xy), [wx[s + 1] - wx[s], wy[s + 1] - wy[s]])
        if fixed_h is None:
            prog.add_ineq(hh[s + 1] - hh[s], s_h)
            prog.add_ineq(hh[s] - hh[s + 1], s_h)
    if trust is not None:
        d_xy, d_h = trust[0] / sc, trust[1] / sc
        for s in range(t):
            x0, y0, h0 = traj0.poses[s] / sc
            prog.add_soc(convex.LinExpr(const=d_xy), [wx[s] - x0, wy[s] - y0])
            if fixed_h is None:
                prog.add_ineq(hh[s], h0 + d_h)
                prog.add_ineq(-hh[s], -(h0 - d_h))
    for s in range(t):
        prog.add_ineq(-wx[s], -cfg.area_x_bounds[0] / sc)
        prog.add_ineq(wx[s], cfg.area_x_bounds[1] / sc)
        prog.add_ineq(-wy[s], -cfg.area_y_bounds[0] / sc)
        prog.add_ineq(wy[s], cfg.area_y_bounds[1] / sc)
        if fixed_h is None:
            prog.add_ineq(-hh[s], -cfg.altitude_bounds[0] / sc)
            prog.add_ineq(hh[s], cfg.altitude_bounds[1] / sc)
        else:
            prog.add_eq(hh[s], fixed_h / sc)
    if start_pose is not None:
        sp = np.asarray(start_pose, dtype=float) / sc
        prog.add_eq(wx[0], sp[0])
        prog.add_eq(wy[0], sp[1])
        if fixed_h is None:
            prog.add_eq(hh[0], sp[2])
    if end_pose is not None:
        ep = np.asarray(end_pose, dtype=float) / sc
        prog.add_eq(wx[t - 1], ep[0])
        prog.add_eq(wy[t - 1], ep[1])
        if fixed_h is None:
            prog.add_eq(hh[t - 1], ep[2])

    report = convex.solve(prog, tol=1e-9)
    if report.status not in (convex.OPTIMAL,):
        return traj0, 0.0, True
    poses = np.column_stack([
        np.atleast_1d(report.value(wx)) * sc,
        np.atleast_1d(report.value(wy)) * sc,
        np.atleast_1d(report.value(hh)) * sc,
    ])
    poses = _project_feasible(poses, cfg, start_pose=start_pose, end_pose=end_pose)
    traj = Trajectory(poses)
    check_trajectory(traj, cfg, tol=1e-9)
    return traj, report.value(gam) * RATE_SCALE, False


def leg_rates(traj: Trajectory, users: np.ndarray, assoc, alloc,
              cfg: ScenarioConfig, fading: np.ndarray | None = None) -> np.ndarray:
    """Per-user average rates along a leg with regimes re-evaluated."""
    bw = np.asarray(alloc.b, dtype=float)
    if fading is None:
        fading = np.ones_like(bw)
    links = link_table(traj.poses, users, cfg, fading)
    return average_rates(assoc.j, bw, np.asarray(alloc.p, dtype=float), links.gain,
                         cfg, len(traj))


def true_min_rate(traj: Trajectory, users: np.ndarray, assoc, alloc,
                  cfg: ScenarioConfig, fading: np.ndarray | None = None) -> float:
    """Worst served-user average rate (Eq.-9 aggregation, fresh regimes)."""
    served = np.asarray(assoc.j).sum(axis=1) > 0
    if not served.any():
        return 0.0
    return float(leg_rates(traj, users, assoc, alloc, cfg, fading)[served].min())


def sca_trajectory(
    traj_init: Trajectory,
    assoc,
    alloc,
    users: np.ndarray,
    cfg: ScenarioConfig,
    fading: np.ndarray | None = None,
    start_pose=None,
    end_pose=None,
    fixed_h: float | None = None,
) -> tuple[Trajectory, list[float]]:
    """Safeguarded SCA: keep the best true objective, stop on stall/degrade.

    The free surrogate step is tried first.  When it degrades the true
    objective (a frozen LoS regime flipped under the move), the step is
    retried inside a shrinking trust region around the expansion point,
    which localizes the surrogate where its regime assumption holds.
    Convergence uses cfg.sca_tol relative to the running objective.  The
    returned history holds the true min-rate after each accepted iterate
    (index 0 is the initialization).
    """
    cur = traj_init
    cur_true = true_min_rate(cur, users, assoc, alloc, cfg, fading)
    best, best_true = cur, cur_true
    history = [cur_true]
    levels = [None, 1.0, 0.5, 0.25, 0.125]
    level = 0
    for _ in range(cfg.sca_max_iters):
        accepted = None
        while level < len(levels):
            shrink = levels[level]
            trust = None if shrink is None else (cfg.s_xy_max * shrink, cfg.s_h_max * shrink)
            new_traj, _, stalled = solve_trajectory_step(
                cur, assoc, alloc, users, cfg, fading,
                start_pose=start_pose, end_pose=end_pose, fixed_h=fixed_h,
                trust=trust,
            )
            if stalled:
                level += 1
                continue
            new_true = true_min_rate(new_traj, users, assoc, alloc, cfg, fading)
            if new_true >= cur_true * (1.0 - 1e-9) - 1e-12:
                accepted = (new_traj, new_true)
                break
            level += 1
        if accepted is None:
            break
        new_traj, new_true = accepted
        delta = new_true - cur_true
        cur, cur_true = new_traj, new_true
        history.append(cur_true)
        if cur_true > best_true:
            best, best_true = cur, cur_true
        level = max(level - 1, 0)
        if delta <= cfg.sca_tol * max(1.0, cur_true):
            break
    return best, history


def trajectory_to_csv(traj: Trajectory, cfg: ScenarioConfig, path) -> None:
    speeds = traj.speeds(cfg)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y", "H", "speed"])
        for i, (x, y, h) in enumerate(traj.poses):
            writer.writerow([i, f"{x:.9g}", f"{y:.9g}", f"{h:.9g}", f"{speeds[i]:.9g}"])
