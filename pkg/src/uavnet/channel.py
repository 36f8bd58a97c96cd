"""Air-to-ground link model: probabilistic LoS, path loss, MRT gain, rate.

Everything is linear SI.  The LoS/NLoS excess factor switches hard at the
configured probability threshold; maximum-ratio transmission collapses the
M-antenna channel to its squared norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import SPEED_OF_LIGHT, ScenarioConfig

LOS = "los"
NLOS = "nlos"


@dataclass(frozen=True)
class LinkGeometry:
    horizontal_dist: float
    dist_3d: float
    elevation_deg: float


@dataclass(frozen=True)
class LinkBudget:
    p_los: float
    path_loss: float
    gain: float
    regime: str


def _pose_xyz(pose) -> np.ndarray:
    if hasattr(pose, "as_array"):
        return pose.as_array()
    return np.asarray(pose, dtype=float)


def geometry(pose, user_pos) -> LinkGeometry:
    """Horizontal range, slant range, and elevation angle of one link."""
    xyz = _pose_xyz(pose)
    q = np.asarray(user_pos, dtype=float)
    horizontal = float(np.hypot(xyz[0] - q[0], xyz[1] - q[1]))
    dist = float(np.hypot(horizontal, xyz[2]))
    elevation = float(np.degrees(np.arcsin(xyz[2] / dist))) if dist > 0 else 90.0
    return LinkGeometry(horizontal_dist=horizontal, dist_3d=dist, elevation_deg=elevation)


def los_probability(elevation_deg, b1: float, b2: float):
    """Sigmoid LoS probability 1 / (1 + b1 exp(-b2 (theta - b1)))."""
    theta = np.asarray(elevation_deg, dtype=float)
    out = 1.0 / (1.0 + b1 * np.exp(-b2 * (theta - b1)))
    return float(out) if out.ndim == 0 else out


def path_loss(dist_3d, carrier_freq: float, eta):
    """Free-space square law scaled by the LoS/NLoS excess factor."""
    return eta * (4.0 * np.pi * carrier_freq * np.asarray(dist_3d) / SPEED_OF_LIGHT) ** 2


def effective_gain(geom: LinkGeometry, cfg: ScenarioConfig, fading: np.ndarray) -> LinkBudget:
    """Channel gain after MRT for one link: ||h||^2 over the regime path loss."""
    p_los = los_probability(geom.elevation_deg, cfg.los_b1, cfg.los_b2)
    regime = LOS if p_los >= cfg.los_threshold else NLOS
    eta = cfg.eta_los if regime == LOS else cfg.eta_nlos
    pl = float(path_loss(geom.dist_3d, cfg.carrier_freq, eta))
    h2 = float(np.sum(np.abs(np.asarray(fading)) ** 2))
    return LinkBudget(p_los=p_los, path_loss=pl, gain=h2 / pl, regime=regime)


def rate(b, p, gain, cfg: ScenarioConfig):
    """Eq.-style slot rate b log2(1 + p g / (b N_o)); zero bandwidth gives 0."""
    b = np.asarray(b, dtype=float)
    p = np.asarray(p, dtype=float)
    gain = np.asarray(gain, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        snr = np.where(b > 0.0, p * gain / (b * cfg.noise_psd + (b <= 0.0)), 0.0)
        out = np.where(b > 0.0, b * np.log2(1.0 + snr), 0.0)
    return float(out) if out.ndim == 0 else out


def draw_fading(rng: np.random.Generator, antennas: int, size=None) -> np.ndarray:
    """i.i.d. zero-mean unit-variance complex Gaussian entries."""
    shape = (antennas,) if size is None else tuple(np.atleast_1d(size)) + (antennas,)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / np.sqrt(2.0)


def fading_power_table(rng: np.random.Generator, n_users: int, n_slots: int,
                       antennas: int) -> np.ndarray:
    """||h||^2 per (user, slot); drawn once per mission, shared by all schemes."""
    h = draw_fading(rng, antennas, size=(n_users, n_slots))
    return np.sum(np.abs(h) ** 2, axis=-1)


@dataclass
class LinkTable:
    """Vectorized per-(user, slot) link quantities along a trajectory leg."""

    dist_3d: np.ndarray  # (N, T)
    elevation_deg: np.ndarray
    p_los: np.ndarray
    los_mask: np.ndarray  # True where the LoS regime applies
    path_loss: np.ndarray
    gain: np.ndarray


def link_table(traj_xyz: np.ndarray, user_xy: np.ndarray, cfg: ScenarioConfig,
               fading_power: np.ndarray) -> LinkTable:
    """Build per-slot link budgets for all users against a (T, 3) trajectory.

    user_xy may be (N, 2) for frozen positions or (N, T, 2) for per-slot ones.
    fading_power is ||h||^2 with shape (N, T) or broadcastable to it.
    """
    traj_xyz = np.asarray(traj_xyz, dtype=float)
    user_xy = np.asarray(user_xy, dtype=float)
    n_slots = traj_xyz.shape[0]
    if user_xy.ndim == 2:
        user_xy = np.broadcast_to(user_xy[:, None, :], (user_xy.shape[0], n_slots, 2))
    dx = traj_xyz[None, :, 0] - user_xy[:, :, 0]
    dy = traj_xyz[None, :, 1] - user_xy[:, :, 1]
    horizontal = np.hypot(dx, dy)
    dist = np.hypot(horizontal, traj_xyz[None, :, 2])
    elevation = np.degrees(np.arcsin(np.clip(traj_xyz[None, :, 2] / dist, -1.0, 1.0)))
    p_los = los_probability(elevation, cfg.los_b1, cfg.los_b2)
    los_mask = p_los >= cfg.los_threshold
    eta = np.where(los_mask, cfg.eta_los, cfg.eta_nlos)
    pl = path_loss(dist, cfg.carrier_freq, eta)
    gain = np.broadcast_to(np.asarray(fading_power, dtype=float), pl.shape) / pl
    return LinkTable(dist_3d=dist, elevation_deg=elevation, p_los=p_los,
                     los_mask=los_mask, path_loss=pl, gain=gain)


def average_rates(assoc: np.ndarray, bw: np.ndarray, power: np.ndarray,
                  gain: np.ndarray, cfg: ScenarioConfig, serve_slots: int) -> np.ndarray:
    """Per-user average rate over a leg: (1/T_l) sum_t j b log2(1 + p g/(b N_o))."""
    slot_rates = rate(bw, power, gain, cfg) * (np.asarray(assoc) > 0)
    return np.asarray(slot_rates).sum(axis=1) / float(serve_slots)
