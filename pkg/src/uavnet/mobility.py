"""Ground-user mobility: Gauss-Markov track synthesis and track utilities.

Tracks double as simulation truth and as training data for the movement
predictor, so the generator covers history slots and mission slots in one
pass (the caller widens the time window accordingly).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .scenario import ScenarioConfig, ScenarioValidationError


@dataclass(frozen=True)
class GmParams:
    """Gauss-Markov recursion parameters.

    Speed and heading follow s_t = a*s_{t-1} + (1-a)*mean + sqrt(1-a^2)*noise,
    which keeps N(mean, std^2) stationary for any memory level.  Each user's
    heading is pulled toward its own initial heading (rotated by
    mean_heading_drift per slot); boundary reflections fold that pull target
    together with the heading so users do not pile up against walls.
    """

    memory_alpha: float = 0.85
    mean_speed: float = 1.5
    speed_std: float = 0.3
    mean_heading_drift: float = 0.0
    heading_std: float = 0.3
    speed_max: float = 3.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.memory_alpha <= 1.0:
            raise ScenarioValidationError("memory_alpha: must lie in [0, 1]")
        if self.speed_std < 0 or self.heading_std < 0:
            raise ScenarioValidationError("speed_std/heading_std: must be nonnegative")
        if not 0.0 <= self.mean_speed <= self.speed_max:
            raise ScenarioValidationError("mean_speed: must lie in [0, speed_max]")

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "GmParams":
        return cls(
            memory_alpha=cfg.gm_memory_alpha,
            mean_speed=cfg.gm_mean_speed,
            speed_std=cfg.gm_speed_std,
            mean_heading_drift=cfg.gm_mean_heading_drift,
            heading_std=cfg.gm_heading_std,
            speed_max=cfg.gm_speed_max,
        )


@dataclass
class UserTrack:
    """One user's sampled motion: positions plus the kinematics that made them."""

    user_id: int
    positions: np.ndarray  # (L, 2) meters
    speeds: np.ndarray  # (L,) m/s
    headings: np.ndarray  # (L,) radians, unwrapped

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=float)
        self.speeds = np.asarray(self.speeds, dtype=float)
        self.headings = np.asarray(self.headings, dtype=float)
        if not (len(self.positions) == len(self.speeds) == len(self.headings)):
            raise ValueError("positions, speeds, headings must share a length")

    def __len__(self) -> int:
        return len(self.positions)


def _reflect_axis(coord: np.ndarray, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Fold coordinates into [lo, hi]; returns folded values and flip parity."""
    span = hi - lo
    shifted = np.mod(coord - lo, 2.0 * span)
    over = shifted > span
    folded = np.where(over, 2.0 * span - shifted, shifted) + lo
    # parity: odd number of wall hits iff the fold direction changed
    n_half = np.floor_divide(coord - lo, span).astype(int)
    flipped = (n_half % 2) != 0
    return folded, flipped


def generate_tracks(
    cfg: ScenarioConfig,
    gm: GmParams,
    rng: np.random.Generator,
    initial_heading: float | np.ndarray | None = None,
    initial_speed: float | np.ndarray | None = None,
) -> list[UserTrack]:
    """Sample one Gauss-Markov track per user over the configured window."""
    n_steps = cfg.slot_count()
    n = cfg.n_users
    dt = cfg.slot_duration
    (x_lo, x_hi), (y_lo, y_hi) = cfg.area_x_bounds, cfg.area_y_bounds
    alpha = gm.memory_alpha
    noise_gain = np.sqrt(max(0.0, 1.0 - alpha * alpha))

    pos = np.empty((n_steps + 1, n, 2))
    spd = np.empty((n_steps + 1, n))
    hdg = np.empty((n_steps + 1, n))

    pos[0, :, 0] = rng.uniform(x_lo, x_hi, size=n)
    pos[0, :, 1] = rng.uniform(y_lo, y_hi, size=n)
    drawn_speed = np.clip(
        gm.mean_speed + gm.speed_std * rng.standard_normal(n), 0.0, gm.speed_max
    )
    drawn_heading = rng.uniform(0.0, 2.0 * np.pi, size=n)
    spd[0] = drawn_speed if initial_speed is None else np.broadcast_to(initial_speed, (n,))
    hdg[0] = drawn_heading if initial_heading is None else np.broadcast_to(initial_heading, (n,))
    mean_heading = hdg[0].copy()

    for t in range(1, n_steps + 1):
        z_s = rng.standard_normal(n)
        z_h = rng.standard_normal(n)
        spd[t] = np.clip(
            alpha * spd[t - 1]
            + (1.0 - alpha) * gm.mean_speed
            + noise_gain * gm.speed_std * z_s,
            0.0,
            gm.speed_max,
        )
        mean_heading = mean_heading + gm.mean_heading_drift
        theta = (
            alpha * hdg[t - 1]
            + (1.0 - alpha) * mean_heading
            + noise_gain * gm.heading_std * z_h
        )
        step = spd[t][:, None] * dt * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        raw = pos[t - 1] + step

        fx, flip_x = _reflect_axis(raw[:, 0], x_lo, x_hi)
        fy, flip_y = _reflect_axis(raw[:, 1], y_lo, y_hi)
        pos[t, :, 0] = fx
        pos[t, :, 1] = fy
        theta = np.where(flip_x, np.pi - theta, theta)
        mean_heading = np.where(flip_x, np.pi - mean_heading, mean_heading)
        theta = np.where(flip_y, -theta, theta)
        mean_heading = np.where(flip_y, -mean_heading, mean_heading)
        hdg[t] = theta

    return [
        UserTrack(user_id=i, positions=pos[:, i].copy(), speeds=spd[:, i].copy(),
                  headings=hdg[:, i].copy())
        for i in range(n)
    ]


def split_history_future(track: UserTrack, split_slot: int) -> tuple[UserTrack, UserTrack]:
    """History covers slots [0, split_slot]; future covers the rest."""
    n_steps = len(track) - 1
    if not 0 < split_slot < n_steps:
        raise ValueError(f"split_slot must lie strictly inside (0, {n_steps})")
    cut = split_slot + 1
    history = UserTrack(track.user_id, track.positions[:cut], track.speeds[:cut],
                        track.headings[:cut])
    future = UserTrack(track.user_id, track.positions[cut:], track.speeds[cut:],
                       track.headings[cut:])
    return history, future


def tracks_to_csv(tracks: list[UserTrack], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "slot", "x", "y"])
        for track in tracks:
            for slot, (x, y) in enumerate(track.positions):
                writer.writerow([track.user_id, slot, f"{x:.9g}", f"{y:.9g}"])


def tracks_from_csv(path) -> list[UserTrack]:
    """Rebuild tracks from a position dump; kinematics are re-derived per slot."""
    by_user: dict[int, list[tuple[int, float, float]]] = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            by_user.setdefault(int(row["user_id"]), []).append(
                (int(row["slot"]), float(row["x"]), float(row["y"]))
            )
    tracks = []
    for user_id in sorted(by_user):
        rows = sorted(by_user[user_id])
        positions = np.array([[x, y] for _, x, y in rows])
        steps = np.diff(positions, axis=0)
        speeds = np.concatenate([[0.0], np.hypot(steps[:, 0], steps[:, 1])])
        headings = np.concatenate([[0.0], np.arctan2(steps[:, 1], steps[:, 0])])
        tracks.append(UserTrack(user_id, positions, speeds, headings))
    return tracks
