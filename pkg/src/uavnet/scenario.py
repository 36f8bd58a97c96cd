"""Scenario configuration: file loading, validation, units, and seeded randomness.

All internal quantities are linear SI (watts, Hz, meters, seconds).  dBm values
are accepted in scenario files through ``*_dbm`` key variants and converted on
load; nothing downstream ever sees a decibel.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 3.0e8  # m/s


class ScenarioFormatError(ValueError):
    """Scenario file does not parse (bad syntax, unknown key, bad literal)."""


class ScenarioValidationError(ValueError):
    """Parsed values violate a configuration invariant."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * np.log10(watts) + 30.0


@dataclass(frozen=True)
class ScenarioConfig:
    """Full experiment description; immutable and shareable after load."""

    # service area and altitude corridor [m]
    area_x_bounds: tuple[float, float]
    area_y_bounds: tuple[float, float]
    altitude_bounds: tuple[float, float]
    # population and mission timing
    n_users: int
    total_flight_time: float  # s
    slot_duration: float  # s
    # per-slot UAV displacement caps [m]
    s_xy_max: float
    s_h_max: float
    # radio resources (linear units)
    p_total_max: float  # W, shared transmit budget per slot
    p_user_max: float  # W, per-user cap
    b_total_max: float  # Hz, shared bandwidth
    carrier_freq: float  # Hz
    noise_psd: float  # W/Hz
    antennas: int
    qos_bits: float  # bits each user must accumulate while connected
    # probabilistic LoS model
    los_b1: float = 9.61
    los_b2: float = 0.16  # per degree
    los_threshold: float = 0.8
    eta_los: float = 1.0
    eta_nlos: float = 20.0
    # reproducibility and solver loop knobs
    rng_seed: int = 0
    sca_tol: float = 1e-3
    sca_max_iters: int = 15
    # ground mobility (Gauss-Markov); see mobility.GmParams
    gm_memory_alpha: float = 0.85
    gm_mean_speed: float = 1.5
    gm_speed_std: float = 0.3
    gm_mean_heading_drift: float = 0.0
    gm_heading_std: float = 0.3
    gm_speed_max: float = 3.0
    # pre-mission slots used to fit the movement predictor
    history_slots: int = 1200
    capacity_mc_samples: int = 4096
    # optional overrides for the measured per-cluster service capacity
    tau_slots: int | None = None
    c_max_users: int | None = None
    # optional launch pose; default is the area center at mid-altitude
    uav_start: tuple[float, float, float] | None = None

    def slot_count(self) -> int:
        """Number of mission slots T/delta; errors if not integral."""
        ratio = self.total_flight_time / self.slot_duration
        count = round(ratio)
        if abs(ratio - count) > 1e-9 * max(1.0, ratio):
            raise ScenarioValidationError(
                f"total_flight_time/slot_duration = {ratio} is not integral"
            )
        return count

    def start_pose(self) -> tuple[float, float, float]:
        if self.uav_start is not None:
            return self.uav_start
        return (
            0.5 * (self.area_x_bounds[0] + self.area_x_bounds[1]),
            0.5 * (self.area_y_bounds[0] + self.area_y_bounds[1]),
            0.5 * (self.altitude_bounds[0] + self.altitude_bounds[1]),
        )

    def area_center(self) -> np.ndarray:
        return np.array(
            [
                0.5 * (self.area_x_bounds[0] + self.area_x_bounds[1]),
                0.5 * (self.area_y_bounds[0] + self.area_y_bounds[1]),
            ]
        )


@dataclass(frozen=True)
class UavPose:
    """UAV position in one slot: horizontal coordinates plus altitude."""

    xy: tuple[float, float]
    h: float

    def as_array(self) -> np.ndarray:
        return np.array([self.xy[0], self.xy[1], self.h])


@dataclass(frozen=True)
class SlotIndex:
    """Position of a slot inside the mission: service round and slot within it."""

    cluster: int
    slot: int


def seeded_rng(seed: int, *subkey: int) -> np.random.Generator:
    """Deterministic stream; extra integer keys derive independent substreams."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(subkey)))


# scenario file schema: field name -> (parser, required)
def _parse_int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"expected integer, got {text}")
    return int(value)


def _parse_float(text: str) -> float:
    return float(text)


_SCALAR_KEYS: dict[str, type] = {
    "area_x_min": float,
    "area_x_max": float,
    "area_y_min": float,
    "area_y_max": float,
    "altitude_min": float,
    "altitude_max": float,
    "n_users": int,
    "total_flight_time": float,
    "slot_duration": float,
    "s_xy_max": float,
    "s_h_max": float,
    "p_total_max": float,
    "p_total_max_dbm": float,
    "p_user_max": float,
    "p_user_max_dbm": float,
    "b_total_max": float,
    "carrier_freq": float,
    "noise_psd": float,
    "noise_psd_dbm_hz": float,
    "antennas": int,
    "qos_bits": float,
    "los_b1": float,
    "los_b2": float,
    "los_threshold": float,
    "eta_los": float,
    "eta_nlos": float,
    "rng_seed": int,
    "sca_tol": float,
    "sca_max_iters": int,
    "gm_memory_alpha": float,
    "gm_mean_speed": float,
    "gm_speed_std": float,
    "gm_mean_heading_drift": float,
    "gm_heading_std": float,
    "gm_speed_max": float,
    "history_slots": int,
    "capacity_mc_samples": int,
    "tau_slots": int,
    "c_max_users": int,
    "uav_start_x": float,
    "uav_start_y": float,
    "uav_start_h": float,
}

_REQUIRED = (
    "area_x_min",
    "area_x_max",
    "area_y_min",
    "area_y_max",
    "altitude_min",
    "altitude_max",
    "n_users",
    "total_flight_time",
    "slot_duration",
    "s_xy_max",
    "s_h_max",
    "b_total_max",
    "carrier_freq",
    "antennas",
    "qos_bits",
)

# exactly one of each pair must appear
_EITHER = (
    ("p_total_max", "p_total_max_dbm"),
    ("p_user_max", "p_user_max_dbm"),
    ("noise_psd", "noise_psd_dbm_hz"),
)


def parse_scenario_text(text: str, origin: str = "<string>") -> ScenarioConfig:
    """Parse `key = value` lines; `#` starts a comment; blank lines ignored."""
    raw: dict[str, float | int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ScenarioFormatError(f"{origin}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _SCALAR_KEYS:
            raise ScenarioFormatError(f"{origin}:{lineno}: unknown key {key!r}")
        if key in raw:
            raise ScenarioFormatError(f"{origin}:{lineno}: duplicate key {key!r}")
        parser = _parse_int if _SCALAR_KEYS[key] is int else _parse_float
        try:
            raw[key] = parser(value)
        except ValueError as exc:
            raise ScenarioFormatError(f"{origin}:{lineno}: bad value for {key!r}: {exc}") from None

    missing = [k for k in _REQUIRED if k not in raw]
    if missing:
        raise ScenarioFormatError(f"{origin}: missing required keys: {', '.join(missing)}")
    for linear_key, dbm_key in _EITHER:
        if linear_key in raw and dbm_key in raw:
            raise ScenarioFormatError(f"{origin}: give {linear_key!r} or {dbm_key!r}, not both")
        if linear_key not in raw and dbm_key not in raw:
            raise ScenarioFormatError(f"{origin}: one of {linear_key!r} / {dbm_key!r} is required")
        if dbm_key in raw:
            raw[linear_key] = dbm_to_watts(raw.pop(dbm_key))

    start_keys = [k for k in ("uav_start_x", "uav_start_y", "uav_start_h") if k in raw]
    if start_keys and len(start_keys) != 3:
        raise ScenarioFormatError(f"{origin}: uav_start_x/y/h must be given together")

    kwargs: dict = {
        "area_x_bounds": (raw.pop("area_x_min"), raw.pop("area_x_max")),
        "area_y_bounds": (raw.pop("area_y_min"), raw.pop("area_y_max")),
        "altitude_bounds": (raw.pop("altitude_min"), raw.pop("altitude_max")),
    }
    if start_keys:
        kwargs["uav_start"] = (
            raw.pop("uav_start_x"),
            raw.pop("uav_start_y"),
            raw.pop("uav_start_h"),
        )
    kwargs.update(raw)
    cfg = ScenarioConfig(**kwargs)
    validate_scenario(cfg)
    return cfg


def load_scenario(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario_text(fh.read(), origin=str(path))


def validate_scenario(cfg: ScenarioConfig) -> None:
    """Raise ScenarioValidationError naming the first violated field."""

    def require(ok: bool, field: str, why: str) -> None:
        if not ok:
            raise ScenarioValidationError(f"{field}: {why}")

    for name, (lo, hi) in (
        ("area_x_bounds", cfg.area_x_bounds),
        ("area_y_bounds", cfg.area_y_bounds),
        ("altitude_bounds", cfg.altitude_bounds),
    ):
        require(np.isfinite(lo) and np.isfinite(hi), name, "bounds must be finite")
        require(lo < hi, name, f"lower bound {lo} must be strictly below upper bound {hi}")
    require(cfg.n_users >= 1, "n_users", "need at least one user")
    require(cfg.antennas >= 1, "antennas", "need at least one antenna")
    require(cfg.slot_duration > 0, "slot_duration", "must be positive")
    require(
        cfg.total_flight_time >= cfg.slot_duration,
        "total_flight_time",
        "must cover at least one slot",
    )
    require(cfg.s_xy_max > 0, "s_xy_max", "must be positive")
    require(cfg.s_h_max > 0, "s_h_max", "must be positive")
    require(cfg.p_total_max > 0, "p_total_max", "must be positive")
    require(cfg.p_user_max > 0, "p_user_max", "must be positive")
    require(
        cfg.p_user_max <= cfg.p_total_max,
        "p_user_max",
        "per-user cap cannot exceed the total power budget",
    )
    require(cfg.b_total_max > 0, "b_total_max", "must be positive")
    require(cfg.carrier_freq > 0, "carrier_freq", "must be positive")
    require(cfg.noise_psd > 0, "noise_psd", "must be positive")
    require(cfg.qos_bits >= 0, "qos_bits", "must be nonnegative")
    require(0 < cfg.los_threshold < 1, "los_threshold", "must lie strictly inside (0, 1)")
    require(cfg.eta_los > 0, "eta_los", "must be positive")
    require(
        cfg.eta_los <= cfg.eta_nlos,
        "eta_nlos",
        "NLoS attenuation cannot be milder than LoS",
    )
    require(cfg.sca_tol > 0, "sca_tol", "must be positive")
    require(cfg.sca_max_iters >= 1, "sca_max_iters", "need at least one iteration")
    require(0 <= cfg.gm_memory_alpha <= 1, "gm_memory_alpha", "must lie in [0, 1]")
    require(cfg.gm_mean_speed >= 0, "gm_mean_speed", "must be nonnegative")
    require(cfg.gm_speed_std >= 0, "gm_speed_std", "must be nonnegative")
    require(cfg.gm_heading_std >= 0, "gm_heading_std", "must be nonnegative")
    require(
        cfg.gm_speed_max >= cfg.gm_mean_speed,
        "gm_speed_max",
        "speed cap below the mean speed",
    )
    require(cfg.history_slots >= 3, "history_slots", "predictor needs at least 3 history slots")
    require(cfg.capacity_mc_samples >= 1, "capacity_mc_samples", "must be positive")
    if cfg.tau_slots is not None:
        require(cfg.tau_slots >= 1, "tau_slots", "must be at least one slot")
    if cfg.c_max_users is not None:
        require(cfg.c_max_users >= 1, "c_max_users", "must be at least one user")
    if cfg.uav_start is not None:
        x, y, h = cfg.uav_start
        require(
            cfg.area_x_bounds[0] <= x <= cfg.area_x_bounds[1]
            and cfg.area_y_bounds[0] <= y <= cfg.area_y_bounds[1],
            "uav_start",
            "launch point outside the service area",
        )
        require(
            cfg.altitude_bounds[0] <= h <= cfg.altitude_bounds[1],
            "uav_start",
            "launch altitude outside the corridor",
        )
    cfg.slot_count()


def serialize_scenario(cfg: ScenarioConfig) -> str:
    """Canonical text form; parse_scenario_text(serialize_scenario(c)) == c."""
    lines = ["# uavnet scenario (canonical form, linear SI units)"]

    def emit(key: str, value) -> None:
        lines.append(f"{key} = {value!r}")

    emit("area_x_min", cfg.area_x_bounds[0])
    emit("area_x_max", cfg.area_x_bounds[1])
    emit("area_y_min", cfg.area_y_bounds[0])
    emit("area_y_max", cfg.area_y_bounds[1])
    emit("altitude_min", cfg.altitude_bounds[0])
    emit("altitude_max", cfg.altitude_bounds[1])
    for field in dataclasses.fields(ScenarioConfig):
        if field.name in ("area_x_bounds", "area_y_bounds", "altitude_bounds", "uav_start"):
            continue
        value = getattr(cfg, field.name)
        if value is None:  # optional overrides are expressed by omission
            continue
        emit(field.name, value)
    if cfg.uav_start is not None:
        emit("uav_start_x", cfg.uav_start[0])
        emit("uav_start_y", cfg.uav_start[1])
        emit("uav_start_h", cfg.uav_start[2])
    return "\n".join(lines) + "\n"


def save_scenario(cfg: ScenarioConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_scenario(cfg))
