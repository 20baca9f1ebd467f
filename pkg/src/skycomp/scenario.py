"""Physical configuration, user mobility and UAV-user geometry.

All quantities are SI internally: watts, meters, seconds. dB / dBm values
only appear at the JSON boundary (:meth:`ScenarioConfig.from_dict`).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError

CONFIG_KEYS = (
    "m", "k", "l", "n_episodes", "episode_duration_s", "altitude_m",
    "tx_power_dbm", "noise_psd_dbm_hz", "bandwidth_hz", "ref_gain_db",
    "uav_speed_max_mps", "user_speed_mps", "arena_m", "seed",
)


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watt_to_dbm(watt):
    return 10.0 * np.log10(watt) + 30.0


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


@dataclass(frozen=True)
class ScenarioConfig:
    """Constants of one scenario.

    ``tx_power`` and ``noise_psd`` are linear (W and W/Hz); ``ref_gain`` is
    the linear channel power gain at 1 m.
    """

    num_uavs: int = 10
    users_per_group: int = 6
    num_groups: int = 3
    num_episodes: int = 10
    episode_duration: float = 0.2
    altitude: float = 100.0
    tx_power: float = float(dbm_to_watt(23.0))
    noise_psd: float = float(dbm_to_watt(-169.0))
    bandwidth: float = 10e6
    ref_gain: float = 1e-4
    uav_speed_max: float = 10.0
    user_speed: float = 15.0
    arena: tuple = (0.0, 500.0, 0.0, 500.0)
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "arena", tuple(float(v) for v in self.arena))
        for name in ("num_uavs", "users_per_group", "num_groups", "num_episodes"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.users_per_group >= self.num_uavs:
            raise ConfigError(
                f"need K < M (K={self.users_per_group}, M={self.num_uavs}): "
                "the rate bounds have M-K in a denominator")
        for name in ("episode_duration", "tx_power", "noise_psd", "bandwidth", "ref_gain"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive")
        if self.altitude < 0:
            raise ConfigError("altitude must be non-negative")
        if self.uav_speed_max < 0 or self.user_speed < 0:
            raise ConfigError("speeds must be non-negative")
        if len(self.arena) != 4:
            raise ConfigError("arena must be [xmin, xmax, ymin, ymax]")
        xmin, xmax, ymin, ymax = self.arena
        if not (xmax > xmin and ymax > ymin):
            raise ConfigError(f"degenerate arena {self.arena}")

    # derived ---------------------------------------------------------------
    @property
    def total_users(self) -> int:
        return self.users_per_group * self.num_groups

    @cached_property
    def noise_power(self) -> float:
        return self.noise_psd * self.bandwidth

    @property
    def displacement(self) -> float:
        """Uniform per-episode UAV displacement budget in meters."""
        return self.uav_speed_max * self.episode_duration

    @property
    def arena_diagonal(self) -> float:
        xmin, xmax, ymin, ymax = self.arena
        return float(np.hypot(xmax - xmin, ymax - ymin))

    def replace(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    # JSON boundary ---------------------------------------------------------
    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        keys = set(doc)
        missing = set(CONFIG_KEYS) - keys
        extra = keys - set(CONFIG_KEYS)
        if missing or extra:
            raise ConfigError(
                f"config keys mismatch: missing={sorted(missing)} unknown={sorted(extra)}")
        try:
            return cls(
                num_uavs=doc["m"],
                users_per_group=doc["k"],
                num_groups=doc["l"],
                num_episodes=doc["n_episodes"],
                episode_duration=float(doc["episode_duration_s"]),
                altitude=float(doc["altitude_m"]),
                tx_power=float(dbm_to_watt(doc["tx_power_dbm"])),
                noise_psd=float(dbm_to_watt(doc["noise_psd_dbm_hz"])),
                bandwidth=float(doc["bandwidth_hz"]),
                ref_gain=float(db_to_linear(doc["ref_gain_db"])),
                uav_speed_max=float(doc["uav_speed_max_mps"]),
                user_speed=float(doc["user_speed_mps"]),
                arena=tuple(doc["arena_m"]),
                rng_seed=int(doc["seed"]),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "ScenarioConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top-level JSON value must be an object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {
            "m": self.num_uavs,
            "k": self.users_per_group,
            "l": self.num_groups,
            "n_episodes": self.num_episodes,
            "episode_duration_s": self.episode_duration,
            "altitude_m": self.altitude,
            "tx_power_dbm": round(float(watt_to_dbm(self.tx_power)), 12),
            "noise_psd_dbm_hz": round(float(watt_to_dbm(self.noise_psd)), 12),
            "bandwidth_hz": self.bandwidth,
            "ref_gain_db": round(float(10 * np.log10(self.ref_gain)), 12),
            "uav_speed_max_mps": self.uav_speed_max,
            "user_speed_mps": self.user_speed,
            "arena_m": list(self.arena),
            "seed": self.rng_seed,
        }

    def digest(self) -> str:
        """Short stable hash of the canonical JSON form."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class EpisodeTracks:
    """Nominal horizontal positions.

    ``users`` has shape (N, L*K, 2); user ``u`` belongs to group ``u // K``.
    ``uavs`` has shape (N, M, 2) or is None before planning.
    """

    users: np.ndarray
    uavs: np.ndarray | None = None
    users_per_group: int = field(default=0)

    def __post_init__(self):
        users = np.array(self.users, dtype=float)
        users.setflags(write=False)
        object.__setattr__(self, "users", users)
        if self.uavs is not None:
            uavs = np.array(self.uavs, dtype=float)
            if uavs.ndim != 3 or uavs.shape[0] != users.shape[0] or uavs.shape[2] != 2:
                raise ConfigError(f"uav track shape {uavs.shape} does not match users {users.shape}")
            uavs.setflags(write=False)
            object.__setattr__(self, "uavs", uavs)
        if self.users_per_group == 0:
            object.__setattr__(self, "users_per_group", users.shape[1])

    @property
    def num_episodes(self) -> int:
        return self.users.shape[0]

    @property
    def num_users(self) -> int:
        return self.users.shape[1]

    def grouped_users(self) -> np.ndarray:
        """Users reshaped to (N, L, K, 2)."""
        n, u, _ = self.users.shape
        k = self.users_per_group
        return self.users.reshape(n, u // k, k, 2)

    def with_uavs(self, uavs) -> "EpisodeTracks":
        return EpisodeTracks(self.users, uavs, self.users_per_group)

    def episodes(self, start, stop=None) -> "EpisodeTracks":
        sl = slice(start, stop if stop is not None else start + 1)
        uavs = None if self.uavs is None else self.uavs[sl]
        return EpisodeTracks(self.users[sl], uavs, self.users_per_group)


def link_distance(uav_xy, user_ab, altitude):
    """3-D distance between UAVs at ``altitude`` and ground users.

    Broadcasts over leading axes; the last axis holds horizontal (x, y).
    """
    if np.any(np.asarray(altitude) < 0):
        raise ValueError("altitude must be non-negative")
    diff = np.asarray(uav_xy, dtype=float) - np.asarray(user_ab, dtype=float)
    return np.sqrt(np.sum(diff * diff, axis=-1) + np.asarray(altitude, dtype=float) ** 2)


def distance_matrix(uavs, users, altitude):
    """Distances with shape (..., M, U) from UAVs (..., M, 2) to users (..., U, 2)."""
    uavs = np.asarray(uavs, dtype=float)
    users = np.asarray(users, dtype=float)
    return link_distance(uavs[..., :, None, :], users[..., None, :, :], altitude)


def displacement_budget(config: ScenarioConfig) -> np.ndarray:
    """Per-(n, m) displacement limit, shape (N-1, M)."""
    n = max(config.num_episodes - 1, 0)
    return np.full((n, config.num_uavs), config.displacement)


def _reflect_heading(pos, heading, step, lo, hi):
    trial = pos + step * heading
    out_lo = trial < lo
    out_hi = trial > hi
    heading = np.where(out_lo | out_hi, -heading, heading)
    return pos + step * heading


def generate_user_tracks(config: ScenarioConfig, rng=None) -> EpisodeTracks:
    """Constant-speed random-direction mobility inside the arena.

    Episode-1 positions are uniform; each later step has length exactly
    ``user_speed * episode_duration`` along a uniform heading. A heading
    component that would leave the arena is mirrored (specular bounce), so
    the step length is preserved.
    """
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(config.rng_seed, spawn_key=(1,)))
    xmin, xmax, ymin, ymax = config.arena
    step = config.user_speed * config.episode_duration
    if step >= min(xmax - xmin, ymax - ymin):
        raise ConfigError(f"arena too small for a {step} m user step")
    lo = np.array([xmin, ymin])
    hi = np.array([xmax, ymax])
    n_users = config.total_users
    users = np.empty((config.num_episodes, n_users, 2))
    users[0] = lo + (hi - lo) * rng.random((n_users, 2))
    for n in range(1, config.num_episodes):
        angle = rng.uniform(0.0, 2 * np.pi, n_users)
        heading = np.stack([np.cos(angle), np.sin(angle)], axis=-1)
        users[n] = np.clip(_reflect_heading(users[n - 1], heading, step, lo, hi), lo, hi)
    return EpisodeTracks(users, None, config.users_per_group)


def uniform_uav_positions(config: ScenarioConfig, rng) -> np.ndarray:
    """M UAV horizontal positions drawn uniformly over the arena."""
    xmin, xmax, ymin, ymax = config.arena
    lo = np.array([xmin, ymin])
    hi = np.array([xmax, ymax])
    return lo + (hi - lo) * rng.random((config.num_uavs, 2))


def random_uav_tracks(config: ScenarioConfig, rng, fraction=0.9) -> np.ndarray:
    """Random UAV trajectories that strictly respect the displacement budget.

    Episode 1 is uniform over the arena; every later step has a uniform
    heading and length ``U(0, fraction) * D`` with the same specular bounce
    as user mobility.
    """
    xmin, xmax, ymin, ymax = config.arena
    lo = np.array([xmin, ymin])
    hi = np.array([xmax, ymax])
    tracks = np.empty((config.num_episodes, config.num_uavs, 2))
    tracks[0] = uniform_uav_positions(config, rng)
    budget = config.displacement
    for n in range(1, config.num_episodes):
        angle = rng.uniform(0.0, 2 * np.pi, config.num_uavs)
        length = fraction * budget * rng.random(config.num_uavs)
        heading = np.stack([np.cos(angle), np.sin(angle)], axis=-1)
        tracks[n] = np.clip(
            _reflect_heading(tracks[n - 1], heading, length[:, None], lo, hi), lo, hi)
    return tracks
