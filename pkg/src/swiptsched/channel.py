"""Channel model for a downlink multiuser system with RF energy harvesting.

One access point serves N single-antenna user terminals over block-fading
channels.  In every slot the channel power gain of user n is

    h_n = omega_n * e_n,

where omega_n is the mean gain set by distance-dependent path loss plus
antenna gains, and e_n is unit-mean exponential (Rayleigh amplitude
fading, independent across users and slots).  From the gain we derive

    capacity   C_n = log2(1 + P * h_n / sigma_n^2)   [bits/channel use]
    harvest    Q_n = xi_n * P * h_n                  [Watts]

where P is the transmit power, sigma_n^2 the receiver noise power and
xi_n the RF-to-DC conversion efficiency.  Slots are unit length, so
harvested power and harvested energy coincide.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299792458.0


class ConfigError(ValueError):
    """Invalid or unreadable system configuration."""


def dbm_to_watts(x: float) -> float:
    """Convert a power level in dBm to Watts."""
    return 10.0 ** ((x - 30.0) / 10.0)


@dataclass
class SystemConfig:
    """Physical and simulation parameters.

    Defaults correspond to a 915 MHz microwave-powered deployment:
    10 W transmit power, -62 dBm receiver noise, 0.5 conversion
    efficiency, path-loss exponent 3.6 between a 2 m reference distance
    and a 100 m maximum service distance, 10 dBi / 2 dBi antenna gains.

    ``noise_power_per_user`` and ``rf_dc_efficiency_per_user`` accept a
    scalar (applied to every user) or a sequence of length ``n_users``.
    ``bandwidth_hz`` is reporting metadata only: rates are computed in
    bits/channel-use and can be scaled to bits/s on output.
    """

    n_users: int
    tx_power: float = 10.0
    noise_power_per_user: float | Sequence[float] = dbm_to_watts(-62.0)
    rf_dc_efficiency_per_user: float | Sequence[float] = 0.5
    path_loss_exponent: float = 3.6
    ref_distance_m: float = 2.0
    max_distance_m: float = 100.0
    ap_antenna_gain_dbi: float = 10.0
    ut_antenna_gain_dbi: float = 2.0
    carrier_hz: float = 915e6
    q_req: float = 0.0
    n_slots: int = 100_000
    seed: int = 1
    bandwidth_hz: float = 200e3

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.n_users < 1:
            raise ConfigError("n_users must be at least 1")
        if self.tx_power <= 0:
            raise ConfigError("tx_power must be positive")
        if np.any(self.noise_powers() <= 0):
            raise ConfigError("noise power must be positive")
        xi = self.efficiencies()
        if np.any(xi < 0) or np.any(xi > 1):
            raise ConfigError("rf_dc_efficiency_per_user must lie in [0, 1]")
        if self.ref_distance_m <= 0:
            raise ConfigError("ref_distance_m must be positive")
        # Equal reference and maximum distance is allowed: it pins every
        # user to the reference ring.
        if self.max_distance_m < self.ref_distance_m:
            raise ConfigError("max_distance_m must be >= ref_distance_m")
        if self.path_loss_exponent < 0:
            raise ConfigError("path_loss_exponent must be nonnegative")
        if self.carrier_hz <= 0:
            raise ConfigError("carrier_hz must be positive")
        if self.q_req < 0:
            raise ConfigError("q_req must be nonnegative")
        if self.n_slots < 1:
            raise ConfigError("n_slots must be at least 1")
        if self.bandwidth_hz <= 0:
            raise ConfigError("bandwidth_hz must be positive")

    def _per_user(self, value: float | Sequence[float], name: str) -> np.ndarray:
        arr = np.atleast_1d(np.asarray(value, dtype=float))
        if arr.size == 1:
            return np.full(self.n_users, float(arr[0]))
        if arr.size != self.n_users:
            raise ConfigError(f"{name} must be a scalar or have length n_users={self.n_users}")
        return arr.astype(float)

    def noise_powers(self) -> np.ndarray:
        """Per-user noise power sigma_n^2 in Watts, shape (n_users,)."""
        return self._per_user(self.noise_power_per_user, "noise_power_per_user")

    def efficiencies(self) -> np.ndarray:
        """Per-user RF-to-DC conversion efficiency xi_n, shape (n_users,)."""
        return self._per_user(self.rf_dc_efficiency_per_user, "rf_dc_efficiency_per_user")


@dataclass
class UserProfile:
    """Static per-user parameters fixed for a whole simulation run."""

    distance_m: float
    mean_gain: float
    efficiency: float
    noise_power: float


@dataclass
class SlotRealization:
    """Channel state of one time slot across all users."""

    slot_index: int
    gains: np.ndarray
    capacities: np.ndarray
    harvests: np.ndarray


@dataclass
class SlotBlock:
    """Channel state of a contiguous block of slots, one row per slot."""

    gains: np.ndarray
    capacities: np.ndarray
    harvests: np.ndarray

    @property
    def n_slots(self) -> int:
        return self.gains.shape[0]

    @property
    def n_users(self) -> int:
        return self.gains.shape[1]

    def slot(self, i: int, slot_index: int | None = None) -> SlotRealization:
        """Extract row ``i`` as a single-slot realization."""
        return SlotRealization(
            slot_index=i if slot_index is None else slot_index,
            gains=self.gains[i],
            capacities=self.capacities[i],
            harvests=self.harvests[i],
        )


def mean_channel_gain(distance_m: float, config: SystemConfig) -> float:
    """Mean channel power gain omega at the given distance.

    Free-space gain at the reference distance d0, then a d^-alpha
    power law:

        omega(d) = G_ap * G_ut * (lambda / (4 pi d0))^2 * (d0 / d)^alpha

    with antenna gains converted from dBi.  Distances inside the
    reference distance are outside the model's validity region.
    """
    if distance_m < config.ref_distance_m:
        raise ValueError(
            f"distance {distance_m} m is below the reference distance "
            f"{config.ref_distance_m} m"
        )
    wavelength = SPEED_OF_LIGHT / config.carrier_hz
    gains_lin = 10.0 ** ((config.ap_antenna_gain_dbi + config.ut_antenna_gain_dbi) / 10.0)
    d0 = config.ref_distance_m
    ref_gain = gains_lin * (wavelength / (4.0 * math.pi * d0)) ** 2
    return ref_gain * (d0 / distance_m) ** config.path_loss_exponent


def place_users(config: SystemConfig, rng: np.random.Generator) -> list[UserProfile]:
    """Draw user distances uniformly on [ref_distance, max_distance].

    Placements are fully determined by the generator state, so a fixed
    seed reproduces the same geometry.
    """
    distances = rng.uniform(config.ref_distance_m, config.max_distance_m, config.n_users)
    noise = config.noise_powers()
    xi = config.efficiencies()
    return [
        UserProfile(
            distance_m=float(d),
            mean_gain=mean_channel_gain(float(d), config),
            efficiency=float(xi[n]),
            noise_power=float(noise[n]),
        )
        for n, d in enumerate(distances)
    ]


def profile_arrays(profiles: Sequence[UserProfile]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack per-user (mean_gain, efficiency, noise_power) into arrays."""
    omega = np.array([p.mean_gain for p in profiles])
    xi = np.array([p.efficiency for p in profiles])
    sigma2 = np.array([p.noise_power for p in profiles])
    return omega, xi, sigma2


def _derive(gains: np.ndarray, tx_power: float, xi: np.ndarray, sigma2: np.ndarray
            ) -> tuple[np.ndarray, np.ndarray]:
    capacities = np.log2(1.0 + tx_power * gains / sigma2)
    harvests = xi * tx_power * gains
    return capacities, harvests


def draw_block(
    profiles: Sequence[UserProfile],
    config: SystemConfig,
    rng: np.random.Generator,
    n_slots: int,
) -> SlotBlock:
    """Draw ``n_slots`` independent fading slots for all users at once.

    The exponential variates are consumed from ``rng`` in slot-major
    order, so drawing one block of T slots and drawing T single slots
    from the same generator state produce identical realizations.
    """
    if not profiles:
        raise ValueError("profiles must be non-empty")
    omega, xi, sigma2 = profile_arrays(profiles)
    gains = omega * rng.standard_exponential((n_slots, len(profiles)))
    capacities, harvests = _derive(gains, config.tx_power, xi, sigma2)
    return SlotBlock(gains=gains, capacities=capacities, harvests=harvests)


def draw_slot(
    profiles: Sequence[UserProfile],
    config: SystemConfig,
    rng: np.random.Generator,
    slot_index: int = 0,
) -> SlotRealization:
    """Draw the channel state of a single slot."""
    block = draw_block(profiles, config, rng, 1)
    return block.slot(0, slot_index=slot_index)


# Keys accepted in configuration files, with the units used.
_CONFIG_KEYS = {
    "n_users": "count",
    "tx_power": "Watts",
    "noise_power_per_user": "Watts (scalar or list)",
    "rf_dc_efficiency_per_user": "fraction in [0,1] (scalar or list)",
    "path_loss_exponent": "dimensionless",
    "ref_distance_m": "meters",
    "max_distance_m": "meters",
    "ap_antenna_gain_dbi": "dBi",
    "ut_antenna_gain_dbi": "dBi",
    "carrier_hz": "Hertz",
    "q_req": "Watts",
    "n_slots": "count",
    "seed": "integer",
    "bandwidth_hz": "Hertz",
}
_DBM_KEYS = {
    "tx_power_dbm": "tx_power",
    "noise_power_per_user_dbm": "noise_power_per_user",
}
_INT_KEYS = {"n_users", "n_slots", "seed"}


def _parse_scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        raise ConfigError(f"cannot parse config value: {text!r}") from None


def _parse_keyvalue(text: str) -> dict:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno} is not 'key = value': {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if "," in val and not val.startswith("["):
            values[key] = [_parse_scalar(v.strip()) for v in val.split(",")]
        else:
            values[key] = _parse_scalar(val)
    return values


def load_config(path: str | Path) -> SystemConfig:
    """Load a SystemConfig from a flat key-value or JSON file.

    Keys match the SystemConfig field names.  Powers may be given in
    dBm via the suffixed keys ``tx_power_dbm`` and
    ``noise_power_per_user_dbm``; the plain keys take Watts.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            values = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config {path}: {exc}") from exc
    else:
        values = _parse_keyvalue(text)

    fields: dict = {}
    for key, value in values.items():
        if key in _DBM_KEYS:
            target = _DBM_KEYS[key]
            if target in values:
                raise ConfigError(f"both {key} and {target} given")
            if isinstance(value, list):
                fields[target] = [dbm_to_watts(float(v)) for v in value]
            else:
                fields[target] = dbm_to_watts(float(value))
        elif key in _CONFIG_KEYS:
            fields[key] = int(value) if key in _INT_KEYS else value
        else:
            raise ConfigError(f"unknown config key: {key!r}")
    if "n_users" not in fields:
        raise ConfigError("config must set n_users")
    try:
        return SystemConfig(**fields)
    except TypeError as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def config_to_dict(config: SystemConfig) -> dict:
    """Flat dict of config fields, with per-user values as lists."""
    out = {}
    for key in _CONFIG_KEYS:
        value = getattr(config, key)
        if isinstance(value, np.ndarray):
            value = value.tolist()
        out[key] = value
    return out
