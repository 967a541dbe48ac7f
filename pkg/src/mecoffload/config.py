"""Simulation parameters and their validation."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field


class ConfigError(ValueError):
    """Raised for an invalid or inconsistent configuration."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


@dataclass(frozen=True)
class SimConfig:
    """Physical, traffic and episode parameters of one MEC deployment.

    Defaults reproduce the reference setup: a 10 m x 10 m arena, 100 ms
    intervals, 1 GHz / 500 cycles-per-bit users, 3 GHz / 1000 cycles-per-bit
    servers, 27 dBm transmit cap, 20 MHz shared over FDMA, Poisson(10)
    arrivals of 1 KB tasks.
    """

    num_servers: int = 3
    num_users: int = 5
    area_side: float = 10.0
    interval_duration: float = 0.1
    emax_range: tuple[float, float] = (0.01, 1.0)
    standby_energy: float = 1e-7
    arrival_rate: float = 10.0
    task_size_bits: int = 8000
    user_cpu_hz: float = 1e9
    server_cpu_hz: float = 3e9
    user_cycles_per_bit: float = 500.0
    server_cycles_per_bit: float = 1000.0
    kappa: float = 1e-27
    max_tx_power_watts: float = field(default_factory=lambda: dbm_to_watts(27.0))
    total_bandwidth_hz: float = 20e6
    noise_psd_dbm_hz: float = -174.0
    pathloss_exponent: float = 3.0
    ref_gain_db_at_1m: float = -30.0
    fading_enabled: bool = True
    max_intervals: int = 10_000

    def __post_init__(self):
        # tuples survive YAML/JSON round trips as lists
        object.__setattr__(self, "emax_range", tuple(float(x) for x in self.emax_range))
        self.validate()

    def validate(self) -> None:
        if int(self.num_servers) != self.num_servers or self.num_servers < 1:
            raise ConfigError(f"num_servers must be an integer >= 1, got {self.num_servers!r}")
        if int(self.num_users) != self.num_users or self.num_users < 1:
            raise ConfigError(f"num_users must be an integer >= 1, got {self.num_users!r}")
        if self.num_servers > self.num_users:
            raise ConfigError(
                f"num_servers ({self.num_servers}) exceeds num_users ({self.num_users}); "
                "every server needs at least one associated user"
            )
        positive = (
            "area_side", "interval_duration", "standby_energy", "user_cpu_hz",
            "server_cpu_hz", "user_cycles_per_bit", "server_cycles_per_bit", "kappa",
            "max_tx_power_watts", "total_bandwidth_hz", "pathloss_exponent",
        )
        for name in positive:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be finite and > 0, got {value!r}")
        for name in ("noise_psd_dbm_hz", "ref_gain_db_at_1m"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if len(self.emax_range) != 2:
            raise ConfigError("emax_range must have exactly two entries")
        lo, hi = self.emax_range
        if not (self.standby_energy < lo < hi and math.isfinite(hi)):
            raise ConfigError(
                f"emax_range {self.emax_range} must satisfy standby_energy < low < high"
            )
        if not (math.isfinite(self.arrival_rate) and 0 <= self.arrival_rate <= 500):
            raise ConfigError(f"arrival_rate must lie in [0, 500], got {self.arrival_rate!r}")
        if int(self.task_size_bits) != self.task_size_bits or self.task_size_bits < 1:
            raise ConfigError(f"task_size_bits must be an integer >= 1, got {self.task_size_bits!r}")
        if int(self.max_intervals) != self.max_intervals or self.max_intervals < 1:
            raise ConfigError(f"max_intervals must be an integer >= 1, got {self.max_intervals!r}")
        if not isinstance(self.fading_enabled, bool):
            raise ConfigError("fading_enabled must be a boolean")

    @property
    def noise_psd_watts_hz(self) -> float:
        return dbm_to_watts(self.noise_psd_dbm_hz)

    @property
    def ref_gain_linear(self) -> float:
        return 10.0 ** (self.ref_gain_db_at_1m / 10.0)

    @property
    def bandwidth_per_server(self) -> float:
        return self.total_bandwidth_hz / self.num_servers

    @property
    def server_bit_budget(self) -> int:
        return math.floor(self.interval_duration * self.server_cpu_hz / self.server_cycles_per_bit)

    @property
    def max_pool_size(self) -> int:
        """Largest pool any server can end up with (every server keeps >= 1 user)."""
        return self.num_users - self.num_servers + 1

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["emax_range"] = list(self.emax_range)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown SimConfig key(s): {', '.join(unknown)}")
        return cls(**data)
