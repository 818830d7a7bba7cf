from dataclasses import dataclass, field

import numpy as np

from msct.errors import ConfigError

# the daily trend repeats every 360 steps (12 steps of 30 per "hour")
DAY_STEPS = 360


@dataclass
class DgpConfig:
    """Generative parameters of the synthetic post-crash speed process.

    ``amp`` is the amplitude of the daily speed dip; ``omega`` the covariate
    window driving crash assignment (the degree of time-varying confounding).
    ``speed_floor`` is the lowest speed a step may produce; strong covariate
    shocks stacked on a severe crash would otherwise drive speed negative.
    """

    beta1: float = 0.1
    beta2_menu: tuple[float, ...] = (0.2, 0.4, 0.8)
    p_c: tuple[float, ...] = (0.6, 0.3, 0.1)
    psi: float = 80.0
    mu: float = 6.0
    sigma: float = 1.0
    amp: float = 80.0
    omega: int = 5
    crash_percentile: float = 90.0
    eps_std: float = 0.05
    seq_len: int = 60
    impact_duration: int = 5
    tau_max: int = 5
    seed: int = 0
    assignment_noise_std: float = 0.0
    confounded: bool = True
    speed_floor: float = 1.0

    def __post_init__(self):
        self.beta2_menu = tuple(float(b) for b in self.beta2_menu)
        self.p_c = tuple(float(p) for p in self.p_c)
        if len(self.beta2_menu) != len(self.p_c):
            raise ConfigError("dgp.p_c", "needs one probability per beta2_menu entry")
        if not np.isclose(sum(self.p_c), 1.0, atol=1e-9) or min(self.p_c) < 0:
            raise ConfigError("dgp.p_c", f"must be a probability vector, got {self.p_c}")
        if min(self.beta2_menu) <= 0:
            raise ConfigError("dgp.beta2_menu", "crash effects must be positive")
        if self.sigma <= 0:
            raise ConfigError("dgp.sigma", "must be positive")
        if self.omega < 1:
            raise ConfigError("dgp.omega", "window must be >= 1")
        if not 0 < self.crash_percentile <= 100:
            raise ConfigError("dgp.crash_percentile", "must lie in (0, 100]")
        if self.eps_std < 0 or self.assignment_noise_std < 0:
            raise ConfigError("dgp.eps_std", "noise scales must be non-negative")
        if self.speed_floor <= 0:
            raise ConfigError("dgp.speed_floor", "must be positive")
        if self.impact_duration < 1:
            raise ConfigError("dgp.impact_duration", "must be >= 1")
        if self.tau_max < 2:
            raise ConfigError("dgp.tau_max", "must be >= 2")
        if self.seq_len < self.tau_max + 4:
            raise ConfigError("dgp.seq_len", f"must be >= tau_max + 4 = {self.tau_max + 4}")

    @property
    def crash_rate(self) -> float:
        return (100.0 - self.crash_percentile) / 100.0

    @property
    def anchors(self) -> range:
        """Anchors with ground truth for every horizon up to ``tau_max + 1``."""
        return range(1, self.seq_len - self.tau_max - 1)


@dataclass
class BenchmarkSizes:
    train: int = 1000
    val: int = 100
    test: int = 100

    def __post_init__(self):
        for name in ("train", "val", "test"):
            if getattr(self, name) < 1:
                raise ConfigError(f"sizes.{name}", "must be >= 1")

    @property
    def total(self) -> int:
        return self.train + self.val + self.test

    def split_ranges(self) -> dict[str, range]:
        return {
            "train": range(0, self.train),
            "val": range(self.train, self.train + self.val),
            "test": range(self.train + self.val, self.total),
        }


@dataclass
class InterventionStrategy:
    """A hypothetical future crash vector, one entry per step after the anchor."""

    treatments: tuple[int, ...]
    label: str = field(default="")

    def __post_init__(self):
        self.treatments = tuple(int(v) for v in self.treatments)
        if any(v not in (0, 1) for v in self.treatments):
            raise ConfigError("strategy", "entries must be 0 or 1")
        if not self.label:
            crashes = [i for i, v in enumerate(self.treatments) if v]
            self.label = "none" if not crashes else "+".join(f"crash@{i}" for i in crashes)

    def __len__(self) -> int:
        return len(self.treatments)

    def padded(self, horizon: int) -> tuple[int, ...]:
        return self.treatments + (0,) * max(0, horizon - len(self.treatments))


def sliding_strategies(tau_max: int) -> list[InterventionStrategy]:
    """One crash at each position of the window, then the all-zero vector."""
    strategies = []
    for k in range(tau_max):
        vector = [0] * tau_max
        vector[k] = 1
        strategies.append(InterventionStrategy(tuple(vector)))
    strategies.append(InterventionStrategy((0,) * tau_max))
    return strategies
