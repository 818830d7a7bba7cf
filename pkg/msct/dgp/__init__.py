from msct.dgp.benchmark import Benchmark, build_benchmark, load_benchmark, save_benchmark
from msct.dgp.config import BenchmarkSizes, DgpConfig, InterventionStrategy, sliding_strategies
from msct.dgp.simulate import (
    DgpOracle,
    TimeSeriesUnit,
    assign_treatments,
    base_speed,
    calibrate_threshold,
    confounded_moving_average,
    dissipation,
    generate_unit,
    simulate_counterfactuals,
    step_speed,
)

__all__ = [
    "Benchmark",
    "BenchmarkSizes",
    "DgpConfig",
    "DgpOracle",
    "InterventionStrategy",
    "TimeSeriesUnit",
    "assign_treatments",
    "base_speed",
    "build_benchmark",
    "calibrate_threshold",
    "confounded_moving_average",
    "dissipation",
    "generate_unit",
    "load_benchmark",
    "save_benchmark",
    "simulate_counterfactuals",
    "sliding_strategies",
    "step_speed",
]
