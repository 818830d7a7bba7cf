from msct.baselines.msm import (
    MsmForecaster,
    MsmModel,
    PropensityModel,
    StabilizedWeights,
    fit_msm,
    fit_propensity,
    stabilized_weights,
)
from msct.baselines.naive import NaiveForecaster
from msct.baselines.recurrent import (
    RecurrentConfig,
    RecurrentForecaster,
    RecurrentTrainer,
    load_recurrent,
    recurrent_forecaster,
    save_recurrent,
)

__all__ = [
    "MsmForecaster",
    "MsmModel",
    "NaiveForecaster",
    "PropensityModel",
    "RecurrentConfig",
    "RecurrentForecaster",
    "RecurrentTrainer",
    "StabilizedWeights",
    "fit_msm",
    "fit_propensity",
    "load_recurrent",
    "recurrent_forecaster",
    "save_recurrent",
    "stabilized_weights",
]
