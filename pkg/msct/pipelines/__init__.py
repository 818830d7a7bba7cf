from msct.pipelines.pipeline import (
    PipelineConfig,
    evaluate_forecaster,
    load_forecaster,
    train_forecaster,
)

__all__ = [
    "PipelineConfig",
    "evaluate_forecaster",
    "load_forecaster",
    "train_forecaster",
]
