"""Pydantic schemas for run configuration files.

Every section rejects unknown keys so typos surface as field-level errors.
Values left unset fall back to the module dataclass defaults.
"""

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")

    def overrides(self) -> dict:
        """Explicitly set, non-null fields."""
        return self.model_dump(exclude_none=True, exclude_unset=True)


class SizesSection(_Section):
    train: int = Field(1000, ge=1, description="Training units")
    val: int = Field(100, ge=1, description="Validation units")
    test: int = Field(100, ge=1, description="Test units")


class DgpSection(_Section):
    beta1: float | None = Field(None, description="Covariate effect on speed")
    beta2_menu: list[float] | None = Field(None, description="Crash effect per crash type")
    p_c: list[float] | None = Field(None, description="Crash type probabilities")
    psi: float | None = Field(None, description="Maximum basic speed")
    mu: float | None = Field(None, description="Peak centre (hours)")
    sigma: float | None = Field(None, description="Peak width (hours)")
    amp: float | None = Field(None, description="Amplitude of the daily dip")
    omega: int | None = Field(None, ge=1, description="Confounding window length")
    crash_percentile: float | None = Field(None, description="Assignment threshold percentile")
    eps_std: float | None = Field(None, ge=0, description="Multiplicative noise scale")
    seq_len: int | None = Field(None, description="Sequence length")
    impact_duration: int | None = Field(None, ge=1, description="Steps a crash keeps acting")
    tau_max: int | None = Field(None, ge=2, description="Longest intervention window")
    assignment_noise_std: float | None = Field(None, ge=0, description="Noise on the assignment average")
    confounded: bool | None = Field(None, description="Covariate-driven (true) or random crashes")
    speed_floor: float | None = Field(None, gt=0, description="Lowest simulated speed")
    sizes: SizesSection = Field(default_factory=SizesSection)


class ModelSection(_Section):
    name: str = Field("msct", description="Model registry name")
    d_h: int | None = Field(None, ge=1)
    d_a: int | None = Field(None, ge=1)
    heads: int | None = Field(None, ge=1)
    blocks: int | None = Field(None, ge=1)
    dropout: float | None = Field(None, ge=0, lt=1)
    backbone: Literal["transformer", "lstm"] | None = None
    use_ps: bool | None = None
    use_hps: bool | None = None
    pe_base: float | None = Field(None, gt=0)
    d_ff: int | None = Field(None, ge=1)
    crash_class: int | None = Field(None, ge=1, description="Treatment class of a hypothetical crash")
    msm_window: int = Field(5, ge=1, description="Lag window of the MSM propensity models")
    msm_cap_percentile: float = Field(99.0, gt=0, le=100, description="Stabilized weight cap")


class TrainSection(_Section):
    epochs: int | None = Field(None, ge=0)
    decoder_epochs: int | None = Field(None, ge=0)
    batch_size: int | None = Field(None, ge=1)
    lr: float | None = Field(None, gt=0)
    lam: float | None = Field(None, ge=0)
    dropout: float | None = Field(None, ge=0, lt=1)
    hps_adversarial_mode: Literal["as-written", "alternating-true-label"] | None = None
    balancing: Literal["domain-confusion", "gradient-reversal", "off"] | None = None
    ps_loss: bool | None = None
    outcome_in_update_a: bool | None = None
    patience: int | None = Field(None, ge=1)
    decoder_anchors_per_unit: int | None = Field(None, ge=1)


class EvalSection(_Section):
    split: Literal["val", "test"] = "test"
    factual_only: bool = Field(False, description="Factual RMSE only (real data)")
    anchor_stride: int = Field(1, ge=1, description="Evaluate every n-th anchor")
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2], min_length=1)
    models: list[str] = Field(default_factory=lambda: ["msct", "lstm-baseline"], min_length=1)
    include_reserved: bool = Field(True, description="Add absent RMSN/CRN/G-Net/CT rows")
    curve_units: list[int] = Field(default_factory=lambda: [0], description="Units for response curves")


class SweepSection(_Section):
    omegas: list[int] = Field(default_factory=lambda: [1, 3, 5, 7, 10], min_length=1)
    crash_ratios: list[float] = Field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3], min_length=1)
    ratio_sample_size: int | None = Field(None, ge=1, description="Training units per crash ratio")
    variants_dir: str = Field("config/variants", description="Ablation variant YAML files")


class IngestSection(_Section):
    csv: str | None = Field(None, description="Input CSV path")
    window: int = Field(60, ge=2)
    stride: int = Field(1, ge=1)
    bin_minutes: int = Field(5, ge=1)
    speed_limit: float = Field(65.0, gt=0, description="Used when the congestion index is absent")
    val_fraction: float = Field(0.1, ge=0, lt=1)
    test_fraction: float = Field(0.1, ge=0, lt=1)
    tau_max: int = Field(5, ge=2)


class PathsSection(_Section):
    data_dir: str | None = Field(None, description="Dataset directory")
    out_dir: str | None = Field(None, description="Run output directory")
    checkpoint: str | None = Field(None, description="Explicit checkpoint path")


class RunConfig(_Section):
    seed: int = 0
    jobs: int = Field(1, ge=1)
    dgp: DgpSection = Field(default_factory=DgpSection)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    eval: EvalSection = Field(default_factory=EvalSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    ingest: IngestSection = Field(default_factory=IngestSection)
    paths: PathsSection = Field(default_factory=PathsSection)


class VariantConfig(_Section):
    """One ablation variant: a labelled set of model and training overrides."""

    name: str
    label: str
    description: str = ""
    order: int = 0
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
